//! Swap metrics and experiment drivers: chains, mixing, scaling, the tap
//! trade-off, and the table formats emitted by the CLI.

use rand::Rng;

use crate::algebra::{chain_swap, multi_swap, scale_identity, scale_style, swap, MixWeights};
use crate::autodiff::cosine_similarity;
use crate::extractor::{StyleExtractor, StyleExtractorParams};
use crate::losses::loss_feat;
use crate::rngstream::{self, TAG_EVAL_PAIRS};
use crate::trainer::{train, TrainConfig};
use crate::world::{LatentCode, Tap, ToyWorld};
use crate::{AfsError, Result};

// --- output tables ------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => fmt_sig9(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// A plot-ready table: CSV by default, line-delimited `field=value`
/// records as the alternate mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let line: Vec<String> = self
                .columns
                .iter()
                .zip(row)
                .map(|(c, v)| format!("{c}={}", v.render()))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Records => self.to_records(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Records,
}

impl std::str::FromStr for OutputFormat {
    type Err = AfsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "records" => Ok(OutputFormat::Records),
            other => Err(AfsError::BadConfig {
                reason: format!("unknown output format `{other}` (expected csv|records)"),
            }),
        }
    }
}

/// Decimal with 9 significant digits, trimmed (the C `%.9g` shape).
pub fn fmt_sig9(x: f64) -> String {
    const SIG: usize = 9;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // exponent via the exact scientific rendering
    let sci = format!("{:e}", x);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if exp < -4 || exp >= SIG as i32 {
        let s = format!("{:.*e}", SIG - 1, x);
        let (mantissa, e) = s.split_at(s.find('e').unwrap());
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}{e}")
    } else {
        let decimals = (SIG as i32 - 1 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    }
}

// --- swap metrics -------------------------------------------------------

/// Quality of one swap. `identity_similarity` compares the swapped image's
/// identity embedding with the source's; `style_error` is the perceptual
/// probe distance to the target. The `ground_truth_*` fields are oracle
/// coordinate distances only a world can provide (toy-world substitutes
/// for pose/expression metrics).
#[derive(Clone, Copy, Debug)]
pub struct SwapReport {
    pub identity_similarity: f64,
    pub style_error: f64,
    pub ground_truth_id_error: f64,
    pub ground_truth_sty_error: f64,
}

/// Identity similarity between the generated images of two codes.
pub fn identity_similarity(world: &ToyWorld, a: &LatentCode, b: &LatentCode) -> Result<f64> {
    let ea = world.embed_identity(&world.generate(a)?.image)?;
    let eb = world.embed_identity(&world.generate(b)?.image)?;
    cosine_similarity(&ea, &eb)
}

/// Perceptual probe distance between the generated images of two codes.
pub fn style_error(world: &ToyWorld, a: &LatentCode, b: &LatentCode) -> Result<f64> {
    let pa = world.perceptual_probe(&world.generate(a)?.image)?;
    let pb = world.perceptual_probe(&world.generate(b)?.image)?;
    Ok(pa.sub(&pb)?.l2_norm())
}

/// Scores an already-swapped code against its identity and style references.
pub fn report_against(
    world: &ToyWorld,
    swapped: &LatentCode,
    id_ref: &LatentCode,
    sty_ref: &LatentCode,
) -> Result<SwapReport> {
    Ok(SwapReport {
        identity_similarity: identity_similarity(world, swapped, id_ref)?,
        style_error: style_error(world, swapped, sty_ref)?,
        ground_truth_id_error: world.oracle_identity_dist(swapped, id_ref)?,
        ground_truth_sty_error: world.oracle_style_dist(swapped, sty_ref)?,
    })
}

/// Swaps (w_s, w_t) with `h` and scores the result.
pub fn evaluate_swap(
    world: &ToyWorld,
    h: &impl StyleExtractor,
    w_s: &LatentCode,
    w_t: &LatentCode,
) -> Result<SwapReport> {
    let swapped = swap(h, w_s, w_t)?;
    report_against(world, &swapped, w_s, w_t)
}

/// Deterministic held-out evaluation pairs for a seed.
pub fn sample_eval_pairs(world: &ToyWorld, n: usize, seed: u64) -> Vec<(LatentCode, LatentCode)> {
    let mut rng = rngstream::stream(seed, TAG_EVAL_PAIRS, 0);
    (0..n)
        .map(|_| {
            let s = world.sample_latent(&mut rng);
            let t = world.sample_latent(&mut rng);
            (s, t)
        })
        .collect()
}

/// Means of the swap metrics over a pair set, plus the mid-tap feature
/// error and the raw source-target style distance for normalization.
#[derive(Clone, Copy, Debug)]
pub struct MeanMetrics {
    pub identity_similarity: f64,
    pub style_error: f64,
    pub feat_mid_error: f64,
    pub ground_truth_id_error: f64,
    pub ground_truth_sty_error: f64,
    pub source_target_style_dist: f64,
    pub pairs: usize,
}

pub fn mean_swap_metrics(
    world: &ToyWorld,
    h: &impl StyleExtractor,
    pairs: &[(LatentCode, LatentCode)],
) -> Result<MeanMetrics> {
    if pairs.is_empty() {
        return Err(AfsError::Empty { what: "eval pairs" });
    }
    let mut acc = [0.0_f64; 6];
    for (s, t) in pairs {
        let swapped = swap(h, s, t)?;
        let r = report_against(world, &swapped, s, t)?;
        acc[0] += r.identity_similarity;
        acc[1] += r.style_error;
        acc[2] += loss_feat(world, &swapped, t, Tap::Mid)?;
        acc[3] += r.ground_truth_id_error;
        acc[4] += r.ground_truth_sty_error;
        acc[5] += world.oracle_style_dist(s, t)?;
    }
    let n = pairs.len() as f64;
    Ok(MeanMetrics {
        identity_similarity: acc[0] / n,
        style_error: acc[1] / n,
        feat_mid_error: acc[2] / n,
        ground_truth_id_error: acc[3] / n,
        ground_truth_sty_error: acc[4] / n,
        source_target_style_dist: acc[5] / n,
        pairs: pairs.len(),
    })
}

// --- experiments --------------------------------------------------------

/// An extractor together with the config it was trained under (needed by
/// the paired-ablation confound guard).
#[derive(Clone, Debug)]
pub struct TrainedExtractor {
    pub params: StyleExtractorParams,
    pub config: TrainConfig,
}

/// Identity similarity of every chain intermediate to the original source.
pub fn chain_identity_series(
    world: &ToyWorld,
    h: &impl StyleExtractor,
    w0: &LatentCode,
    targets: &[LatentCode],
) -> Result<Vec<f64>> {
    let chain = chain_swap(h, w0, targets)?;
    chain
        .iter()
        .map(|step| identity_similarity(world, step, w0))
        .collect()
}

/// Chain-drift comparison of two extractors trained identically except for
/// the consistency coefficient. Columns: step, with_cons, without_cons.
pub fn run_chain_experiment(
    world: &ToyWorld,
    with_cons: &TrainedExtractor,
    without_cons: &TrainedExtractor,
    w0: &LatentCode,
    targets: &[LatentCode],
) -> Result<Table> {
    with_cons
        .config
        .same_except_lambda4(&without_cons.config)?;
    let a = chain_identity_series(world, &with_cons.params, w0, targets)?;
    let b = chain_identity_series(world, &without_cons.params, w0, targets)?;
    let mut table = Table::new(&["step", "id_sim_with_cons", "id_sim_without_cons"]);
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        table.push(vec![
            Cell::Int((i + 1) as i64),
            Cell::Num(*x),
            Cell::Num(*y),
        ]);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixMode {
    /// One source identity, two target styles blended by alpha.
    OneIdTwoStyles,
    /// Two source identities blended by alpha, one target style.
    TwoIdsOneStyle,
}

impl std::str::FromStr for MixMode {
    type Err = AfsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-id-two-styles" => Ok(MixMode::OneIdTwoStyles),
            "two-ids-one-style" => Ok(MixMode::TwoIdsOneStyle),
            other => Err(AfsError::BadConfig {
                reason: format!(
                    "unknown mix mode `{other}` (expected one-id-two-styles|two-ids-one-style)"
                ),
            }),
        }
    }
}

/// Interpolation table over an alpha grid in [0, 1].
///
/// one-id-two-styles uses codes (s, t1, t2) and blends styles with weights
/// (alpha, 1-alpha); two-ids-one-style uses codes (s1, s2, t) and blends
/// identities the same way. Ground-truth references for the blended side
/// are the matching oracle blends.
pub fn run_mix_experiment(
    world: &ToyWorld,
    h: &impl StyleExtractor,
    mode: MixMode,
    codes: &[LatentCode; 3],
    alphas: &[f64],
) -> Result<Table> {
    for &a in alphas {
        if !(0.0..=1.0).contains(&a) || !a.is_finite() {
            return Err(AfsError::AlphaOutOfRange { value: a });
        }
    }
    let mut table = match mode {
        MixMode::OneIdTwoStyles => Table::new(&[
            "alpha",
            "identity_similarity",
            "style_error_t1",
            "style_error_t2",
            "gt_id_error",
            "gt_sty_error",
        ]),
        MixMode::TwoIdsOneStyle => Table::new(&[
            "alpha",
            "identity_similarity_s1",
            "identity_similarity_s2",
            "style_error",
            "gt_id_error",
            "gt_sty_error",
        ]),
    };

    for &alpha in alphas {
        match mode {
            MixMode::OneIdTwoStyles => {
                let (s, t1, t2) = (&codes[0], &codes[1], &codes[2]);
                let mix = MixWeights::new(vec![1.0], vec![alpha, 1.0 - alpha])?;
                let swapped = multi_swap(h, std::slice::from_ref(s), &[t1.clone(), t2.clone()], &mix)?;
                let sty_blend = world
                    .oracle_style(t1)?
                    .scale(alpha)?
                    .add(&world.oracle_style(t2)?.scale(1.0 - alpha)?)?;
                table.push(vec![
                    Cell::Num(alpha),
                    Cell::Num(identity_similarity(world, &swapped, s)?),
                    Cell::Num(style_error(world, &swapped, t1)?),
                    Cell::Num(style_error(world, &swapped, t2)?),
                    Cell::Num(world.oracle_identity_dist(&swapped, s)?),
                    Cell::Num(
                        world
                            .oracle_style(&swapped)?
                            .frobenius_dist(&sty_blend),
                    ),
                ]);
            }
            MixMode::TwoIdsOneStyle => {
                let (s1, s2, t) = (&codes[0], &codes[1], &codes[2]);
                let mix = MixWeights::new(vec![alpha, 1.0 - alpha], vec![1.0])?;
                let swapped =
                    multi_swap(h, &[s1.clone(), s2.clone()], std::slice::from_ref(t), &mix)?;
                let id_blend = world
                    .oracle_identity(s1)?
                    .scale(alpha)?
                    .add(&world.oracle_identity(s2)?.scale(1.0 - alpha)?)?;
                table.push(vec![
                    Cell::Num(alpha),
                    Cell::Num(identity_similarity(world, &swapped, s1)?),
                    Cell::Num(identity_similarity(world, &swapped, s2)?),
                    Cell::Num(style_error(world, &swapped, t)?),
                    Cell::Num(
                        world
                            .oracle_identity(&swapped)?
                            .frobenius_dist(&id_blend),
                    ),
                    Cell::Num(world.oracle_style_dist(&swapped, t)?),
                ]);
            }
        }
    }
    Ok(table)
}

/// Code-scaling table: per alpha, both the style-scaled and identity-scaled
/// variants scored against the unscaled code.
pub fn run_scale_experiment(
    world: &ToyWorld,
    h: &impl StyleExtractor,
    w: &LatentCode,
    alphas: &[f64],
) -> Result<Table> {
    let mut table = Table::new(&[
        "variant",
        "alpha",
        "identity_similarity",
        "style_error",
        "gt_id_error",
        "gt_sty_error",
    ]);
    for &alpha in alphas {
        let styled = scale_style(h, w, alpha)?;
        let r = report_against(world, &styled, w, w)?;
        table.push(vec![
            Cell::Text("style".into()),
            Cell::Num(alpha),
            Cell::Num(r.identity_similarity),
            Cell::Num(r.style_error),
            Cell::Num(r.ground_truth_id_error),
            Cell::Num(r.ground_truth_sty_error),
        ]);
        let idented = scale_identity(h, w, alpha)?;
        let r = report_against(world, &idented, w, w)?;
        table.push(vec![
            Cell::Text("identity".into()),
            Cell::Num(alpha),
            Cell::Num(r.identity_similarity),
            Cell::Num(r.style_error),
            Cell::Num(r.ground_truth_id_error),
            Cell::Num(r.ground_truth_sty_error),
        ]);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug)]
pub struct TapRow {
    pub tap: Tap,
    pub identity_similarity: f64,
    pub style_error: f64,
}

#[derive(Clone, Debug)]
pub struct TapTradeoffResult {
    pub rows: Vec<TapRow>,
    pub eval_pairs: usize,
}

impl TapTradeoffResult {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["tap", "identity_similarity", "style_error"]);
        for r in &self.rows {
            t.push(vec![
                Cell::Text(r.tap.name().into()),
                Cell::Num(r.identity_similarity),
                Cell::Num(r.style_error),
            ]);
        }
        t
    }
}

/// Trains one extractor per tap depth (identical configs otherwise) and
/// evaluates all three on the same held-out pair set.
pub fn run_tap_tradeoff(
    world: &ToyWorld,
    base_cfg: &TrainConfig,
    eval_pairs: usize,
) -> Result<TapTradeoffResult> {
    let pairs = sample_eval_pairs(world, eval_pairs, base_cfg.seed);
    let wc = world.config();
    let rows = Tap::ALL
        .iter()
        .map(|&tap| {
            let cfg = TrainConfig { tap, ..base_cfg.clone() };
            let init = StyleExtractorParams::default_for_world(wc, cfg.seed);
            let out = train(world, init, &cfg, None)?;
            let m = mean_swap_metrics(world, &out.params, &pairs)?;
            Ok(TapRow {
                tap,
                identity_similarity: m.identity_similarity,
                style_error: m.style_error,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TapTradeoffResult {
        rows,
        eval_pairs,
    })
}

/// Deterministic codes for the mix/scale/chain experiments.
pub fn sample_codes(world: &ToyWorld, n: usize, seed: u64) -> Vec<LatentCode> {
    let mut rng = rngstream::stream(seed, TAG_EVAL_PAIRS, 1);
    (0..n).map(|_| world.sample_latent(&mut rng)).collect()
}

/// Convenience wrapper used by the CLI swap command.
pub fn swap_report_table(report: &SwapReport) -> Table {
    let mut t = Table::new(&[
        "identity_similarity",
        "style_error",
        "gt_id_error",
        "gt_sty_error",
    ]);
    t.push(vec![
        Cell::Num(report.identity_similarity),
        Cell::Num(report.style_error),
        Cell::Num(report.ground_truth_id_error),
        Cell::Num(report.ground_truth_sty_error),
    ]);
    t
}

/// Per-step chain table for a single extractor.
pub fn chain_table(
    world: &ToyWorld,
    h: &impl StyleExtractor,
    w0: &LatentCode,
    targets: &[LatentCode],
) -> Result<Table> {
    let chain = chain_swap(h, w0, targets)?;
    let mut table = Table::new(&["step", "identity_similarity", "style_error_to_step_target"]);
    for (i, step_code) in chain.iter().enumerate() {
        table.push(vec![
            Cell::Int((i + 1) as i64),
            Cell::Num(identity_similarity(world, step_code, w0)?),
            Cell::Num(style_error(world, step_code, &targets[i])?),
        ]);
    }
    Ok(table)
}

/// Sample `n` latents from an explicit RNG (CLI helper).
pub fn sample_latents_with(world: &ToyWorld, n: usize, rng: &mut impl Rng) -> Vec<LatentCode> {
    (0..n).map(|_| world.sample_latent(rng)).collect()
}
