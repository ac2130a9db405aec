//! Extractor training: fresh pair sampling each step, Adam with a cosine
//! learning-rate schedule, per-step loss logging, checkpointing.
//!
//! (seed, config, world) pin the parameter trajectory bit-for-bit: every
//! step draws from its own RNG stream keyed by (seed, step), so a run can
//! be resumed from any checkpoint and replay identically.

use std::path::Path;

use crate::autodiff::{Tape, Tensor};
use crate::binio::{self, Reader, Writer};
use crate::extractor::{ComponentParams, HighwayParams, StyleExtractor, StyleExtractorParams};
use crate::losses::{total_loss_on, LossBreakdown};
use crate::rngstream::{self, TAG_TRAIN_STEP};
use crate::world::{Tap, ToyWorld, WorldConfig};
use crate::{AfsError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AFSH";
pub const CHECKPOINT_VERSION: u8 = 1;

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_WINDOW: u64 = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lr0: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub tap: Tap,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: coefficients (1, 3.5, 1, 0.1), learning rate
    /// 1e-4 decayed to 1e-6, batch 4, 20000 steps, mid tap.
    pub fn desk(seed: u64) -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 3.5,
            lambda3: 1.0,
            lambda4: 0.1,
            lr0: 1e-4,
            lr_min: 1e-6,
            batch_size: 4,
            total_steps: 20_000,
            tap: Tap::Mid,
            seed,
            checkpoint_every: 5_000,
        }
    }

    pub fn validate_lambdas(&self) -> Result<()> {
        for (which, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(AfsError::NegativeLambda { which, value });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_lambdas()?;
        if !(self.lr_min > 0.0) || !(self.lr0 >= self.lr_min) {
            return Err(AfsError::BadConfig {
                reason: format!(
                    "learning rates must satisfy lr0 >= lr_min > 0, got lr0={} lr_min={}",
                    self.lr0, self.lr_min
                ),
            });
        }
        if self.batch_size < 1 {
            return Err(AfsError::BadConfig {
                reason: "batch_size must be >= 1".into(),
            });
        }
        if self.total_steps < 1 {
            return Err(AfsError::BadConfig {
                reason: "total_steps must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Confound guard for paired-ablation experiments: every field except
    /// lambda4 must match.
    pub fn same_except_lambda4(&self, other: &TrainConfig) -> Result<()> {
        let fields: [(&'static str, bool); 10] = [
            ("lambda1", self.lambda1 == other.lambda1),
            ("lambda2", self.lambda2 == other.lambda2),
            ("lambda3", self.lambda3 == other.lambda3),
            ("lr0", self.lr0 == other.lr0),
            ("lr_min", self.lr_min == other.lr_min),
            ("batch_size", self.batch_size == other.batch_size),
            ("total_steps", self.total_steps == other.total_steps),
            ("tap", self.tap == other.tap),
            ("seed", self.seed == other.seed),
            ("checkpoint_every", self.checkpoint_every == other.checkpoint_every),
        ];
        for (field, equal) in fields {
            if !equal {
                return Err(AfsError::ConfigMismatch { field });
            }
        }
        Ok(())
    }
}

/// Cosine decay: lr_min + (lr0 - lr_min) (1 + cos(pi step/total)) / 2.
/// The endpoints are returned exactly (cos(0) and cos(pi) collapse the
/// formula analytically; float pi would leave one-ulp residue).
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64, lr_min: f64) -> Result<f64> {
    if step > total_steps {
        return Err(AfsError::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    if step == 0 {
        return Ok(lr0);
    }
    if step == total_steps {
        return Ok(lr_min);
    }
    let phase = std::f64::consts::PI * (step as f64 / total_steps as f64);
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

/// Adam moments, shaped like the parameter blocks in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &StyleExtractorParams) -> Self {
        let zeros: Vec<Tensor> = params
            .blocks()
            .iter()
            .map(|b| Tensor::zeros(b.shape().to_vec()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients.
pub fn adam_step(
    params: &mut StyleExtractorParams,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(AfsError::DimMismatch {
            context: "adam_step",
            expected: state.m.len().to_string(),
            got: grads.len().to_string(),
        });
    }
    for (bi, g) in grads.iter().enumerate() {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(AfsError::NonFiniteGradient {
                block: params.block_label(bi),
            });
        }
    }

    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);

    let mut blocks = params.blocks_mut();
    for bi in 0..grads.len() {
        let g = grads[bi].data();
        let p = blocks[bi].data();
        if g.len() != p.len() {
            return Err(AfsError::ShapeMismatch {
                op: "adam_step",
                left: blocks[bi].shape().to_vec(),
                right: grads[bi].shape().to_vec(),
            });
        }
        let mut m = state.m[bi].data().to_vec();
        let mut v = state.v[bi].data().to_vec();
        let mut new_p = p.to_vec();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            new_p[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        let shape = blocks[bi].shape().to_vec();
        state.m[bi] = Tensor::new(shape.clone(), m)?;
        state.v[bi] = Tensor::new(shape.clone(), v)?;
        *blocks[bi] = Tensor::new(shape, new_p)?;
    }
    Ok(())
}

/// Aborts a run whose batch-mean loss exceeds 10x its initial value for
/// 500 consecutive steps.
#[derive(Debug, Default)]
pub struct DivergenceGuard {
    initial: Option<f64>,
    streak: u64,
}

impl DivergenceGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, step: u64, total: f64) -> Result<()> {
        let initial = *self.initial.get_or_insert(total);
        if total > DIVERGENCE_FACTOR * initial {
            self.streak += 1;
            if self.streak >= DIVERGENCE_WINDOW {
                return Err(AfsError::Diverged {
                    step,
                    initial,
                    current: total,
                    window: DIVERGENCE_WINDOW,
                });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: StyleExtractorParams,
    pub optimizer: OptimizerState,
    pub history: Vec<StepRecord>,
}

fn check_world_compat(params: &StyleExtractorParams, world: &ToyWorld) -> Result<()> {
    let cfg = world.config();
    if params.components() != cfg.components || params.dim() != cfg.dim {
        return Err(AfsError::DimMismatch {
            context: "extractor vs world",
            expected: format!("L={} d={}", cfg.components, cfg.dim),
            got: format!("L={} d={}", params.components(), params.dim()),
        });
    }
    Ok(())
}

/// Trains from freshly initialized optimizer state.
pub fn train(
    world: &ToyWorld,
    params: StyleExtractorParams,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let opt = OptimizerState::new(&params);
    train_from(world, params, opt, 0, cfg, checkpoint_dir)
}

/// Continues a run from `start_step` (counting completed steps). With the
/// same (seed, config, world), resuming from a checkpoint replays the
/// uninterrupted trajectory bit-for-bit.
pub fn train_from(
    world: &ToyWorld,
    mut params: StyleExtractorParams,
    mut opt: OptimizerState,
    start_step: u64,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_world_compat(&params, world)?;

    let mut history = Vec::with_capacity((cfg.total_steps - start_step) as usize);
    let mut guard = DivergenceGuard::new();

    for step in start_step..cfg.total_steps {
        let lr = cosine_lr(step, cfg.total_steps, cfg.lr0, cfg.lr_min)?;
        let mut rng = rngstream::stream(cfg.seed, TAG_TRAIN_STEP, step);

        let mut tape = Tape::new();
        let ctx = world.record_on(&mut tape);
        let tp = params.record_on(&mut tape);

        let mut sum_total = None;
        let mut comp_sums = [0.0_f64; 4];
        for _ in 0..cfg.batch_size {
            let w_s = world.sample_latent(&mut rng);
            let w_t = world.sample_latent(&mut rng);
            let loss = total_loss_on(&mut tape, world, &ctx, &tp, &w_s, &w_t, cfg)?;
            comp_sums[0] += tape.value(loss.id).item();
            comp_sums[1] += tape.value(loss.feat).item();
            comp_sums[2] += tape.value(loss.lpips).item();
            comp_sums[3] += tape.value(loss.cons).item();
            sum_total = Some(match sum_total {
                None => loss.total,
                Some(acc) => tape.add(acc, loss.total)?,
            });
        }
        let sum_total = sum_total.expect("batch_size >= 1");
        let mean_total = tape.scale(sum_total, 1.0 / cfg.batch_size as f64)?;
        tape.backward(mean_total)?;

        let grads: Vec<Tensor> = tp
            .block_ids()
            .iter()
            .map(|&id| tape.adjoint(id))
            .collect::<Result<_>>()?;
        drop(tape);
        adam_step(&mut params, &grads, &mut opt, lr)?;

        let b = cfg.batch_size as f64;
        let loss = LossBreakdown::weighted(
            cfg,
            comp_sums[0] / b,
            comp_sums[1] / b,
            comp_sums[2] / b,
            comp_sums[3] / b,
        );
        history.push(StepRecord { step, lr, loss });

        guard.observe(step, loss.total)?;

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("ckpt_{:07}.afsh", step + 1));
                save_checkpoint(&params, Some(&opt), step + 1, &path)?;
            }
        }
    }

    Ok(TrainOutcome {
        params,
        optimizer: opt,
        history,
    })
}

/// Formats the run log: one line per step with full-precision decimals.
pub fn format_run_log(cfg: &TrainConfig, world_cfg: &WorldConfig, history: &[StepRecord]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# lambda1 = {} lambda2 = {} lambda3 = {} lambda4 = {}\n",
        cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.lambda4
    ));
    out.push_str(&format!(
        "# lr0 = {} lr_min = {} batch_size = {} total_steps = {} tap = {} seed = {}\n",
        cfg.lr0, cfg.lr_min, cfg.batch_size, cfg.total_steps, cfg.tap, cfg.seed
    ));
    out.push_str(&format!(
        "# world: L = {} d = {} k = {} seed = {}\n",
        world_cfg.components, world_cfg.dim, world_cfg.identity_dims, world_cfg.seed
    ));
    for r in history {
        out.push_str(&format!(
            "step {} lr {} id {} feat {} lpips {} cons {} total {}\n",
            r.step, r.lr, r.loss.id_loss, r.loss.feat_loss, r.loss.lpips_loss, r.loss.cons_loss,
            r.loss.total
        ));
    }
    out
}

/// A loaded checkpoint: parameters, optional optimizer section, completed
/// step count.
pub struct Checkpoint {
    pub params: StyleExtractorParams,
    pub optimizer: Option<OptimizerState>,
    pub step: u64,
}

/// Writes parameters (and, when given, the optimizer section) in the
/// checkpoint format.
pub fn save_checkpoint(
    params: &StyleExtractorParams,
    optimizer: Option<&OptimizerState>,
    step: u64,
    path: &Path,
) -> Result<()> {
    let mut w = Writer::create(path)?;
    w.bytes(&CHECKPOINT_MAGIC)?;
    w.byte(CHECKPOINT_VERSION)?;
    w.u32(params.components() as u32)?;
    w.u32(params.dim() as u32)?;
    w.u32(params.hidden() as u32)?;
    w.u32(params.n_highway() as u32)?;
    for block in params.blocks() {
        w.f64_slice(block.data())?;
    }
    w.u64(step)?;
    match optimizer {
        None => w.byte(0)?,
        Some(opt) => {
            w.byte(1)?;
            w.f64_slice(&[opt.beta1, opt.beta2, opt.epsilon])?;
            w.u64(opt.step)?;
            for m in &opt.m {
                w.f64_slice(m.data())?;
            }
            for v in &opt.v {
                w.f64_slice(v.data())?;
            }
        }
    }
    w.finish()
}

fn read_tensor(r: &mut Reader, shape: Vec<usize>, what: &str) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape, r.f64_vec(n, what)?)
}

fn read_component_blocks(
    r: &mut Reader,
    components: usize,
    dim: usize,
    hidden: usize,
    n_highway: usize,
    label: &str,
) -> Result<Vec<ComponentParams>> {
    (0..components)
        .map(|_| {
            Ok(ComponentParams {
                in_w: read_tensor(r, vec![hidden, dim], label)?,
                in_b: read_tensor(r, vec![hidden], label)?,
                highway: (0..n_highway)
                    .map(|_| {
                        Ok(HighwayParams {
                            gate_w: read_tensor(r, vec![hidden, hidden], label)?,
                            gate_b: read_tensor(r, vec![hidden], label)?,
                            transform_w: read_tensor(r, vec![hidden, hidden], label)?,
                            transform_b: read_tensor(r, vec![hidden], label)?,
                        })
                    })
                    .collect::<Result<_>>()?,
                out_w: read_tensor(r, vec![dim, hidden], label)?,
                out_b: read_tensor(r, vec![dim], label)?,
            })
        })
        .collect()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::open(path)?;
    binio::expect_magic(&mut r, CHECKPOINT_MAGIC)?;
    binio::expect_version(&mut r, CHECKPOINT_VERSION)?;
    let components = r.u32("component count")? as usize;
    let dim = r.u32("dimension")? as usize;
    let hidden = r.u32("hidden size")? as usize;
    let n_highway = r.u32("highway count")? as usize;
    if components < 1 || dim < 1 || hidden < 1 {
        return Err(AfsError::BadConfig {
            reason: "checkpoint header dimensions must be >= 1".into(),
        });
    }

    let params = StyleExtractorParams::from_components(
        dim,
        hidden,
        n_highway,
        read_component_blocks(&mut r, components, dim, hidden, n_highway, "parameters")?,
    )?;
    let step = r.u64("step counter")?;
    let flag = r.byte("optimizer flag")?;
    let optimizer = match flag {
        0 => None,
        1 => {
            let scalars = r.f64_vec(3, "optimizer scalars")?;
            let opt_step = r.u64("optimizer step")?;
            let m_comps = read_component_blocks(&mut r, components, dim, hidden, n_highway, "first moments")?;
            let v_comps = read_component_blocks(&mut r, components, dim, hidden, n_highway, "second moments")?;
            let m = StyleExtractorParams::from_components(dim, hidden, n_highway, m_comps)?;
            let v = StyleExtractorParams::from_components(dim, hidden, n_highway, v_comps)?;
            Some(OptimizerState {
                beta1: scalars[0],
                beta2: scalars[1],
                epsilon: scalars[2],
                step: opt_step,
                m: m.blocks().into_iter().cloned().collect(),
                v: v.blocks().into_iter().cloned().collect(),
            })
        }
        other => {
            return Err(AfsError::BadConfig {
                reason: format!("unknown optimizer flag {other} in checkpoint"),
            })
        }
    };
    r.expect_eof("checkpoint")?;
    Ok(Checkpoint {
        params,
        optimizer,
        step,
    })
}

/// Rejects a checkpoint whose shape does not match the world.
pub fn check_checkpoint_compat(params: &StyleExtractorParams, world: &ToyWorld) -> Result<()> {
    check_world_compat(params, world)
}
