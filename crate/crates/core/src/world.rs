//! Synthetic stand-in for the pretrained generator/embedder stack.
//!
//! The world hides a ground-truth identity/style split behind per-component
//! orthogonal mixings: in mixed coordinates `u_i = Q_i^T w_i`, the first `k`
//! entries carry identity and the remaining `d - k` carry style. The image's
//! identity block reads only identity coordinates and the style block only
//! style coordinates, so the training losses share one exact global optimum
//! and the hidden split doubles as an oracle.

use std::path::Path;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::binio::{self, Reader, Writer};
use crate::extractor::StyleExtractor;
use crate::rngstream::{self, TAG_WORLD};
use crate::{AfsError, Result};

pub const WORLD_MAGIC: [u8; 4] = *b"AFSW";
pub const WORLD_VERSION: u8 = 1;
pub const LATENT_MAGIC: [u8; 4] = *b"AFSL";
pub const LATENT_VERSION: u8 = 1;

/// Feature tap depth of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tap {
    Early,
    Mid,
    Late,
}

impl Tap {
    pub const ALL: [Tap; 3] = [Tap::Early, Tap::Mid, Tap::Late];

    pub fn name(self) -> &'static str {
        match self {
            Tap::Early => "early",
            Tap::Mid => "mid",
            Tap::Late => "late",
        }
    }

    fn index(self) -> usize {
        match self {
            Tap::Early => 0,
            Tap::Mid => 1,
            Tap::Late => 2,
        }
    }
}

impl std::str::FromStr for Tap {
    type Err = AfsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Tap::Early),
            "mid" => Ok(Tap::Mid),
            "late" => Ok(Tap::Late),
            other => Err(AfsError::BadConfig {
                reason: format!("unknown tap `{other}` (expected early|mid|late)"),
            }),
        }
    }
}

impl std::fmt::Display for Tap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldConfig {
    /// Component count L (per-layer latent vectors).
    pub components: usize,
    /// Per-component dimension d.
    pub dim: usize,
    /// Identity coordinates per component, 1 <= k < d.
    pub identity_dims: usize,
    /// Output block sizes (p_id, p_sty).
    pub image_dims: (usize, usize),
    /// Identity-embedding size q.
    pub embed_dim: usize,
    pub seed: u64,
}

impl WorldConfig {
    /// Desk-scale default: L=4, d=32, k=16, image blocks 32/32, embedding 16.
    pub fn desk(seed: u64) -> Self {
        Self {
            components: 4,
            dim: 32,
            identity_dims: 16,
            image_dims: (32, 32),
            embed_dim: 16,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components < 1 {
            return Err(AfsError::BadConfig {
                reason: "L must be >= 1".into(),
            });
        }
        if self.identity_dims < 1 || self.identity_dims >= self.dim {
            return Err(AfsError::BadConfig {
                reason: format!(
                    "k must satisfy 1 <= k < d, got k={} d={}",
                    self.identity_dims, self.dim
                ),
            });
        }
        if self.image_dims.0 < 1 || self.image_dims.1 < 1 || self.embed_dim < 1 {
            return Err(AfsError::BadConfig {
                reason: "image_dims and embed_dim must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Length of the concatenated identity coordinates, L*k.
    pub fn identity_len(&self) -> usize {
        self.components * self.identity_dims
    }

    /// Length of the concatenated style coordinates, L*(d-k).
    pub fn style_len(&self) -> usize {
        self.components * (self.dim - self.identity_dims)
    }

    /// Early tap reads the first half of the style coordinates (rounded up
    /// so the smallest legal world still has a non-empty tap).
    pub fn early_len(&self) -> usize {
        self.style_len().div_ceil(2)
    }

    /// Identity coordinates leaked into the late tap, ceil(k/4) per component.
    pub fn leak_per_component(&self) -> usize {
        self.identity_dims.div_ceil(4)
    }

    pub fn late_len(&self) -> usize {
        self.style_len() + self.components * self.leak_per_component()
    }

    pub fn image_len(&self) -> usize {
        self.image_dims.0 + self.image_dims.1
    }
}

/// A latent code: an L x d matrix, one row per component.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    data: Tensor,
}

impl LatentCode {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape().len() != 2 {
            return Err(AfsError::BadShape {
                shape: data.shape().to_vec(),
                reason: "latent code must be 2-d".into(),
            });
        }
        Ok(Self { data })
    }

    pub fn zeros(components: usize, dim: usize) -> Self {
        Self {
            data: Tensor::zeros(vec![components, dim]),
        }
    }

    pub fn components(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data.data()[i * d..(i + 1) * d]
    }

    pub fn component_tensor(&self, i: usize) -> Tensor {
        Tensor::from_raw_unchecked(vec![self.dim()], self.component(i).to_vec())
    }

    pub fn from_components(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(AfsError::Empty {
                what: "latent components",
            });
        }
        let d = rows[0].len();
        let l = rows.len();
        let mut data = Vec::with_capacity(l * d);
        for r in &rows {
            if r.len() != d {
                return Err(AfsError::ShapeMismatch {
                    op: "latent components",
                    left: vec![d],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            data: Tensor::new(vec![l, d], data)?,
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn flat(&self) -> &[f64] {
        self.data.data()
    }

    pub fn add(&self, other: &LatentCode) -> Result<LatentCode> {
        Ok(Self {
            data: self.data.add(&other.data)?,
        })
    }

    pub fn sub(&self, other: &LatentCode) -> Result<LatentCode> {
        Ok(Self {
            data: self.data.sub(&other.data)?,
        })
    }

    pub fn scale(&self, c: f64) -> Result<LatentCode> {
        Ok(Self {
            data: self.data.scale(c)?,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.l2_norm()
    }

    pub fn frobenius_dist(&self, other: &LatentCode) -> f64 {
        self.data
            .data()
            .iter()
            .zip(other.data.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &LatentCode) -> f64 {
        self.data.max_abs_diff(&other.data)
    }

    /// Records each component as a tape leaf.
    pub fn record_on(&self, tape: &mut Tape) -> TapeLatent {
        let comps = (0..self.components())
            .map(|i| tape.leaf(self.component_tensor(i)))
            .collect();
        TapeLatent { comps }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::create(path)?;
        w.bytes(&LATENT_MAGIC)?;
        w.byte(LATENT_VERSION)?;
        w.u32(self.components() as u32)?;
        w.u32(self.dim() as u32)?;
        w.f64_slice(self.data.data())?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = Reader::open(path)?;
        binio::expect_magic(&mut r, LATENT_MAGIC)?;
        binio::expect_version(&mut r, LATENT_VERSION)?;
        let l = r.u32("component count")? as usize;
        let d = r.u32("dimension")? as usize;
        let data = r.f64_vec(l.saturating_mul(d), "latent values")?;
        r.expect_eof("latent values")?;
        Ok(Self {
            data: Tensor::new(vec![l, d], data)?,
        })
    }
}

/// Per-component latent recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapeLatent {
    pub comps: Vec<ValueId>,
}

impl TapeLatent {
    pub fn read(&self, tape: &Tape) -> Result<LatentCode> {
        let rows = self
            .comps
            .iter()
            .map(|&id| tape.value(id).data().to_vec())
            .collect();
        LatentCode::from_components(rows)
    }
}

/// The synthetic world: immutable after construction, safe to share.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyWorld {
    config: WorldConfig,
    /// Per-component orthogonal mixings Q_i (d x d).
    mixing: Vec<Tensor>,
    /// Cached transposes Q_i^T, used on every generate.
    mixing_t: Vec<Tensor>,
    /// A_id: p_id x (L*k).
    image_id_map: Tensor,
    /// A_sty: p_sty x (L*(d-k)).
    image_sty_map: Tensor,
    tap_early_map: Tensor,
    tap_mid_map: Tensor,
    tap_late_map: Tensor,
    /// C: q x p_id identity readout.
    embed_map: Tensor,
    /// D: p_sty x p_sty perceptual probe.
    probe_map: Tensor,
}

fn transpose(m: &Tensor) -> Tensor {
    let (r, c) = (m.rows(), m.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = m.data()[i * c + j];
        }
    }
    Tensor::from_raw_unchecked(vec![c, r], out)
}

fn identity_matrix(dim: usize) -> Tensor {
    let mut data = vec![0.0; dim * dim];
    for i in 0..dim {
        data[i * dim + i] = 1.0;
    }
    Tensor::from_raw_unchecked(vec![dim, dim], data)
}

/// Orthonormal d x d matrix: Householder QR of a seeded Gaussian matrix,
/// columns sign-fixed by the R diagonal.
fn orthonormal(dim: usize, rng: &mut impl Rng) -> Tensor {
    let mut a = Tensor::gaussian(vec![dim, dim], 1.0, rng).data().to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(dim);

    for j in 0..dim {
        let m = dim - j;
        let mut v: Vec<f64> = (0..m).map(|i| a[(j + i) * dim + j]).collect();
        let xnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let alpha = if v[0] >= 0.0 { -xnorm } else { xnorm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            for x in v.iter_mut() {
                *x /= vnorm;
            }
        } else {
            v[0] = 1.0;
        }
        for col in j..dim {
            let mut dot = 0.0;
            for i in 0..m {
                dot += v[i] * a[(j + i) * dim + col];
            }
            for i in 0..m {
                a[(j + i) * dim + col] -= 2.0 * dot * v[i];
            }
        }
        reflectors.push(v);
    }

    let mut q = identity_matrix(dim).data().to_vec();
    for j in (0..dim).rev() {
        let v = &reflectors[j];
        let m = dim - j;
        for col in 0..dim {
            let mut dot = 0.0;
            for i in 0..m {
                dot += v[i] * q[(j + i) * dim + col];
            }
            for i in 0..m {
                q[(j + i) * dim + col] -= 2.0 * dot * v[i];
            }
        }
    }
    for j in 0..dim {
        if a[j * dim + j] < 0.0 {
            for i in 0..dim {
                q[i * dim + j] = -q[i * dim + j];
            }
        }
    }
    Tensor::from_raw_unchecked(vec![dim, dim], q)
}

/// Max-norm of Q^T Q - I.
pub fn orthogonality_defect(q: &Tensor) -> f64 {
    let d = q.rows();
    let mut worst = 0.0_f64;
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for r in 0..d {
                acc += q.data()[r * d + i] * q.data()[r * d + j];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((acc - target).abs());
        }
    }
    worst
}

/// Forward outputs of the generator: the image and three feature taps.
#[derive(Clone, Debug)]
pub struct Generated {
    pub image: Tensor,
    pub taps: [Tensor; 3],
}

impl Generated {
    pub fn tap(&self, tap: Tap) -> &Tensor {
        &self.taps[tap.index()]
    }
}

/// World constants inserted once per tape.
pub struct WorldTape {
    mixing_t: Vec<ValueId>,
    image_id_map: ValueId,
    image_sty_map: ValueId,
    tap_maps: [ValueId; 3],
    embed_map: ValueId,
    probe_map: ValueId,
}

/// Tape-recorded generator outputs.
pub struct TapeGenerated {
    pub image: ValueId,
    pub taps: [ValueId; 3],
}

impl TapeGenerated {
    pub fn tap(&self, tap: Tap) -> ValueId {
        self.taps[tap.index()]
    }
}

impl ToyWorld {
    /// Builds the world from a seeded Gaussian draw; deterministic in the
    /// config seed, with Q_i orthogonalized per component.
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rngstream::stream(config.seed, TAG_WORLD, 0);
        let mixing: Vec<Tensor> = (0..config.components)
            .map(|_| orthonormal(config.dim, &mut rng))
            .collect();
        Ok(Self::with_mixing(config, mixing, &mut rng))
    }

    /// Axis-aligned variant (every Q_i is the identity), used when the
    /// ground-truth split should be visible in raw coordinates.
    pub fn new_axis_aligned(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rngstream::stream(config.seed, TAG_WORLD, 0);
        let mixing = vec![identity_matrix(config.dim); config.components];
        Ok(Self::with_mixing(config, mixing, &mut rng))
    }

    fn with_mixing(config: WorldConfig, mixing: Vec<Tensor>, rng: &mut impl Rng) -> Self {
        fn gauss(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
            let std = (1.0 / cols as f64).sqrt();
            Tensor::gaussian(vec![rows, cols], std, rng)
        }
        let (p_id, p_sty) = config.image_dims;
        let mixing_t = mixing.iter().map(transpose).collect();
        let image_id_map = gauss(p_id, config.identity_len(), rng);
        let image_sty_map = gauss(p_sty, config.style_len(), rng);
        let tap_early_map = gauss(p_sty, config.early_len(), rng);
        let tap_mid_map = gauss(p_sty, config.style_len(), rng);
        let tap_late_map = gauss(p_sty, config.late_len(), rng);
        let embed_map = gauss(config.embed_dim, p_id, rng);
        let probe_map = gauss(p_sty, p_sty, rng);
        Self {
            config,
            mixing,
            mixing_t,
            image_id_map,
            image_sty_map,
            tap_early_map,
            tap_mid_map,
            tap_late_map,
            embed_map,
            probe_map,
        }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn mixing(&self, i: usize) -> &Tensor {
        &self.mixing[i]
    }

    fn check_latent(&self, w: &LatentCode, op: &'static str) -> Result<()> {
        if w.components() != self.config.components || w.dim() != self.config.dim {
            return Err(AfsError::ShapeMismatch {
                op,
                left: vec![self.config.components, self.config.dim],
                right: vec![w.components(), w.dim()],
            });
        }
        Ok(())
    }

    /// Samples from the latent prior: per component, w_i = Q_i u_i with
    /// u_i standard normal.
    pub fn sample_latent(&self, rng: &mut impl Rng) -> LatentCode {
        let rows = (0..self.config.components)
            .map(|i| {
                let u = Tensor::gaussian(vec![self.config.dim], 1.0, rng);
                self.mixing[i]
                    .matvec(&u)
                    .expect("mixing shape")
                    .data()
                    .to_vec()
            })
            .collect();
        LatentCode::from_components(rows).expect("sampled latent")
    }

    /// Unmixed coordinates u_i = Q_i^T w_i, concatenated: identity block,
    /// style block, late-tap leak block.
    fn unmix(&self, w: &LatentCode) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = self.config.identity_dims;
        let leak = self.config.leak_per_component();
        let mut u_id = Vec::with_capacity(self.config.identity_len());
        let mut u_sty = Vec::with_capacity(self.config.style_len());
        let mut u_leak = Vec::with_capacity(self.config.components * leak);
        for i in 0..self.config.components {
            let u = self.mixing_t[i]
                .matvec(&w.component_tensor(i))
                .expect("unmix shape");
            u_id.extend_from_slice(&u.data()[..k]);
            u_sty.extend_from_slice(&u.data()[k..]);
            u_leak.extend_from_slice(&u.data()[..leak]);
        }
        (u_id, u_sty, u_leak)
    }

    /// Generator: image blocks and the three feature taps.
    pub fn generate(&self, w: &LatentCode) -> Result<Generated> {
        self.check_latent(w, "generate")?;
        let (u_id, u_sty, u_leak) = self.unmix(w);
        let u_id = Tensor::from_raw_unchecked(vec![u_id.len()], u_id);
        let u_sty = Tensor::from_raw_unchecked(vec![u_sty.len()], u_sty);

        let x_id = self.image_id_map.matvec(&u_id)?.tanh()?;
        let x_sty = self.image_sty_map.matvec(&u_sty)?.tanh()?;
        let image = Tensor::concat(&[&x_id, &x_sty])?;

        let early_in = u_sty.slice(0, self.config.early_len())?;
        let tap_early = self.tap_early_map.matvec(&early_in)?.tanh()?;
        let tap_mid = self.tap_mid_map.matvec(&u_sty)?.tanh()?;
        let late_in = Tensor::concat(&[
            &u_sty,
            &Tensor::from_raw_unchecked(vec![u_leak.len()], u_leak),
        ])?;
        let tap_late = self.tap_late_map.matvec(&late_in)?.tanh()?;

        Ok(Generated {
            image,
            taps: [tap_early, tap_mid, tap_late],
        })
    }

    fn check_image(&self, image: &Tensor, op: &'static str) -> Result<()> {
        if image.shape() != [self.config.image_len()] {
            return Err(AfsError::ShapeMismatch {
                op,
                left: vec![self.config.image_len()],
                right: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Identity embedding: unit-normalized readout of the image's identity
    /// block. Rejects a zero readout.
    pub fn embed_identity(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image, "embed_identity")?;
        let x_id = image.slice(0, self.config.image_dims.0)?;
        let e = self.embed_map.matvec(&x_id)?;
        let norm = e.l2_norm();
        if norm == 0.0 {
            return Err(AfsError::ZeroNorm {
                context: "embed_identity",
            });
        }
        e.scale(1.0 / norm)
    }

    /// Perceptual probe: linear readout of the image's style block.
    pub fn perceptual_probe(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image, "perceptual_probe")?;
        let x_sty = image.slice(self.config.image_dims.0, self.config.image_dims.1)?;
        self.probe_map.matvec(&x_sty)
    }

    /// Exact style projection h*(w): per component Q_i P_sty Q_i^T w_i.
    pub fn oracle_style(&self, w: &LatentCode) -> Result<LatentCode> {
        self.check_latent(w, "oracle_style")?;
        let k = self.config.identity_dims;
        let rows = (0..self.config.components)
            .map(|i| {
                let u = self.mixing_t[i]
                    .matvec(&w.component_tensor(i))
                    .expect("unmix shape");
                let mut masked = u.data().to_vec();
                masked[..k].fill(0.0);
                self.mixing[i]
                    .matvec(&Tensor::from_raw_unchecked(vec![self.config.dim], masked))
                    .expect("remix shape")
                    .data()
                    .to_vec()
            })
            .collect();
        LatentCode::from_components(rows)
    }

    /// Exact identity projection, the complement of [`ToyWorld::oracle_style`].
    pub fn oracle_identity(&self, w: &LatentCode) -> Result<LatentCode> {
        w.sub(&self.oracle_style(w)?)
    }

    /// Ground-truth style distance between two codes.
    pub fn oracle_style_dist(&self, a: &LatentCode, b: &LatentCode) -> Result<f64> {
        Ok(self.oracle_style(a)?.frobenius_dist(&self.oracle_style(b)?))
    }

    /// Ground-truth identity distance between two codes.
    pub fn oracle_identity_dist(&self, a: &LatentCode, b: &LatentCode) -> Result<f64> {
        Ok(self
            .oracle_identity(a)?
            .frobenius_dist(&self.oracle_identity(b)?))
    }

    /// Oracle projector as a style extractor.
    pub fn oracle(&self) -> OracleProjector<'_> {
        OracleProjector { world: self }
    }

    // --- tape-recorded variants ---------------------------------------

    /// Inserts the world constants as tape leaves (once per tape).
    pub fn record_on(&self, tape: &mut Tape) -> WorldTape {
        WorldTape {
            mixing_t: self.mixing_t.iter().map(|m| tape.leaf(m.clone())).collect(),
            image_id_map: tape.leaf(self.image_id_map.clone()),
            image_sty_map: tape.leaf(self.image_sty_map.clone()),
            tap_maps: [
                tape.leaf(self.tap_early_map.clone()),
                tape.leaf(self.tap_mid_map.clone()),
                tape.leaf(self.tap_late_map.clone()),
            ],
            embed_map: tape.leaf(self.embed_map.clone()),
            probe_map: tape.leaf(self.probe_map.clone()),
        }
    }

    pub fn generate_on(
        &self,
        tape: &mut Tape,
        ctx: &WorldTape,
        w: &TapeLatent,
    ) -> Result<TapeGenerated> {
        if w.comps.len() != self.config.components {
            return Err(AfsError::ShapeMismatch {
                op: "generate",
                left: vec![self.config.components],
                right: vec![w.comps.len()],
            });
        }
        let k = self.config.identity_dims;
        let d = self.config.dim;
        let leak = self.config.leak_per_component();

        let mut id_parts = Vec::with_capacity(self.config.components);
        let mut sty_parts = Vec::with_capacity(self.config.components);
        let mut leak_parts = Vec::with_capacity(self.config.components);
        for i in 0..self.config.components {
            let u = tape.matvec(ctx.mixing_t[i], w.comps[i])?;
            id_parts.push(tape.slice(u, 0, k)?);
            sty_parts.push(tape.slice(u, k, d - k)?);
            leak_parts.push(tape.slice(u, 0, leak)?);
        }
        let u_id = tape.concat(&id_parts)?;
        let u_sty = tape.concat(&sty_parts)?;
        let u_leak = tape.concat(&leak_parts)?;

        let x_id = tape.matvec(ctx.image_id_map, u_id)?;
        let x_id = tape.tanh(x_id)?;
        let x_sty = tape.matvec(ctx.image_sty_map, u_sty)?;
        let x_sty = tape.tanh(x_sty)?;
        let image = tape.concat(&[x_id, x_sty])?;

        let early_in = tape.slice(u_sty, 0, self.config.early_len())?;
        let tap_early = tape.matvec(ctx.tap_maps[0], early_in)?;
        let tap_early = tape.tanh(tap_early)?;
        let tap_mid = tape.matvec(ctx.tap_maps[1], u_sty)?;
        let tap_mid = tape.tanh(tap_mid)?;
        let late_in = tape.concat(&[u_sty, u_leak])?;
        let tap_late = tape.matvec(ctx.tap_maps[2], late_in)?;
        let tap_late = tape.tanh(tap_late)?;

        Ok(TapeGenerated {
            image,
            taps: [tap_early, tap_mid, tap_late],
        })
    }

    pub fn embed_on(&self, tape: &mut Tape, ctx: &WorldTape, image: ValueId) -> Result<ValueId> {
        self.check_image(tape.value(image), "embed_identity")?;
        let x_id = tape.slice(image, 0, self.config.image_dims.0)?;
        let e = tape.matvec(ctx.embed_map, x_id)?;
        let norm = tape.l2_norm(e)?;
        if tape.value(norm).item() == 0.0 {
            return Err(AfsError::ZeroNorm {
                context: "embed_identity",
            });
        }
        let inv = tape.recip(norm)?;
        tape.vscale(e, inv)
    }

    pub fn probe_on(&self, tape: &mut Tape, ctx: &WorldTape, image: ValueId) -> Result<ValueId> {
        self.check_image(tape.value(image), "perceptual_probe")?;
        let x_sty = tape.slice(image, self.config.image_dims.0, self.config.image_dims.1)?;
        tape.matvec(ctx.probe_map, x_sty)
    }

    // --- persistence ----------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::create(path)?;
        w.bytes(&WORLD_MAGIC)?;
        w.byte(WORLD_VERSION)?;
        for dim in [
            self.config.components,
            self.config.dim,
            self.config.identity_dims,
            self.config.image_dims.0,
            self.config.image_dims.1,
            self.config.embed_dim,
        ] {
            w.u32(dim as u32)?;
        }
        w.u64(self.config.seed)?;
        for q in &self.mixing {
            w.f64_slice(q.data())?;
        }
        for m in [
            &self.image_id_map,
            &self.image_sty_map,
            &self.tap_early_map,
            &self.tap_mid_map,
            &self.tap_late_map,
            &self.embed_map,
            &self.probe_map,
        ] {
            w.f64_slice(m.data())?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = Reader::open(path)?;
        binio::expect_magic(&mut r, WORLD_MAGIC)?;
        binio::expect_version(&mut r, WORLD_VERSION)?;
        let components = r.u32("component count")? as usize;
        let dim = r.u32("dimension")? as usize;
        let identity_dims = r.u32("identity dims")? as usize;
        let p_id = r.u32("identity image dim")? as usize;
        let p_sty = r.u32("style image dim")? as usize;
        let embed_dim = r.u32("embedding dim")? as usize;
        let seed = r.u64("seed")?;
        let config = WorldConfig {
            components,
            dim,
            identity_dims,
            image_dims: (p_id, p_sty),
            embed_dim,
            seed,
        };
        config.validate()?;

        let mut matrix = |rows: usize, cols: usize, what: &str| -> Result<Tensor> {
            let data = r.f64_vec(rows * cols, what)?;
            Tensor::new(vec![rows, cols], data)
        };
        let mixing: Vec<Tensor> = (0..components)
            .map(|_| matrix(dim, dim, "mixing matrix"))
            .collect::<Result<_>>()?;
        let image_id_map = matrix(p_id, config.identity_len(), "identity image map")?;
        let image_sty_map = matrix(p_sty, config.style_len(), "style image map")?;
        let tap_early_map = matrix(p_sty, config.early_len(), "early tap map")?;
        let tap_mid_map = matrix(p_sty, config.style_len(), "mid tap map")?;
        let tap_late_map = matrix(p_sty, config.late_len(), "late tap map")?;
        let embed_map = matrix(config.embed_dim, p_id, "embedding map")?;
        let probe_map = matrix(p_sty, p_sty, "probe map")?;
        r.expect_eof("world matrices")?;

        for q in &mixing {
            if orthogonality_defect(q) >= 1e-10 {
                return Err(AfsError::BadConfig {
                    reason: "stored mixing matrix is not orthogonal".into(),
                });
            }
        }

        Ok(Self {
            mixing_t: mixing.iter().map(transpose).collect(),
            config,
            mixing,
            image_id_map,
            image_sty_map,
            tap_early_map,
            tap_mid_map,
            tap_late_map,
            embed_map,
            probe_map,
        })
    }
}

/// The world's exact style projector, usable wherever a trained extractor is.
#[derive(Clone, Copy)]
pub struct OracleProjector<'w> {
    world: &'w ToyWorld,
}

impl StyleExtractor for OracleProjector<'_> {
    fn components(&self) -> usize {
        self.world.config().components
    }

    fn dim(&self) -> usize {
        self.world.config().dim
    }

    fn extract_style(&self, w: &LatentCode) -> Result<LatentCode> {
        self.world.oracle_style(w)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    use super::*;

    fn small_config(seed: u64) -> WorldConfig {
        WorldConfig {
            components: 3,
            dim: 10,
            identity_dims: 4,
            image_dims: (8, 8),
            embed_dim: 5,
            seed,
        }
    }

    /// A latent sharing `a`'s style coordinates and `b`'s identity coordinates.
    fn mix_codes(world: &ToyWorld, style_of: &LatentCode, identity_of: &LatentCode) -> LatentCode {
        world
            .oracle_style(style_of)
            .unwrap()
            .add(&world.oracle_identity(identity_of).unwrap())
            .unwrap()
    }

    #[test]
    fn construction_is_deterministic() {
        let a = ToyWorld::new(WorldConfig::desk(7)).unwrap();
        let b = ToyWorld::new(WorldConfig::desk(7)).unwrap();
        assert_eq!(a, b);
        let c = ToyWorld::new(WorldConfig::desk(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn smallest_legal_world() {
        let world = ToyWorld::new(WorldConfig {
            components: 1,
            dim: 2,
            identity_dims: 1,
            image_dims: (2, 2),
            embed_dim: 2,
            seed: 5,
        })
        .unwrap();
        assert_eq!(world.mixing(0).shape(), &[2, 2]);
        assert!(orthogonality_defect(world.mixing(0)) < 1e-10);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let w = world.sample_latent(&mut rng);
        world.generate(&w).unwrap();
    }

    #[test]
    fn reference_scale_shapes_accepted() {
        // 18 components of 512 dims with k = 256
        let world = ToyWorld::new(WorldConfig {
            components: 18,
            dim: 512,
            identity_dims: 256,
            image_dims: (8, 8),
            embed_dim: 8,
            seed: 1,
        })
        .unwrap();
        assert_eq!(world.mixing(17).shape(), &[512, 512]);
        assert!(orthogonality_defect(world.mixing(0)) < 1e-10);
    }

    #[test]
    fn rejects_k_out_of_range() {
        let mut cfg = small_config(1);
        cfg.identity_dims = cfg.dim;
        assert!(ToyWorld::new(cfg).is_err());
        let mut cfg = small_config(1);
        cfg.identity_dims = 0;
        assert!(ToyWorld::new(cfg).is_err());
    }

    #[test]
    fn mixing_matrices_are_orthogonal() {
        let world = ToyWorld::new(WorldConfig::desk(3)).unwrap();
        for i in 0..world.config().components {
            assert!(orthogonality_defect(world.mixing(i)) < 1e-10);
        }
    }

    #[test]
    fn prior_is_isotropic() {
        // orthogonal mixing preserves unit per-coordinate variance
        let world = ToyWorld::new(WorldConfig {
            components: 1,
            dim: 4,
            identity_dims: 2,
            image_dims: (4, 4),
            embed_dim: 2,
            seed: 11,
        })
        .unwrap();
        let n = 100_000;
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let mut sums = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        for _ in 0..n {
            let w = world.sample_latent(&mut rng);
            for (j, v) in w.component(0).iter().enumerate() {
                sums[j] += v;
                sq[j] += v * v;
            }
        }
        for j in 0..4 {
            let mean = sums[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            assert!((var - 1.0).abs() < 0.05, "coordinate {j} variance {var}");
        }
    }

    #[test]
    fn sampling_is_deterministic_in_rng_state() {
        let world = ToyWorld::new(small_config(2)).unwrap();
        let a = world.sample_latent(&mut ChaCha12Rng::seed_from_u64(9));
        let b = world.sample_latent(&mut ChaCha12Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_projections_are_complementary_and_idempotent() {
        let world = ToyWorld::new(small_config(13)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..20 {
            let w = world.sample_latent(&mut rng);
            let sty = world.oracle_style(&w).unwrap();
            let id = world.oracle_identity(&w).unwrap();
            assert!(id.add(&sty).unwrap().max_abs_diff(&w) < 1e-12);
            let sty2 = world.oracle_style(&sty).unwrap();
            assert!(sty2.max_abs_diff(&sty) < 1e-12);
        }
    }

    #[test]
    fn oracle_style_zeroes_identity_coordinates() {
        let world = ToyWorld::new(small_config(17)).unwrap();
        let k = world.config().identity_dims;
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        for _ in 0..10 {
            let w = world.sample_latent(&mut rng);
            let sty = world.oracle_style(&w).unwrap();
            for i in 0..world.config().components {
                let u = world.mixing_t[i]
                    .matvec(&sty.component_tensor(i))
                    .unwrap();
                for v in &u.data()[..k] {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn axis_aligned_oracle_is_a_coordinate_mask() {
        let world = ToyWorld::new_axis_aligned(small_config(19)).unwrap();
        let k = world.config().identity_dims;
        let mut rng = ChaCha12Rng::seed_from_u64(35);
        let w = world.sample_latent(&mut rng);
        let sty = world.oracle_style(&w).unwrap();
        for i in 0..world.config().components {
            assert!(sty.component(i)[..k].iter().all(|v| *v == 0.0));
            assert_eq!(&sty.component(i)[k..], &w.component(i)[k..]);
        }

        // unmixed code with zero style coordinates maps to zero style
        let rows = (0..world.config().components)
            .map(|i| {
                let mut r = w.component(i).to_vec();
                r[k..].fill(0.0);
                r
            })
            .collect();
        let pure_id = LatentCode::from_components(rows).unwrap();
        assert_eq!(world.oracle_style(&pure_id).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn equal_style_coordinates_give_equal_early_and_mid_taps() {
        let world = ToyWorld::new(small_config(23)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..10 {
            let a = world.sample_latent(&mut rng);
            let c = world.sample_latent(&mut rng);
            let b = mix_codes(&world, &a, &c); // style of a, identity of c
            let ga = world.generate(&a).unwrap();
            let gb = world.generate(&b).unwrap();
            assert!(ga.tap(Tap::Early).max_abs_diff(gb.tap(Tap::Early)) < 1e-12);
            assert!(ga.tap(Tap::Mid).max_abs_diff(gb.tap(Tap::Mid)) < 1e-12);
            // late tap leaks identity, so it must differ generically
            assert!(ga.tap(Tap::Late).max_abs_diff(gb.tap(Tap::Late)) > 1e-8);
        }
    }

    #[test]
    fn equal_identity_coordinates_give_equal_identity_block_and_embedding() {
        let world = ToyWorld::new(small_config(29)).unwrap();
        let p_id = world.config().image_dims.0;
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..10 {
            let a = world.sample_latent(&mut rng);
            let c = world.sample_latent(&mut rng);
            let b = mix_codes(&world, &c, &a); // identity of a, style of c
            let ga = world.generate(&a).unwrap();
            let gb = world.generate(&b).unwrap();
            assert!(
                ga.image.slice(0, p_id).unwrap().max_abs_diff(&gb.image.slice(0, p_id).unwrap())
                    < 1e-12
            );
            let ea = world.embed_identity(&ga.image).unwrap();
            let eb = world.embed_identity(&gb.image).unwrap();
            let cos = crate::autodiff::cosine_similarity(&ea, &eb).unwrap();
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_is_unit_norm_and_rejects_zero_readout() {
        let world = ToyWorld::new(small_config(31)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let w = world.sample_latent(&mut rng);
        let g = world.generate(&w).unwrap();
        let e = world.embed_identity(&g.image).unwrap();
        assert!((e.l2_norm() - 1.0).abs() < 1e-12);

        // in the axis-aligned world a pure-style latent has an exactly-zero
        // identity block, hence a zero readout
        let world = ToyWorld::new_axis_aligned(small_config(31)).unwrap();
        let w = world.sample_latent(&mut rng);
        let pure_sty = world.oracle_style(&w).unwrap();
        let g = world.generate(&pure_sty).unwrap();
        assert!(matches!(
            world.embed_identity(&g.image),
            Err(AfsError::ZeroNorm { .. })
        ));
    }

    #[test]
    fn independent_pairs_have_near_zero_mean_similarity() {
        let world = ToyWorld::new(small_config(37)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let mut acc = 0.0;
        let n = 1000;
        for _ in 0..n {
            let a = world.sample_latent(&mut rng);
            let b = world.sample_latent(&mut rng);
            let ea = world.embed_identity(&world.generate(&a).unwrap().image).unwrap();
            let eb = world.embed_identity(&world.generate(&b).unwrap().image).unwrap();
            acc += crate::autodiff::cosine_similarity(&ea, &eb).unwrap();
        }
        let mean = acc / n as f64;
        assert!(mean.abs() < 0.1, "mean similarity {mean}");
    }

    #[test]
    fn probe_reads_style_block_linearly() {
        let world = ToyWorld::new(small_config(41)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        let a = world.sample_latent(&mut rng);
        let c = world.sample_latent(&mut rng);
        let b = mix_codes(&world, &a, &c);
        let ga = world.generate(&a).unwrap();
        let gb = world.generate(&b).unwrap();
        let pa = world.perceptual_probe(&ga.image).unwrap();
        let pb = world.perceptual_probe(&gb.image).unwrap();
        assert!(pa.max_abs_diff(&pb) < 1e-12);

        // linear in the style block of the image
        let gc = world.generate(&c).unwrap();
        let summed = {
            let p_id = world.config().image_dims.0;
            let p_sty = world.config().image_dims.1;
            let sa = ga.image.slice(p_id, p_sty).unwrap();
            let sc = gc.image.slice(p_id, p_sty).unwrap();
            let img = Tensor::concat(&[&ga.image.slice(0, p_id).unwrap(), &sa.add(&sc).unwrap()])
                .unwrap();
            world.perceptual_probe(&img).unwrap()
        };
        let pc = world.perceptual_probe(&gc.image).unwrap();
        assert!(summed.max_abs_diff(&pa.add(&pc).unwrap()) < 1e-12);

        // different style coordinates give different probes
        assert!(pa.max_abs_diff(&pc) > 1e-8);
    }

    #[test]
    fn taped_world_matches_plain_world() {
        let world = ToyWorld::new(small_config(43)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(59);
        let w = world.sample_latent(&mut rng);
        let plain = world.generate(&w).unwrap();

        let mut tape = Tape::new();
        let ctx = world.record_on(&mut tape);
        let tw = w.record_on(&mut tape);
        let g = world.generate_on(&mut tape, &ctx, &tw).unwrap();
        assert_eq!(tape.value(g.image), &plain.image);
        for (i, tap) in Tap::ALL.iter().enumerate() {
            assert_eq!(tape.value(g.taps[i]), plain.tap(*tap));
        }

        let e = world.embed_on(&mut tape, &ctx, g.image).unwrap();
        assert_eq!(
            tape.value(e),
            &world.embed_identity(&plain.image).unwrap()
        );
        let p = world.probe_on(&mut tape, &ctx, g.image).unwrap();
        assert_eq!(
            tape.value(p),
            &world.perceptual_probe(&plain.image).unwrap()
        );
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.afsw");
        let world = ToyWorld::new(small_config(47)).unwrap();
        world.save(&path).unwrap();
        let loaded = ToyWorld::load(&path).unwrap();
        assert_eq!(world, loaded);
    }

    #[test]
    fn load_rejects_corruption_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.afsw");
        let world = ToyWorld::new(small_config(53)).unwrap();
        world.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // corrupt magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            ToyWorld::load(&path),
            Err(AfsError::BadMagic { .. })
        ));

        // bad version
        let mut bad = bytes.clone();
        bad[4] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            ToyWorld::load(&path),
            Err(AfsError::BadVersion { found: 99, .. })
        ));

        // truncation
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            ToyWorld::load(&path),
            Err(AfsError::Truncated { .. })
        ));

        // trailing garbage
        let mut bad = bytes.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            ToyWorld::load(&path),
            Err(AfsError::TrailingBytes { .. })
        ));
    }

    #[test]
    fn latent_roundtrip_and_tap_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("code.afsl");
        let world = ToyWorld::new(small_config(59)).unwrap();
        let w = world.sample_latent(&mut ChaCha12Rng::seed_from_u64(61));
        w.save(&path).unwrap();
        assert_eq!(LatentCode::load(&path).unwrap(), w);

        assert_eq!("mid".parse::<Tap>().unwrap(), Tap::Mid);
        let err = "deep".parse::<Tap>().unwrap_err().to_string();
        assert!(err.contains("deep"));
    }
}
