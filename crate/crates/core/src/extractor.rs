//! The style extractor network h: per-component sub-networks mapping w_i to
//! its style part. Identity is always the subtraction w - h(w), so the
//! additive decomposition holds by construction, never by training.
//!
//! Each sub-network is FC-in (no nonlinearity), a stack of highway layers,
//! and FC-out. There is no weight sharing across components.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::rngstream::{self, TAG_EXTRACTOR_INIT};
use crate::world::{LatentCode, TapeLatent};
use crate::{AfsError, Result};

/// Anything that splits a latent code into style and identity parts.
pub trait StyleExtractor {
    fn components(&self) -> usize;
    fn dim(&self) -> usize;

    /// w_sty = h(w).
    fn extract_style(&self, w: &LatentCode) -> Result<LatentCode>;

    /// w_id = w - h(w).
    fn extract_identity(&self, w: &LatentCode) -> Result<LatentCode> {
        w.sub(&self.extract_style(w)?)
    }
}

/// One highway layer: y = T (.) H + (1 - T) (.) x with
/// T = sigmoid(gate_w x + gate_b) and H = tanh(transform_w x + transform_b).
#[derive(Clone, Debug, PartialEq)]
pub struct HighwayParams {
    pub gate_w: Tensor,
    pub gate_b: Tensor,
    pub transform_w: Tensor,
    pub transform_b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentParams {
    pub in_w: Tensor,
    pub in_b: Tensor,
    pub highway: Vec<HighwayParams>,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

/// Parameters of the full extractor: one sub-network per component.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleExtractorParams {
    dim: usize,
    hidden: usize,
    n_highway: usize,
    comps: Vec<ComponentParams>,
}

pub fn highway_layer(
    x: &Tensor,
    gate_w: &Tensor,
    gate_b: &Tensor,
    transform_w: &Tensor,
    transform_b: &Tensor,
) -> Result<Tensor> {
    let t = gate_w.matvec(x)?.add(gate_b)?.sigmoid()?;
    let h = transform_w.matvec(x)?.add(transform_b)?.tanh()?;
    let th = t.mul(&h)?;
    let ones = Tensor::filled(t.shape().to_vec(), 1.0)?;
    let carry = ones.sub(&t)?.mul(x)?;
    th.add(&carry)
}

impl StyleExtractorParams {
    /// Fresh parameters: weights N(0, 1/fan_in), highway gate biases -1
    /// (near-pass-through start), other biases 0. Deterministic in seed.
    pub fn init(components: usize, dim: usize, hidden: usize, n_highway: usize, seed: u64) -> Self {
        assert!(components >= 1 && dim >= 1 && hidden >= 1);
        let mut rng = rngstream::stream(seed, TAG_EXTRACTOR_INIT, 0);
        fn weight(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
            Tensor::gaussian(vec![rows, cols], (1.0 / cols as f64).sqrt(), rng)
        }
        let comps = (0..components)
            .map(|_| {
                let in_w = weight(hidden, dim, &mut rng);
                let in_b = Tensor::zeros(vec![hidden]);
                let highway = (0..n_highway)
                    .map(|_| HighwayParams {
                        gate_w: weight(hidden, hidden, &mut rng),
                        gate_b: Tensor::filled(vec![hidden], -1.0).expect("gate bias"),
                        transform_w: weight(hidden, hidden, &mut rng),
                        transform_b: Tensor::zeros(vec![hidden]),
                    })
                    .collect();
                let out_w = weight(dim, hidden, &mut rng);
                let out_b = Tensor::zeros(vec![dim]);
                ComponentParams {
                    in_w,
                    in_b,
                    highway,
                    out_w,
                    out_b,
                }
            })
            .collect();
        Self {
            dim,
            hidden,
            n_highway,
            comps,
        }
    }

    /// All entries zero; h(w) = 0 for every w.
    pub fn zeros(components: usize, dim: usize, hidden: usize, n_highway: usize) -> Self {
        let comps = (0..components)
            .map(|_| ComponentParams {
                in_w: Tensor::zeros(vec![hidden, dim]),
                in_b: Tensor::zeros(vec![hidden]),
                highway: (0..n_highway)
                    .map(|_| HighwayParams {
                        gate_w: Tensor::zeros(vec![hidden, hidden]),
                        gate_b: Tensor::zeros(vec![hidden]),
                        transform_w: Tensor::zeros(vec![hidden, hidden]),
                        transform_b: Tensor::zeros(vec![hidden]),
                    })
                    .collect(),
                out_w: Tensor::zeros(vec![dim, hidden]),
                out_b: Tensor::zeros(vec![dim]),
            })
            .collect();
        Self {
            dim,
            hidden,
            n_highway,
            comps,
        }
    }

    /// The default architecture for a world: hidden size d/2, two highway
    /// layers.
    pub fn default_for_world(world_cfg: &crate::world::WorldConfig, seed: u64) -> Self {
        let hidden = (world_cfg.dim / 2).max(1);
        Self::init(world_cfg.components, world_cfg.dim, hidden, 2, seed)
    }

    /// Rebuilds parameters from per-component blocks (checkpoint loading).
    /// Every block shape is validated against (dim, hidden, n_highway).
    pub fn from_components(
        dim: usize,
        hidden: usize,
        n_highway: usize,
        comps: Vec<ComponentParams>,
    ) -> Result<Self> {
        if comps.is_empty() {
            return Err(AfsError::Empty {
                what: "extractor components",
            });
        }
        let check = |t: &Tensor, shape: &[usize], what: &'static str| -> Result<()> {
            if t.shape() != shape {
                return Err(AfsError::ShapeMismatch {
                    op: what,
                    left: shape.to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            Ok(())
        };
        for c in &comps {
            check(&c.in_w, &[hidden, dim], "extractor in_w")?;
            check(&c.in_b, &[hidden], "extractor in_b")?;
            if c.highway.len() != n_highway {
                return Err(AfsError::DimMismatch {
                    context: "extractor highway stack",
                    expected: n_highway.to_string(),
                    got: c.highway.len().to_string(),
                });
            }
            for hw in &c.highway {
                check(&hw.gate_w, &[hidden, hidden], "extractor gate_w")?;
                check(&hw.gate_b, &[hidden], "extractor gate_b")?;
                check(&hw.transform_w, &[hidden, hidden], "extractor transform_w")?;
                check(&hw.transform_b, &[hidden], "extractor transform_b")?;
            }
            check(&c.out_w, &[dim, hidden], "extractor out_w")?;
            check(&c.out_b, &[dim], "extractor out_b")?;
        }
        Ok(Self {
            dim,
            hidden,
            n_highway,
            comps,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_highway(&self) -> usize {
        self.n_highway
    }

    pub fn component(&self, i: usize) -> &ComponentParams {
        &self.comps[i]
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Parameter blocks in canonical (serialization) order.
    pub fn blocks(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(self.comps.len() * (4 + 4 * self.n_highway));
        for c in &self.comps {
            out.push(&c.in_w);
            out.push(&c.in_b);
            for hw in &c.highway {
                out.push(&hw.gate_w);
                out.push(&hw.gate_b);
                out.push(&hw.transform_w);
                out.push(&hw.transform_b);
            }
            out.push(&c.out_w);
            out.push(&c.out_b);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(self.comps.len() * (4 + 4 * self.n_highway));
        for c in &mut self.comps {
            out.push(&mut c.in_w);
            out.push(&mut c.in_b);
            for hw in &mut c.highway {
                out.push(&mut hw.gate_w);
                out.push(&mut hw.gate_b);
                out.push(&mut hw.transform_w);
                out.push(&mut hw.transform_b);
            }
            out.push(&mut c.out_w);
            out.push(&mut c.out_b);
        }
        out
    }

    pub fn block_count(&self) -> usize {
        self.comps.len() * (4 + 4 * self.n_highway)
    }

    pub fn block_label(&self, index: usize) -> String {
        let per = 4 + 4 * self.n_highway;
        let comp = index / per;
        let within = index % per;
        let name = if within == 0 {
            "in_w".to_string()
        } else if within == 1 {
            "in_b".to_string()
        } else if within < 2 + 4 * self.n_highway {
            let layer = (within - 2) / 4;
            let part = ["gate_w", "gate_b", "transform_w", "transform_b"][(within - 2) % 4];
            format!("highway{layer}.{part}")
        } else if within == 2 + 4 * self.n_highway {
            "out_w".to_string()
        } else {
            "out_b".to_string()
        };
        format!("comp{comp}.{name}")
    }

    fn check_latent(&self, w: &LatentCode, op: &'static str) -> Result<()> {
        if w.components() != self.comps.len() || w.dim() != self.dim {
            return Err(AfsError::ShapeMismatch {
                op,
                left: vec![self.comps.len(), self.dim],
                right: vec![w.components(), w.dim()],
            });
        }
        Ok(())
    }

    fn forward_component(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let c = &self.comps[i];
        let mut z = c.in_w.matvec(x)?.add(&c.in_b)?;
        for hw in &c.highway {
            z = highway_layer(&z, &hw.gate_w, &hw.gate_b, &hw.transform_w, &hw.transform_b)?;
        }
        c.out_w.matvec(&z)?.add(&c.out_b)
    }

    // --- tape-recorded variants ---------------------------------------

    /// Inserts every parameter block as a tape leaf (once per tape).
    pub fn record_on(&self, tape: &mut Tape) -> TapeParams {
        let block_ids = self.blocks().iter().map(|b| tape.leaf((*b).clone())).collect();
        TapeParams {
            block_ids,
            n_highway: self.n_highway,
            hidden: self.hidden,
            dim: self.dim,
        }
    }

    /// Like [`StyleExtractorParams::record_on`] but block `substitute.0`
    /// is taken from an existing tape value instead (used to differentiate
    /// a loss with respect to a single block).
    pub fn record_with_substitute(
        &self,
        tape: &mut Tape,
        substitute: (usize, ValueId),
    ) -> Result<TapeParams> {
        let (index, sub) = substitute;
        let blocks = self.blocks();
        if tape.value(sub).shape() != blocks[index].shape() {
            return Err(AfsError::ShapeMismatch {
                op: "parameter substitute",
                left: blocks[index].shape().to_vec(),
                right: tape.value(sub).shape().to_vec(),
            });
        }
        let block_ids = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| if i == index { sub } else { tape.leaf((*b).clone()) })
            .collect();
        Ok(TapeParams {
            block_ids,
            n_highway: self.n_highway,
            hidden: self.hidden,
            dim: self.dim,
        })
    }
}

impl StyleExtractor for StyleExtractorParams {
    fn components(&self) -> usize {
        self.comps.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract_style(&self, w: &LatentCode) -> Result<LatentCode> {
        self.check_latent(w, "extract_style")?;
        let rows = (0..self.comps.len())
            .map(|i| {
                Ok(self
                    .forward_component(i, &w.component_tensor(i))?
                    .data()
                    .to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        LatentCode::from_components(rows)
    }
}

/// h = 0: style is always zero, identity is the whole code.
#[derive(Clone, Copy, Debug)]
pub struct ZeroExtractor {
    pub components: usize,
    pub dim: usize,
}

impl StyleExtractor for ZeroExtractor {
    fn components(&self) -> usize {
        self.components
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract_style(&self, w: &LatentCode) -> Result<LatentCode> {
        if w.components() != self.components || w.dim() != self.dim {
            return Err(AfsError::ShapeMismatch {
                op: "extract_style",
                left: vec![self.components, self.dim],
                right: vec![w.components(), w.dim()],
            });
        }
        Ok(LatentCode::zeros(self.components, self.dim))
    }
}

/// Extractor parameters recorded on a tape, in canonical block order.
pub struct TapeParams {
    block_ids: Vec<ValueId>,
    n_highway: usize,
    hidden: usize,
    dim: usize,
}

impl TapeParams {
    pub fn block_ids(&self) -> &[ValueId] {
        &self.block_ids
    }

    fn component_blocks(&self, i: usize) -> &[ValueId] {
        let per = 4 + 4 * self.n_highway;
        &self.block_ids[i * per..(i + 1) * per]
    }

    pub fn components(&self) -> usize {
        let per = 4 + 4 * self.n_highway;
        self.block_ids.len() / per
    }
}

/// Recorded forward pass of the extractor over a recorded latent.
pub fn extract_style_on(tape: &mut Tape, params: &TapeParams, w: &TapeLatent) -> Result<TapeLatent> {
    if w.comps.len() != params.components() {
        return Err(AfsError::ShapeMismatch {
            op: "extract_style",
            left: vec![params.components(), params.dim],
            right: vec![w.comps.len()],
        });
    }
    let ones = tape.leaf(Tensor::filled(vec![params.hidden], 1.0)?);
    let mut outputs = Vec::with_capacity(w.comps.len());
    for (i, &wi) in w.comps.iter().enumerate() {
        let b = params.component_blocks(i);
        let (in_w, in_b) = (b[0], b[1]);
        let (out_w, out_b) = (b[b.len() - 2], b[b.len() - 1]);

        let z0 = tape.matvec(in_w, wi)?;
        let mut z = tape.add(z0, in_b)?;
        for layer in 0..params.n_highway {
            let hw = &b[2 + 4 * layer..2 + 4 * (layer + 1)];
            let (gate_w, gate_b, transform_w, transform_b) = (hw[0], hw[1], hw[2], hw[3]);
            let tg = tape.matvec(gate_w, z)?;
            let tg = tape.add(tg, gate_b)?;
            let t = tape.sigmoid(tg)?;
            let ht = tape.matvec(transform_w, z)?;
            let ht = tape.add(ht, transform_b)?;
            let h = tape.tanh(ht)?;
            let th = tape.mul(t, h)?;
            let omt = tape.sub(ones, t)?;
            let carry = tape.mul(omt, z)?;
            z = tape.add(th, carry)?;
        }
        let y = tape.matvec(out_w, z)?;
        outputs.push(tape.add(y, out_b)?);
    }
    Ok(TapeLatent { comps: outputs })
}

/// Recorded swap: per component, w_s - h(w_s) + h(w_t).
pub fn swap_on(
    tape: &mut Tape,
    w_s: &TapeLatent,
    sty_s: &TapeLatent,
    sty_t: &TapeLatent,
) -> Result<TapeLatent> {
    let mut comps = Vec::with_capacity(w_s.comps.len());
    for i in 0..w_s.comps.len() {
        let id = tape.sub(w_s.comps[i], sty_s.comps[i])?;
        comps.push(tape.add(id, sty_t.comps[i])?);
    }
    Ok(TapeLatent { comps })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    use super::*;
    use crate::world::{ToyWorld, WorldConfig};

    fn random_latent(l: usize, d: usize, seed: u64) -> LatentCode {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        LatentCode::new(Tensor::gaussian(vec![l, d], 1.0, &mut rng)).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = StyleExtractorParams::init(4, 32, 16, 2, 1);
        let b = StyleExtractorParams::init(4, 32, 16, 2, 1);
        assert_eq!(a, b);
        let c = StyleExtractorParams::init(4, 32, 16, 2, 2);
        assert_ne!(a, c);
    }

    #[test]
    fn reference_scale_shapes() {
        // 18 components of 512 dims, hidden 256, 2 highway layers
        let p = StyleExtractorParams::init(18, 512, 256, 2, 0);
        let c = p.component(0);
        assert_eq!(c.in_w.shape(), &[256, 512]);
        assert_eq!(c.highway[0].gate_w.shape(), &[256, 256]);
        assert_eq!(c.out_w.shape(), &[512, 256]);
        let per_comp = 256 * 512 + 256 + 2 * (2 * (256 * 256 + 256)) + 512 * 256 + 512;
        assert_eq!(p.param_count(), 18 * per_comp);
    }

    #[test]
    fn no_highway_layers_is_legal() {
        let p = StyleExtractorParams::init(2, 8, 4, 0, 3);
        let w = random_latent(2, 8, 9);
        let s = p.extract_style(&w).unwrap();
        assert_eq!(s.components(), 2);
        assert_eq!(s.dim(), 8);
    }

    #[test]
    fn highway_gate_limits() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let h = 6;
        let x = Tensor::gaussian(vec![h], 1.0, &mut rng);
        let gate_w = Tensor::zeros(vec![h, h]);
        let transform_w = Tensor::gaussian(vec![h, h], 0.5, &mut rng);
        let transform_b = Tensor::gaussian(vec![h], 0.5, &mut rng);

        // gate driven to 0: output is the input
        let closed = Tensor::filled(vec![h], -40.0).unwrap();
        let y = highway_layer(&x, &gate_w, &closed, &transform_w, &transform_b).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);

        // gate driven to 1: output is the transform branch
        let open = Tensor::filled(vec![h], 40.0).unwrap();
        let y = highway_layer(&x, &gate_w, &open, &transform_w, &transform_b).unwrap();
        let h_branch = transform_w.matvec(&x).unwrap().add(&transform_b).unwrap().tanh().unwrap();
        assert!(y.max_abs_diff(&h_branch) < 1e-12);
    }

    #[test]
    fn fresh_init_is_biased_toward_pass_through() {
        // with gate_b = -1 the output stays closer to x than the transform
        // branch does, on average
        let p = StyleExtractorParams::init(1, 16, 8, 1, 7);
        let c = p.component(0);
        let hw = &c.highway[0];
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut closer = 0;
        let trials = 200;
        for _ in 0..trials {
            let x = Tensor::gaussian(vec![8], 1.0, &mut rng);
            let y =
                highway_layer(&x, &hw.gate_w, &hw.gate_b, &hw.transform_w, &hw.transform_b)
                    .unwrap();
            let h = hw
                .transform_w
                .matvec(&x)
                .unwrap()
                .add(&hw.transform_b)
                .unwrap()
                .tanh()
                .unwrap();
            let dy = y.sub(&x).unwrap().l2_norm();
            let dh = h.sub(&x).unwrap().l2_norm();
            if dy < dh {
                closer += 1;
            }
        }
        assert!(closer > trials * 9 / 10, "only {closer}/{trials} closer");
    }

    #[test]
    fn zero_parameters_give_zero_style_and_identity_is_input() {
        let p = StyleExtractorParams::zeros(3, 8, 4, 2);
        let w = random_latent(3, 8, 11);
        let s = p.extract_style(&w).unwrap();
        assert_eq!(s.flat().iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        assert_eq!(p.extract_identity(&w).unwrap(), w);
    }

    #[test]
    fn component_locality() {
        let p = StyleExtractorParams::init(3, 8, 4, 2, 13);
        let w = random_latent(3, 8, 14);
        let s0 = p.extract_style(&w).unwrap();

        // perturb only component 1
        let mut rows: Vec<Vec<f64>> = (0..3).map(|i| w.component(i).to_vec()).collect();
        rows[1][3] += 0.5;
        let w2 = LatentCode::from_components(rows).unwrap();
        let s1 = p.extract_style(&w2).unwrap();

        for i in [0usize, 2] {
            assert_eq!(s0.component(i), s1.component(i));
        }
        assert_ne!(s0.component(1), s1.component(1));
    }

    #[test]
    fn additive_completeness() {
        let p = StyleExtractorParams::init(4, 16, 8, 2, 17);
        for seed in 0..20 {
            let w = random_latent(4, 16, 100 + seed);
            let s = p.extract_style(&w).unwrap();
            let i = p.extract_identity(&w).unwrap();
            assert!(i.add(&s).unwrap().max_abs_diff(&w) < 1e-12);
        }
    }

    #[test]
    fn oracle_substitution_matches_world_projection() {
        let world = ToyWorld::new(WorldConfig {
            components: 2,
            dim: 8,
            identity_dims: 4,
            image_dims: (8, 8),
            embed_dim: 4,
            seed: 3,
        })
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let w = world.sample_latent(&mut rng);
        let h = world.oracle();
        assert_eq!(
            h.extract_identity(&w).unwrap(),
            world.oracle_identity(&w).unwrap()
        );
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = StyleExtractorParams::init(3, 8, 4, 1, 1);
        let w = random_latent(2, 8, 1);
        assert!(matches!(
            p.extract_style(&w),
            Err(AfsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn taped_forward_matches_plain() {
        let p = StyleExtractorParams::init(3, 10, 5, 2, 23);
        let w = random_latent(3, 10, 29);
        let plain = p.extract_style(&w).unwrap();

        let mut tape = Tape::new();
        let tp = p.record_on(&mut tape);
        let tw = w.record_on(&mut tape);
        let ts = extract_style_on(&mut tape, &tp, &tw).unwrap();
        let taped = ts.read(&tape).unwrap();
        assert_eq!(plain, taped);
    }

    #[test]
    fn block_labels_cover_all_blocks() {
        let p = StyleExtractorParams::init(2, 8, 4, 2, 1);
        assert_eq!(p.block_count(), p.blocks().len());
        let labels: Vec<String> = (0..p.block_count()).map(|i| p.block_label(i)).collect();
        assert_eq!(labels[0], "comp0.in_w");
        assert_eq!(labels[2], "comp0.highway0.gate_w");
        assert_eq!(labels.last().unwrap(), "comp1.out_b");
    }
}
