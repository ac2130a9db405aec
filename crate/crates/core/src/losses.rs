//! The four training losses and their weighted sum, evaluated in the world.
//!
//! Each loss has a plain path (used for evaluation and logging) and a
//! tape-recorded path (used for training gradients); the two compute the
//! same arithmetic in the same order.

use crate::algebra::swap;
use crate::autodiff::{cosine, cosine_similarity, grad_check, Tape, Tensor, ValueId};
use crate::extractor::{extract_style_on, swap_on, StyleExtractor, StyleExtractorParams, TapeParams};
use crate::trainer::TrainConfig;
use crate::world::{LatentCode, Tap, ToyWorld, WorldTape};
use crate::Result;

/// Per-component evaluation of the four losses plus their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub id_loss: f64,
    pub feat_loss: f64,
    pub lpips_loss: f64,
    pub cons_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Reassembles the total from components with the coefficients in
    /// force; the stored total always equals this expression.
    pub fn weighted(cfg: &TrainConfig, id: f64, feat: f64, lpips: f64, cons: f64) -> Self {
        let total =
            ((cfg.lambda1 * id + cfg.lambda2 * feat) + cfg.lambda3 * lpips) + cfg.lambda4 * cons;
        Self {
            id_loss: id,
            feat_loss: feat,
            lpips_loss: lpips,
            cons_loss: cons,
            total,
        }
    }

    pub fn max_component(&self) -> f64 {
        self.id_loss
            .max(self.feat_loss)
            .max(self.lpips_loss)
            .max(self.cons_loss)
    }
}

/// Identity loss: 1 - cos of the identity embeddings of the swapped and
/// source images. Range [0, 2].
pub fn loss_id(world: &ToyWorld, w_tilde: &LatentCode, w_s: &LatentCode) -> Result<f64> {
    let e_tilde = world.embed_identity(&world.generate(w_tilde)?.image)?;
    let e_s = world.embed_identity(&world.generate(w_s)?.image)?;
    Ok(1.0 - cosine_similarity(&e_tilde, &e_s)?)
}

/// Feature-map loss: L2 distance between the chosen tap's features for the
/// swapped and target codes.
pub fn loss_feat(world: &ToyWorld, w_tilde: &LatentCode, w_t: &LatentCode, tap: Tap) -> Result<f64> {
    let a = world.generate(w_tilde)?;
    let b = world.generate(w_t)?;
    Ok(a.tap(tap).sub(b.tap(tap))?.l2_norm())
}

/// Perceptual loss: L2 distance between probe outputs.
pub fn loss_lpips(world: &ToyWorld, w_tilde: &LatentCode, w_t: &LatentCode) -> Result<f64> {
    let a = world.perceptual_probe(&world.generate(w_tilde)?.image)?;
    let b = world.perceptual_probe(&world.generate(w_t)?.image)?;
    Ok(a.sub(&b)?.l2_norm())
}

/// Consistency loss: entrywise L1 distance between h(w_tilde) and h(w_t),
/// summed per component in order.
pub fn loss_cons(
    h: &impl StyleExtractor,
    w_tilde: &LatentCode,
    w_t: &LatentCode,
) -> Result<f64> {
    let a = h.extract_style(w_tilde)?;
    let b = h.extract_style(w_t)?;
    let mut acc = 0.0;
    for i in 0..a.components() {
        acc += a.component_tensor(i).sub(&b.component_tensor(i))?.l1_norm();
    }
    Ok(acc)
}

/// Swaps once, evaluates all four losses on the result.
pub fn total_loss(
    world: &ToyWorld,
    h: &impl StyleExtractor,
    w_s: &LatentCode,
    w_t: &LatentCode,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    cfg.validate_lambdas()?;
    let w_tilde = swap(h, w_s, w_t)?;
    let id = loss_id(world, &w_tilde, w_s)?;
    let feat = loss_feat(world, &w_tilde, w_t, cfg.tap)?;
    let lpips = loss_lpips(world, &w_tilde, w_t)?;
    let cons = loss_cons(h, &w_tilde, w_t)?;
    Ok(LossBreakdown::weighted(cfg, id, feat, lpips, cons))
}

/// Recorded loss values for one source-target pair.
pub struct TapeLoss {
    pub id: ValueId,
    pub feat: ValueId,
    pub lpips: ValueId,
    pub cons: ValueId,
    pub total: ValueId,
}

/// Records the full loss graph for one pair: swap, generate, all four
/// losses, weighted total. Gradients flow to the extractor parameters.
pub fn total_loss_on(
    tape: &mut Tape,
    world: &ToyWorld,
    ctx: &WorldTape,
    params: &TapeParams,
    w_s: &LatentCode,
    w_t: &LatentCode,
    cfg: &TrainConfig,
) -> Result<TapeLoss> {
    cfg.validate_lambdas()?;
    let tw_s = w_s.record_on(tape);
    let tw_t = w_t.record_on(tape);
    let sty_s = extract_style_on(tape, params, &tw_s)?;
    let sty_t = extract_style_on(tape, params, &tw_t)?;
    let tw_tilde = swap_on(tape, &tw_s, &sty_s, &sty_t)?;

    let g_tilde = world.generate_on(tape, ctx, &tw_tilde)?;
    let g_s = world.generate_on(tape, ctx, &tw_s)?;
    let g_t = world.generate_on(tape, ctx, &tw_t)?;

    let e_tilde = world.embed_on(tape, ctx, g_tilde.image)?;
    let e_s = world.embed_on(tape, ctx, g_s.image)?;
    let cos = cosine(tape, e_tilde, e_s)?;
    let one = tape.leaf(Tensor::scalar(1.0)?);
    let id = tape.sub(one, cos)?;

    let tap_diff = tape.sub(g_tilde.tap(cfg.tap), g_t.tap(cfg.tap))?;
    let feat = tape.l2_norm(tap_diff)?;

    let p_tilde = world.probe_on(tape, ctx, g_tilde.image)?;
    let p_t = world.probe_on(tape, ctx, g_t.image)?;
    let probe_diff = tape.sub(p_tilde, p_t)?;
    let lpips = tape.l2_norm(probe_diff)?;

    let sty_tilde = extract_style_on(tape, params, &tw_tilde)?;
    let mut cons: Option<ValueId> = None;
    for i in 0..sty_tilde.comps.len() {
        let diff = tape.sub(sty_tilde.comps[i], sty_t.comps[i])?;
        let l1 = tape.l1_norm(diff)?;
        cons = Some(match cons {
            None => l1,
            Some(acc) => tape.add(acc, l1)?,
        });
    }
    let cons = cons.expect("at least one component");

    let t1 = tape.scale(id, cfg.lambda1)?;
    let t2 = tape.scale(feat, cfg.lambda2)?;
    let t12 = tape.add(t1, t2)?;
    let t3 = tape.scale(lpips, cfg.lambda3)?;
    let t123 = tape.add(t12, t3)?;
    let t4 = tape.scale(cons, cfg.lambda4)?;
    let total = tape.add(t123, t4)?;

    Ok(TapeLoss {
        id,
        feat,
        lpips,
        cons,
        total,
    })
}

/// Finite-difference check of the total-loss gradient with respect to every
/// parameter block; returns the worst relative error over all blocks.
pub fn grad_check_total_loss(
    world: &ToyWorld,
    params: &StyleExtractorParams,
    w_s: &LatentCode,
    w_t: &LatentCode,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for bi in 0..params.block_count() {
        let x = params.blocks()[bi].clone();
        let err = grad_check(
            |tape, xid| {
                let ctx = world.record_on(tape);
                let tp = params.record_with_substitute(tape, (bi, xid))?;
                let loss = total_loss_on(tape, world, &ctx, &tp, w_s, w_t, cfg)?;
                Ok(loss.total)
            },
            &x,
            1e-6,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}
