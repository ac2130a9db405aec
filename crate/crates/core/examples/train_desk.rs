//! Trains the desk-scale configuration and prints held-out swap metrics.
//!
//! Environment overrides (probing aid): IMG, EMBED, STEPS, LR0, WSEED, TSEED.

use afs_core::eval::{mean_swap_metrics, sample_eval_pairs};
use afs_core::extractor::StyleExtractorParams;
use afs_core::trainer::{train, TrainConfig};
use afs_core::world::{ToyWorld, WorldConfig};

fn envu(k: &str, d: u64) -> u64 {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}
fn envf(k: &str, d: f64) -> f64 {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() {
    let t0 = std::time::Instant::now();
    let img = envu("IMG", 32) as usize;
    let embed = envu("EMBED", 16) as usize;
    let mut wc = WorldConfig::desk(envu("WSEED", 11));
    wc.image_dims = (img, img);
    wc.embed_dim = embed;
    let world = ToyWorld::new(wc).unwrap();
    let mut cfg = TrainConfig::desk(envu("TSEED", 1));
    cfg.total_steps = envu("STEPS", 20_000);
    cfg.lr0 = envf("LR0", 1e-4);
    let init = StyleExtractorParams::default_for_world(world.config(), cfg.seed);

    let pairs = sample_eval_pairs(&world, 500, 999);
    let before = mean_swap_metrics(&world, &init, &pairs).unwrap();
    println!(
        "untrained: id_sim {:.4} sty_err {:.4} gt_sty {:.4} (src-tgt dist {:.4})",
        before.identity_similarity,
        before.style_error,
        before.ground_truth_sty_error,
        before.source_target_style_dist
    );

    let out = train(&world, init, &cfg, None).unwrap();
    println!("trained in {:.1?}", t0.elapsed());
    let first = &out.history[0];
    let last = out.history.last().unwrap();
    println!(
        "step {}: id {:.4} feat {:.4} lpips {:.4} cons {:.4} total {:.4}",
        first.step, first.loss.id_loss, first.loss.feat_loss, first.loss.lpips_loss,
        first.loss.cons_loss, first.loss.total
    );
    println!(
        "step {}: id {:.4} feat {:.4} lpips {:.4} cons {:.4} total {:.4}",
        last.step, last.loss.id_loss, last.loss.feat_loss, last.loss.lpips_loss,
        last.loss.cons_loss, last.loss.total
    );

    let after = mean_swap_metrics(&world, &out.params, &pairs).unwrap();
    println!(
        "trained:  id_sim {:.4} sty_err {:.4} feat_mid {:.4} gt_sty {:.4} ratio {:.4}",
        after.identity_similarity,
        after.style_error,
        after.feat_mid_error,
        after.ground_truth_sty_error,
        after.ground_truth_sty_error / after.source_target_style_dist
    );
}
