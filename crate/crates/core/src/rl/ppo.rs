use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, normalize_advantages, PPOConfig, Policy, PpoLoss, PpoTarget, Rollout};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, AdamW};
use crate::scene::World;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub updates: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Largest |ratio − 1| of the first minibatch, before any update.
    pub initial_ratio_dev: f64,
    pub grad_norm: f64,
}

/// Clipped PPO over all experiences of `rollout`: `epochs_per_batch` passes
/// over shuffled minibatches, one AdamW step per minibatch.
pub fn ppo_update(
    policy: &mut Policy,
    worlds: &[World],
    rollout: &Rollout,
    cfg: &PPOConfig,
    lr: f64,
    seed: u64,
    parallel: bool,
) -> Result<PpoStats> {
    let n = rollout.experiences.len();
    if n == 0 {
        return Err(Error::Empty("rollout experiences"));
    }
    let mut adv: Vec<f64> = rollout.experiences.iter().map(|x| x.advantage).collect();
    normalize_advantages(&mut adv);
    let targets: Vec<PpoTarget> = rollout
        .experiences
        .iter()
        .zip(&adv)
        .map(|(x, &a)| PpoTarget { action: x.raw_action, old_log_prob: x.log_prob, advantage: a, ret: x.ret })
        .collect();
    let (frames, offsets) = rollout.frames(worlds);
    let opt = AdamW::new(lr).with_weight_decay(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats::default();
    let mut clipped = 0usize;
    let mut seen = 0usize;
    for _ in 0..cfg.epochs_per_batch {
        order.shuffle(&mut rng);
        for mb in order.chunks(cfg.minibatch) {
            let samples: Vec<_> = mb.iter().map(|&i| rollout.sample(&offsets, i)).collect();
            let tg: Vec<PpoTarget> = mb.iter().map(|&i| targets[i]).collect();
            let ws = policy.store.snapshot::<f32>();
            let mut grads = policy.store.zero_grads::<f32>();
            let loss = PpoLoss::new(policy, &tg, cfg.clip_eps, cfg.value_coef, cfg.entropy_coef);
            check_finite(policy.batch_loss(&ws, &frames, &samples, &loss, Some(&mut grads), parallel)?, "ppo loss")?;
            let s = *loss.stats.lock().unwrap();
            drop(loss);
            if stats.updates == 0 {
                stats.initial_ratio_dev = s.max_ratio_dev;
            }
            let w = mb.len() as f64;
            stats.policy_loss += s.policy_loss * w;
            stats.value_loss += s.value_loss * w;
            stats.approx_kl += s.approx_kl * w;
            clipped += s.clipped;
            seen += mb.len();
            if !grads.is_finite() {
                return Err(Error::NonFinite("ppo gradient"));
            }
            stats.grad_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            policy.store.set_grads(&grads)?;
            opt.step(&mut policy.store)?;
            stats.updates += 1;
        }
    }
    let seen_f = seen.max(1) as f64;
    stats.policy_loss /= seen_f;
    stats.value_loss /= seen_f;
    stats.approx_kl /= seen_f;
    stats.clip_fraction = clipped as f64 / seen_f;
    Ok(stats)
}
