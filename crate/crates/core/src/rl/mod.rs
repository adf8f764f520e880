//! Self-play rollouts, GAE, PPO, training orchestration and model
//! selection.

mod policy;
mod ppo;
mod rollout;
mod train;

pub use policy::{HeadCache, NllLoss, Policy, PolicyConfig, PolicyStep, PpoBatchStats, PpoLoss, PpoTarget, ProbeLoss};
pub use ppo::{ppo_update, PpoStats};
pub use rollout::{collect_rollouts, env_rng, ActionMode, Rollout, RolloutConfig};
pub use train::{
    checkpoint_name, list_checkpoints, load_run_checkpoint, run_target_sweep, select_checkpoint, train, train_bc,
    EpochRecord, ModelSize, SweepPoint, TrainConfig, TrainOutcome,
};

pub(crate) use policy::check_finite;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, Termination};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PPOConfig {
    pub clip_eps: f64,
    pub epochs_per_batch: usize,
    pub minibatch: usize,
    pub lr_policy: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Fraction of training, at the end, over which the learning rate
    /// decays linearly to 10% of its initial value.
    pub lr_decay_fraction: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub weight_decay: f64,
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            epochs_per_batch: 4,
            minibatch: 1024,
            lr_policy: 2e-4,
            gamma: 0.95,
            lambda: 0.95,
            lr_decay_fraction: 0.3,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 1.0,
            weight_decay: 0.01,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::Config("gamma and lambda must lie in [0, 1)".into()));
        }
        if self.minibatch == 0 || self.epochs_per_batch == 0 {
            return Err(Error::Config("minibatch and epochs_per_batch must be positive".into()));
        }
        if !(self.clip_eps > 0.0) || !(self.lr_policy > 0.0) || !(0.0..=1.0).contains(&self.lr_decay_fraction) {
            return Err(Error::Config("clip_eps, lr_policy and lr_decay_fraction out of range".into()));
        }
        Ok(())
    }

    /// Learning rate for `epoch` of `total`: constant, then linear decay to
    /// 10% over the final `lr_decay_fraction` of epochs.
    pub fn lr_at(&self, epoch: usize, total: usize) -> f64 {
        let start = (total as f64 * (1.0 - self.lr_decay_fraction)).floor();
        let span = total as f64 - start;
        if (epoch as f64) < start || span <= 0.0 {
            return self.lr_policy;
        }
        let frac = ((epoch as f64 - start + 1.0) / span).min(1.0);
        self.lr_policy * (1.0 - 0.9 * frac)
    }
}

/// One agent-step of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub env: usize,
    pub step: usize,
    pub agent: usize,
    /// Sampled (or mean) action before clamping.
    pub raw_action: [f64; 2],
    /// Executed action.
    pub action: Action,
    pub log_prob: f64,
    /// Policy standard deviation of (accel, steer).
    pub std: [f64; 2],
    pub value: f64,
    pub raw_reward: f64,
    pub reward: f64,
    pub done: bool,
    pub cause: Termination,
    /// Value of the successor state when the sequence is cut without a
    /// failure (horizon reached or route finished).
    pub bootstrap: Option<f64>,
    pub advantage: f64,
    pub ret: f64,
}

/// Generalized advantage estimation over one agent's sequence.
///
/// `values` has one more entry than `rewards`: the last is the bootstrap
/// value of the state after the final step. A `done` step does not
/// bootstrap.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae: {} rewards, {} values, {} dones",
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Fills advantages and returns of all experiences, grouped per
/// (env, agent) in step order.
pub fn assign_advantages(experiences: &mut [Experience], gamma: f64, lambda: f64) -> Result<()> {
    let mut order: Vec<usize> = (0..experiences.len()).collect();
    order.sort_by_key(|&i| (experiences[i].env, experiences[i].agent, experiences[i].step));
    let mut start = 0;
    while start < order.len() {
        let key = (experiences[order[start]].env, experiences[order[start]].agent);
        let mut end = start;
        while end < order.len() && (experiences[order[end]].env, experiences[order[end]].agent) == key {
            end += 1;
        }
        let idx = &order[start..end];
        let rewards: Vec<f64> = idx.iter().map(|&i| experiences[i].reward).collect();
        let dones: Vec<bool> = idx.iter().map(|&i| experiences[i].done).collect();
        let mut values: Vec<f64> = idx.iter().map(|&i| experiences[i].value).collect();
        let last = &experiences[*idx.last().unwrap()];
        values.push(if last.done { 0.0 } else { last.bootstrap.unwrap_or(0.0) });
        let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda)?;
        for (k, &i) in idx.iter().enumerate() {
            experiences[i].advantage = adv[k];
            experiences[i].ret = ret[k];
        }
        start = end;
    }
    Ok(())
}

/// Shifts and scales to zero mean and unit standard deviation (std floor
/// 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// RMSE normalized by the fraction of agents that neither left the road nor
/// collided.
pub fn selection_score(rmse: f64, offtrack: f64, collision: f64) -> f64 {
    rmse / (1.0 - offtrack - collision).max(1e-3)
}

/// Index of the best `(rmse, offtrack, collision)` entry; ties go to the
/// earliest.
pub fn model_selection(candidates: &[(f64, f64, f64)]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Empty("checkpoints"));
    }
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (i, &(r, o, c)) in candidates.iter().enumerate() {
        let s = selection_score(r, o, c);
        if s < best_score {
            best = i;
            best_score = s;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_examples() {
        let (a, r) = compute_gae(&[1.0], &[0.0, 5.0], &[true], 0.95, 0.95).unwrap();
        assert_eq!((a, r), (vec![1.0], vec![1.0]));
        let rewards = [1.0, -0.5, 2.0];
        let values = [0.3, 0.1, -0.2, 0.7];
        let (a, _) = compute_gae(&rewards, &values, &[false; 3], 0.9, 0.0).unwrap();
        for t in 0..3 {
            let delta = rewards[t] + 0.9 * values[t + 1] - values[t];
            assert!((a[t] - delta).abs() < 1e-12);
        }
        assert!(compute_gae(&[1.0], &[0.0], &[false], 0.9, 0.9).is_err());
    }

    #[test]
    fn normalization_degenerate_batch_is_zero() {
        let mut a = vec![3.0; 5];
        normalize_advantages(&mut a);
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn selection_examples() {
        assert_eq!(selection_score(10.0, 0.0, 0.0), 10.0);
        assert!((selection_score(10.0, 0.1, 0.1) - 12.5).abs() < 1e-12);
        assert_eq!(model_selection(&[(10.0, 0.0, 0.0), (10.0, 0.0, 0.0)]).unwrap(), 0);
        assert_eq!(model_selection(&[(10.0, 0.1, 0.1), (11.0, 0.0, 0.0)]).unwrap(), 1);
        assert!(model_selection(&[]).is_err());
    }

    #[test]
    fn lr_schedule() {
        let c = PPOConfig::default();
        assert_eq!(c.lr_at(0, 100), 2e-4);
        assert_eq!(c.lr_at(69, 100), 2e-4);
        assert!((c.lr_at(99, 100) - 2e-5).abs() < 1e-12);
        assert!(c.lr_at(85, 100) < 2e-4 && c.lr_at(85, 100) > 2e-5);
    }
}
