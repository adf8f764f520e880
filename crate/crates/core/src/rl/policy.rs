use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::AgentState;
use crate::encoder::{BatchFrame, BatchSample, EncoderConfig, EncoderCounters, SceneEncoder, TargetLoss, TokenCache};
use crate::error::{Error, Result};
use crate::nn::{
    gaussian_log_prob_backward, trace, GaussianHead, GaussianOutput, Grads, MlpBlock, MlpCache, ParamStore, Real, Weights,
};
use crate::scene::World;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub encoder: EncoderConfig,
    /// Multiplies the raw mean outputs (accel, steer).
    pub action_scale: [f64; 2],
    /// Initial log-std bias of (accel, steer).
    pub log_std_init: [f64; 2],
    /// The value head predicts `return / value_scale`.
    pub value_scale: f64,
}

impl PolicyConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        Self { encoder, action_scale: [2.0, 0.1], log_std_init: [0.0, -3.0], value_scale: 1.0 }
    }
}

/// Shared behavior model: scene encoder, Gaussian action head and value
/// head in one parameter store.
#[derive(Debug, Clone)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub store: ParamStore,
    pub encoder: SceneEncoder,
    pub head: MlpBlock,
    pub value: MlpBlock,
    pub gaussian: GaussianHead,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    raw: Vec<T>,
    head: MlpCache<T>,
    value: MlpCache<T>,
}

/// Policy outputs for the alive agents of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub agents: Vec<usize>,
    pub outputs: Vec<GaussianOutput<f32>>,
    pub values: Vec<f64>,
    pub counters: EncoderCounters,
}

impl Policy {
    pub fn new(cfg: PolicyConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = cfg.encoder.hidden;
        let encoder = SceneEncoder::new(&mut store, "policy", cfg.encoder, &mut rng)?;
        let head = MlpBlock::with_output_gain(&mut store, "policy.head", h, h, GaussianHead::RAW_DIM, 0.01, &mut rng)?;
        let bias = [0.0, 0.0, cfg.log_std_init[0] as f32, cfg.log_std_init[1] as f32];
        store.set(head.l2.b, &bias)?;
        let value = MlpBlock::with_output_gain(&mut store, "policy.value", h, h, 1, 0.1, &mut rng)?;
        Ok(Self { cfg, store, encoder, head, value, gaussian: GaussianHead { mean_scale: cfg.action_scale } })
    }

    pub fn heads_forward<T: Real>(&self, ws: &Weights<T>, z: &[T]) -> Result<(GaussianOutput<T>, T, HeadCache<T>)> {
        let (raw, head) = self.head.forward(ws, z)?;
        let (v, value) = self.value.forward(ws, z)?;
        let g = self.gaussian.forward(&raw);
        Ok((g, v[0], HeadCache { raw, head, value }))
    }

    /// Backprop of gradients on (mean, log_std, normalized value) to `z`.
    pub fn heads_backward<T: Real>(
        &self,
        ws: &Weights<T>,
        z: &[T],
        cache: &HeadCache<T>,
        dmean: [T; 2],
        dlog_std: [T; 2],
        dvalue: T,
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let draw = self.gaussian.backward(&cache.raw, dmean, dlog_std);
        let mut dz = self.head.backward(ws, z, &cache.head, &draw, grads, true);
        let dv = self.value.backward(ws, z, &cache.value, &[dvalue], grads, true);
        for (a, b) in dz.iter_mut().zip(&dv) {
            *a += *b;
        }
        dz
    }

    /// Action distributions and value estimates for all alive agents.
    pub fn evaluate(&self, ws: &Weights<f32>, world: &World, states: &[AgentState], cache: &mut TokenCache<f32>) -> Result<PolicyStep> {
        let enc = self.encoder.encode_scene(ws, world, states, cache)?;
        let mut outputs = Vec::with_capacity(enc.tokens.len());
        let mut values = Vec::with_capacity(enc.tokens.len());
        for z in &enc.tokens {
            let (g, v, _) = self.heads_forward(ws, z)?;
            outputs.push(g);
            values.push(v as f64 * self.cfg.value_scale);
        }
        Ok(PolicyStep { agents: enc.agents, outputs, values, counters: enc.counters })
    }

    /// Sum of `loss` over a batch; see [`SceneEncoder::batch_loss`].
    pub fn batch_loss<T: Real, L: TargetLoss<T>>(
        &self,
        ws: &Weights<T>,
        frames: &[BatchFrame<'_>],
        samples: &[BatchSample],
        loss: &L,
        grads: Option<&mut Grads<T>>,
        parallel: bool,
    ) -> Result<f64> {
        self.encoder.batch_loss(ws, frames, samples, loss, grads, parallel)
    }
}

/// Per-sample data of the clipped PPO objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoTarget {
    /// Sampled action before clamping.
    pub action: [f64; 2],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Mean over the batch of `−min(ρA, clip(ρ)A) + c_v (v − R)² − c_e H`,
/// with values and returns in normalized units.
pub struct PpoLoss<'a> {
    pub policy: &'a Policy,
    pub targets: &'a [PpoTarget],
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub stats: std::sync::Mutex<PpoBatchStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoBatchStats {
    pub max_ratio_dev: f64,
    pub clipped: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
}

impl<'a> PpoLoss<'a> {
    pub fn new(policy: &'a Policy, targets: &'a [PpoTarget], clip_eps: f64, value_coef: f64, entropy_coef: f64) -> Self {
        Self { policy, targets, clip_eps, value_coef, entropy_coef, stats: Default::default() }
    }
}

impl<T: Real> TargetLoss<T> for PpoLoss<'_> {
    fn eval(&self, ws: &Weights<T>, index: usize, z: &[T], grads: Option<&mut Grads<T>>) -> Result<(f64, Vec<T>)> {
        let t = &self.targets[index];
        let n = T::lift(self.targets.len() as f64);
        let (g, v, cache) = self.policy.heads_forward(ws, z)?;
        let a = [T::lift(t.action[0]), T::lift(t.action[1])];
        let logp = g.log_prob(t.action);
        let log_ratio = logp - T::lift(t.old_log_prob);
        let ratio = log_ratio.exp();
        let adv = T::lift(t.advantage);
        let (lo, hi) = (T::lift(1.0 - self.clip_eps), T::lift(1.0 + self.clip_eps));
        let unclipped = ratio * adv;
        let clipped = ratio.max(lo).min(hi) * adv;
        let use_clipped = clipped < unclipped;
        trace::record(|| use_clipped as u64);
        let surrogate = if use_clipped { clipped } else { unclipped };
        let target = T::lift(t.ret / self.policy.cfg.value_scale);
        let verr = v - target;
        let entropy = g.log_std[0] + g.log_std[1];
        let loss = (-surrogate + T::lift(self.value_coef) * verr * verr - T::lift(self.entropy_coef) * entropy) / n;
        {
            let mut s = self.stats.lock().unwrap();
            s.max_ratio_dev = s.max_ratio_dev.max((ratio.as_f64() - 1.0).abs());
            s.clipped += use_clipped as usize;
            s.policy_loss += -surrogate.as_f64() / n.as_f64();
            s.value_loss += (verr * verr).as_f64() / n.as_f64();
            s.approx_kl += (-log_ratio).as_f64() / n.as_f64();
        }
        let Some(grads) = grads else { return Ok((loss.as_f64(), Vec::new())) };
        let dlogp = if use_clipped { T::zero() } else { -ratio * adv / n };
        let (dm, dl) = gaussian_log_prob_backward(g.mean, g.log_std, a);
        let ent = T::lift(self.entropy_coef) / n;
        let dmean = [dm[0] * dlogp, dm[1] * dlogp];
        let dlog_std = [dl[0] * dlogp - ent, dl[1] * dlogp - ent];
        let dvalue = T::lift(2.0 * self.value_coef) * verr / n;
        let dz = self.policy.heads_backward(ws, z, &cache, dmean, dlog_std, dvalue, grads);
        Ok((loss.as_f64(), dz))
    }
}

/// Mean negative log-likelihood of expert actions.
pub struct NllLoss<'a> {
    pub policy: &'a Policy,
    pub actions: &'a [[f64; 2]],
}

impl<T: Real> TargetLoss<T> for NllLoss<'_> {
    fn eval(&self, ws: &Weights<T>, index: usize, z: &[T], grads: Option<&mut Grads<T>>) -> Result<(f64, Vec<T>)> {
        let n = T::lift(self.actions.len() as f64);
        let (g, _, cache) = self.policy.heads_forward(ws, z)?;
        let a = self.actions[index];
        let nll = -g.log_prob(a) / n;
        let Some(grads) = grads else { return Ok((nll.as_f64(), Vec::new())) };
        let (dm, dl) = gaussian_log_prob_backward(g.mean, g.log_std, [T::lift(a[0]), T::lift(a[1])]);
        let s = -T::one() / n;
        let dz = self.policy.heads_backward(ws, z, &cache, [dm[0] * s, dm[1] * s], [dl[0] * s, dl[1] * s], T::zero(), grads);
        Ok((nll.as_f64(), dz))
    }
}

/// Smooth probe loss touching every head output: a fixed linear
/// combination of mean, log-std and value plus a log-likelihood term.
pub struct ProbeLoss<'a> {
    pub policy: &'a Policy,
    pub weights: [f64; 5],
    pub actions: &'a [[f64; 2]],
}

impl<T: Real> TargetLoss<T> for ProbeLoss<'_> {
    fn eval(&self, ws: &Weights<T>, index: usize, z: &[T], grads: Option<&mut Grads<T>>) -> Result<(f64, Vec<T>)> {
        let w = self.weights.map(T::lift);
        let (g, v, cache) = self.policy.heads_forward(ws, z)?;
        let a = self.actions[index % self.actions.len()];
        let loss = w[0] * g.mean[0] + w[1] * g.mean[1] + w[2] * g.log_std[0] + w[3] * g.log_std[1] + w[4] * v + g.log_prob(a);
        let Some(grads) = grads else { return Ok((loss.as_f64(), Vec::new())) };
        let (dm, dl) = gaussian_log_prob_backward(g.mean, g.log_std, [T::lift(a[0]), T::lift(a[1])]);
        let dz = self.policy.heads_backward(ws, z, &cache, [w[0] + dm[0], w[1] + dm[1]], [w[2] + dl[0], w[3] + dl[1]], w[4], grads);
        Ok((loss.as_f64(), dz))
    }
}

pub(crate) fn check_finite(x: f64, what: &'static str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(what))
    }
}
