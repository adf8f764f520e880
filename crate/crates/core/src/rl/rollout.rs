use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{check_finite, Experience, Policy};
use crate::dynamics::{initial_states, simulation_step, Action, AgentState, StepEvent, Termination};
use crate::encoder::{BatchFrame, BatchSample, EncoderCounters, TokenCache};
use crate::error::Result;
use crate::nn::Weights;
use crate::scene::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample from the policy distribution.
    Sample,
    /// Execute the distribution mean.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub seed: u64,
    pub epoch: u64,
    pub mode: ActionMode,
    /// Compute successor values for truncated sequences.
    pub bootstrap: bool,
    /// Reuse map tokens across steps (off re-encodes every polyline each step).
    pub cache: bool,
}

impl RolloutConfig {
    pub fn new(seed: u64, epoch: u64, mode: ActionMode) -> Self {
        Self { seed, epoch, mode, bootstrap: false, cache: true }
    }
}

/// Generator for environment `env` of `epoch`; independent of how many
/// environments run and in which order.
pub fn env_rng(seed: u64, epoch: u64, env: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ env);
    rng
}

/// Closed-loop trajectories of all agents in a set of scenarios.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    /// `states[env][t]` for `t` in `0..=steps`.
    pub states: Vec<Vec<Vec<AgentState>>>,
    pub experiences: Vec<Experience>,
    pub events: Vec<Vec<StepEvent>>,
    pub counters: EncoderCounters,
}

impl Rollout {
    /// One batch frame per (env, step) with the flat index of each env's
    /// first frame.
    pub fn frames<'a>(&'a self, worlds: &'a [World]) -> (Vec<BatchFrame<'a>>, Vec<usize>) {
        let mut frames = Vec::new();
        let mut offsets = Vec::with_capacity(self.states.len());
        for (e, traj) in self.states.iter().enumerate() {
            offsets.push(frames.len());
            for s in traj {
                frames.push(BatchFrame { world: &worlds[e], world_id: e, states: s });
            }
        }
        (frames, offsets)
    }

    pub fn sample(&self, offsets: &[usize], i: usize) -> BatchSample {
        let x = &self.experiences[i];
        BatchSample { frame: offsets[x.env] + x.step, agent: x.agent }
    }

    /// Termination of every agent in every env at the end of the rollout.
    pub fn final_causes(&self) -> Vec<Vec<Termination>> {
        self.states.iter().map(|t| t.last().map(|s| s.iter().map(|a| a.termination).collect()).unwrap_or_default()).collect()
    }
}

/// Runs the policy in every world from its initial state until the horizon
/// or until all agents terminated.
pub fn collect_rollouts(policy: &Policy, ws: &Weights<f32>, worlds: &[World], cfg: RolloutConfig) -> Result<Rollout> {
    let per_env: Vec<EnvRollout> =
        worlds.par_iter().enumerate().map(|(e, w)| run_env(policy, ws, w, e, cfg)).collect::<Result<_>>()?;
    let mut out = Rollout::default();
    for r in per_env {
        out.states.push(r.states);
        out.events.push(r.events);
        out.experiences.extend(r.experiences);
        out.counters.add(&r.counters);
    }
    Ok(out)
}

struct EnvRollout {
    states: Vec<Vec<AgentState>>,
    events: Vec<StepEvent>,
    experiences: Vec<Experience>,
    counters: EncoderCounters,
}

fn run_env(policy: &Policy, ws: &Weights<f32>, world: &World, e: usize, cfg: RolloutConfig) -> Result<EnvRollout> {
    let mut rng = env_rng(cfg.seed, cfg.epoch, e as u64);
    let mut cache = if cfg.cache { TokenCache::new() } else { TokenCache::disabled() };
    let mut states = initial_states(world);
    let mut out = EnvRollout { states: vec![states.clone()], events: Vec::new(), experiences: Vec::new(), counters: EncoderCounters::default() };
    for t in 0..world.horizon() {
        if !states.iter().any(|s| s.alive) {
            break;
        }
        let step = policy.evaluate(ws, world, &states, &mut cache)?;
        out.counters.add(&step.counters);
        let mut actions = Vec::with_capacity(step.agents.len());
        let base = out.experiences.len();
        for (k, &i) in step.agents.iter().enumerate() {
            let g = &step.outputs[k];
            let raw = match cfg.mode {
                ActionMode::Sample => g.sample(&mut rng),
                ActionMode::Mean => [g.mean[0] as f64, g.mean[1] as f64],
            };
            let action = Action::new(raw[0], raw[1]).clamped();
            actions.push(action);
            out.experiences.push(Experience {
                env: e,
                step: t,
                agent: i,
                raw_action: raw,
                action,
                log_prob: check_finite(g.log_prob(raw) as f64, "log_prob")?,
                std: g.std().map(|v| v as f64),
                value: check_finite(step.values[k], "value")?,
                raw_reward: 0.0,
                reward: 0.0,
                done: false,
                cause: Termination::None,
                bootstrap: None,
                advantage: 0.0,
                ret: 0.0,
            });
        }
        let outcome = simulation_step(world, &states, &actions, t)?;
        let exp = &mut out.experiences[base..];
        for ev in &outcome.events {
            if let Some(x) = exp.iter_mut().find(|x| x.agent == ev.agent) {
                x.cause = ev.cause;
                x.done = ev.cause.is_failure();
            }
        }
        states = outcome.states;
        out.events.extend(outcome.events);
        out.states.push(states.clone());

        // Agents that finished their route are cut without a failure; their
        // successor value is evaluated as if they were still driving.
        let last = t + 1 == world.horizon();
        if cfg.bootstrap {
            let cut: Vec<usize> = exp
                .iter()
                .filter(|x| x.cause == Termination::Finished || (last && x.cause == Termination::None))
                .map(|x| x.agent)
                .collect();
            if !cut.is_empty() {
                let mut probe = states.clone();
                for &i in &cut {
                    probe[i].alive = true;
                }
                let pv = policy.evaluate(ws, world, &probe, &mut cache)?;
                for x in exp.iter_mut().filter(|x| cut.contains(&x.agent)) {
                    let k = pv.agents.iter().position(|&a| a == x.agent).expect("cut agent is alive in probe");
                    x.bootstrap = Some(check_finite(pv.values[k], "bootstrap value")?);
                }
            }
        }
    }
    Ok(out)
}
