use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{initial_states, Action, AgentState};
use crate::encoder::{BatchFrame, BatchSample};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, AdamW};
use crate::rl::{NllLoss, Policy};
use crate::scene::World;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertSample {
    pub scenario: usize,
    pub step: usize,
    pub agent: usize,
    pub action: Action,
}

/// Expert state/action pairs replayed from the scenarios' expert
/// trajectories.
#[derive(Debug, Clone, Default)]
pub struct ExpertBuffer {
    /// `states[scenario][t]`; agents whose expert trajectory has ended are
    /// marked not alive.
    pub states: Vec<Vec<Vec<AgentState>>>,
    pub samples: Vec<ExpertSample>,
}

impl ExpertBuffer {
    pub fn new(worlds: &[World]) -> Result<Self> {
        let mut buf = ExpertBuffer::default();
        for (w, world) in worlds.iter().enumerate() {
            let sc = &world.scenario;
            if !sc.has_expert() {
                return Err(Error::InvalidArgument(format!("scenario {w} has no expert trajectories")));
            }
            let init = initial_states(world);
            let steps = sc.expert.iter().map(|e| e.actions.len()).max().unwrap_or(0);
            let mut frames = Vec::with_capacity(steps);
            for t in 0..steps {
                let mut states = init.clone();
                for (i, s) in states.iter_mut().enumerate() {
                    let e = &sc.expert[i];
                    match (e.states.get(t), e.actions.get(t)) {
                        (Some(x), Some(&a)) => {
                            s.pose = x.pose;
                            s.speed = x.speed;
                            buf.samples.push(ExpertSample { scenario: w, step: t, agent: i, action: a.clamped() });
                        }
                        _ => s.alive = false,
                    }
                }
                frames.push(states);
            }
            buf.states.push(frames);
        }
        if buf.samples.is_empty() {
            return Err(Error::Empty("expert samples"));
        }
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Batch frames with world ids `id_offset + scenario`, plus the index of
    /// each scenario's first frame.
    pub fn frames<'a>(&'a self, worlds: &'a [World], id_offset: usize) -> (Vec<BatchFrame<'a>>, Vec<usize>) {
        let mut frames = Vec::new();
        let mut offsets = Vec::new();
        for (w, traj) in self.states.iter().enumerate() {
            offsets.push(frames.len());
            for s in traj {
                frames.push(BatchFrame { world: &worlds[w], world_id: id_offset + w, states: s });
            }
        }
        (frames, offsets)
    }

    pub fn sample(&self, offsets: &[usize], i: usize) -> BatchSample {
        let s = &self.samples[i];
        BatchSample { frame: offsets[s.scenario] + s.step, agent: s.agent }
    }

    /// Actions of samples `idx` with Gaussian noise of per-dimension `std`,
    /// clamped to the executable bounds.
    pub fn noised_actions(&self, idx: &[usize], std: [f64; 2], rng: &mut impl Rng) -> Vec<Action> {
        idx.iter()
            .map(|&i| {
                let a = self.samples[i].action;
                let e0: f64 = StandardNormal.sample(rng);
                let e1: f64 = StandardNormal.sample(rng);
                Action::new(a.accel + std[0] * e0, a.steer + std[1] * e1).clamped()
            })
            .collect()
    }
}

/// One AdamW step on the mean negative log-likelihood of `actions`.
pub fn bc_update(
    policy: &mut Policy,
    frames: &[BatchFrame<'_>],
    samples: &[BatchSample],
    actions: &[[f64; 2]],
    opt: &AdamW,
    max_grad_norm: f64,
    parallel: bool,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("behavior cloning batch"));
    }
    let ws = policy.store.snapshot::<f32>();
    let mut grads = policy.store.zero_grads::<f32>();
    let loss = NllLoss { policy, actions };
    let nll = policy.batch_loss(&ws, frames, samples, &loss, Some(&mut grads), parallel)?;
    if !nll.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("behavior cloning loss"));
    }
    clip_grad_norm(&mut grads, max_grad_norm);
    policy.store.set_grads(&grads)?;
    opt.step(&mut policy.store)?;
    Ok(nll)
}
