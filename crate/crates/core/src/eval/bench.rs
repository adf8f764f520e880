use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airl::ExpertBuffer;
use crate::dynamics::{initial_states, simulation_step, AgentState};
use crate::encoder::{AgentCentricEncoder, EncoderCounters, TokenCache};
use crate::error::{Error, Result};
use crate::nn::Weights;
use crate::rl::Policy;
use crate::scene::{generate_synthetic_scenario, Template, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    /// Agent-steps per second of policy inference.
    pub isps: f64,
    pub n_envs: usize,
    pub agents_per_env: Vec<usize>,
    pub horizon: usize,
    /// Agent-steps processed per repetition.
    pub agent_steps: u64,
    /// Median policy time per repetition.
    pub elapsed_s: f64,
    pub initial_step_latency_s: f64,
    pub subsequent_step_latency_s: f64,
    pub repetitions: usize,
}

/// `H × Σ N_A / ΔT`, or agent-steps over time in general.
pub fn isps(agent_steps: u64, elapsed_s: f64) -> f64 {
    if elapsed_s > 0.0 {
        agent_steps as f64 / elapsed_s
    } else {
        0.0
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times policy forward passes over all environments in lockstep (all
/// environments of a step are evaluated in parallel); simulation stepping is
/// not timed. Reports medians over `reps` after `warmup` untimed runs.
pub fn isps_benchmark(policy: &Policy, worlds: &[World], reps: usize, warmup: usize) -> Result<ThroughputReport> {
    if worlds.is_empty() || reps == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one world and one repetition".into()));
    }
    let ws = policy.store.snapshot::<f32>();
    let horizon = worlds.iter().map(|w| w.horizon()).max().unwrap_or(0);
    let mut totals = Vec::new();
    let mut initial = Vec::new();
    let mut subsequent = Vec::new();
    let mut agent_steps = 0;
    for rep in 0..warmup + reps {
        let mut caches: Vec<TokenCache<f32>> = worlds.iter().map(|_| TokenCache::new()).collect();
        let mut states: Vec<Vec<AgentState>> = worlds.iter().map(initial_states).collect();
        let (mut total, mut first, mut later, mut n_later) = (0.0, 0.0, 0.0, 0usize);
        let mut steps = 0u64;
        for t in 0..horizon {
            let active: Vec<usize> = (0..worlds.len()).filter(|&e| t < worlds[e].horizon() && states[e].iter().any(|s| s.alive)).collect();
            if active.is_empty() {
                break;
            }
            let mut jobs: Vec<(usize, &mut TokenCache<f32>, &Vec<AgentState>)> = Vec::new();
            for (e, (c, s)) in caches.iter_mut().zip(&states).enumerate() {
                if active.contains(&e) {
                    jobs.push((e, c, s));
                }
            }
            let start = Instant::now();
            let outs: Vec<(usize, crate::rl::PolicyStep)> = jobs
                .into_par_iter()
                .map(|(e, c, s)| Ok((e, policy.evaluate(&ws, &worlds[e], s, c)?)))
                .collect::<Result<_>>()?;
            let dt = start.elapsed().as_secs_f64();
            total += dt;
            if t == 0 {
                first = dt;
            } else {
                later += dt;
                n_later += 1;
            }
            for (e, step) in outs {
                steps += step.agents.len() as u64;
                let actions: Vec<_> = step.outputs.iter().map(|g| g.mean_action().clamped()).collect();
                states[e] = simulation_step(&worlds[e], &states[e], &actions, t)?.states;
            }
        }
        if rep >= warmup {
            totals.push(total);
            initial.push(first);
            subsequent.push(if n_later > 0 { later / n_later as f64 } else { 0.0 });
            agent_steps = steps;
        }
    }
    let elapsed = median(totals);
    Ok(ThroughputReport {
        isps: isps(agent_steps, elapsed),
        n_envs: worlds.len(),
        agents_per_env: worlds.iter().map(|w| w.scenario.n_agents()).collect(),
        horizon,
        agent_steps,
        elapsed_s: elapsed,
        initial_step_latency_s: median(initial),
        subsequent_step_latency_s: median(subsequent),
        repetitions: reps,
    })
}

/// Encoder cost of one scenario replayed along its expert trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_agents: usize,
    pub n_polylines: usize,
    pub steps: usize,
    /// Instance-centric counts summed over the rollout.
    pub ic_counts: EncoderCounters,
    pub ic_initial_latency_s: f64,
    pub ic_subsequent_latency_s: f64,
    /// Mean per-step latency.
    pub ic_step_latency_s: f64,
    pub ac_counts: Option<EncoderCounters>,
    pub ac_step_latency_s: Option<f64>,
}

/// Per-step encoder counts and medians of wall-time latencies for each
/// world, optionally also for the agent-centric reference encoder.
pub fn scaling_report(
    policy: &Policy,
    reference: Option<(&AgentCentricEncoder, &Weights<f32>)>,
    worlds: &[World],
    reps: usize,
    warmup: usize,
) -> Result<Vec<ScalingRow>> {
    let ws = policy.store.snapshot::<f32>();
    let mut rows = Vec::new();
    for world in worlds {
        let buf = ExpertBuffer::new(std::slice::from_ref(world))?;
        let frames = &buf.states[0];
        let mut ic_counts = EncoderCounters::default();
        let (mut init, mut later, mut per_step) = (Vec::new(), Vec::new(), Vec::new());
        for rep in 0..warmup + reps {
            let mut cache = TokenCache::new();
            let mut times = Vec::with_capacity(frames.len());
            let mut counts = EncoderCounters::default();
            for states in frames {
                let start = Instant::now();
                let enc = policy.encoder.encode_scene(&ws, world, states, &mut cache)?;
                times.push(start.elapsed().as_secs_f64());
                counts.add(&enc.counters);
            }
            counts.step = frames.len();
            ic_counts = counts;
            if rep >= warmup && !times.is_empty() {
                init.push(times[0]);
                let rest = &times[1..];
                later.push(if rest.is_empty() { 0.0 } else { rest.iter().sum::<f64>() / rest.len() as f64 });
                per_step.push(times.iter().sum::<f64>() / times.len() as f64);
            }
        }
        let (mut ac_counts, mut ac_lat) = (None, None);
        if let Some((enc, aws)) = reference {
            let mut lat = Vec::new();
            let mut counts = EncoderCounters::default();
            for rep in 0..warmup + reps {
                counts = EncoderCounters::default();
                let start = Instant::now();
                for (t, states) in frames.iter().enumerate() {
                    counts.add(&enc.encode(aws, world, states, t)?.2);
                }
                if rep >= warmup && !frames.is_empty() {
                    lat.push(start.elapsed().as_secs_f64() / frames.len() as f64);
                }
            }
            counts.step = frames.len();
            ac_counts = Some(counts);
            ac_lat = Some(median(lat));
        }
        rows.push(ScalingRow {
            n_agents: world.scenario.n_agents(),
            n_polylines: world.n_polylines(),
            steps: frames.len(),
            ic_counts,
            ic_initial_latency_s: median(init),
            ic_subsequent_latency_s: median(later),
            ic_step_latency_s: median(per_step),
            ac_counts,
            ac_step_latency_s: ac_lat,
        });
    }
    Ok(rows)
}

/// Scenes sharing one map: the scenario generated for the largest count,
/// restricted for each count `n` to every (max / n)-th agent so that the
/// subsets spread over the whole map.
pub fn fixed_map_scenes(template: Template, counts: &[usize], seed: u64) -> Result<Vec<World>> {
    let max = counts.iter().copied().max().ok_or(Error::Empty("agent counts"))?;
    let full = generate_synthetic_scenario(template, max, seed)?;
    counts
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::InvalidArgument("agent counts must be positive".into()));
            }
            let keep: Vec<usize> = (0..n).map(|k| k * max / n).collect();
            Ok(World::from_scenario(full.with_agents(&keep)?))
        })
        .collect()
}

/// Least-squares slope of `y` against the agent count.
pub fn latency_slope(rows: &[ScalingRow], y: impl Fn(&ScalingRow) -> Option<f64>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| y(r).map(|v| (r.n_agents as f64, v))).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let with_ac = rows.iter().any(|r| r.ac_counts.is_some());
    let mut s = String::from(
        "n_agents,n_polylines,steps,ic_polyline_encodings,ic_agent_encodings,ic_pair_encodings,ic_attention_tokens,\
         ic_initial_latency_s,ic_subsequent_latency_s,ic_step_latency_s",
    );
    if with_ac {
        s.push_str(",ac_polyline_encodings,ac_agent_encodings,ac_pair_encodings,ac_step_latency_s");
    }
    s.push('\n');
    for r in rows {
        let c = &r.ic_counts;
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{:.9},{:.9},{:.9}",
            r.n_agents,
            r.n_polylines,
            r.steps,
            c.polyline_encodings,
            c.agent_encodings,
            c.pair_encodings,
            c.attention_tokens,
            r.ic_initial_latency_s,
            r.ic_subsequent_latency_s,
            r.ic_step_latency_s
        );
        if with_ac {
            match (&r.ac_counts, r.ac_step_latency_s) {
                (Some(a), Some(l)) => {
                    let _ = write!(s, ",{},{},{},{:.9}", a.polyline_encodings, a.agent_encodings, a.pair_encodings, l);
                }
                _ => s.push_str(",,,,"),
            }
        }
        s.push('\n');
    }
    s
}
