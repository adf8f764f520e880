//! Closed-loop metrics, the constant-velocity baseline and throughput
//! benchmarks.

mod bench;

pub use bench::{fixed_map_scenes, isps, isps_benchmark, latency_slope, scaling_report, scaling_csv, ScalingRow, ThroughputReport};

use serde::{Deserialize, Serialize};

use crate::dynamics::{initial_states, simulation_step, Action, AgentState, StepEvent, Termination};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::nn::Weights;
use crate::rl::{collect_rollouts, selection_score, ActionMode, Policy, RolloutConfig};
use crate::scene::World;

/// Positions of one agent per step; `None` where the agent has no valid
/// state.
pub type Track = Vec<Option<Vec2>>;

/// Root-mean-square position error of one agent over steps where both
/// tracks exist.
pub fn agent_rmse(sim: &Track, gt: &Track) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in sim.iter().zip(gt) {
        if let (Some(a), Some(b)) = (a, b) {
            sum += (*a - *b).dot(*a - *b);
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Per-agent RMSE averaged over agents with at least one valid step.
pub fn rmse(sim: &[Track], gt: &[Track]) -> Result<f64> {
    if sim.len() != gt.len() {
        return Err(Error::Shape(format!("{} simulated vs {} ground-truth tracks", sim.len(), gt.len())));
    }
    let per: Vec<f64> = sim.iter().zip(gt).filter_map(|(s, g)| agent_rmse(s, g)).collect();
    if per.is_empty() {
        return Err(Error::Empty("overlapping trajectory steps"));
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// First termination cause of every agent.
pub fn first_causes(events: &[StepEvent], n_agents: usize) -> Vec<Termination> {
    let mut out = vec![Termination::None; n_agents];
    let mut when = vec![usize::MAX; n_agents];
    for e in events {
        if e.agent < n_agents && e.step < when[e.agent] {
            when[e.agent] = e.step;
            out[e.agent] = e.cause;
        }
    }
    out
}

fn rate(events: &[StepEvent], n_agents: usize, cause: Termination) -> f64 {
    if n_agents == 0 {
        return 0.0;
    }
    first_causes(events, n_agents).iter().filter(|&&c| c == cause).count() as f64 / n_agents as f64
}

pub fn offtrack_rate(events: &[StepEvent], n_agents: usize) -> f64 {
    rate(events, n_agents, Termination::OffTrack)
}

pub fn collision_rate(events: &[StepEvent], n_agents: usize) -> f64 {
    rate(events, n_agents, Termination::Collision)
}

/// Simulated positions: the state at every step after the first while the
/// agent is alive.
pub fn simulated_tracks(states: &[Vec<AgentState>]) -> Vec<Track> {
    let n = states.first().map_or(0, |s| s.len());
    (0..n)
        .map(|i| states.iter().enumerate().map(|(t, s)| (t > 0 && s[i].alive).then_some(s[i].pose.position)).collect())
        .collect()
}

/// Expert positions aligned with [`simulated_tracks`].
pub fn expert_tracks(world: &World) -> Vec<Track> {
    let h = world.horizon();
    world
        .scenario
        .expert
        .iter()
        .map(|e| (0..=h).map(|t| if t > 0 { e.states.get(t).map(|s| s.pose.position) } else { None }).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub n_agents: usize,
    pub rmse: Option<f64>,
    pub offtrack_rate: f64,
    pub collision_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub offtrack_rate: f64,
    pub collision_rate: f64,
    pub n_agents: usize,
    pub n_scenarios: usize,
    pub vru: ClassMetrics,
    pub non_vru: ClassMetrics,
}

impl MetricsReport {
    pub fn termination_rate(&self) -> f64 {
        self.offtrack_rate + self.collision_rate
    }

    pub fn selection_score(&self) -> f64 {
        selection_score(self.rmse, self.offtrack_rate, self.collision_rate)
    }
}

/// One simulated scenario: state per step and termination events.
#[derive(Debug, Clone)]
pub struct ScenarioRun<'a> {
    pub world: &'a World,
    pub states: Vec<Vec<AgentState>>,
    pub events: Vec<StepEvent>,
}

/// Aggregates runs into a report with VRU / non-VRU splits.
pub fn metrics(runs: &[ScenarioRun<'_>]) -> Result<MetricsReport> {
    let mut all = Vec::new();
    for r in runs {
        let n = r.world.scenario.n_agents();
        let sim = simulated_tracks(&r.states);
        let gt = expert_tracks(r.world);
        if gt.len() != n {
            return Err(Error::InvalidArgument("evaluation scenario lacks expert trajectories".into()));
        }
        let causes = first_causes(&r.events, n);
        for i in 0..n {
            all.push((r.world.scenario.agents[i].features.vru, agent_rmse(&sim[i], &gt[i]), causes[i]));
        }
    }
    let class = |filter: &dyn Fn(bool) -> bool| {
        let sel: Vec<_> = all.iter().filter(|a| filter(a.0)).collect();
        let n = sel.len();
        let errs: Vec<f64> = sel.iter().filter_map(|a| a.1).collect();
        let frac = |c| if n == 0 { 0.0 } else { sel.iter().filter(|a| a.2 == c).count() as f64 / n as f64 };
        ClassMetrics {
            n_agents: n,
            rmse: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
            offtrack_rate: frac(Termination::OffTrack),
            collision_rate: frac(Termination::Collision),
        }
    };
    let total = class(&|_| true);
    Ok(MetricsReport {
        rmse: total.rmse.ok_or(Error::Empty("overlapping trajectory steps"))?,
        offtrack_rate: total.offtrack_rate,
        collision_rate: total.collision_rate,
        n_agents: total.n_agents,
        n_scenarios: runs.len(),
        vru: class(&|v| v),
        non_vru: class(&|v| !v),
    })
}

/// Closed-loop simulation where `controller` maps the states to one action
/// per alive agent.
pub fn simulate<'a>(world: &'a World, mut controller: impl FnMut(usize, &[AgentState]) -> Result<Vec<Action>>) -> Result<ScenarioRun<'a>> {
    let mut states = initial_states(world);
    let mut traj = vec![states.clone()];
    let mut events = Vec::new();
    for t in 0..world.horizon() {
        if !states.iter().any(|s| s.alive) {
            break;
        }
        let actions = controller(t, &states)?;
        let out = simulation_step(world, &states, &actions, t)?;
        states = out.states;
        events.extend(out.events);
        traj.push(states.clone());
    }
    Ok(ScenarioRun { world, states: traj, events })
}

/// Every agent keeps its initial speed and heading.
pub fn cv_baseline(world: &World) -> Result<ScenarioRun<'_>> {
    simulate(world, |_, s| Ok(vec![Action::ZERO; s.iter().filter(|a| a.alive).count()]))
}

/// Closed-loop runs of the policy executing its mean actions.
pub fn policy_runs<'a>(policy: &Policy, ws: &Weights<f32>, worlds: &'a [World]) -> Result<Vec<ScenarioRun<'a>>> {
    let cfg = RolloutConfig::new(0, 0, ActionMode::Mean);
    let r = collect_rollouts(policy, ws, worlds, cfg)?;
    Ok(worlds.iter().zip(r.states).zip(r.events).map(|((world, states), events)| ScenarioRun { world, states, events }).collect())
}

pub fn evaluate_policy(policy: &Policy, worlds: &[World]) -> Result<MetricsReport> {
    metrics(&policy_runs(policy, &policy.store.snapshot(), worlds)?)
}

pub fn evaluate_cv(worlds: &[World]) -> Result<MetricsReport> {
    metrics(&worlds.iter().map(cv_baseline).collect::<Result<Vec<_>>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scenario, Template};

    fn track(v: &[(f64, f64)]) -> Track {
        v.iter().map(|&(x, y)| Some(Vec2::new(x, y))).collect()
    }

    #[test]
    fn rmse_examples() {
        let a = track(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(rmse(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        let b = track(&[(0.0, 3.0), (1.0, 3.0)]);
        assert!((rmse(&[a.clone()], &[b]).unwrap() - 3.0).abs() < 1e-12);
        let c = track(&[(0.0, 0.0), (1.0, 4.0)]);
        assert!((rmse(&[a.clone()], &[c]).unwrap() - 8f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[vec![None, None]], &[a]).is_err());
    }

    #[test]
    fn first_cause_wins() {
        let ev = [
            StepEvent { agent: 0, cause: Termination::OffTrack, step: 3 },
            StepEvent { agent: 0, cause: Termination::Collision, step: 5 },
            StepEvent { agent: 2, cause: Termination::Collision, step: 1 },
        ];
        assert_eq!(offtrack_rate(&ev, 4), 0.25);
        assert_eq!(collision_rate(&ev, 4), 0.25);
        assert_eq!(collision_rate(&[], 4), 0.0);
    }

    #[test]
    fn cv_endpoint_and_curve() {
        let w = World::from_scenario(generate_synthetic_scenario(Template::Straight, 1, 3).unwrap());
        let run = cv_baseline(&w).unwrap();
        let s0 = &run.states[0][0];
        let last = run.states.iter().rposition(|s| s[0].alive).unwrap();
        let moved = (run.states[last][0].pose.position - s0.pose.position).norm();
        assert!((moved - s0.speed * 0.2 * last as f64).abs() < 1e-9);
        let worlds: Vec<World> =
            (0..5).map(|s| World::from_scenario(generate_synthetic_scenario(Template::Curve, 2, s).unwrap())).collect();
        assert!(evaluate_cv(&worlds).unwrap().offtrack_rate > 0.0);
    }
}
