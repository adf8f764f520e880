//! Scripted driver producing the demonstration trajectories of synthetic
//! scenarios: IDM car following, pure-pursuit steering and yielding at
//! route conflicts.

use super::{ExpertState, ExpertTrajectory, World};
use crate::dynamics::{initial_states, simulation_step, Action, AgentState, STEER_MAX};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub min_gap: f64,
    pub lookahead: f64,
    /// Agents only yield when the conflict point is this close.
    pub yield_distance: f64,
    /// Agents within this lateral offset of the own route count as leaders.
    pub leader_lateral: f64,
    /// Distance kept between the front bumper and a conflict point.
    pub stop_margin: f64,
    /// Two routes conflict where their centerlines come closer than this.
    pub conflict_width: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            time_headway: 1.5,
            max_accel: 2.0,
            comfort_decel: 3.0,
            min_gap: 2.0,
            lookahead: 8.0,
            yield_distance: 40.0,
            leader_lateral: 2.5,
            stop_margin: 1.0,
            conflict_width: 2.5,
        }
    }
}

impl ExpertConfig {
    /// An agent whose front bumper is `front` meters before a conflict zone
    /// and cannot brake to a stop before it goes first.
    fn committed(&self, front: f64, speed: f64) -> bool {
        front < speed * speed / (2.0 * 6.0) + 0.3
    }

    /// Intelligent driver model acceleration. `gap` is bumper to bumper;
    /// `None` means free road.
    pub fn idm(&self, v: f64, v0: f64, leader: Option<(f64, f64)>) -> f64 {
        let free = 1.0 - (v / v0.max(0.1)).powi(4);
        let interaction = match leader {
            Some((gap, v_lead)) => {
                let dv = v - v_lead;
                let s_star = self.min_gap
                    + (v * self.time_headway
                        + v * dv / (2.0 * (self.max_accel * self.comfort_decel).sqrt()))
                    .max(0.0);
                (s_star / gap.max(0.1)).powi(2)
            }
            None => 0.0,
        };
        self.max_accel * (free - interaction)
    }
}

/// `table[a][b]`: arc lengths on routes `a` and `b` where route `a`, scanned
/// from its start, first comes within `conflict_width` of route `b`.
fn conflict_table(world: &World, cfg: &ExpertConfig) -> Vec<Vec<Option<(f64, f64)>>> {
    let n = world.routes.len();
    let mut table = vec![vec![None; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let (ra, rb) = (&world.routes[a], &world.routes[b]);
            let mut s = 0.0;
            while s <= ra.length() {
                let p = rb.project(ra.point_at(s));
                if p.distance < cfg.conflict_width {
                    table[a][b] = Some((s, p.arc));
                    break;
                }
                s += 0.25;
            }
        }
    }
    table
}

fn pure_pursuit(world: &World, s: &AgentState, cfg: &ExpertConfig) -> f64 {
    let route = &world.routes[s.route_id];
    let proj = route.project(s.pose.position);
    let target = route.point_at(proj.arc + cfg.lookahead);
    let local = s.pose.to_local(target);
    let d2 = local.dot(local).max(1e-6);
    let curvature = 2.0 * local.y / d2;
    (curvature * s.wheelbase()).atan().clamp(-STEER_MAX, STEER_MAX)
}

/// Closest constraint ahead of agent `i` as (bumper gap, speed).
fn constraint(
    world: &World,
    conflicts: &[Vec<Option<(f64, f64)>>],
    states: &[AgentState],
    i: usize,
    cfg: &ExpertConfig,
) -> Option<(f64, f64)> {
    let me = &states[i];
    let route = &world.routes[me.route_id];
    let my_arc = route.project(me.pose.position).arc;
    let my_speed = me.speed.max(0.5);
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |gap: f64, v: f64| {
        if best.map_or(true, |(g, _)| gap < g) {
            best = Some((gap, v));
        }
    };
    for (j, other) in states.iter().enumerate() {
        if j == i || !other.alive {
            continue;
        }
        let p = route.project(other.pose.position);
        if p.lateral.abs() < cfg.leader_lateral && p.arc > my_arc {
            let gap = p.arc - my_arc - 0.5 * (me.features.length + other.features.length);
            consider(gap, other.speed);
            continue;
        }
        if other.route_id == me.route_id {
            continue;
        }
        let other_route = &world.routes[other.route_id];
        let (Some((sa, _)), Some((sb, _))) =
            (conflicts[me.route_id][other.route_id], conflicts[other.route_id][me.route_id])
        else {
            continue;
        };
        let di = sa - my_arc;
        let dj = sb - other_route.project(other.pose.position).arc;
        let front = di - 0.5 * me.features.length;
        let other_front = dj - 0.5 * other.features.length;
        let cleared = dj < -(other.features.length + 2.0 * cfg.conflict_width + 1.0);
        if di > cfg.yield_distance || cleared || cfg.committed(front, me.speed) {
            continue;
        }
        let ti = front / my_speed;
        let tj = other_front.max(0.0) / other.speed.max(0.5);
        if cfg.committed(other_front, other.speed) || tj < ti || (tj == ti && j < i) {
            consider((front - cfg.stop_margin).max(0.05), 0.0);
        }
    }
    best
}

/// Rolls the scripted driver forward for the scenario horizon. Agents that
/// terminate early get shorter trajectories.
pub fn run_scripted_expert(world: &World, cfg: &ExpertConfig) -> Vec<ExpertTrajectory> {
    let conflicts = conflict_table(world, cfg);
    let mut states = initial_states(world);
    let mut out: Vec<ExpertTrajectory> = states
        .iter()
        .map(|s| ExpertTrajectory {
            states: vec![ExpertState { pose: s.pose, speed: s.speed }],
            actions: Vec::new(),
        })
        .collect();
    for step in 0..world.horizon() {
        let alive: Vec<usize> = (0..states.len()).filter(|&i| states[i].alive).collect();
        if alive.is_empty() {
            break;
        }
        let actions: Vec<Action> = alive
            .iter()
            .map(|&i| {
                let s = &states[i];
                let v0 = world.routes[s.route_id].speed_limit;
                let accel = cfg.idm(s.speed, v0, constraint(world, &conflicts, &states, i, cfg));
                Action::new(accel, pure_pursuit(world, s, cfg)).clamped()
            })
            .collect();
        let outcome = simulation_step(world, &states, &actions, step)
            .expect("one action per alive agent");
        for (&i, a) in alive.iter().zip(&actions) {
            let s = &outcome.states[i];
            out[i].actions.push(*a);
            out[i].states.push(ExpertState { pose: s.pose, speed: s.speed });
        }
        states = outcome.states;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idm_free_road_accelerates_below_desired_speed() {
        let cfg = ExpertConfig::default();
        assert!((cfg.idm(0.0, 10.0, None) - 2.0).abs() < 1e-12);
        assert!(cfg.idm(10.0, 10.0, None).abs() < 1e-12);
        assert!(cfg.idm(12.0, 10.0, None) < 0.0);
    }

    #[test]
    fn idm_brakes_when_close_to_stopped_leader() {
        let cfg = ExpertConfig::default();
        // s* = 2 + 10*1.5 + 10*10/(2*sqrt(6))
        let s_star: f64 = 2.0 + 15.0 + 100.0 / (2.0 * 6f64.sqrt());
        let expected = 2.0 * (1.0 - (10.0f64 / 13.9).powi(4) - (s_star / 20.0).powi(2));
        assert!((cfg.idm(10.0, 13.9, Some((20.0, 0.0))) - expected).abs() < 1e-12);
        assert!(expected < -3.0);
    }
}
