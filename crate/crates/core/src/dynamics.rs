//! Kinematic bicycle simulation with collision and off-track termination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, AnchorPose, Vec2};
use crate::scene::{AgentFeatures, Polyline, Route, RouteGeometry, World};

pub const ACCEL_MIN: f64 = -8.0;
pub const ACCEL_MAX: f64 = 5.0;
pub const STEER_MAX: f64 = 0.55;
/// Wheelbase as a fraction of vehicle length.
pub const WHEELBASE_RATIO: f64 = 0.6;
/// Distance before the route end at which an agent counts as finished.
pub const FINISH_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub accel: f64,
    pub steer: f64,
}

impl Action {
    pub const ZERO: Action = Action { accel: 0.0, steer: 0.0 };

    pub fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }

    /// Clamps into the executable bounds; NaN components become zero.
    pub fn clamped(self) -> Action {
        let fix = |v: f64| if v.is_nan() { 0.0 } else { v };
        Action {
            accel: fix(self.accel).clamp(ACCEL_MIN, ACCEL_MAX),
            steer: fix(self.steer).clamp(-STEER_MAX, STEER_MAX),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    #[default]
    None,
    Collision,
    OffTrack,
    Finished,
}

impl Termination {
    /// Collision and off-track end the episode without bootstrapping.
    pub fn is_failure(self) -> bool {
        matches!(self, Termination::Collision | Termination::OffTrack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub pose: AnchorPose,
    pub speed: f64,
    pub features: AgentFeatures,
    pub route_id: usize,
    pub alive: bool,
    pub termination: Termination,
}

impl AgentState {
    /// Features with the current speed filled in.
    pub fn current_features(&self) -> AgentFeatures {
        AgentFeatures { speed: self.speed, ..self.features }
    }

    pub fn wheelbase(&self) -> f64 {
        WHEELBASE_RATIO * self.features.length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvent {
    pub agent: usize,
    pub cause: Termination,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub states: Vec<AgentState>,
    pub events: Vec<StepEvent>,
}

/// Initial simulation states of all agents in a world.
pub fn initial_states(world: &World) -> Vec<AgentState> {
    world
        .scenario
        .agents
        .iter()
        .map(|a| AgentState {
            pose: a.pose,
            speed: a.features.speed,
            features: a.features,
            route_id: a.route_id,
            alive: true,
            termination: Termination::None,
        })
        .collect()
}

/// One forward-Euler step of the center-referenced kinematic bicycle.
pub fn bicycle_step(state: &AgentState, action: Action, dt: f64) -> AgentState {
    let a = action.clamped();
    let wheelbase = state.wheelbase();
    let tan_steer = a.steer.tan();
    let slip = (0.5 * tan_steer).atan();
    let v = state.speed;
    let theta = state.pose.heading;
    let position = state.pose.position
        + Vec2::new(v * (theta + slip).cos() * dt, v * (theta + slip).sin() * dt);
    let yaw_rate = v * slip.cos() * tan_steer / wheelbase;
    AgentState {
        pose: AnchorPose { position, heading: wrap_angle(theta + yaw_rate * dt) },
        speed: (v + a.accel * dt).max(0.0),
        ..*state
    }
}

fn box_axes(pose: &AnchorPose) -> (Vec2, Vec2) {
    let f = pose.forward();
    (f, Vec2::new(-f.y, f.x))
}

/// Strict separating-axis overlap test between two oriented rectangles;
/// touching boxes do not overlap.
pub fn boxes_overlap(a: &AgentState, b: &AgentState) -> bool {
    let d = b.pose.position - a.pose.position;
    let (ha_l, ha_w) = (0.5 * a.features.length, 0.5 * a.features.width);
    let (hb_l, hb_w) = (0.5 * b.features.length, 0.5 * b.features.width);
    let reach = ha_l.hypot(ha_w) + hb_l.hypot(hb_w);
    if d.norm() >= reach {
        return false;
    }
    let (af, al) = box_axes(&a.pose);
    let (bf, bl) = box_axes(&b.pose);
    for axis in [af, al, bf, bl] {
        let ra = ha_l * af.dot(axis).abs() + ha_w * al.dot(axis).abs();
        let rb = hb_l * bf.dot(axis).abs() + hb_w * bl.dot(axis).abs();
        if d.dot(axis).abs() >= ra + rb {
            return false;
        }
    }
    true
}

/// All unordered pairs `(i, j)`, `i < j`, of alive agents whose boxes overlap.
pub fn check_collision(states: &[AgentState]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..states.len() {
        if !states[i].alive {
            continue;
        }
        for j in i + 1..states.len() {
            if states[j].alive && boxes_overlap(&states[i], &states[j]) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// True iff the agent center is farther than the corridor half-width from
/// the route centerline.
pub fn check_off_track(state: &AgentState, route: &Route, polylines: &[Polyline]) -> bool {
    let mut chain = Vec::new();
    for &id in &route.polyline_ids {
        chain.extend_from_slice(polylines[id].points());
    }
    let geom = RouteGeometry::new(&chain, route.corridor_halfwidth, route.speed_limit);
    is_off_track(state, &geom)
}

pub fn is_off_track(state: &AgentState, route: &RouteGeometry) -> bool {
    route.project(state.pose.position).distance > route.halfwidth
}

/// Advances all alive agents synchronously by one step.
///
/// `actions` holds one action per alive agent, in agent order.
pub fn simulation_step(
    world: &World,
    states: &[AgentState],
    actions: &[Action],
    step: usize,
) -> Result<StepOutcome> {
    let n_alive = states.iter().filter(|s| s.alive).count();
    if actions.len() != n_alive {
        return Err(Error::Shape(format!(
            "{} actions for {} alive agents",
            actions.len(),
            n_alive
        )));
    }
    let dt = world.dt();
    let mut next = states.to_vec();
    let mut it = actions.iter();
    for s in next.iter_mut().filter(|s| s.alive) {
        *s = bicycle_step(s, *it.next().unwrap(), dt);
    }

    let mut cause = vec![Termination::None; next.len()];
    for (i, j) in check_collision(&next) {
        cause[i] = Termination::Collision;
        cause[j] = Termination::Collision;
    }
    for (i, s) in next.iter().enumerate() {
        if !s.alive || cause[i] != Termination::None {
            continue;
        }
        let route = &world.routes[s.route_id];
        let proj = route.project(s.pose.position);
        if proj.distance > route.halfwidth {
            cause[i] = Termination::OffTrack;
        } else if proj.arc >= route.length() - FINISH_MARGIN {
            cause[i] = Termination::Finished;
        }
    }

    let mut events = Vec::new();
    for (i, s) in next.iter_mut().enumerate() {
        if cause[i] != Termination::None {
            s.alive = false;
            s.termination = cause[i];
            events.push(StepEvent { agent: i, cause: cause[i], step });
        }
    }
    Ok(StepOutcome { states: next, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentSpec, ElementType, Scenario, ScenarioMeta};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn car(x: f64, y: f64, heading: f64, speed: f64) -> AgentState {
        AgentState {
            pose: AnchorPose::new(x, y, heading).unwrap(),
            speed,
            features: AgentFeatures { width: 2.0, length: 4.0, speed, speed_limit: 13.9, vru: false },
            route_id: 0,
            alive: true,
            termination: Termination::None,
        }
    }

    fn straight_world(agents: &[AgentState]) -> World {
        let pts: Vec<Vec2> = (0..=50).map(|i| Vec2::new(i as f64 * 10.0 - 100.0, 0.0)).collect();
        let polylines = crate::scene::split_map_element(&pts, 10.0, ElementType::Centerline).unwrap();
        let ids = (0..polylines.len()).collect();
        let scenario = Scenario {
            meta: ScenarioMeta { dt: 0.2, horizon: 50, seed: 0, template: None },
            polylines,
            routes: vec![Route { polyline_ids: ids, corridor_halfwidth: 2.0, speed_limit: 13.9 }],
            agents: agents
                .iter()
                .map(|s| AgentSpec { features: s.features, pose: s.pose, route_id: 0 })
                .collect(),
            expert: vec![],
        };
        World::from_scenario(scenario)
    }

    #[test]
    fn rest_is_fixed_point() {
        let s = car(1.0, 2.0, 0.3, 0.0);
        assert_eq!(bicycle_step(&s, Action::ZERO, 0.2), s);
    }

    #[test]
    fn straight_motion() {
        let s = car(0.0, 0.0, 0.0, 10.0);
        let n = bicycle_step(&s, Action::ZERO, 0.2);
        assert!((n.pose.position.x - 2.0).abs() < 1e-12);
        assert_eq!(n.pose.position.y, 0.0);
        assert_eq!(n.speed, 10.0);
    }

    #[test]
    fn speed_never_negative() {
        let s = car(0.0, 0.0, 0.0, 0.5);
        let n = bicycle_step(&s, Action::new(-8.0, 0.0), 0.2);
        assert_eq!(n.speed, 0.0);
        let clamped = Action::new(100.0, -3.0).clamped();
        assert_eq!(clamped, Action::new(ACCEL_MAX, -STEER_MAX));
    }

    #[test]
    fn collision_examples() {
        assert!(check_collision(&[car(0.0, 0.0, 0.0, 0.0), car(100.0, 0.0, 0.0, 0.0)]).is_empty());
        assert_eq!(check_collision(&[car(0.0, 0.0, 0.0, 0.0), car(0.0, 0.0, 0.0, 0.0)]), vec![(0, 1)]);
        assert!(check_collision(&[car(0.0, 0.0, 0.0, 0.0), car(4.01, 0.0, 0.0, 0.0)]).is_empty());
        assert_eq!(check_collision(&[car(0.0, 0.0, 0.0, 0.0), car(3.99, 0.0, 0.0, 0.0)]), vec![(0, 1)]);
        // A box rotated by 45 degrees reaches 3/sqrt(2) m along x, so the
        // x-axis separates the pair only beyond 2 + 2.1213 m.
        let a = car(0.0, 0.0, 0.0, 0.0);
        let rot = std::f64::consts::FRAC_PI_4;
        assert!(boxes_overlap(&a, &car(4.10, 0.0, rot, 0.0)));
        assert!(!boxes_overlap(&a, &car(4.14, 0.0, rot, 0.0)));
        let mut dead = car(0.0, 0.0, 0.0, 0.0);
        dead.alive = false;
        assert!(check_collision(&[dead, car(0.0, 0.0, 0.0, 0.0)]).is_empty());
    }

    #[test]
    fn off_track_examples() {
        let world = straight_world(&[]);
        let route = &world.scenario.routes[0];
        let polys = &world.scenario.polylines;
        assert!(!check_off_track(&car(0.0, 0.0, 0.0, 0.0), route, polys));
        assert!(check_off_track(&car(0.0, 2.5, 0.0, 0.0), route, polys));
        assert!(!check_off_track(&car(0.0, 2.0, 0.0, 0.0), route, polys));
        assert!(!check_off_track(&car(0.0, -2.0, 0.0, 0.0), route, polys));
    }

    #[test]
    fn step_rejects_action_count_mismatch() {
        let agents = [car(0.0, 0.0, 0.0, 0.0)];
        let world = straight_world(&agents);
        assert!(simulation_step(&world, &agents, &[], 0).is_err());
    }

    #[test]
    fn resting_agents_produce_no_events() {
        let agents = [car(-20.0, 0.0, 0.0, 0.0), car(20.0, 0.0, 0.0, 0.0)];
        let world = straight_world(&agents);
        let out = simulation_step(&world, &agents, &[Action::ZERO; 2], 0).unwrap();
        assert!(out.events.is_empty());
        assert_eq!(out.states, agents.to_vec());
    }

    #[test]
    fn head_on_collision_within_one_step() {
        // Centers 7 m apart: 3 m of free space between bumpers, closing at
        // 2 m per agent per step.
        let agents = [car(-3.5, 0.0, 0.0, 10.0), car(3.5, 0.0, std::f64::consts::PI, 10.0)];
        let world = straight_world(&agents);
        let out = simulation_step(&world, &agents, &[Action::ZERO; 2], 0).unwrap();
        assert_eq!(out.events.len(), 2);
        assert!(out.events.iter().all(|e| e.cause == Termination::Collision));
        assert!(out.states.iter().all(|s| !s.alive));
    }

    #[test]
    fn hard_left_leaves_corridor_when_predicted() {
        let agent = car(0.0, 0.0, 0.0, 10.0);
        let world = straight_world(&[agent]);
        let action = Action::new(0.0, STEER_MAX);
        // Independent integration of the same model to find the first
        // step where the center is > 2 m from the x-axis.
        let mut s = agent;
        let mut expected = None;
        for k in 0..50 {
            s = bicycle_step(&s, action, 0.2);
            if s.pose.position.y.abs() > 2.0 {
                expected = Some(k);
                break;
            }
        }
        let mut states = vec![agent];
        let mut got = None;
        for k in 0..50 {
            let out = simulation_step(&world, &states, &[action], k).unwrap();
            if let Some(e) = out.events.first() {
                assert_eq!(e.cause, Termination::OffTrack);
                got = Some(e.step);
                break;
            }
            states = out.states;
        }
        assert_eq!(got, expected);
        assert!(got.unwrap() <= 5);
    }

    #[test]
    fn terminated_agents_are_frozen() {
        let agents = [car(-3.5, 0.0, 0.0, 10.0), car(3.5, 0.0, std::f64::consts::PI, 10.0), car(-60.0, 0.0, 0.0, 5.0)];
        let world = straight_world(&agents);
        let out = simulation_step(&world, &agents, &[Action::ZERO; 3], 0).unwrap();
        let frozen = out.states[0];
        let out2 = simulation_step(&world, &out.states, &[Action::new(1.0, 0.0)], 1).unwrap();
        assert_eq!(out2.states[0], frozen);
        assert!(out2.events.is_empty());
    }

    #[test]
    fn constant_speed_without_inputs() {
        let mut s = car(0.0, 0.0, 0.4, 7.5);
        for _ in 0..100 {
            s = bicycle_step(&s, Action::ZERO, 0.2);
            assert_eq!(s.speed, 7.5);
        }
    }

    #[test]
    fn permutation_invariance_random_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base: Vec<AgentState> = (0..6)
            .map(|i| car(-80.0 + 25.0 * i as f64, rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2), rng.random_range(0.0..12.0)))
            .collect();
        let world = straight_world(&base);
        for k in 0..50 {
            let actions: Vec<Action> = (0..6)
                .map(|_| Action::new(rng.random_range(-8.0..5.0), rng.random_range(-0.55..0.55)))
                .collect();
            let out = simulation_step(&world, &base, &actions, k).unwrap();
            let perm = [3, 0, 5, 1, 4, 2];
            let pstates: Vec<AgentState> = perm.iter().map(|&i| base[i]).collect();
            let pactions: Vec<Action> = perm.iter().map(|&i| actions[i]).collect();
            let pout = simulation_step(&world, &pstates, &pactions, k).unwrap();
            for (pi, &i) in perm.iter().enumerate() {
                assert_eq!(pout.states[pi], out.states[i]);
            }
        }
    }
}
