//! Synthetic scenario templates standing in for recorded traffic data.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    expert::{run_scripted_expert, ExpertConfig},
    split_map_element, AgentFeatures, AgentSpec, ElementType, Polyline, Route, Scenario,
    ScenarioMeta, World, DEFAULT_CORRIDOR_HALFWIDTH, DEFAULT_DT, DEFAULT_HORIZON,
    DEFAULT_SPEED_LIMIT, MAX_POLYLINE_LENGTH,
};
use crate::dynamics::{boxes_overlap, initial_states};
use crate::error::{Error, Result};
use crate::geometry::{AnchorPose, Vec2};

const SAMPLE_SPACING: f64 = 1.0;
const LANE_HALFWIDTH: f64 = DEFAULT_CORRIDOR_HALFWIDTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    Straight,
    Curve,
    Intersection,
    Merge,
}

impl Template {
    pub const ALL: [Template; 4] =
        [Template::Straight, Template::Curve, Template::Intersection, Template::Merge];

    pub fn name(self) -> &'static str {
        match self {
            Template::Straight => "straight",
            Template::Curve => "curve",
            Template::Intersection => "intersection",
            Template::Merge => "merge",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

/// Resamples a path so consecutive points are about `spacing` apart.
fn resample(path: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let mut out = vec![path[0]];
    for w in path.windows(2) {
        let seg = (w[1] - w[0]).norm();
        let n = (seg / spacing).ceil().max(1.0) as usize;
        for k in 1..=n {
            out.push(w[0].lerp(w[1], k as f64 / n as f64));
        }
    }
    out
}

/// Offsets a path laterally (positive = left of travel direction).
fn offset(path: &[Vec2], d: f64) -> Vec<Vec2> {
    let n = path.len();
    (0..n)
        .map(|i| {
            let a = path[i.saturating_sub(1)];
            let b = path[(i + 1).min(n - 1)];
            let t = b - a;
            let t = t * (1.0 / t.norm());
            path[i] + Vec2::new(-t.y, t.x) * d
        })
        .collect()
}

fn line(a: Vec2, b: Vec2) -> Vec<Vec2> {
    resample(&[a, b], SAMPLE_SPACING)
}

fn arc(center: Vec2, radius: f64, from: f64, to: f64) -> Vec<Vec2> {
    let n = ((to - from).abs() * radius / SAMPLE_SPACING).ceil() as usize;
    (0..=n)
        .map(|k| center + Vec2::from_angle(from + (to - from) * k as f64 / n as f64) * radius)
        .collect()
}

fn bezier(p0: Vec2, p1: Vec2, p2: Vec2, n: usize) -> Vec<Vec2> {
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            p0 * ((1.0 - t) * (1.0 - t)) + p1 * (2.0 * (1.0 - t) * t) + p2 * (t * t)
        })
        .collect()
}

#[derive(Default)]
struct MapBuilder {
    polylines: Vec<Polyline>,
}

impl MapBuilder {
    /// Adds a map element split into pieces; returns the new polyline ids.
    fn add(&mut self, points: &[Vec2], kind: ElementType) -> Result<Vec<usize>> {
        let pieces = split_map_element(points, MAX_POLYLINE_LENGTH, kind)?;
        let start = self.polylines.len();
        self.polylines.extend(pieces);
        Ok((start..self.polylines.len()).collect())
    }
}

struct Lane {
    centerline: Vec<Vec2>,
    polyline_ids: Vec<usize>,
}

fn add_lane(map: &mut MapBuilder, centerline: Vec<Vec2>, left: ElementType, right: ElementType) -> Result<Lane> {
    let centerline = resample(&centerline, SAMPLE_SPACING);
    let polyline_ids = map.add(&centerline, ElementType::Centerline)?;
    map.add(&offset(&centerline, LANE_HALFWIDTH), left)?;
    map.add(&offset(&centerline, -LANE_HALFWIDTH), right)?;
    Ok(Lane { centerline, polyline_ids })
}

fn arc_point(path: &[Vec2], s: f64) -> AnchorPose {
    let mut acc = 0.0;
    for w in path.windows(2) {
        let seg = (w[1] - w[0]).norm();
        if acc + seg >= s {
            let p = w[0].lerp(w[1], (s - acc) / seg);
            return AnchorPose::new(p.x, p.y, (w[1] - w[0]).angle()).unwrap();
        }
        acc += seg;
    }
    let n = path.len();
    let h = (path[n - 1] - path[n - 2]).angle();
    AnchorPose::new(path[n - 1].x, path[n - 1].y, h).unwrap()
}

fn random_vehicle(rng: &mut ChaCha8Rng, speed_limit: f64) -> AgentFeatures {
    AgentFeatures {
        width: rng.random_range(1.8..2.1),
        length: rng.random_range(4.2..5.0),
        speed: rng.random_range(4.0..10.0),
        speed_limit,
        vru: false,
    }
}

/// Places an agent at arc length `s` along a lane with a small random
/// lateral and heading perturbation.
fn place(rng: &mut ChaCha8Rng, lane: &[Vec2], s: f64) -> AnchorPose {
    let base = arc_point(lane, s);
    let lat = rng.random_range(-0.3..0.3);
    let dh = rng.random_range(-0.03..0.03);
    let p = base.to_global(Vec2::new(0.0, lat));
    AnchorPose::new(p.x, p.y, base.heading + dh).unwrap()
}

/// Longitudinal slots along one lane, back to front, `gap` meters apart.
fn platoon(rng: &mut ChaCha8Rng, n: usize, start: f64) -> Vec<f64> {
    let mut s = start;
    (0..n)
        .map(|_| {
            let here = s;
            s += rng.random_range(14.0..26.0);
            here
        })
        .collect()
}

/// Slots for `vehicles` (back to front) on one lane: each follower keeps a
/// time headway of 1 to 2 s plus the distance needed to brake down to a
/// slower leader's speed at the comfortable deceleration.
fn headway_platoon(rng: &mut ChaCha8Rng, vehicles: &[AgentFeatures], start: f64) -> Vec<f64> {
    let mut s = start;
    let mut out = Vec::with_capacity(vehicles.len());
    for (i, v) in vehicles.iter().enumerate() {
        out.push(s);
        if let Some(lead) = vehicles.get(i + 1) {
            let closing = (v.speed - lead.speed).max(0.0);
            s += 0.5 * (v.length + lead.length) + 2.0 + v.speed * rng.random_range(1.0..2.0) + closing * closing / 6.0;
        }
    }
    out
}

struct Layout {
    polylines: Vec<Polyline>,
    routes: Vec<Route>,
    agents: Vec<AgentSpec>,
}

fn route(ids: Vec<usize>) -> Route {
    Route {
        polyline_ids: ids,
        corridor_halfwidth: DEFAULT_CORRIDOR_HALFWIDTH,
        speed_limit: DEFAULT_SPEED_LIMIT,
    }
}

fn straight(rng: &mut ChaCha8Rng, n: usize) -> Result<Layout> {
    let vehicles: Vec<AgentFeatures> = (0..n).map(|_| random_vehicle(rng, DEFAULT_SPEED_LIMIT)).collect();
    let slots = headway_platoon(rng, &vehicles, 20.0);
    let length = slots.last().copied().unwrap_or(20.0) + 200.0;
    let mut map = MapBuilder::default();
    let lane = add_lane(&mut map, line(Vec2::ZERO, Vec2::new(length, 0.0)), ElementType::LaneBoundary, ElementType::RoadEdge)?;
    let agents = slots
        .iter()
        .zip(vehicles)
        .map(|(&s, features)| AgentSpec { features, pose: place(rng, &lane.centerline, s), route_id: 0 })
        .collect();
    Ok(Layout { polylines: map.polylines, routes: vec![route(lane.polyline_ids)], agents })
}

fn curve(rng: &mut ChaCha8Rng, n: usize) -> Result<Layout> {
    let vehicles: Vec<AgentFeatures> = (0..n).map(|_| random_vehicle(rng, DEFAULT_SPEED_LIMIT)).collect();
    let slots = headway_platoon(rng, &vehicles, 20.0);
    let lead_in = slots.last().copied().unwrap_or(20.0) + 20.0;
    let radius = 60.0;
    let mut path = line(Vec2::ZERO, Vec2::new(lead_in, 0.0));
    let center = Vec2::new(lead_in, radius);
    path.extend(arc(center, radius, -std::f64::consts::FRAC_PI_2, 0.0).into_iter().skip(1));
    let exit = Vec2::new(lead_in + radius, radius);
    path.extend(line(exit, exit + Vec2::new(0.0, 150.0)).into_iter().skip(1));
    let mut map = MapBuilder::default();
    let lane = add_lane(&mut map, path, ElementType::LaneBoundary, ElementType::RoadEdge)?;
    let agents = slots
        .iter()
        .zip(vehicles)
        .map(|(&s, features)| AgentSpec { features, pose: place(rng, &lane.centerline, s), route_id: 0 })
        .collect();
    Ok(Layout { polylines: map.polylines, routes: vec![route(lane.polyline_ids)], agents })
}

fn intersection(rng: &mut ChaCha8Rng, n: usize) -> Result<Layout> {
    let per_lane = n.div_ceil(4);
    let arm = 70.0 + 20.0 * per_lane as f64;
    let box_half = 2.0 * LANE_HALFWIDTH;
    let mut map = MapBuilder::default();
    // Right-hand traffic: eastbound, northbound, westbound, southbound.
    let dirs = [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI, -std::f64::consts::FRAC_PI_2];
    let mut lanes = Vec::new();
    for &h in &dirs {
        let fwd = Vec2::from_angle(h);
        let right = Vec2::new(fwd.y, -fwd.x);
        let c = right * LANE_HALFWIDTH;
        let pts = line(c - fwd * arm, c + fwd * arm);
        let ids = map.add(&pts, ElementType::Centerline)?;
        lanes.push(Lane { centerline: pts, polyline_ids: ids });
    }
    for &h in &dirs {
        // Outer road edge and center divider on the approach arm, a
        // crosswalk just before the box.
        let fwd = Vec2::from_angle(h);
        let right = Vec2::new(fwd.y, -fwd.x);
        let (near, far) = (-fwd * box_half, -fwd * arm);
        map.add(&line(far + right * box_half, near + right * box_half), ElementType::RoadEdge)?;
        map.add(&line(far - right * box_half, near - right * box_half), ElementType::RoadEdge)?;
        map.add(&line(far, near), ElementType::LaneBoundary)?;
        let cw = -fwd * (box_half + 3.0);
        map.add(&line(cw + right * box_half, cw - right * box_half), ElementType::Crossing)?;
    }
    let mut slots: Vec<Vec<f64>> = (0..4).map(|_| Vec::new()).collect();
    for (k, lane_slots) in slots.iter_mut().enumerate() {
        let count = (n + 3 - k) / 4;
        let start = arm - 12.0 - rng.random_range(0.0..25.0);
        let mut s = start;
        for _ in 0..count {
            lane_slots.push(s);
            s -= rng.random_range(14.0..22.0);
        }
    }
    let mut agents = Vec::with_capacity(n);
    for k in 0..n {
        let lane = k % 4;
        let s = slots[lane][k / 4];
        agents.push(AgentSpec {
            features: random_vehicle(rng, DEFAULT_SPEED_LIMIT),
            pose: place(rng, &lanes[lane].centerline, s),
            route_id: lane,
        });
    }
    let routes = lanes.into_iter().map(|l| route(l.polyline_ids)).collect();
    Ok(Layout { polylines: map.polylines, routes, agents })
}

fn merge(rng: &mut ChaCha8Rng, n: usize) -> Result<Layout> {
    let n_main = n.div_ceil(2);
    let n_ramp = n - n_main;
    let merge_x = 100.0 + 20.0 * n_main as f64;
    let main_len = merge_x + 200.0;
    let mut map = MapBuilder::default();
    let main_pts = line(Vec2::ZERO, Vec2::new(main_len, 0.0));
    let main_ids = map.add(&main_pts, ElementType::Centerline)?;
    map.add(&offset(&main_pts, LANE_HALFWIDTH), ElementType::RoadEdge)?;
    let gap_start = merge_x - 40.0;
    map.add(&line(Vec2::new(0.0, -LANE_HALFWIDTH), Vec2::new(gap_start, -LANE_HALFWIDTH)), ElementType::RoadEdge)?;
    map.add(&line(Vec2::new(merge_x, -LANE_HALFWIDTH), Vec2::new(main_len, -LANE_HALFWIDTH)), ElementType::RoadEdge)?;

    // The ramp keeps a straight lead-in even when nobody starts on it.
    let lead = n_ramp.max(1) as f64;
    let ramp_start = Vec2::new(merge_x - 60.0 - 20.0 * lead, -24.0 - 6.0 * lead);
    let mut ramp_pts = line(ramp_start, Vec2::new(merge_x - 60.0, -24.0));
    ramp_pts.extend(
        resample(&bezier(Vec2::new(merge_x - 60.0, -24.0), Vec2::new(merge_x - 30.0, 0.0), Vec2::new(merge_x, 0.0), 64), SAMPLE_SPACING)
            .into_iter()
            .skip(1),
    );
    let ramp_ids = map.add(&ramp_pts, ElementType::Centerline)?;
    map.add(&offset(&ramp_pts, -LANE_HALFWIDTH), ElementType::RoadEdge)?;
    map.add(&offset(&ramp_pts, LANE_HALFWIDTH), ElementType::LaneBoundary)?;

    let joined: Vec<usize> = main_ids
        .iter()
        .copied()
        .filter(|&id| map.polylines[id].points()[0].x >= merge_x - 1e-6)
        .collect();
    let mut ramp_route = ramp_ids;
    ramp_route.extend(&joined);

    let main_slots = platoon(rng, n_main, 10.0);
    let ramp_slots = platoon(rng, n_ramp, 5.0);
    let mut agents = Vec::with_capacity(n);
    let (mut mi, mut ri) = (0, 0);
    for k in 0..n {
        let (lane, s, route_id) = if k % 2 == 0 || ri >= n_ramp {
            mi += 1;
            (&main_pts, main_slots[mi - 1], 0)
        } else {
            ri += 1;
            (&ramp_pts, ramp_slots[ri - 1], 1)
        };
        agents.push(AgentSpec {
            features: random_vehicle(rng, DEFAULT_SPEED_LIMIT),
            pose: place(rng, lane, s),
            route_id,
        });
    }
    Ok(Layout { polylines: map.polylines, routes: vec![route(main_ids), route(ramp_route)], agents })
}

fn template_salt(t: Template) -> u64 {
    match t {
        Template::Straight => 0x5157_0001,
        Template::Curve => 0x5157_0002,
        Template::Intersection => 0x5157_0003,
        Template::Merge => 0x5157_0004,
    }
}

/// Builds a scenario from a template, with expert trajectories from the
/// scripted driver. Deterministic in `seed`.
pub fn generate_synthetic_scenario(template: Template, n_agents: usize, seed: u64) -> Result<Scenario> {
    if n_agents == 0 {
        return Err(Error::InvalidArgument("n_agents must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ template_salt(template).rotate_left(32));
    let mut last_err = None;
    for _ in 0..100 {
        let layout = match template {
            Template::Straight => straight(&mut rng, n_agents)?,
            Template::Curve => curve(&mut rng, n_agents)?,
            Template::Intersection => intersection(&mut rng, n_agents)?,
            Template::Merge => merge(&mut rng, n_agents)?,
        };
        let scenario = Scenario {
            meta: ScenarioMeta {
                dt: DEFAULT_DT,
                horizon: DEFAULT_HORIZON,
                seed,
                template: Some(template.name().to_string()),
            },
            polylines: layout.polylines,
            routes: layout.routes,
            agents: layout.agents,
            expert: Vec::new(),
        };
        let world = World::new(Arc::new(scenario));
        let states = initial_states(&world);
        let overlapping = (0..states.len())
            .any(|i| (i + 1..states.len()).any(|j| boxes_overlap(&states[i], &states[j])));
        if overlapping {
            last_err = Some(Error::InvalidArgument("could not place agents without overlap".into()));
            continue;
        }
        let expert = run_scripted_expert(&world, &ExpertConfig::default());
        let mut scenario = Arc::try_unwrap(world.scenario).unwrap_or_else(|a| (*a).clone());
        scenario.expert = expert;
        scenario.validate()?;
        return Ok(scenario);
    }
    Err(last_err.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{check_off_track, AgentState, Termination};

    #[test]
    fn unknown_template_is_rejected() {
        assert!(matches!("roundabout".parse::<Template>(), Err(Error::UnknownTemplate(_))));
        assert_eq!("merge".parse::<Template>().unwrap(), Template::Merge);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_scenario(Template::Straight, 2, 7).unwrap();
        let b = generate_synthetic_scenario(Template::Straight, 2, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_scenario(Template::Straight, 2, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn polylines_respect_length_limit() {
        for t in Template::ALL {
            let s = generate_synthetic_scenario(t, 4, 1).unwrap();
            for p in &s.polylines {
                assert!(p.length() <= MAX_POLYLINE_LENGTH + 1e-9);
            }
            assert!(s.polylines.iter().any(|p| p.element_type() == ElementType::Centerline));
            assert_eq!(s.expert.len(), 4);
        }
    }

    fn expert_state(s: &Scenario, agent: usize, t: usize) -> AgentState {
        let e = &s.expert[agent].states[t];
        let spec = &s.agents[agent];
        AgentState {
            pose: e.pose,
            speed: e.speed,
            features: spec.features,
            route_id: spec.route_id,
            alive: true,
            termination: Termination::None,
        }
    }

    #[test]
    fn straight_single_agent_expert_stays_in_corridor() {
        let s = generate_synthetic_scenario(Template::Straight, 1, 7).unwrap();
        assert_eq!(s.n_agents(), 1);
        assert_eq!(s.expert[0].states.len(), s.meta.horizon + 1);
        for t in 0..=s.meta.horizon {
            let st = expert_state(&s, 0, t);
            assert!(!check_off_track(&st, &s.routes[0], &s.polylines), "left corridor at step {t}");
        }
    }

    #[test]
    fn straight_experts_run_full_horizon() {
        for seed in 0..20 {
            let s = generate_synthetic_scenario(Template::Straight, 4, seed).unwrap();
            for a in 0..4 {
                assert_eq!(s.expert[a].states.len(), s.meta.horizon + 1, "seed {seed} agent {a}");
            }
        }
    }

    #[test]
    fn expert_replay_has_no_failures() {
        use crate::dynamics::simulation_step;
        for t in Template::ALL {
            for seed in 0..15 {
                let s = generate_synthetic_scenario(t, 8, seed).unwrap();
                let w = World::from_scenario(s.clone());
                let mut st = initial_states(&w);
                for step in 0..w.horizon() {
                    let acts: Vec<_> = (0..st.len())
                        .filter(|&i| st[i].alive)
                        .map(|i| s.expert[i].actions[step])
                        .collect();
                    if acts.is_empty() {
                        break;
                    }
                    let out = simulation_step(&w, &st, &acts, step).unwrap();
                    for e in &out.events {
                        assert!(!e.cause.is_failure(), "{t} seed {seed}: {e:?}");
                    }
                    for (i, x) in out.states.iter().enumerate() {
                        if st[i].alive {
                            assert_eq!(x.pose, s.expert[i].states[step + 1].pose);
                        }
                    }
                    st = out.states;
                }
            }
        }
    }

    #[test]
    fn intersection_has_crossing_routes() {
        let s = generate_synthetic_scenario(Template::Intersection, 4, 3).unwrap();
        let w = World::from_scenario(s.clone());
        assert_eq!(s.routes.len(), 4);
        let mut crossing_pairs = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                // Independent check: do any centerline segments properly intersect?
                let (a, b) = (w.routes[i].points(), w.routes[j].points());
                let hit = a.windows(2).any(|p| {
                    b.windows(2).any(|q| {
                        let d1 = (p[1] - p[0]).cross(q[0] - p[0]);
                        let d2 = (p[1] - p[0]).cross(q[1] - p[0]);
                        let d3 = (q[1] - q[0]).cross(p[0] - q[0]);
                        let d4 = (q[1] - q[0]).cross(p[1] - q[0]);
                        d1 * d2 <= 0.0 && d3 * d4 <= 0.0 && (d1 != 0.0 || d2 != 0.0)
                    })
                });
                if hit {
                    crossing_pairs += 1;
                }
            }
        }
        assert!(crossing_pairs >= 2, "{crossing_pairs}");
    }

    #[test]
    fn generated_agents_do_not_overlap() {
        for t in Template::ALL {
            for seed in 0..5 {
                let s = generate_synthetic_scenario(t, 8, seed).unwrap();
                let w = World::from_scenario(s);
                let st = initial_states(&w);
                for i in 0..st.len() {
                    for j in i + 1..st.len() {
                        assert!(!boxes_overlap(&st[i], &st[j]), "{t} seed {seed}");
                    }
                }
            }
        }
    }
}
