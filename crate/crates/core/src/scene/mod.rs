//! Vectorized map, scenario model and scenario files.

mod expert;
mod generate;
mod io;
mod route;
mod world;

pub use expert::{run_scripted_expert, ExpertConfig};
pub use generate::{generate_synthetic_scenario, Template};
pub use io::{load_scenario, save_scenario, scenario_from_json, scenario_to_json};
pub use route::{Projection, RouteGeometry};
pub use world::World;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::Action;
use crate::error::{Error, Result};
use crate::geometry::{apply_rigid_transform, AnchorPose, Vec2};

/// Maximum total length of a map polyline, in meters.
pub const MAX_POLYLINE_LENGTH: f64 = 10.0;
pub const DEFAULT_DT: f64 = 0.2;
pub const DEFAULT_HORIZON: usize = 50;
pub const DEFAULT_CORRIDOR_HALFWIDTH: f64 = 2.0;
pub const DEFAULT_SPEED_LIMIT: f64 = 13.9;

const LENGTH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementType {
    LaneBoundary,
    RoadEdge,
    Crossing,
    Centerline,
}

impl ElementType {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            ElementType::LaneBoundary => 0,
            ElementType::RoadEdge => 1,
            ElementType::Crossing => 2,
            ElementType::Centerline => 3,
        }
    }

    pub fn one_hot(self) -> [f64; Self::COUNT] {
        let mut v = [0.0; Self::COUNT];
        v[self.index()] = 1.0;
        v
    }
}

/// One vector of a polyline, expressed in the polyline's local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineVector {
    pub start: Vec2,
    pub end: Vec2,
    pub element_type: ElementType,
}

impl PolylineVector {
    pub const FEATURE_DIM: usize = 4 + ElementType::COUNT;
    /// Local coordinates are divided by this before encoding (half the
    /// maximum polyline length).
    pub const COORD_SCALE: f64 = 5.0;

    pub fn features(&self) -> [f64; Self::FEATURE_DIM] {
        let s = 1.0 / Self::COORD_SCALE;
        let oh = self.element_type.one_hot();
        [
            self.start.x * s,
            self.start.y * s,
            self.end.x * s,
            self.end.y * s,
            oh[0],
            oh[1],
            oh[2],
            oh[3],
        ]
    }
}

/// A map element piece of at most [`MAX_POLYLINE_LENGTH`] meters.
///
/// Stores the global points it was built from; the anchor and the local
/// vectors are derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolylineRecord", into = "PolylineRecord")]
pub struct Polyline {
    points: Vec<Vec2>,
    vectors: Vec<PolylineVector>,
    anchor: AnchorPose,
    element_type: ElementType,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolylineRecord {
    #[serde(rename = "type")]
    element_type: ElementType,
    points: Vec<[f64; 2]>,
}

impl TryFrom<PolylineRecord> for Polyline {
    type Error = Error;
    fn try_from(r: PolylineRecord) -> Result<Self> {
        let pts = r.points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        Polyline::from_points(pts, r.element_type)
    }
}

impl From<Polyline> for PolylineRecord {
    fn from(p: Polyline) -> Self {
        PolylineRecord {
            element_type: p.element_type,
            points: p.points.iter().map(|v| [v.x, v.y]).collect(),
        }
    }
}

impl Polyline {
    /// Builds a polyline from a chain of global points.
    ///
    /// The anchor sits at the mean of the distinct points, with its x-axis
    /// along the first-to-last chord.
    pub fn from_points(points: Vec<Vec2>, element_type: ElementType) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("polyline needs at least 2 points".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("polyline point"));
        }
        if points.windows(2).any(|w| (w[1] - w[0]).norm() <= 0.0) {
            return Err(Error::InvalidArgument("polyline has a zero-length vector".into()));
        }
        let mut distinct: Vec<Vec2> = Vec::with_capacity(points.len());
        for p in &points {
            if !distinct.contains(p) {
                distinct.push(*p);
            }
        }
        let n = distinct.len() as f64;
        let sum = distinct.iter().fold(Vec2::ZERO, |acc, p| acc + *p);
        let center = sum * (1.0 / n);
        let chord = points[points.len() - 1] - points[0];
        let heading = if chord.norm() > LENGTH_TOL {
            chord.angle()
        } else {
            (points[1] - points[0]).angle()
        };
        let anchor = AnchorPose::new(center.x, center.y, heading)?;
        let vectors = points
            .windows(2)
            .map(|w| PolylineVector {
                start: anchor.to_local(w[0]),
                end: anchor.to_local(w[1]),
                element_type,
            })
            .collect();
        Ok(Self { points, vectors, anchor, element_type })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn vectors(&self) -> &[PolylineVector] {
        &self.vectors
    }

    pub fn anchor(&self) -> &AnchorPose {
        &self.anchor
    }

    pub fn element_type(&self) -> ElementType {
        self.element_type
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

/// Splits a map element into chained polylines of at most `max_len` meters.
pub fn split_map_element(
    points: &[Vec2],
    max_len: f64,
    element_type: ElementType,
) -> Result<Vec<Polyline>> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("map element needs at least 2 points".into()));
    }
    if !(max_len > 0.0) {
        return Err(Error::InvalidArgument("max_len must be positive".into()));
    }
    let mut out = Vec::new();
    let mut current = vec![points[0]];
    let mut acc = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = (b - a).norm();
        if seg <= 0.0 {
            continue;
        }
        let mut t = 0.0;
        while acc + (1.0 - t) * seg > max_len + LENGTH_TOL {
            let t_cut = t + (max_len - acc) / seg;
            if t_cut * seg > LENGTH_TOL {
                current.push(a.lerp(b, t_cut));
            }
            let cut_point = *current.last().unwrap();
            out.push(Polyline::from_points(std::mem::take(&mut current), element_type)?);
            current.push(cut_point);
            acc = 0.0;
            t = t_cut;
        }
        if (1.0 - t) * seg > LENGTH_TOL {
            current.push(b);
            acc += (1.0 - t) * seg;
        }
    }
    if current.len() >= 2 {
        out.push(Polyline::from_points(current, element_type)?);
    }
    Ok(out)
}

/// Indices of anchors within `radius` (inclusive) of `target`.
pub fn neighbors_within(target: &AnchorPose, anchors: &[AnchorPose], radius: f64) -> Vec<usize> {
    anchors
        .iter()
        .enumerate()
        .filter(|(_, a)| (a.position - target.position).norm() <= radius)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentFeatures {
    pub width: f64,
    pub length: f64,
    pub speed: f64,
    pub speed_limit: f64,
    pub vru: bool,
}

impl AgentFeatures {
    pub const DIM: usize = 5;

    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0.0
            && self.length > 0.0
            && self.speed >= 0.0
            && self.speed_limit > 0.0
            && self.width.is_finite()
            && self.length.is_finite()
            && self.speed.is_finite()
            && self.speed_limit.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid agent features {self:?}")))
        }
    }

    /// Encoder input: sizes and speeds divided by typical magnitudes.
    pub fn encoded(&self) -> [f64; Self::DIM] {
        [
            self.width / 2.0,
            self.length / 5.0,
            self.speed / 10.0,
            self.speed_limit / 10.0,
            if self.vru { 1.0 } else { 0.0 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub polyline_ids: Vec<usize>,
    #[serde(default = "default_halfwidth")]
    pub corridor_halfwidth: f64,
    #[serde(default = "default_speed_limit")]
    pub speed_limit: f64,
}

fn default_halfwidth() -> f64 {
    DEFAULT_CORRIDOR_HALFWIDTH
}

fn default_speed_limit() -> f64 {
    DEFAULT_SPEED_LIMIT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub features: AgentFeatures,
    pub pose: AnchorPose,
    pub route_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertState {
    pub pose: AnchorPose,
    pub speed: f64,
}

/// Pose/action sequence of one agent; `states[t + 1]` results from
/// `actions[t]`. Shorter than the horizon if the expert terminated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertTrajectory {
    pub states: Vec<ExpertState>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub dt: f64,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub meta: ScenarioMeta,
    pub polylines: Vec<Polyline>,
    pub routes: Vec<Route>,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub expert: Vec<ExpertTrajectory>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let schema = |m: String| Err(Error::Schema(m));
        if !(self.meta.dt > 0.0 && self.meta.dt.is_finite()) {
            return schema(format!("meta.dt must be positive, got {}", self.meta.dt));
        }
        if self.meta.horizon == 0 {
            return schema("meta.horizon must be at least 1".into());
        }
        if self.routes.is_empty() {
            return schema("routes: at least one route required".into());
        }
        for (r, route) in self.routes.iter().enumerate() {
            if route.polyline_ids.is_empty() {
                return schema(format!("routes[{r}].polyline_ids is empty"));
            }
            if let Some(id) = route.polyline_ids.iter().find(|&&id| id >= self.polylines.len()) {
                return schema(format!("routes[{r}].polyline_ids references missing polyline {id}"));
            }
            if !(route.corridor_halfwidth > 0.0) {
                return schema(format!("routes[{r}].corridor_halfwidth must be positive"));
            }
            if !(route.speed_limit > 0.0) {
                return schema(format!("routes[{r}].speed_limit must be positive"));
            }
        }
        for (a, agent) in self.agents.iter().enumerate() {
            if agent.route_id >= self.routes.len() {
                return schema(format!("agents[{a}].route_id {} out of range", agent.route_id));
            }
            if agent.features.validate().is_err() {
                return schema(format!("agents[{a}].features invalid"));
            }
            if agent.pose.validate().is_err() {
                return schema(format!("agents[{a}].pose invalid"));
            }
        }
        if !self.expert.is_empty() {
            if self.expert.len() != self.agents.len() {
                return schema(format!(
                    "expert: {} trajectories for {} agents",
                    self.expert.len(),
                    self.agents.len()
                ));
            }
            for (a, traj) in self.expert.iter().enumerate() {
                if traj.states.is_empty() || traj.actions.len() + 1 != traj.states.len() {
                    return schema(format!("expert[{a}]: needs states.len() == actions.len() + 1"));
                }
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn has_expert(&self) -> bool {
        !self.expert.is_empty()
    }

    /// The scenario restricted to the agents `keep` (in that order), with
    /// their expert data; the map and routes are unchanged.
    pub fn with_agents(&self, keep: &[usize]) -> Result<Scenario> {
        if let Some(&i) = keep.iter().find(|&&i| i >= self.agents.len()) {
            return Err(Error::InvalidArgument(format!("agent {i} out of range ({} agents)", self.agents.len())));
        }
        let mut out = self.clone();
        out.agents = keep.iter().map(|&i| self.agents[i].clone()).collect();
        if !self.expert.is_empty() {
            out.expert = keep.iter().map(|&i| self.expert[i].clone()).collect();
        }
        Ok(out)
    }

    /// The same scenario seen from another global frame: every point and
    /// pose is mapped through the rigid transform `t`.
    pub fn transformed(&self, t: &AnchorPose) -> Result<Scenario> {
        let polylines = self
            .polylines
            .iter()
            .map(|p| Polyline::from_points(p.points().iter().map(|&q| t.to_global(q)).collect(), p.element_type()))
            .collect::<Result<_>>()?;
        let agents = self.agents.iter().map(|a| AgentSpec { pose: apply_rigid_transform(&a.pose, t), ..*a }).collect();
        let expert = self
            .expert
            .iter()
            .map(|e| ExpertTrajectory {
                states: e.states.iter().map(|s| ExpertState { pose: apply_rigid_transform(&s.pose, t), ..*s }).collect(),
                actions: e.actions.clone(),
            })
            .collect();
        Ok(Scenario { meta: self.meta.clone(), polylines, routes: self.routes.clone(), agents, expert })
    }
}

impl FromStr for ElementType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lane_boundary" => Ok(Self::LaneBoundary),
            "road_edge" => Ok(Self::RoadEdge),
            "crossing" => Ok(Self::Crossing),
            "centerline" => Ok(Self::Centerline),
            _ => Err(Error::InvalidArgument(format!("unknown element type `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, step: f64) -> Vec<Vec2> {
        (0..=n).map(|i| Vec2::new(i as f64 * step, 0.0)).collect()
    }

    #[test]
    fn split_straight_segment() {
        let pls = split_map_element(&[Vec2::ZERO, Vec2::new(25.0, 0.0)], 10.0, ElementType::Centerline)
            .unwrap();
        let lens: Vec<f64> = pls.iter().map(Polyline::length).collect();
        assert_eq!(pls.len(), 3);
        for (l, want) in lens.iter().zip([10.0, 10.0, 5.0]) {
            assert!((l - want).abs() < 1e-9, "{lens:?}");
        }
        let short = split_map_element(&[Vec2::ZERO, Vec2::new(8.0, 0.0)], 10.0, ElementType::RoadEdge)
            .unwrap();
        assert_eq!(short.len(), 1);
    }

    #[test]
    fn split_densely_sampled_line_has_no_degenerate_pieces() {
        let pls = split_map_element(&line(25, 1.0), 10.0, ElementType::LaneBoundary).unwrap();
        assert_eq!(pls.len(), 3);
        assert_eq!(pls[0].vectors().len(), 10);
        assert_eq!(pls[2].vectors().len(), 5);
        assert_eq!(pls[0].points().last(), pls[1].points().first());
    }

    #[test]
    fn split_l_shape_anchors() {
        let pts = [Vec2::ZERO, Vec2::new(10.0, 0.0), Vec2::new(10.0, 4.0)];
        let pls = split_map_element(&pts, 10.0, ElementType::RoadEdge).unwrap();
        assert_eq!(pls.len(), 2);
        // Hand-computed point means: {(0,0),(10,0)} and {(10,0),(10,4)}.
        assert_eq!(pls[0].anchor().position, Vec2::new(5.0, 0.0));
        assert_eq!(pls[1].anchor().position, Vec2::new(10.0, 2.0));
        assert!((pls[1].anchor().heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn split_rejects_short_input() {
        assert!(split_map_element(&[Vec2::ZERO], 10.0, ElementType::Crossing).is_err());
    }

    #[test]
    fn neighbors_examples() {
        let t = AnchorPose::IDENTITY;
        assert!(neighbors_within(&t, &[], 50.0).is_empty());
        let same = vec![t; 3];
        assert_eq!(neighbors_within(&t, &same, 1.0), vec![0, 1, 2]);
        let ring: Vec<AnchorPose> = [10.0, 49.9, 50.1]
            .iter()
            .map(|&d| AnchorPose::new(0.0, d, 0.0).unwrap())
            .collect();
        assert_eq!(neighbors_within(&t, &ring, 50.0), vec![0, 1]);
        let exact = [AnchorPose::new(50.0, 0.0, 0.0).unwrap()];
        assert_eq!(neighbors_within(&t, &exact, 50.0), vec![0]);
    }

    #[test]
    fn polyline_vectors_are_local() {
        let pl = Polyline::from_points(
            vec![Vec2::new(10.0, 10.0), Vec2::new(10.0, 12.0), Vec2::new(10.0, 14.0)],
            ElementType::Centerline,
        )
        .unwrap();
        let v = pl.vectors();
        assert!((v[0].start.x + 2.0).abs() < 1e-12 && v[0].start.y.abs() < 1e-12);
        assert!((v[1].end.x - 2.0).abs() < 1e-12 && v[1].end.y.abs() < 1e-12);
        assert_eq!(v[0].end, v[1].start);
    }
}
