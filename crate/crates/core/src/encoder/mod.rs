//! Instance-centric scene encoding: per-instance tokens in local frames,
//! relative-pose FiLM pair encodings and Perceiver refinement, plus the
//! agent-centric reference path used for efficiency comparisons.

mod agent_centric;
mod batch;
mod polyline;
mod scene;

pub use agent_centric::AgentCentricEncoder;
pub use batch::{BatchFrame, BatchSample, TargetLoss};
pub use polyline::{PolylineCache, PolylineEncoder};
pub use scene::{PerceiverLayer, RefineCache, SceneEncoder, SceneEncoding, TokenCache};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::AgentState;
use crate::error::{Error, Result};
use crate::geometry::{relative_pose, AnchorPose, RelPose};
use crate::scene::World;

pub const PAIR_CONTEXT_DIM: usize = 7;
pub const MAX_NEIGHBORS: usize = 128;
pub const POLICY_RADIUS: f64 = 50.0;
pub const DISCRIMINATOR_RADIUS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    /// Number of Perceiver layers.
    pub layers: usize,
    pub radius: f64,
    pub max_neighbors: usize,
}

impl EncoderConfig {
    pub fn small(radius: f64) -> Self {
        Self { hidden: 64, layers: 1, radius, max_neighbors: MAX_NEIGHBORS }
    }

    pub fn full(radius: f64) -> Self {
        Self { hidden: 128, layers: 3, radius, max_neighbors: MAX_NEIGHBORS }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % crate::nn::HEAD_DIM != 0 {
            return Err(Error::Config(format!("hidden dim {} must be a positive multiple of 16", self.hidden)));
        }
        if !(self.radius > 0.0) || self.max_neighbors == 0 {
            return Err(Error::Config("radius and max_neighbors must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenKind {
    Map(usize),
    Agent(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceToken<T = f32> {
    pub embedding: Vec<T>,
    pub anchor: AnchorPose,
    pub kind: TokenKind,
}

/// Context of instance `j` as seen from instance `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairContext {
    pub relpose: RelPose,
    pub agent_flag: bool,
    pub route_flag: bool,
}

impl PairContext {
    pub fn new(from: &AnchorPose, to: &AnchorPose, agent_flag: bool, route_flag: bool) -> Self {
        Self { relpose: relative_pose(from, to), agent_flag, route_flag }
    }

    /// The self-pair: zero relative pose, marked as an agent.
    pub fn self_pair() -> Self {
        Self { relpose: RelPose::SELF, agent_flag: true, route_flag: false }
    }

    /// Relative-pose embedding with distance divided by `radius`, then the
    /// two flags.
    pub fn features(&self, radius: f64) -> [f64; PAIR_CONTEXT_DIM] {
        let r = self.relpose.features(radius);
        [r[0], r[1], r[2], r[3], r[4], self.agent_flag as u8 as f64, self.route_flag as u8 as f64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub kind: TokenKind,
    pub context: [f64; PAIR_CONTEXT_DIM],
    pub distance: f64,
}

/// Γ(i) for alive agent `target`: itself first, then map instances and
/// alive agents whose anchors lie within `radius`, nearest first, capped at
/// `max` entries in total.
pub fn gather_neighbors(world: &World, states: &[AgentState], target: usize, radius: f64, max: usize) -> Vec<Neighbor> {
    let me = &states[target];
    let route = &world.route_members[me.route_id];
    let mut out = Vec::new();
    for (p, anchor) in world.map_anchors.iter().enumerate() {
        let d = (anchor.position - me.pose.position).norm();
        if d <= radius {
            out.push((d, TokenKind::Map(p), anchor, false, route[p]));
        }
    }
    for (j, s) in states.iter().enumerate() {
        if j == target || !s.alive {
            continue;
        }
        let d = (s.pose.position - me.pose.position).norm();
        if d <= radius {
            out.push((d, TokenKind::Agent(j), &s.pose, true, false));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.truncate(max.saturating_sub(1));
    let mut neighbors = Vec::with_capacity(out.len() + 1);
    neighbors.push(Neighbor {
        kind: TokenKind::Agent(target),
        context: PairContext::self_pair().features(radius),
        distance: 0.0,
    });
    for (d, kind, anchor, agent, on_route) in out {
        neighbors.push(Neighbor {
            kind,
            context: PairContext::new(&me.pose, anchor, agent, on_route).features(radius),
            distance: d,
        });
    }
    neighbors
}

/// Encoder invocation counts, per step or accumulated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderCounters {
    pub step: usize,
    pub polyline_encodings: u64,
    pub agent_encodings: u64,
    pub pair_encodings: u64,
    pub attention_tokens: u64,
}

impl EncoderCounters {
    pub fn add(&mut self, o: &EncoderCounters) {
        self.polyline_encodings += o.polyline_encodings;
        self.agent_encodings += o.agent_encodings;
        self.pair_encodings += o.pair_encodings;
        self.attention_tokens += o.attention_tokens;
    }
}

/// Writes one JSON object per line.
pub fn write_counters_jsonl(path: impl AsRef<Path>, records: &[EncoderCounters]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
