//! Reference encoder that re-expresses every observed instance in each
//! target agent's frame and re-encodes it at every step.

use rand::Rng;
use rayon::prelude::*;

use super::{gather_neighbors, EncoderConfig, EncoderCounters, PerceiverLayer, PolylineEncoder, TokenKind};
use crate::dynamics::AgentState;
use crate::error::Result;
use crate::geometry::AnchorPose;
use crate::nn::{MlpBlock, ParamStore, Real, Weights};
use crate::scene::{AgentFeatures, ElementType, World};

const POLYLINE_INPUT_DIM: usize = 4 + ElementType::COUNT + 1;
const AGENT_INPUT_DIM: usize = AgentFeatures::DIM + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCentricEncoder {
    pub cfg: EncoderConfig,
    pub polyline: PolylineEncoder,
    pub agent: MlpBlock,
    pub perceiver: Vec<PerceiverLayer>,
}

impl AgentCentricEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        Ok(Self {
            cfg,
            polyline: PolylineEncoder::new(store, &format!("{name}.polyline"), POLYLINE_INPUT_DIM, h, rng)?,
            agent: MlpBlock::new(store, &format!("{name}.agent"), AGENT_INPUT_DIM, h, h, rng)?,
            perceiver: (0..cfg.layers)
                .map(|k| PerceiverLayer::new(store, &format!("{name}.perceiver{k}"), h, rng))
                .collect::<Result<_>>()?,
        })
    }

    fn agent_input<T: Real>(&self, frame: &AnchorPose, s: &AgentState) -> Vec<T> {
        let p = frame.to_local(s.pose.position);
        let dh = s.pose.heading - frame.heading;
        let r = self.cfg.radius;
        let mut x: Vec<T> = s.current_features().encoded().iter().map(|&v| T::lift(v)).collect();
        x.extend([p.x / r, p.y / r, dh.cos(), dh.sin()].map(T::lift));
        x
    }

    /// Tokens for all alive agents plus this step's encoder counts.
    pub fn encode<T: Real>(&self, ws: &Weights<T>, world: &World, states: &[AgentState], step: usize) -> Result<(Vec<usize>, Vec<Vec<T>>, EncoderCounters)> {
        let agents: Vec<usize> = (0..states.len()).filter(|&i| states[i].alive).collect();
        let r = self.cfg.radius;
        let results: Vec<(Vec<T>, u64, u64)> = agents
            .par_iter()
            .map(|&i| {
                let me = &states[i];
                let frame = me.pose;
                let members = &world.route_members[me.route_id];
                let nbs = gather_neighbors(world, states, i, r, self.cfg.max_neighbors);
                let (mut n_poly, mut n_agent) = (0u64, 0u64);
                let mut kv: Vec<T> = Vec::with_capacity(nbs.len() * self.cfg.hidden);
                for nb in &nbs {
                    match nb.kind {
                        TokenKind::Map(p) => {
                            let poly = &world.scenario.polylines[p];
                            let onehot = poly.element_type().one_hot();
                            let vecs: Vec<Vec<T>> = poly
                                .points()
                                .windows(2)
                                .map(|w| {
                                    let (a, b) = (frame.to_local(w[0]), frame.to_local(w[1]));
                                    let mut v: Vec<T> = [a.x / r, a.y / r, b.x / r, b.y / r].map(T::lift).to_vec();
                                    v.extend(onehot.iter().map(|&o| T::lift(o)));
                                    v.push(T::lift(members[p] as u8 as f64));
                                    v
                                })
                                .collect();
                            kv.extend(self.polyline.forward(ws, &vecs)?.0);
                            n_poly += 1;
                        }
                        TokenKind::Agent(j) => {
                            kv.extend(self.agent.infer(ws, &self.agent_input(&frame, &states[j]))?);
                            n_agent += 1;
                        }
                    }
                }
                let mut x = kv[..self.cfg.hidden].to_vec();
                for layer in &self.perceiver {
                    x = layer.forward(ws, x, &kv)?.0;
                }
                Ok((x, n_poly, n_agent))
            })
            .collect::<Result<_>>()?;
        let mut counters = EncoderCounters { step, ..Default::default() };
        let mut tokens = Vec::with_capacity(results.len());
        for (z, np, na) in results {
            counters.polyline_encodings += np;
            counters.agent_encodings += na;
            counters.attention_tokens += (np + na) * self.perceiver.len() as u64;
            tokens.push(z);
        }
        Ok((agents, tokens, counters))
    }
}
