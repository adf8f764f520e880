//! Batched forward/backward through the scene encoder for training.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::{gather_neighbors, Neighbor, PolylineCache, SceneEncoder, TokenKind};
use crate::dynamics::AgentState;
use crate::error::Result;
use crate::nn::{Grads, MlpCache, Real, Weights};
use crate::scene::World;

/// Samples are processed in fixed chunks so that gradient sums do not
/// depend on the number of worker threads.
const CHUNK: usize = 64;

/// One simulation step of one environment.
#[derive(Debug, Clone, Copy)]
pub struct BatchFrame<'a> {
    pub world: &'a World,
    /// Identifies the world for token sharing between frames.
    pub world_id: usize,
    pub states: &'a [AgentState],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSample {
    pub frame: usize,
    pub agent: usize,
}

/// Per-sample loss on top of the refined token.
pub trait TargetLoss<T: Real>: Sync {
    /// Loss of sample `index` given its token `z`. With `grads`, accumulates
    /// head gradients and returns `dloss/dz`; otherwise the returned
    /// gradient may be empty.
    fn eval(&self, ws: &Weights<T>, index: usize, z: &[T], grads: Option<&mut Grads<T>>) -> Result<(f64, Vec<T>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Map(usize, usize),
    Agent(usize, usize),
}

enum TokenCacheEntry<T> {
    Map(PolylineCache<T>),
    Agent(Vec<T>, MlpCache<T>),
}

struct ChunkOut<T> {
    loss: f64,
    grads: Option<Grads<T>>,
    dtokens: HashMap<usize, Vec<T>>,
}

impl SceneEncoder {
    /// Sum of `loss` over `samples`, with gradients for all encoder and head
    /// parameters accumulated into `grads` when given.
    pub fn batch_loss<T: Real, L: TargetLoss<T>>(
        &self,
        ws: &Weights<T>,
        frames: &[BatchFrame<'_>],
        samples: &[BatchSample],
        loss: &L,
        grads: Option<&mut Grads<T>>,
        parallel: bool,
    ) -> Result<f64> {
        let need_grad = grads.is_some();
        let neighbors: Vec<Vec<Neighbor>> = samples
            .iter()
            .map(|s| {
                let f = &frames[s.frame];
                gather_neighbors(f.world, f.states, s.agent, self.cfg.radius, self.cfg.max_neighbors)
            })
            .collect();

        let key_of = |s: &BatchSample, nb: &Neighbor| match nb.kind {
            TokenKind::Map(p) => Key::Map(frames[s.frame].world_id, p),
            TokenKind::Agent(j) => Key::Agent(s.frame, j),
        };
        let mut index: BTreeMap<Key, usize> = BTreeMap::new();
        for (s, nbs) in samples.iter().zip(&neighbors) {
            for nb in nbs {
                index.entry(key_of(s, nb)).or_insert(0);
            }
        }
        let keys: Vec<Key> = index.keys().copied().collect();
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let world_of: HashMap<usize, &World> = frames.iter().map(|f| (f.world_id, f.world)).collect();
        let encode = |k: &Key| -> Result<(Vec<T>, TokenCacheEntry<T>)> {
            match *k {
                Key::Map(w, p) => {
                    let poly = &world_of[&w].scenario.polylines[p];
                    let (z, c) = self.polyline.forward(ws, &Self::polyline_inputs::<T>(poly))?;
                    Ok((z, TokenCacheEntry::Map(c)))
                }
                Key::Agent(f, a) => {
                    let x = Self::agent_inputs::<T>(&frames[f].states[a].current_features());
                    let (z, c) = self.agent.forward(ws, &x)?;
                    Ok((z, TokenCacheEntry::Agent(x, c)))
                }
            }
        };
        let encoded: Vec<(Vec<T>, TokenCacheEntry<T>)> = if parallel {
            keys.par_iter().map(encode).collect::<Result<_>>()?
        } else {
            keys.iter().map(encode).collect::<Result<_>>()?
        };

        let n_params = ws.as_slice().len();
        let run_chunk = |c: usize| -> Result<ChunkOut<T>> {
            let mut out = ChunkOut {
                loss: 0.0,
                grads: need_grad.then(|| Grads::zeros(n_params)),
                dtokens: HashMap::new(),
            };
            let end = ((c + 1) * CHUNK).min(samples.len());
            for si in c * CHUNK..end {
                let s = &samples[si];
                let nbs = &neighbors[si];
                let ids: Vec<usize> = nbs.iter().map(|nb| index[&key_of(s, nb)]).collect();
                let toks: Vec<&[T]> = ids.iter().map(|&i| encoded[i].0.as_slice()).collect();
                let (z, rc) = self.refine_forward(ws, &toks, nbs)?;
                let (l, dz) = loss.eval(ws, si, &z, out.grads.as_mut())?;
                out.loss += l;
                if let Some(g) = out.grads.as_mut() {
                    let dt = self.refine_backward(ws, &toks, &rc, &dz, g);
                    for (i, d) in ids.into_iter().zip(dt) {
                        match out.dtokens.get_mut(&i) {
                            Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += *b),
                            None => {
                                out.dtokens.insert(i, d);
                            }
                        }
                    }
                }
            }
            Ok(out)
        };
        let n_chunks = samples.len().div_ceil(CHUNK);
        let chunks: Vec<ChunkOut<T>> = if parallel {
            (0..n_chunks).into_par_iter().map(run_chunk).collect::<Result<_>>()?
        } else {
            (0..n_chunks).map(run_chunk).collect::<Result<_>>()?
        };

        let mut total = 0.0;
        let mut dtokens: Vec<Option<Vec<T>>> = vec![None; keys.len()];
        let mut grads = grads;
        for ch in chunks {
            total += ch.loss;
            if let (Some(g), Some(cg)) = (grads.as_deref_mut(), ch.grads.as_ref()) {
                g.add_assign(cg);
            }
            let mut items: Vec<(usize, Vec<T>)> = ch.dtokens.into_iter().collect();
            items.sort_by_key(|(i, _)| *i);
            for (i, d) in items {
                match &mut dtokens[i] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += *b),
                    slot => *slot = Some(d),
                }
            }
        }
        if let Some(g) = grads {
            for (i, d) in dtokens.iter().enumerate() {
                let Some(d) = d else { continue };
                match &encoded[i].1 {
                    TokenCacheEntry::Map(c) => self.polyline.backward(ws, c, d, g),
                    TokenCacheEntry::Agent(x, c) => {
                        self.agent.backward(ws, x, c, d, g, false);
                    }
                }
            }
        }
        Ok(total)
    }
}
