use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rayon::prelude::*;

use super::{gather_neighbors, EncoderConfig, EncoderCounters, InstanceToken, Neighbor, PolylineEncoder, TokenKind, PAIR_CONTEXT_DIM};
use crate::dynamics::AgentState;
use crate::error::{Error, Result};
use crate::geometry::AnchorPose;
use crate::nn::{film, Grads, LayerNorm, LayerNormCache, Mhca, MhcaCache, MlpBlock, MlpCache, ParamStore, Real, Weights};
use crate::scene::{AgentFeatures, Polyline, PolylineVector, World};

/// Cross-attention with skip connection and layer norm, then an MLP block
/// with skip connection and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceiverLayer {
    pub att: Mhca,
    pub ln1: LayerNorm,
    pub mlp: MlpBlock,
    pub ln2: LayerNorm,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    x: Vec<T>,
    att: MhcaCache<T>,
    ln1: LayerNormCache<T>,
    x1: Vec<T>,
    mlp: MlpCache<T>,
    ln2: LayerNormCache<T>,
}

impl PerceiverLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            att: Mhca::new(store, &format!("{name}.att"), dim, rng)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim, rng)?,
            mlp: MlpBlock::new(store, &format!("{name}.mlp"), dim, dim, dim, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim, rng)?,
        })
    }

    pub(crate) fn forward<T: Real>(&self, ws: &Weights<T>, x: Vec<T>, kv: &[T]) -> Result<(Vec<T>, LayerCache<T>)> {
        let (a, att) = self.att.forward(ws, &x, kv)?;
        let s1: Vec<T> = x.iter().zip(&a).map(|(&u, &v)| u + v).collect();
        let (x1, ln1) = self.ln1.forward(ws, &s1)?;
        let (m, mlp) = self.mlp.forward(ws, &x1)?;
        let s2: Vec<T> = x1.iter().zip(&m).map(|(&u, &v)| u + v).collect();
        let (x2, ln2) = self.ln2.forward(ws, &s2)?;
        Ok((x2, LayerCache { x, att, ln1, x1, mlp, ln2 }))
    }

    /// Returns gradients for the layer input and accumulates into `dkv`.
    pub(crate) fn backward<T: Real>(&self, ws: &Weights<T>, kv: &[T], c: &LayerCache<T>, dy: &[T], grads: &mut Grads<T>, dkv: &mut [T]) -> Vec<T> {
        let ds2 = self.ln2.backward(ws, &c.ln2, dy, grads);
        let dm = self.mlp.backward(ws, &c.x1, &c.mlp, &ds2, grads, true);
        let dx1: Vec<T> = ds2.iter().zip(&dm).map(|(&a, &b)| a + b).collect();
        let ds1 = self.ln1.backward(ws, &c.ln1, &dx1, grads);
        let (dq, dk) = self.att.backward(ws, &c.x, kv, &c.att, &ds1, grads);
        for (a, b) in dkv.iter_mut().zip(&dk) {
            *a += *b;
        }
        ds1.iter().zip(&dq).map(|(&a, &b)| a + b).collect()
    }
}

/// Intermediates of [`SceneEncoder::refine_forward`].
#[derive(Debug, Clone)]
pub struct RefineCache<T> {
    ctx: Vec<Vec<T>>,
    zeta: Vec<(Vec<T>, MlpCache<T>)>,
    beta: Vec<MlpCache<T>>,
    kv: Vec<T>,
    layers: Vec<LayerCache<T>>,
}

/// Policy-side (or discriminator-side) instance-centric encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEncoder {
    pub cfg: EncoderConfig,
    pub polyline: PolylineEncoder,
    pub agent: MlpBlock,
    pub zeta: MlpBlock,
    pub beta: MlpBlock,
    pub perceiver: Vec<PerceiverLayer>,
}

/// Refined tokens of all alive agents at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEncoding<T> {
    pub agents: Vec<usize>,
    pub tokens: Vec<Vec<T>>,
    pub counters: EncoderCounters,
}

impl SceneEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let polyline = PolylineEncoder::new(store, &format!("{name}.polyline"), PolylineVector::FEATURE_DIM, h, rng)?;
        let agent = MlpBlock::new(store, &format!("{name}.agent"), AgentFeatures::DIM, h, h, rng)?;
        let zeta = MlpBlock::with_output_gain(store, &format!("{name}.zeta"), PAIR_CONTEXT_DIM, h, h, 0.5, rng)?;
        store.set(zeta.l2.b, &vec![1.0; h])?;
        let beta = MlpBlock::new(store, &format!("{name}.beta"), PAIR_CONTEXT_DIM, h, h, rng)?;
        let perceiver = (0..cfg.layers)
            .map(|k| PerceiverLayer::new(store, &format!("{name}.perceiver{k}"), h, rng))
            .collect::<Result<_>>()?;
        Ok(Self { cfg, polyline, agent, zeta, beta, perceiver })
    }

    pub fn hidden(&self) -> usize {
        self.cfg.hidden
    }

    pub fn polyline_inputs<T: Real>(polyline: &Polyline) -> Vec<Vec<T>> {
        polyline.vectors().iter().map(|v| v.features().iter().map(|&x| T::lift(x)).collect()).collect()
    }

    pub fn encode_polyline<T: Real>(&self, ws: &Weights<T>, polyline: &Polyline, index: usize) -> Result<InstanceToken<T>> {
        let (embedding, _) = self.polyline.forward(ws, &Self::polyline_inputs(polyline))?;
        Ok(InstanceToken { embedding, anchor: *polyline.anchor(), kind: TokenKind::Map(index) })
    }

    pub fn agent_inputs<T: Real>(features: &AgentFeatures) -> Vec<T> {
        features.encoded().iter().map(|&x| T::lift(x)).collect()
    }

    pub fn encode_agent<T: Real>(&self, ws: &Weights<T>, features: &AgentFeatures, pose: AnchorPose, index: usize) -> Result<InstanceToken<T>> {
        let embedding = self.agent.infer(ws, &Self::agent_inputs(features))?;
        Ok(InstanceToken { embedding, anchor: pose, kind: TokenKind::Agent(index) })
    }

    /// `ζ(c) ⊙ z_j + β(c)`.
    pub fn pairwise_encode<T: Real>(&self, ws: &Weights<T>, context: &[f64; PAIR_CONTEXT_DIM], z_j: &[T]) -> Result<Vec<T>> {
        let c: Vec<T> = context.iter().map(|&x| T::lift(x)).collect();
        film(z_j, &self.zeta.infer(ws, &c)?, &self.beta.infer(ws, &c)?)
    }

    /// Runs the Perceiver stack with query `z0` over the pair tokens `kv`.
    pub fn perceiver_refine<T: Real>(&self, ws: &Weights<T>, z0: &[T], kv: &[T]) -> Result<Vec<T>> {
        if kv.is_empty() {
            return Err(Error::Empty("neighbor set"));
        }
        let mut x = z0.to_vec();
        for layer in &self.perceiver {
            x = layer.forward(ws, x, kv)?.0;
        }
        Ok(x)
    }

    /// Pair encodings of all neighbors (self first) followed by Perceiver
    /// refinement. `tokens[k]` is the token of `neighbors[k]`.
    pub fn refine_forward<T: Real>(&self, ws: &Weights<T>, tokens: &[&[T]], neighbors: &[Neighbor]) -> Result<(Vec<T>, RefineCache<T>)> {
        if neighbors.is_empty() || tokens.len() != neighbors.len() {
            return Err(Error::Empty("neighbor set"));
        }
        let h = self.hidden();
        let mut cache = RefineCache {
            ctx: Vec::with_capacity(neighbors.len()),
            zeta: Vec::with_capacity(neighbors.len()),
            beta: Vec::with_capacity(neighbors.len()),
            kv: Vec::with_capacity(neighbors.len() * h),
            layers: Vec::with_capacity(self.perceiver.len()),
        };
        for (nb, z) in neighbors.iter().zip(tokens) {
            let c: Vec<T> = nb.context.iter().map(|&x| T::lift(x)).collect();
            let (scale, zc) = self.zeta.forward(ws, &c)?;
            let (shift, bc) = self.beta.forward(ws, &c)?;
            cache.kv.extend(film(z, &scale, &shift)?);
            cache.ctx.push(c);
            cache.zeta.push((scale, zc));
            cache.beta.push(bc);
        }
        let mut x = cache.kv[..h].to_vec();
        for layer in &self.perceiver {
            let (y, lc) = layer.forward(ws, x, &cache.kv)?;
            cache.layers.push(lc);
            x = y;
        }
        Ok((x, cache))
    }

    /// Accumulates parameter gradients and returns the gradient for each
    /// input token.
    pub fn refine_backward<T: Real>(
        &self,
        ws: &Weights<T>,
        tokens: &[&[T]],
        cache: &RefineCache<T>,
        dz: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<Vec<T>> {
        let h = self.hidden();
        let mut dkv = vec![T::zero(); cache.kv.len()];
        let mut dx = dz.to_vec();
        for (layer, lc) in self.perceiver.iter().zip(&cache.layers).rev() {
            dx = layer.backward(ws, &cache.kv, lc, &dx, grads, &mut dkv);
        }
        for (a, b) in dkv[..h].iter_mut().zip(&dx) {
            *a += *b;
        }
        let mut dtokens = Vec::with_capacity(tokens.len());
        for (k, z) in tokens.iter().enumerate() {
            let d = &dkv[k * h..(k + 1) * h];
            let (scale, zc) = &cache.zeta[k];
            let dscale: Vec<T> = d.iter().zip(z.iter()).map(|(&g, &v)| g * v).collect();
            self.zeta.backward(ws, &cache.ctx[k], zc, &dscale, grads, false);
            self.beta.backward(ws, &cache.ctx[k], &cache.beta[k], d, grads, false);
            dtokens.push(d.iter().zip(scale).map(|(&g, &s)| g * s).collect());
        }
        dtokens
    }

    /// Encodes all alive agents of one simulation step, reusing cached map
    /// tokens when the cache matches this map and parameter version.
    pub fn encode_scene<T: Real>(
        &self,
        ws: &Weights<T>,
        world: &World,
        states: &[AgentState],
        cache: &mut TokenCache<T>,
    ) -> Result<SceneEncoding<T>> {
        let mut counters = EncoderCounters { step: cache.steps, ..Default::default() };
        let fp = TokenCache::<T>::fingerprint(world, ws);
        if !cache.enabled || cache.fingerprint != Some(fp) {
            let polylines = &world.scenario.polylines;
            cache.map_tokens = polylines
                .par_iter()
                .map(|p| Ok(self.polyline.forward(ws, &Self::polyline_inputs::<T>(p))?.0))
                .collect::<Result<_>>()?;
            counters.polyline_encodings = polylines.len() as u64;
            if cache.enabled {
                if cache.fingerprint.is_some() {
                    cache.rebuilds += 1;
                }
                cache.fingerprint = Some(fp);
            }
        }
        let agents: Vec<usize> = (0..states.len()).filter(|&i| states[i].alive).collect();
        let mut agent_tokens: Vec<Option<Vec<T>>> = vec![None; states.len()];
        for &i in &agents {
            agent_tokens[i] = Some(self.agent.infer(ws, &Self::agent_inputs(&states[i].current_features()))?);
        }
        counters.agent_encodings = agents.len() as u64;
        let map_tokens = &cache.map_tokens;
        let results: Vec<(Vec<T>, usize)> = agents
            .par_iter()
            .map(|&i| {
                let nbs = gather_neighbors(world, states, i, self.cfg.radius, self.cfg.max_neighbors);
                let toks: Vec<&[T]> = nbs
                    .iter()
                    .map(|nb| match nb.kind {
                        TokenKind::Map(p) => map_tokens[p].as_slice(),
                        TokenKind::Agent(j) => agent_tokens[j].as_deref().unwrap(),
                    })
                    .collect();
                Ok((self.refine_forward(ws, &toks, &nbs)?.0, nbs.len()))
            })
            .collect::<Result<_>>()?;
        let mut tokens = Vec::with_capacity(results.len());
        for (z, n) in results {
            counters.pair_encodings += n as u64;
            counters.attention_tokens += (n * self.perceiver.len()) as u64;
            tokens.push(z);
        }
        cache.steps += 1;
        cache.totals.add(&counters);
        cache.history.push(counters);
        Ok(SceneEncoding { agents, tokens, counters })
    }
}

/// Map tokens of one scenario, valid for one parameter version.
#[derive(Debug, Clone)]
pub struct TokenCache<T = f32> {
    enabled: bool,
    fingerprint: Option<u64>,
    map_tokens: Vec<Vec<T>>,
    steps: usize,
    rebuilds: u64,
    totals: EncoderCounters,
    history: Vec<EncoderCounters>,
}

impl<T: Real> Default for TokenCache<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> TokenCache<T> {
    pub fn new() -> Self {
        Self {
            enabled: true,
            fingerprint: None,
            map_tokens: Vec::new(),
            steps: 0,
            rebuilds: 0,
            totals: EncoderCounters::default(),
            history: Vec::new(),
        }
    }

    /// A cache that never hits: map tokens are recomputed every step.
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::new() }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn fingerprint(world: &World, ws: &Weights<T>) -> u64 {
        let mut h = DefaultHasher::new();
        world.map_fingerprint.hash(&mut h);
        ws.version().hash(&mut h);
        ws.uid().hash(&mut h);
        h.finish()
    }

    pub fn is_valid_for(&self, world: &World, ws: &Weights<T>) -> bool {
        self.enabled && self.fingerprint == Some(Self::fingerprint(world, ws))
    }

    pub fn map_tokens(&self) -> &[Vec<T>] {
        &self.map_tokens
    }

    /// Number of times a populated cache was invalidated and rebuilt.
    pub fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    pub fn totals(&self) -> EncoderCounters {
        self.totals
    }

    pub fn history(&self) -> &[EncoderCounters] {
        &self.history
    }
}
