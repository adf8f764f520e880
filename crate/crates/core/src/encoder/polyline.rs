use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{max_pool_set, max_pool_set_backward, Grads, MlpBlock, MlpCache, ParamStore, Real, Weights};

pub const POLYLINE_LAYERS: usize = 3;

/// Message passing over the vectors of one polyline: each layer encodes
/// every vector, max-pools the encodings and appends the pooled vector to
/// each encoding; a final max-pool yields the token.
#[derive(Debug, Clone, PartialEq)]
pub struct PolylineEncoder {
    pub layers: Vec<MlpBlock>,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct PolylineCache<T> {
    /// Inputs of each layer, per vector.
    inputs: Vec<Vec<Vec<T>>>,
    mlp: Vec<Vec<MlpCache<T>>>,
    agg_arg: Vec<Vec<u32>>,
    final_in: Vec<Vec<T>>,
    final_arg: Vec<u32>,
}

impl PolylineEncoder {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let half = hidden / 2;
        let mut layers = Vec::with_capacity(POLYLINE_LAYERS);
        for l in 0..POLYLINE_LAYERS {
            let d = if l == 0 { in_dim } else { hidden };
            layers.push(MlpBlock::new(store, &format!("{name}.g{l}"), d, hidden, half, rng)?);
        }
        Ok(Self { layers, hidden })
    }

    pub fn forward<T: Real>(&self, ws: &Weights<T>, vectors: &[Vec<T>]) -> Result<(Vec<T>, PolylineCache<T>)> {
        if vectors.is_empty() {
            return Err(Error::Empty("polyline vectors"));
        }
        let mut h: Vec<Vec<T>> = vectors.to_vec();
        let mut cache = PolylineCache {
            inputs: Vec::with_capacity(self.layers.len()),
            mlp: Vec::with_capacity(self.layers.len()),
            agg_arg: Vec::with_capacity(self.layers.len()),
            final_in: Vec::new(),
            final_arg: Vec::new(),
        };
        for g in &self.layers {
            let mut enc = Vec::with_capacity(h.len());
            let mut caches = Vec::with_capacity(h.len());
            for v in &h {
                let (e, c) = g.forward(ws, v)?;
                enc.push(e);
                caches.push(c);
            }
            let (agg, arg) = max_pool_set(&enc)?;
            let next: Vec<Vec<T>> = enc
                .into_iter()
                .map(|mut e| {
                    e.extend_from_slice(&agg);
                    e
                })
                .collect();
            cache.inputs.push(std::mem::replace(&mut h, next));
            cache.mlp.push(caches);
            cache.agg_arg.push(arg);
        }
        let (token, arg) = max_pool_set(&h)?;
        cache.final_in = h;
        cache.final_arg = arg;
        Ok((token, cache))
    }

    pub fn backward<T: Real>(&self, ws: &Weights<T>, cache: &PolylineCache<T>, dtoken: &[T], grads: &mut Grads<T>) {
        let half = self.hidden / 2;
        let n = cache.final_in.len();
        let mut dh = vec![vec![T::zero(); self.hidden]; n];
        max_pool_set_backward(&cache.final_arg, dtoken, &mut dh);
        for l in (0..self.layers.len()).rev() {
            let mut dagg = vec![T::zero(); half];
            let mut de: Vec<Vec<T>> = Vec::with_capacity(n);
            for d in &dh {
                for (a, &x) in dagg.iter_mut().zip(&d[half..]) {
                    *a += x;
                }
                de.push(d[..half].to_vec());
            }
            max_pool_set_backward(&cache.agg_arg[l], &dagg, &mut de);
            let need_dx = l > 0;
            for (v, d) in de.iter().enumerate() {
                let dx = self.layers[l].backward(ws, &cache.inputs[l][v], &cache.mlp[l][v], d, grads, need_dx);
                if need_dx {
                    dh[v] = dx;
                }
            }
        }
    }
}
