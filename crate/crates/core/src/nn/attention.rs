use rand::Rng;

use super::{dot, Grads, Linear, ParamStore, Real, Weights};
use crate::error::{Error, Result};

pub const HEAD_DIM: usize = 16;

/// Multi-head cross-attention of one query token onto a set of key/value
/// tokens, followed by an output projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mhca {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct MhcaCache<T> {
    q: Vec<T>,
    /// Row-major `[n, dim]`.
    k: Vec<T>,
    v: Vec<T>,
    /// Row-major `[heads, n]` softmax weights.
    attn: Vec<T>,
    ctx: Vec<T>,
}

impl<T> MhcaCache<T> {
    pub fn weights(&self) -> &[T] {
        &self.attn
    }
}

impl Mhca {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 || dim % HEAD_DIM != 0 {
            return Err(Error::Shape(format!("attention dim {dim} is not a multiple of {HEAD_DIM}")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads: dim / HEAD_DIM,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.in_dim
    }

    /// `kv` holds `n ≥ 1` tokens row-major.
    pub fn forward<T: Real>(&self, ws: &Weights<T>, query: &[T], kv: &[T]) -> Result<(Vec<T>, MhcaCache<T>)> {
        let dim = self.dim();
        if kv.is_empty() {
            return Err(Error::Empty("attention key/value set"));
        }
        if kv.len() % dim != 0 || query.len() != dim {
            return Err(Error::Shape(format!("attention: query {}, kv {} for dim {dim}", query.len(), kv.len())));
        }
        let n = kv.len() / dim;
        let q = self.q.forward(ws, query)?;
        let mut k = Vec::with_capacity(n * dim);
        let mut v = Vec::with_capacity(n * dim);
        for tok in kv.chunks_exact(dim) {
            k.extend(self.k.forward(ws, tok)?);
            v.extend(self.v.forward(ws, tok)?);
        }
        let scale = T::one() / T::lift(HEAD_DIM as f64).sqrt();
        let mut attn = vec![T::zero(); self.heads * n];
        let mut ctx = vec![T::zero(); dim];
        for h in 0..self.heads {
            let hs = h * HEAD_DIM..(h + 1) * HEAD_DIM;
            let row = &mut attn[h * n..(h + 1) * n];
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(&q[hs.clone()], &k[j * dim + hs.start..j * dim + hs.end]) * scale;
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for s in row.iter_mut() {
                *s /= total;
            }
            let out = &mut ctx[hs.clone()];
            for (j, &a) in row.iter().enumerate() {
                for (o, &vv) in out.iter_mut().zip(&v[j * dim + hs.start..j * dim + hs.end]) {
                    *o += a * vv;
                }
            }
        }
        let y = self.o.forward(ws, &ctx)?;
        Ok((y, MhcaCache { q, k, v, attn, ctx }))
    }

    /// Returns gradients with respect to the query and the key/value tokens.
    pub fn backward<T: Real>(
        &self,
        ws: &Weights<T>,
        query: &[T],
        kv: &[T],
        cache: &MhcaCache<T>,
        dy: &[T],
        grads: &mut Grads<T>,
    ) -> (Vec<T>, Vec<T>) {
        let dim = self.dim();
        let n = kv.len() / dim;
        let mut dctx = vec![T::zero(); dim];
        self.o.backward(ws, &cache.ctx, dy, grads, Some(&mut dctx));
        let scale = T::one() / T::lift(HEAD_DIM as f64).sqrt();
        let mut dq = vec![T::zero(); dim];
        let mut dk = vec![T::zero(); n * dim];
        let mut dv = vec![T::zero(); n * dim];
        let mut da = vec![T::zero(); n];
        for h in 0..self.heads {
            let hs = h * HEAD_DIM..(h + 1) * HEAD_DIM;
            let a = &cache.attn[h * n..(h + 1) * n];
            let dout = &dctx[hs.clone()];
            for j in 0..n {
                let r = j * dim + hs.start..j * dim + hs.end;
                da[j] = dot(dout, &cache.v[r.clone()]);
                for (d, &g) in dv[r].iter_mut().zip(dout) {
                    *d += a[j] * g;
                }
            }
            let mean: T = a.iter().zip(&da).map(|(&p, &d)| p * d).sum();
            for j in 0..n {
                let ds = a[j] * (da[j] - mean) * scale;
                let r = j * dim + hs.start..j * dim + hs.end;
                for (d, &kk) in dq[hs.clone()].iter_mut().zip(&cache.k[r.clone()]) {
                    *d += ds * kk;
                }
                for (d, &qq) in dk[r].iter_mut().zip(&cache.q[hs.clone()]) {
                    *d += ds * qq;
                }
            }
        }
        let mut dquery = vec![T::zero(); dim];
        self.q.backward(ws, query, &dq, grads, Some(&mut dquery));
        let mut dkv = vec![T::zero(); n * dim];
        let mut tmp = vec![T::zero(); dim];
        for j in 0..n {
            let r = j * dim..(j + 1) * dim;
            self.k.backward(ws, &kv[r.clone()], &dk[r.clone()], grads, Some(&mut tmp));
            dkv[r.clone()].copy_from_slice(&tmp);
            self.v.backward(ws, &kv[r.clone()], &dv[r.clone()], grads, Some(&mut tmp));
            for (d, t) in dkv[r].iter_mut().zip(&tmp) {
                *d += *t;
            }
        }
        (dquery, dkv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, Mhca) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let m = Mhca::new(&mut store, "att", 32, &mut rng).unwrap();
        (store, m)
    }

    #[test]
    fn single_token_is_projected_value() {
        let (store, m) = setup();
        let ws = store.snapshot::<f64>();
        let q: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let t: Vec<f64> = (0..32).map(|i| (i as f64 * 0.11).cos()).collect();
        let (y, cache) = m.forward(&ws, &q, &t).unwrap();
        assert!(cache.weights().iter().all(|&w| w == 1.0));
        let expect = m.o.forward(&ws, &m.v.forward(&ws, &t).unwrap()).unwrap();
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let two: Vec<f64> = t.iter().chain(&t).copied().collect();
        let (y2, _) = m.forward(&ws, &q, &two).unwrap();
        for (a, b) in y.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let (store, m) = setup();
        let ws = store.snapshot::<f32>();
        assert!(matches!(m.forward(&ws, &[0.0; 32], &[]), Err(Error::Empty(_))));
        assert!(m.forward(&ws, &[0.0; 32], &[0.0; 33]).is_err());
        let mut s2 = ParamStore::new();
        assert!(Mhca::new(&mut s2, "bad", 24, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
