use rand::Rng;

use super::{trace, Grads, Init, ParamId, ParamStore, Real, Weights};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

/// `y = x W + b` with `W` stored row-major as `[in, out]`.
pub fn linear<T: Real>(x: &[T], w: &[T], b: &[T]) -> Result<Vec<T>> {
    let out = b.len();
    if out == 0 || w.len() != x.len() * out {
        return Err(Error::Shape(format!(
            "linear: input {} with weight {} and bias {}",
            x.len(),
            w.len(),
            out
        )));
    }
    let mut y = b.to_vec();
    linear_into(x, w, &mut y);
    Ok(y)
}

#[inline]
fn linear_into<T: Real>(x: &[T], w: &[T], y: &mut [T]) {
    let out = y.len();
    for (xi, row) in x.iter().zip(w.chunks_exact(out)) {
        if *xi != T::zero() {
            axpy(*xi, row, y);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_gain(store, name, in_dim, out_dim, 1.0, rng)
    }

    pub fn with_gain(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), &[in_dim, out_dim], Init::FanIn { fan_in: in_dim, gain }, rng)?;
        let b = store.add(&format!("{name}.b"), &[out_dim], Init::Zeros, rng)?;
        Ok(Self { w, b, in_dim, out_dim })
    }

    pub fn forward<T: Real>(&self, ws: &Weights<T>, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!("linear expects {} inputs, got {}", self.in_dim, x.len())));
        }
        let mut y = ws.get(self.b).to_vec();
        linear_into(x, ws.get(self.w), &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients; writes the input gradient into `dx`
    /// when given.
    pub fn backward<T: Real>(&self, ws: &Weights<T>, x: &[T], dy: &[T], grads: &mut Grads<T>, dx: Option<&mut [T]>) {
        debug_assert_eq!(dy.len(), self.out_dim);
        {
            let gw = grads.get_mut(self.w);
            for (xi, row) in x.iter().zip(gw.chunks_exact_mut(self.out_dim)) {
                if *xi != T::zero() {
                    axpy(*xi, dy, row);
                }
            }
        }
        for (g, d) in grads.get_mut(self.b).iter_mut().zip(dy) {
            *g += *d;
        }
        if let Some(dx) = dx {
            for (d, row) in dx.iter_mut().zip(ws.get(self.w).chunks_exact(self.out_dim)) {
                *d = dot(row, dy);
            }
        }
    }
}

/// Normalizes `x` to zero mean and unit variance, then applies the affine
/// map. Returns the output with the normalized input and inverse std.
pub fn layer_norm<T: Real>(x: &[T], scale: &[T], shift: &[T]) -> Result<(Vec<T>, LayerNormCache<T>)> {
    if x.len() < 2 || scale.len() != x.len() || shift.len() != x.len() {
        return Err(Error::Shape(format!(
            "layer_norm: input {}, scale {}, shift {}",
            x.len(),
            scale.len(),
            shift.len()
        )));
    }
    let n = T::lift(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = T::one() / (var + T::lift(LN_EPS)).sqrt();
    let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * inv).collect();
    let y = xhat.iter().zip(scale).zip(shift).map(|((&h, &g), &b)| h * g + b).collect();
    Ok((y, LayerNormCache { xhat, inv }))
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub inv: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let scale = store.add(&format!("{name}.scale"), &[dim], Init::Constant(1.0), rng)?;
        let shift = store.add(&format!("{name}.shift"), &[dim], Init::Zeros, rng)?;
        Ok(Self { scale, shift, dim })
    }

    pub fn forward<T: Real>(&self, ws: &Weights<T>, x: &[T]) -> Result<(Vec<T>, LayerNormCache<T>)> {
        layer_norm(x, ws.get(self.scale), ws.get(self.shift))
    }

    /// Returns the input gradient.
    pub fn backward<T: Real>(&self, ws: &Weights<T>, cache: &LayerNormCache<T>, dy: &[T], grads: &mut Grads<T>) -> Vec<T> {
        let scale = ws.get(self.scale);
        {
            let gs = grads.get_mut(self.scale);
            for ((g, d), h) in gs.iter_mut().zip(dy).zip(&cache.xhat) {
                *g += *d * *h;
            }
        }
        for (g, d) in grads.get_mut(self.shift).iter_mut().zip(dy) {
            *g += *d;
        }
        let n = T::lift(dy.len() as f64);
        let dxhat: Vec<T> = dy.iter().zip(scale).map(|(&d, &g)| d * g).collect();
        let m1 = dxhat.iter().copied().sum::<T>() / n;
        let m2 = dxhat.iter().zip(&cache.xhat).map(|(&d, &h)| d * h).sum::<T>() / n;
        dxhat
            .iter()
            .zip(&cache.xhat)
            .map(|(&d, &h)| cache.inv * (d - m1 - h * m2))
            .collect()
    }
}

/// linear → layer norm → ReLU → linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpBlock {
    pub l1: Linear,
    pub ln: LayerNorm,
    pub l2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    ln: LayerNormCache<T>,
    /// Post-ReLU activations.
    act: Vec<T>,
}

impl MlpBlock {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_output_gain(store, name, in_dim, hidden, out_dim, 1.0, rng)
    }

    pub fn with_output_gain(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        gain: f32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(store, &format!("{name}.l1"), in_dim, hidden, rng)?,
            ln: LayerNorm::new(store, &format!("{name}.ln"), hidden, rng)?,
            l2: Linear::with_gain(store, &format!("{name}.l2"), hidden, out_dim, gain, rng)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim
    }

    pub fn forward<T: Real>(&self, ws: &Weights<T>, x: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        let h = self.l1.forward(ws, x)?;
        let (mut act, ln) = self.ln.forward(ws, &h)?;
        for a in &mut act {
            if *a < T::zero() {
                *a = T::zero();
            }
        }
        trace::record(|| trace::mask_hash(act.iter().map(|a| *a > T::zero())));
        let y = self.l2.forward(ws, &act)?;
        Ok((y, MlpCache { ln, act }))
    }

    /// Forward pass without keeping intermediates.
    pub fn infer<T: Real>(&self, ws: &Weights<T>, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(ws, x)?.0)
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_dx` is set (empty otherwise).
    pub fn backward<T: Real>(
        &self,
        ws: &Weights<T>,
        x: &[T],
        cache: &MlpCache<T>,
        dy: &[T],
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Vec<T> {
        let mut dact = vec![T::zero(); cache.act.len()];
        self.l2.backward(ws, &cache.act, dy, grads, Some(&mut dact));
        for (d, a) in dact.iter_mut().zip(&cache.act) {
            if *a <= T::zero() {
                *d = T::zero();
            }
        }
        let dh = self.ln.backward(ws, &cache.ln, &dact, grads);
        if need_dx {
            let mut dx = vec![T::zero(); self.l1.in_dim];
            self.l1.backward(ws, x, &dh, grads, Some(&mut dx));
            dx
        } else {
            self.l1.backward(ws, x, &dh, grads, None);
            Vec::new()
        }
    }
}

/// Element-wise maximum over equally sized tokens; ties go to the lowest
/// index. Returns the pooled token and the winning index per element.
pub fn max_pool_set<T: Real, V: AsRef<[T]>>(tokens: &[V]) -> Result<(Vec<T>, Vec<u32>)> {
    let first = tokens.first().ok_or(Error::Empty("max_pool_set tokens"))?.as_ref();
    let dim = first.len();
    let mut out = first.to_vec();
    let mut arg = vec![0u32; dim];
    for (k, t) in tokens.iter().enumerate().skip(1) {
        let t = t.as_ref();
        if t.len() != dim {
            return Err(Error::Shape(format!("max_pool_set: token {k} has {} dims, expected {dim}", t.len())));
        }
        for d in 0..dim {
            if t[d] > out[d] {
                out[d] = t[d];
                arg[d] = k as u32;
            }
        }
    }
    trace::record(|| {
        arg.iter().fold(0xA5A5u64, |h, &a| (h ^ a as u64).wrapping_mul(0x100_0000_01B3))
    });
    Ok((out, arg))
}

/// Routes `dy` to the argmax elements: `dtokens[arg[d]][d] += dy[d]`.
pub fn max_pool_set_backward<T: Real, V: AsMut<[T]>>(arg: &[u32], dy: &[T], dtokens: &mut [V]) {
    for (d, (&k, &g)) in arg.iter().zip(dy).enumerate() {
        dtokens[k as usize].as_mut()[d] += g;
    }
}

/// Feature-wise linear modulation `scale ⊙ z + shift`.
pub fn film<T: Real>(z: &[T], scale: &[T], shift: &[T]) -> Result<Vec<T>> {
    if scale.len() != z.len() || shift.len() != z.len() {
        return Err(Error::Shape(format!(
            "film: z {}, scale {}, shift {}",
            z.len(),
            scale.len(),
            shift.len()
        )));
    }
    Ok(z.iter().zip(scale).zip(shift).map(|((&z, &s), &b)| s * z + b).collect())
}

/// Gradients of [`film`] with respect to `(z, scale, shift)`.
pub fn film_backward<T: Real>(z: &[T], scale: &[T], dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dz = dy.iter().zip(scale).map(|(&d, &s)| d * s).collect();
    let dscale = dy.iter().zip(z).map(|(&d, &z)| d * z).collect();
    (dz, dscale, dy.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_identity_and_bias() {
        let w = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(linear(&[3.0, -2.0], &w, &[0.0, 0.0]).unwrap(), vec![3.0, -2.0]);
        assert_eq!(linear(&[0.0, 0.0], &w, &[0.5, 1.5]).unwrap(), vec![0.5, 1.5]);
        assert!(linear(&[0.0; 3], &w, &[0.0; 2]).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let (y, _) = layer_norm(&[2.0, 2.0, 2.0], &[1.5, 1.5, 1.5], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(y, vec![0.1, 0.2, 0.3]);
        let (y, _) = layer_norm(&[-1.0f64, 1.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y[0] + expect).abs() < 1e-12 && (y[1] - expect).abs() < 1e-12);
        assert!(layer_norm(&[1.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn max_pool_examples() {
        let (y, arg) = max_pool_set(&[vec![1.0, -2.0]]).unwrap();
        assert_eq!((y, arg), (vec![1.0, -2.0], vec![0, 0]));
        let (y, arg) = max_pool_set(&[vec![1.0, 5.0], vec![1.0, 5.0]]).unwrap();
        assert_eq!((y, arg), (vec![1.0, 5.0], vec![0, 0]));
        assert!(max_pool_set::<f64, Vec<f64>>(&[]).is_err());
        let mut d = vec![vec![0.0; 2]; 3];
        let (_, arg) = max_pool_set(&[vec![0.0, 9.0], vec![3.0, 1.0], vec![2.0, 2.0]]).unwrap();
        max_pool_set_backward(&arg, &[1.0, 2.0], &mut d);
        assert_eq!(d, vec![vec![0.0, 2.0], vec![1.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn film_examples() {
        assert_eq!(film(&[1.0, 2.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(film(&[0.0, 0.0], &[3.0, 4.0], &[0.5, 0.25]).unwrap(), vec![0.5, 0.25]);
        assert!(film(&[0.0], &[1.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn mlp_backward_leaves_unused_input_grad_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = MlpBlock::new(&mut store, "m", 3, 8, 2, &mut rng).unwrap();
        let ws = store.snapshot::<f64>();
        let x = [0.3, -0.1, 0.7];
        let (_, cache) = mlp.forward(&ws, &x).unwrap();
        let mut g = store.zero_grads::<f64>();
        assert!(mlp.backward(&ws, &x, &cache, &[1.0, 0.0], &mut g, false).is_empty());
        assert_eq!(mlp.backward(&ws, &x, &cache, &[1.0, 0.0], &mut g, true).len(), 3);
    }
}
