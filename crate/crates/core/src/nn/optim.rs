use super::{Grads, ParamStore, Real};
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// Applies the stored gradients and clears them.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        let grads = store.grads.take().ok_or_else(|| Error::MissingGrad("optimizer step without gradients".into()))?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..store.values.len() {
            let g = grads[i] as f64;
            let m = self.beta1 * store.m[i] as f64 + (1.0 - self.beta1) * g;
            let v = self.beta2 * store.v[i] as f64 + (1.0 - self.beta2) * g * g;
            store.m[i] = m as f32;
            store.v[i] = v as f32;
            let p = store.values[i] as f64;
            let update = (m / c1) / ((v / c2).sqrt() + self.eps);
            store.values[i] = (p - self.lr * self.weight_decay * p - self.lr * update) as f32;
        }
        store.bump_version();
        Ok(())
    }
}

/// Rescales `grads` so its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::lift(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(p: f32) -> (ParamStore, crate::nn::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", &[1], Init::Constant(p), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let (mut s, id) = scalar(0.7);
        s.set_grads(&Grads::<f32>::zeros(1)).unwrap();
        AdamW::new(0.1).with_weight_decay(0.0).step(&mut s).unwrap();
        assert_eq!(s.get(id), &[0.7]);
        assert!(s.grads().is_none());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar(1.0);
        s.set_grads(&Grads { data: vec![1.0f32] }).unwrap();
        AdamW::new(0.1).with_weight_decay(0.0).step(&mut s).unwrap();
        // m̂ = 1, v̂ = 1 → update = 1 / (1 + 1e-8)
        let expect = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.get(id)[0] as f64 - expect).abs() < 1e-7);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let (mut s, id) = scalar(2.0);
        s.set_grads(&Grads::<f32>::zeros(1)).unwrap();
        AdamW::new(0.1).with_weight_decay(0.1).step(&mut s).unwrap();
        assert!((s.get(id)[0] - (2.0 - 0.1 * 0.1 * 2.0)).abs() < 1e-7);
    }

    #[test]
    fn missing_grads_is_an_error() {
        let (mut s, _) = scalar(1.0);
        assert!(matches!(AdamW::new(0.1).step(&mut s), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Grads { data: vec![3.0f64, 4.0] };
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
