use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{trace, Real};
use crate::dynamics::Action;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Diagonal Gaussian over (accel, steer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianOutput<T> {
    pub mean: [T; 2],
    pub log_std: [T; 2],
}

impl<T: Real> GaussianOutput<T> {
    pub fn std(&self) -> [T; 2] {
        [self.log_std[0].exp(), self.log_std[1].exp()]
    }

    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 2] {
        let s = self.std();
        let e0: f64 = StandardNormal.sample(rng);
        let e1: f64 = StandardNormal.sample(rng);
        [self.mean[0].as_f64() + s[0].as_f64() * e0, self.mean[1].as_f64() + s[1].as_f64() * e1]
    }

    pub fn mean_action(&self) -> Action {
        Action::new(self.mean[0].as_f64(), self.mean[1].as_f64())
    }

    pub fn log_prob(&self, a: [f64; 2]) -> T {
        gaussian_log_prob(self.mean, self.log_std, [T::lift(a[0]), T::lift(a[1])])
    }
}

/// Maps the 4 raw head outputs to a Gaussian: mean = `mean_scale ⊙ raw[..2]`,
/// log-std = clamp(raw[2..], [LOG_STD_MIN, LOG_STD_MAX]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mean_scale: [f64; 2],
}

impl GaussianHead {
    pub const RAW_DIM: usize = 4;

    pub fn forward<T: Real>(&self, raw: &[T]) -> GaussianOutput<T> {
        let (lo, hi) = (T::lift(LOG_STD_MIN), T::lift(LOG_STD_MAX));
        let clamped = [raw[2] < lo || raw[2] > hi, raw[3] < lo || raw[3] > hi];
        trace::record(|| trace::mask_hash(clamped.into_iter()));
        GaussianOutput {
            mean: [raw[0] * T::lift(self.mean_scale[0]), raw[1] * T::lift(self.mean_scale[1])],
            log_std: [raw[2].max(lo).min(hi), raw[3].max(lo).min(hi)],
        }
    }

    /// Chains gradients on (mean, log_std) back to the raw outputs.
    pub fn backward<T: Real>(&self, raw: &[T], dmean: [T; 2], dlog_std: [T; 2]) -> [T; 4] {
        let (lo, hi) = (T::lift(LOG_STD_MIN), T::lift(LOG_STD_MAX));
        let pass = |r: T, d: T| if r < lo || r > hi { T::zero() } else { d };
        [
            dmean[0] * T::lift(self.mean_scale[0]),
            dmean[1] * T::lift(self.mean_scale[1]),
            pass(raw[2], dlog_std[0]),
            pass(raw[3], dlog_std[1]),
        ]
    }
}

pub fn gaussian_log_prob<T: Real>(mean: [T; 2], log_std: [T; 2], a: [T; 2]) -> T {
    let half_ln_2pi = T::lift(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut lp = T::zero();
    for k in 0..2 {
        let z = (a[k] - mean[k]) / log_std[k].exp();
        lp -= T::lift(0.5) * z * z + log_std[k] + half_ln_2pi;
    }
    lp
}

/// Gradient of [`gaussian_log_prob`] with respect to (mean, log_std).
pub fn gaussian_log_prob_backward<T: Real>(mean: [T; 2], log_std: [T; 2], a: [T; 2]) -> ([T; 2], [T; 2]) {
    let mut dm = [T::zero(); 2];
    let mut dl = [T::zero(); 2];
    for k in 0..2 {
        let inv_var = (-(log_std[k] + log_std[k])).exp();
        let diff = a[k] - mean[k];
        dm[k] = diff * inv_var;
        dl[k] = diff * diff * inv_var - T::one();
    }
    (dm, dl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_normal_density_at_mean() {
        let lp = gaussian_log_prob([0.0, 0.0], [0.0, 0.0], [0.0f64, 0.0]);
        assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_reproducible() {
        let g = GaussianOutput { mean: [0.5f32, -0.1], log_std: [0.0, -2.0] };
        let a = g.sample(&mut ChaCha8Rng::seed_from_u64(9));
        let b = g.sample(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn log_std_is_clamped() {
        let head = GaussianHead { mean_scale: [2.0, 0.1] };
        let out = head.forward(&[1.0f64, 1.0, -9.0, 4.0]);
        assert_eq!(out.mean, [2.0, 0.1]);
        assert_eq!(out.log_std, [LOG_STD_MIN, LOG_STD_MAX]);
        assert_eq!(head.backward(&[1.0f64, 1.0, -9.0, 4.0], [1.0, 1.0], [1.0, 1.0]), [2.0, 0.1, 0.0, 0.0]);
    }
}
