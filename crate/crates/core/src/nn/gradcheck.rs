use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{trace, Grads, ParamStore, Weights};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a − n| / max(|a|, |n|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose probes crossed a kink of a piecewise operation.
    pub skipped: usize,
    pub worst: Option<(usize, f64, f64)>,
    /// Worst relative error per named tensor (store checks only).
    pub per_tensor: Vec<(String, f64)>,
}

impl GradCheckReport {
    /// Passes when the worst error is below `tol` and at most 10% of the
    /// probed coordinates had to be skipped.
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol && self.skipped * 10 <= self.checked + self.skipped
    }

    fn push(&mut self, index: usize, analytic: f64, numeric: f64) -> f64 {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some((index, analytic, numeric));
        }
        rel
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        Self { max_rel_error: 0.0, checked: 0, skipped: 0, worst: None, per_tensor: Vec::new() }
    }
}

/// Step shrink factors tried when a probe straddles a kink.
const KINK_RETRIES: [f64; 3] = [1.0, 0.1, 0.01];

/// Central-difference check of `analytic` against `f` at `params`.
///
/// A probe whose two evaluations take different branches of a traced
/// piecewise operation is retried with a 10x and 100x smaller step; if
/// every step straddles a kink the coordinate is skipped and counted.
pub fn finite_diff_check(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], analytic: &[f64], eps: f64) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len());
    let mut report = GradCheckReport::default();
    let (_, base) = trace::traced(|| f(params));
    let mut p = params.to_vec();
    for i in 0..p.len() {
        let x = p[i];
        let mut numeric = None;
        for shrink in KINK_RETRIES {
            let h = eps * shrink;
            p[i] = x + h;
            let (fp, sp) = trace::traced(|| f(&p));
            p[i] = x - h;
            let (fm, sm) = trace::traced(|| f(&p));
            p[i] = x;
            if sp == base && sm == base {
                numeric = Some((fp - fm) / (2.0 * h));
                break;
            }
        }
        match numeric {
            Some(n) => {
                report.push(i, analytic[i], n);
            }
            None => report.skipped += 1,
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Probe at most this many coordinates per tensor (all when `None`).
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-3, max_per_tensor: Some(16), seed: 0 }
    }
}

/// Checks gradients of a loss over all tensors of a store.
///
/// Parameters stay in `f32`: each probe stores `p ± eps` rounded to `f32`
/// and divides by the step actually taken. The loss itself is evaluated in
/// `f64`. `loss(ws, Some(grads))` must accumulate the analytic gradient.
pub fn check_store_gradients(
    store: &ParamStore,
    opts: &GradCheckOptions,
    mut loss: impl FnMut(&Weights<f64>, Option<&mut Grads<f64>>) -> f64,
) -> GradCheckReport {
    let mut ws = store.snapshot::<f64>();
    let mut grads = store.zero_grads::<f64>();
    let ((), base) = trace::traced(|| {
        loss(&ws, Some(&mut grads));
    });
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    for (name, _, id) in store.names() {
        let picks: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < id.len => sample(&mut rng, id.len, k).into_vec(),
            _ => (0..id.len).collect(),
        };
        let mut worst = 0.0f64;
        for k in picks {
            let i = id.offset + k;
            let p = store.values()[i];
            let mut numeric = None;
            for shrink in KINK_RETRIES {
                let plus = (p as f64 + opts.eps * shrink) as f32;
                let minus = (p as f64 - opts.eps * shrink) as f32;
                ws.data[i] = plus as f64;
                let (fp, sp) = trace::traced(|| loss(&ws, None));
                ws.data[i] = minus as f64;
                let (fm, sm) = trace::traced(|| loss(&ws, None));
                ws.data[i] = p as f64;
                if sp == base && sm == base {
                    numeric = Some((fp - fm) / (plus as f64 - minus as f64));
                    break;
                }
            }
            match numeric {
                Some(n) => worst = worst.max(report.push(i, grads.data[i], n)),
                None => report.skipped += 1,
            }
        }
        report.per_tensor.push((name.to_string(), worst));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = finite_diff_check(|p| p[0] * p[0], &[3.0], &[6.0], 1e-3);
        assert!(r.max_rel_error < 1e-5 / 6.0, "{r:?}");
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let r = finite_diff_check(|p| p[0] * p[0] + p[1].sin(), &[3.0, 0.4], &[6.0, 0.4f64.cos() * 1.5], 1e-3);
        assert!(r.max_rel_error > 0.1);
        assert!(!r.passed(1e-3));
    }

    #[test]
    fn kinks_are_skipped() {
        let relu = |p: &[f64]| {
            let on = p[0] > 0.0;
            trace::record(|| on as u64);
            p[0].max(0.0)
        };
        let r = finite_diff_check(relu, &[1e-6], &[1.0], 1e-3);
        assert_eq!((r.checked, r.skipped), (0, 1));
        assert!(!r.passed(1e-3));
        // Close to the kink, but a 100x smaller step stays on one side.
        let r = finite_diff_check(relu, &[5e-5], &[1.0], 1e-3);
        assert_eq!((r.checked, r.skipped), (1, 0));
        assert!(r.max_rel_error < 1e-9);
    }
}
