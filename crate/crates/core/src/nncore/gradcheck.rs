use super::params::Parameterized;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Relative error floor as a fraction of the loss value. A difference
/// quotient of `f` carries round-off of order `ulp(f) / eps`, so derivatives
/// below this fraction of `|f|` are compared on an absolute scale instead.
pub const LOSS_SCALE_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against Richardson-refined central differences,
/// coordinate by coordinate: `n = (4 D(eps/2) - D(eps)) / 3`, which removes the
/// `eps^2` truncation term. `f` returns the loss and its gradient (same
/// structure as the parameters). Relative error is
/// `|a - n| / max(1e-8, LOSS_SCALE_FLOOR * |f|, |a| + |n|)`.
pub fn grad_check<M, F>(params: &M, eps: f64, f: F) -> GradCheckReport
where
    M: Parameterized + Clone,
    F: Fn(&M) -> (f64, M),
{
    let (base, analytic) = f(params);
    let analytic: Vec<(String, Vec<f64>)> =
        analytic.params().into_iter().map(|(n, a)| (n, a.iter().copied().collect())).collect();
    let floor = (LOSS_SCALE_FLOOR * base.abs()).max(1e-8);

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coordinates: 0 };
    for (p, (name, grads)) in analytic.iter().enumerate() {
        for (c, &a) in grads.iter().enumerate() {
            let mut eval_at = |delta: f64| -> f64 {
                let orig = {
                    let mut ps = probe.params_mut();
                    let slot = ps[p].1.iter_mut().nth(c).expect("coordinate in range");
                    let old = *slot;
                    *slot = old + delta;
                    old
                };
                let v = f(&probe).0;
                let mut ps = probe.params_mut();
                *ps[p].1.iter_mut().nth(c).expect("coordinate in range") = orig;
                v
            };
            let d_full = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
            let half = 0.5 * eps;
            let d_half = (eval_at(half) - eval_at(-half)) / (2.0 * half);
            let numeric = (4.0 * d_half - d_full) / 3.0;
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), c));
            }
        }
    }
    report
}
