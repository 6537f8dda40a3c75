use super::Params;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst parameter.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub n_params: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` for every
/// parameter of `model`.
///
/// Per-parameter error is `|a - n| / max(|a| + |n|, GRAD_FLOOR)`; the report
/// holds the maximum. The floor stops exactly-zero gradients (for example an
/// output bias under a translation-invariant loss) from being judged against
/// finite-difference round-off. Intended for small models (up to ~10⁴
/// parameters).
/// Gradient magnitude below which errors are effectively absolute.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn grad_check<M, G, F>(
    model: &M,
    analytic: &G,
    loss: F,
    eps: f64,
    tolerance: f64,
) -> GradCheckReport
where
    M: Params + Clone,
    G: Params,
    F: Fn(&M) -> f64,
{
    let names = model.param_names();
    let analytic_slices = analytic.param_slices();
    let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    assert_eq!(
        shapes,
        analytic_slices.iter().map(|s| s.len()).collect::<Vec<_>>(),
        "gradient layout differs from the model"
    );

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        n_params: shapes.iter().sum(),
        tolerance,
        passed: true,
    };
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.param_slices()[t][i];
            probe.param_slices_mut()[t][i] = orig + eps;
            let plus = loss(&probe);
            probe.param_slices_mut()[t][i] = orig - eps;
            let minus = loss(&probe);
            probe.param_slices_mut()[t][i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic_slices[t][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_FLOOR);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((names[t].clone(), i));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    report
}
