use super::{GradSet, NnError, ParamSet};

/// Relative-error denominators never drop below this fraction of
/// `max(1, |loss|)`; central differences cannot resolve gradients much
/// smaller than that, so tinier entries are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coordinates: usize,
}

/// Compares the analytic gradient of `f` at `params` with central
/// differences of step `eps`, coordinate by coordinate.
///
/// The relative error of one coordinate is
/// `|a − n| / max(|a|, |n|, GRADCHECK_FLOOR · max(1, |loss|))`.
pub fn check_gradients<F>(f: F, params: &ParamSet, eps: f64) -> Result<GradCheckReport, NnError>
where
    F: Fn(&ParamSet) -> Result<(f64, GradSet), NnError>,
{
    if !(eps > 0.0) {
        return Err(NnError::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("loss at base point".into()));
    }
    analytic.ensure_congruent(params)?;
    let floor = GRADCHECK_FLOOR * loss.abs().max(1.0);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name)?.len();
        for i in 0..n {
            let orig = params.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + eps;
            let (plus, _) = f(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - eps;
            let (minus, _) = f(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NnError::NonFinite(format!("loss while probing {name}[{i}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(&name)?.data()[i];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
