use crate::error::Result;

use super::{Bindings, Graph, ParameterSet, Var};

const ABS_FLOOR: f64 = 1e-6;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, 1e-6)`.
    pub max_rel_error: f64,
    /// Parameter name where the largest error occurred.
    pub worst: String,
    /// Number of scalar entries checked.
    pub checked: usize,
}

/// Compares backward-pass gradients of `loss` against central finite differences.
///
/// `loss` must build a scalar from the bound parameters; it is called once for
/// the analytic pass and twice per scalar entry for the numeric one.
/// The denominator is floored at `1e-6` so that finite-difference noise on
/// gradients that are exactly zero does not register as a relative error.
pub fn check_gradients<F>(params: &ParameterSet<f64>, step: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
{
    let eval = |p: &ParameterSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let b = g.bind(p, false);
        let l = loss(&mut g, &b)?;
        Ok(g.value(l).item())
    };
    let mut g = Graph::new();
    let bound = g.bind(params, true);
    let l = loss(&mut g, &bound)?;
    let grads = g.backward(l)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut work = params.clone();
    for (name, t) in params.iter() {
        let analytic: Vec<f64> = grads
            .get(bound[name])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        let mut numeric = vec![0.0; t.numel()];
        for i in 0..t.numel() {
            let orig = t.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * step);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel = norm(&diff) / scale.max(ABS_FLOOR);
        report.checked += t.numel();
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = name.clone();
            }
        }
    }
    Ok(report)
}
