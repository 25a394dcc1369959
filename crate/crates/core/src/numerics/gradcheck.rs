//! Central-difference verification of analytic gradients.

use super::{Graph, Gradients, ParameterStore, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Below the floor, central differences of an O(1) loss are rounding noise.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare `analytic` with central differences of `f` around `store`,
/// perturbing every entry of every parameter by `±eps`.
pub fn compare_gradients<F>(f: F, analytic: &Gradients, store: &ParameterStore, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<f64>,
{
    compare_gradients_sampled(f, analytic, store, eps, None)
}

/// As [`compare_gradients`], probing at most `per_tensor` evenly spaced
/// entries of each parameter when given.
pub fn compare_gradients_sampled<F>(
    f: F,
    analytic: &Gradients,
    store: &ParameterStore,
    eps: f64,
    per_tensor: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<f64>,
{
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        let total = grad.len();
        let picks: Vec<usize> = match per_tensor {
            Some(m) if m < total => (0..m).map(|i| i * total / m).collect(),
            _ => (0..total).collect(),
        };
        for k in picks {
            let orig = probe.get(&name).expect("cloned store").data()[k];
            probe.get_mut(&name).expect("cloned store").data_mut()[k] = orig + eps;
            let up = f(&probe)?;
            probe.get_mut(&name).expect("cloned store").data_mut()[k] = orig - eps;
            let down = f(&probe)?;
            probe.get_mut(&name).expect("cloned store").data_mut()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("f around {name}[{k}]")));
            }
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_error(grad.data()[k], numeric);
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}

/// Build the scalar described by `build` on a fresh graph, differentiate it,
/// and compare against central differences with step `eps`.
pub fn gradient_check<F>(build: F, store: &ParameterStore, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    gradient_check_sampled(build, store, eps, None)
}

pub fn gradient_check_sampled<F>(
    build: F,
    store: &ParameterStore,
    eps: f64,
    per_tensor: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::with_store(store);
        let out = build(&mut g)?;
        if !g.value(out).is_finite() {
            return Err(Error::NonFinite("gradient_check objective".into()));
        }
        g.backward(out)?
    };
    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut g = Graph::with_store(s);
        let out = build(&mut g)?;
        Ok(g.value(out).item())
    };
    compare_gradients_sampled(eval, &analytic, store, eps, per_tensor)
}
