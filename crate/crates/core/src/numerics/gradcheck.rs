//! Central finite-difference checks against [`Graph::backward`](super::Graph::backward).

use super::params::ParamStore;
use crate::error::Result;

/// Largest mismatch found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so near-zero components
/// are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_FLOOR: f64 = 1e-3;

/// Compares the analytic gradients that `analytic` leaves in the store with
/// central differences of `loss` over every element of every parameter.
pub fn check_gradients<L, A>(params: &ParamStore, loss: L, analytic: A, h: f64, floor: f64) -> Result<GradCheckReport>
where
    L: Fn(&ParamStore) -> Result<f64>,
    A: Fn(&mut ParamStore) -> Result<()>,
{
    let mut with_grads = params.clone();
    analytic(&mut with_grads)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut probe = params.clone();
    for name in names {
        let n = params.require(&name)?.len();
        for i in 0..n {
            let orig = params.require(&name)?.data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = loss(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = loss(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = with_grads.grad(&name).unwrap().data()[i];
            let e = rel_err(a, numeric, floor);
            report.checked += 1;
            if e > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: e,
                    worst_param: name.clone(),
                    worst_index: i,
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}
