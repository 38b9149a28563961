//! Central finite differences, used as the gradient oracle in tests.

use super::params::{GradSet, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference estimate `(f(p+h) - f(p-h)) / 2h` for every entry.
pub fn finite_diff<S, F>(loss_fn: F, params: &ParamSet<S>, h: S) -> Result<GradSet<S>>
where
    S: Scalar,
    F: Fn(&ParamSet<S>) -> Result<S>,
{
    if !(h > S::zero() && h <= S::of(1e-2)) {
        return Err(Error::Config(format!(
            "finite-difference step {h} outside (0, 1e-2]"
        )));
    }
    let mut out = GradSet::zeros_like(params);
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let two_h = h + h;
    for name in &names {
        let len = params.get(name).unwrap().len();
        for i in 0..len {
            let orig = params.get(name).unwrap().data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let up = loss_fn(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let down = loss_fn(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            out.get_mut(name).unwrap().data_mut()[i] = (up - down) / two_h;
        }
    }
    Ok(out)
}

/// Worst disagreement between two gradient sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientDiscrepancy {
    /// Largest `|a - b| / max(|a|, |b|)` over entries with `|a| >= abs_floor`.
    pub max_relative: f64,
    /// Largest `|a - b|` over entries with `|a| < abs_floor`.
    pub max_absolute_small: f64,
    pub compared: usize,
}

impl GradientDiscrepancy {
    pub fn within(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_relative < rel_tol && self.max_absolute_small < abs_tol
    }
}

/// Compares analytic against numeric gradients entry by entry. `skip`
/// lets callers exclude entries (e.g. ones sitting within `h` of a kink).
pub fn compare_gradients<S: Scalar>(
    analytic: &GradSet<S>,
    numeric: &GradSet<S>,
    abs_floor: f64,
    skip: impl Fn(&str, usize) -> bool,
) -> Result<GradientDiscrepancy> {
    analytic.check_compatible(numeric)?;
    let mut report = GradientDiscrepancy::default();
    for (name, a) in analytic.iter() {
        let n = numeric.get(name).unwrap();
        for (i, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            if skip(name, i) {
                continue;
            }
            let (av, nv) = (av.as_f64(), nv.as_f64());
            let diff = (av - nv).abs();
            if av.abs() < abs_floor {
                report.max_absolute_small = report.max_absolute_small.max(diff);
            } else {
                report.max_relative = report.max_relative.max(diff / av.abs().max(nv.abs()));
            }
            report.compared += 1;
        }
    }
    Ok(report)
}
