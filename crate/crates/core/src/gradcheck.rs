//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{ModelParams, ParamGrads};

/// Denominator floor for relative errors, so entries where both gradients
/// are essentially zero are judged on absolute difference.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub entries: Vec<GradEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    /// Worst relative error per parameter tensor.
    pub fn per_param(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let w = out.entry(e.param.clone()).or_insert(0.0f64);
            *w = w.max(e.rel_error);
        }
        out
    }

    pub fn flagged(&self) -> Vec<&GradEntry> {
        self.entries.iter().filter(|e| e.rel_error > self.tol).collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty()
    }
}

/// Compares `analytic` against `(f(θ+ε) − f(θ−ε)) / 2ε` for every scalar in
/// `params`. `f` is evaluated twice up front and must agree bitwise.
pub fn grad_check<F>(params: &ModelParams, analytic: &ParamGrads, eps: f64, tol: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract("finite-difference step must be positive".into()));
    }
    let first = f(params)?;
    let second = f(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    let mut entries = Vec::new();
    for name in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| Error::MissingParam(format!("analytic gradient for {name}")))?;
        let numel = params.get(&name)?.numel();
        if grad.len() != numel {
            return Err(Error::dim("grad_check", &[grad.len()], &[numel]));
        }
        for i in 0..numel {
            let orig = work.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            entries.push(GradEntry {
                param: name.clone(),
                index: i,
                analytic: grad[i],
                numeric,
                rel_error: relative_error(grad[i], numeric),
            });
        }
    }
    Ok(GradCheckReport { eps, tol, entries })
}
