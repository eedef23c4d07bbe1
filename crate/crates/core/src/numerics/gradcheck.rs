//! Central-difference gradient verification.

use std::collections::BTreeMap;

use serde::Serialize;

use super::Matrix;
use crate::error::{GeoError, Result};

/// Relative-error denominator floor.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct GradRecord {
    pub param_name: String,
    pub analytic: Matrix,
    pub numeric: Matrix,
    pub max_rel_err: f64,
}

impl GradRecord {
    pub fn new(param_name: &str, analytic: Matrix, numeric: Matrix) -> Result<Self> {
        if analytic.shape() != numeric.shape() {
            return Err(GeoError::Dimension(format!(
                "gradient record for {param_name}: analytic {:?} vs numeric {:?}",
                analytic.shape(),
                numeric.shape()
            )));
        }
        let max_rel_err = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        Ok(Self {
            param_name: param_name.to_string(),
            analytic,
            numeric,
            max_rel_err,
        })
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against `(f(θ+h·e) − f(θ−h·e)) / 2h` for every scalar
/// entry of every parameter in `params`.
pub fn grad_check<F>(
    params: &BTreeMap<String, Matrix>,
    analytic: &BTreeMap<String, Matrix>,
    mut loss_fn: F,
    step: f64,
) -> Result<Vec<GradRecord>>
where
    F: FnMut(&BTreeMap<String, Matrix>) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(GeoError::Contract(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut work = params.clone();
    let mut records = Vec::with_capacity(params.len());
    for (name, value) in params {
        let a = analytic.get(name).ok_or_else(|| {
            GeoError::Contract(format!("no analytic gradient for parameter {name}"))
        })?;
        let mut numeric = Matrix::zeros(value.rows(), value.cols());
        for i in 0..value.len() {
            let orig = value.data()[i];
            work.get_mut(name).expect("cloned key").data_mut()[i] = orig + step;
            let plus = loss_fn(&work)?;
            work.get_mut(name).expect("cloned key").data_mut()[i] = orig - step;
            let minus = loss_fn(&work)?;
            work.get_mut(name).expect("cloned key").data_mut()[i] = orig;
            numeric.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        records.push(GradRecord::new(name, a.clone(), numeric)?);
    }
    Ok(records)
}
