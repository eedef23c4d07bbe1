//! Adam for Euclidean parameters and Riemannian Adam for κ-stereographic and
//! Stiefel parameters.
//!
//! Riemannian Adam rescales the Euclidean gradient by the inverse metric,
//! keeps elementwise moments of that rescaled gradient, and moves along the
//! exponential map at the current point. Momentum is carried between tangent
//! spaces without transport.

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::manifolds::{
    mobius_add, project_to_domain, stereo, stiefel_retract, stiefel_tangent, Curvature,
    StiefelMatrix, DOMAIN_MARGIN,
};
use crate::model::{ModelParams, ParamKind};
use crate::numerics::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Moment estimates and step counter shared by both update rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Matrix>,
    pub u: BTreeMap<String, Matrix>,
}

impl OptimState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            t: 0,
            m: BTreeMap::new(),
            u: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One step over every parameter: Adam for Euclidean entries, Riemannian
    /// Adam for manifold entries. Parameters without a gradient are skipped.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Matrix>,
    ) -> Result<()> {
        self.t += 1;
        self.apply(params, grads, |_| true)
    }

    fn apply(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Matrix>,
        select: impl Fn(ParamKind) -> bool,
    ) -> Result<()> {
        for (name, entry) in params.iter_mut() {
            if !select(entry.kind) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != entry.value.shape() {
                return Err(GeoError::Contract(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    entry.value.shape()
                )));
            }
            entry.value = match entry.kind {
                ParamKind::Euclidean => self.adam_update(name, &entry.value, g)?,
                ParamKind::Stereographic(k) => self.stereo_update(name, k, &entry.value, g)?,
                ParamKind::Stiefel => self.stiefel_update(name, &entry.value, g)?,
            };
        }
        Ok(())
    }

    /// Updates the moments with `g` and returns `m̂ / (√û + ε·eps_scale[row])`.
    fn direction(&mut self, name: &str, g: &Matrix, eps_scale: Option<&[f64]>) -> Matrix {
        let (r, c) = g.shape();
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| Matrix::zeros(r, c));
        let u = self
            .u
            .entry(name.to_string())
            .or_insert_with(|| Matrix::zeros(r, c));
        let (b1, b2) = (self.beta1, self.beta2);
        for ((mi, ui), gi) in m.data_mut().iter_mut().zip(u.data_mut()).zip(g.data()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *ui = b2 * *ui + (1.0 - b2) * gi * gi;
        }
        let t = self.t.max(1) as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut d = Matrix::zeros(r, c);
        for i in 0..r {
            let eps = self.eps * eps_scale.map_or(1.0, |s| s[i]);
            let (mr, ur) = (m.row(i), u.row(i));
            for (j, out) in d.row_mut(i).iter_mut().enumerate() {
                *out = (mr[j] / c1) / ((ur[j] / c2).sqrt() + eps);
            }
        }
        d
    }

    fn adam_update(&mut self, name: &str, x: &Matrix, g: &Matrix) -> Result<Matrix> {
        let d = self.direction(name, g, None);
        x.sub(&d.scale(self.lr))
    }

    fn stereo_update(
        &mut self,
        name: &str,
        kappa: Curvature,
        x: &Matrix,
        g: &Matrix,
    ) -> Result<Matrix> {
        let k = kappa.value();
        let lams: Vec<f64> = (0..x.rows())
            .map(|r| stereo::conformal_factor(k, norm_sq(x.row(r))))
            .collect();
        let inv_metric: Vec<f64> = lams.iter().map(|l| 1.0 / (l * l)).collect();
        let mut rgrad = g.clone();
        for (r, s) in inv_metric.iter().enumerate() {
            rgrad.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        // ε is rescaled with the gradient so it stays a floor on the
        // Euclidean gradient magnitude.
        let d = self.direction(name, &rgrad, Some(&inv_metric));
        let mut out = x.clone();
        for (r, &lam) in lams.iter().enumerate() {
            let w: Vec<f64> = d.row(r).iter().map(|v| -self.lr * lam * v / 2.0).collect();
            out.row_mut(r).copy_from_slice(&exp_at(kappa, x.row(r), &w));
        }
        Ok(out)
    }

    fn stiefel_update(&mut self, name: &str, x: &Matrix, g: &Matrix) -> Result<Matrix> {
        let point = StiefelMatrix::new(x.clone())?;
        let tangent = stiefel_tangent(&point, g)?;
        let d = self.direction(name, &tangent, None);
        Ok(stiefel_retract(&point, &d, self.lr)?.into_matrix())
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// `x ⊕ exp0(w)`, pulled back into the domain. Falls back to `x` when the
/// Möbius sum is singular.
fn exp_at(kappa: Curvature, x: &[f64], w: &[f64]) -> Vec<f64> {
    let k = kappa.value();
    let mut w = w.to_vec();
    if let Some(limit) = kappa.spherical_tangent_limit() {
        let cap = 0.9 * limit;
        let n = norm_sq(&w).sqrt();
        if n > cap {
            w.iter_mut().for_each(|v| *v *= cap / n);
        }
    }
    let (scale, _) = stereo::tanc(k, norm_sq(&w));
    let step: Vec<f64> = w.iter().map(|v| v * scale).collect();
    let step = project_to_domain(kappa, &step, DOMAIN_MARGIN);
    let x = project_to_domain(kappa, x, DOMAIN_MARGIN);
    match mobius_add(kappa, x.coords(), step.coords()) {
        Ok(p) => project_to_domain(kappa, p.coords(), DOMAIN_MARGIN).into_coords(),
        Err(_) => x.into_coords(),
    }
}

/// Adam step on the Euclidean parameters only.
pub fn adam_step(
    state: &mut OptimState,
    params: &mut ModelParams,
    grads: &BTreeMap<String, Matrix>,
) -> Result<()> {
    state.t += 1;
    state.apply(params, grads, |k| k == ParamKind::Euclidean)
}

/// Riemannian Adam step on the manifold-valued parameters only.
pub fn riemannian_adam_step(
    state: &mut OptimState,
    params: &mut ModelParams,
    grads: &BTreeMap<String, Matrix>,
) -> Result<()> {
    state.t += 1;
    state.apply(params, grads, |k| k != ParamKind::Euclidean)
}
