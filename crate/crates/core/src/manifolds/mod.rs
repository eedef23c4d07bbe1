//! Constant-curvature geometry in the κ-stereographic chart, plus Stiefel and
//! Grassmann projections.
//!
//! One chart family covers all three regimes: κ<0 is the Poincaré ball of
//! radius `1/√|κ|`, κ=0 is flat space, and κ>0 is the stereographic
//! projection of the sphere. Every operation reduces to its Euclidean
//! counterpart as κ→0, with the distance convention `d₀(x,y) = 2‖x−y‖` so
//! curvature sweeps stay continuous.

pub mod linalg;
pub mod stereo;
mod stiefel;
mod tape_ops;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

pub use stiefel::{
    grassmann_project, orth_penalty, orth_penalty_var, orth_residual, stiefel_project,
    stiefel_retract, stiefel_tangent, GrassmannRep, StiefelMatrix,
};
pub use tape_ops::{dist_sq_rows, exp0_rows, log0_rows, mobius_add_rows};

/// Default margin kept between iterates and the ball boundary.
pub const DOMAIN_MARGIN: f64 = 1e-5;
/// Mobius-addition denominators below this are treated as singular.
pub const MOBIUS_DENOM_TOL: f64 = 1e-15;

/// Signed sectional curvature of a κ-stereographic space.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curvature(f64);

impl Curvature {
    pub const FLAT: Curvature = Curvature(0.0);

    pub fn new(kappa: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(GeoError::Domain(format!(
                "curvature must be finite, got {kappa}"
            )));
        }
        Ok(Self(kappa))
    }

    /// The candidate set `{−3, −1, 0, 1, 3}`.
    pub fn default_candidates() -> Vec<Curvature> {
        [-3.0, -1.0, 0.0, 1.0, 3.0]
            .into_iter()
            .map(Curvature)
            .collect()
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Ball radius `1/√|κ|` for κ<0; `None` otherwise.
    pub fn ball_radius(self) -> Option<f64> {
        (self.0 < 0.0).then(|| 1.0 / (-self.0).sqrt())
    }

    /// Largest tangent norm accepted by `exp0` for κ>0 (`π/(2√κ)`).
    pub fn spherical_tangent_limit(self) -> Option<f64> {
        (self.0 > 0.0).then(|| std::f64::consts::FRAC_PI_2 / self.0.sqrt())
    }

    pub fn contains(self, coords: &[f64]) -> bool {
        match self.ball_radius() {
            Some(r) => norm(coords) < r,
            None => coords.iter().all(|v| v.is_finite()),
        }
    }
}

impl fmt::Display for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "κ={}", self.0)
    }
}

/// Coordinates of a point in the chart of a given curvature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    kappa: Curvature,
    coords: Vec<f64>,
}

impl ManifoldPoint {
    pub fn new(kappa: Curvature, coords: Vec<f64>) -> Result<Self> {
        if !kappa.contains(&coords) {
            return Err(GeoError::Domain(format!(
                "point of norm {} lies outside the {kappa} domain",
                norm(&coords)
            )));
        }
        Ok(Self { kappa, coords })
    }

    pub fn origin(kappa: Curvature, dim: usize) -> Self {
        Self {
            kappa,
            coords: vec![0.0; dim],
        }
    }

    pub fn kappa(&self) -> Curvature {
        self.kappa
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// Exponential map at the origin.
pub fn exp0(kappa: Curvature, v: &[f64]) -> Result<ManifoldPoint> {
    if let Some(limit) = kappa.spherical_tangent_limit() {
        if norm(v) >= limit {
            return Err(GeoError::Domain(format!(
                "tangent norm {} reaches the spherical limit {limit}",
                norm(v)
            )));
        }
    }
    let (scale, _) = stereo::tanc(kappa.value(), norm_sq(v));
    ManifoldPoint::new(kappa, v.iter().map(|x| x * scale).collect())
}

/// Logarithmic map at the origin.
pub fn log0(kappa: Curvature, x: &[f64]) -> Result<Vec<f64>> {
    if !kappa.contains(x) {
        return Err(GeoError::Domain(format!(
            "log0: point of norm {} outside the {kappa} domain",
            norm(x)
        )));
    }
    let (scale, _) = stereo::artanc(kappa.value(), norm_sq(x));
    Ok(x.iter().map(|v| v * scale).collect())
}

/// Möbius addition `x ⊕_κ y`.
pub fn mobius_add(kappa: Curvature, x: &[f64], y: &[f64]) -> Result<ManifoldPoint> {
    if x.len() != y.len() {
        return Err(GeoError::Dimension(format!(
            "mobius_add: {} vs {} coordinates",
            x.len(),
            y.len()
        )));
    }
    for p in [x, y] {
        if !kappa.contains(p) {
            return Err(GeoError::Domain(format!(
                "mobius_add: operand of norm {} outside the {kappa} domain",
                norm(p)
            )));
        }
    }
    let k = kappa.value();
    let xy = dot(x, y);
    let x2 = norm_sq(x);
    let y2 = norm_sq(y);
    let cx = 1.0 - 2.0 * k * xy - k * y2;
    let cy = 1.0 + k * x2;
    let den = 1.0 - 2.0 * k * xy + k * k * x2 * y2;
    if den.abs() < MOBIUS_DENOM_TOL {
        return Err(GeoError::Singular(format!(
            "mobius_add denominator {den:.3e} (antipodal configuration)"
        )));
    }
    let coords: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| (cx * a + cy * b) / den)
        .collect();
    // Round-off can land a hair outside the ball.
    ManifoldPoint::new(kappa, coords.clone())
        .or_else(|_| Ok(project_to_domain(kappa, &coords, DOMAIN_MARGIN)))
}

/// Geodesic distance.
pub fn dist(kappa: Curvature, x: &[f64], y: &[f64]) -> Result<f64> {
    let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
    let w = mobius_add(kappa, &neg_x, y)?;
    let s = norm_sq(w.coords());
    let (g, _) = stereo::artanc(kappa.value(), s);
    Ok(2.0 * s.sqrt() * g)
}

/// Pulls points of a negatively curved chart back inside the ball with a
/// relative margin. Identity for κ≥0.
pub fn project_to_domain(kappa: Curvature, x: &[f64], margin: f64) -> ManifoldPoint {
    let coords = match kappa.ball_radius() {
        Some(r) => {
            let limit = (1.0 - margin) * r;
            let n = norm(x);
            if n >= limit {
                x.iter().map(|v| v * limit / n).collect()
            } else {
                x.to_vec()
            }
        }
        None => x.to_vec(),
    };
    ManifoldPoint { kappa, coords }
}
