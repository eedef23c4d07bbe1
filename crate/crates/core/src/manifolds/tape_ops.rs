//! Row-wise κ-stereographic maps recorded on a [`Tape`]. Each row of the
//! operand is one point or tangent vector.

use super::{Curvature, MOBIUS_DENOM_TOL};
use crate::error::{GeoError, Result};
use crate::numerics::{ScalarFn, Tape, Var};

pub fn exp0_rows(tape: &mut Tape, kappa: Curvature, v: Var) -> Result<Var> {
    if kappa.value() == 0.0 {
        return Ok(v);
    }
    let s = tape.row_sum_sq(v)?;
    let scale = tape.map(s, ScalarFn::TanC(kappa.value()))?;
    tape.mul_col(v, scale)
}

pub fn log0_rows(tape: &mut Tape, kappa: Curvature, x: Var) -> Result<Var> {
    if kappa.value() == 0.0 {
        return Ok(x);
    }
    let s = tape.row_sum_sq(x)?;
    let scale = tape.map(s, ScalarFn::ArTanC(kappa.value()))?;
    tape.mul_col(x, scale)
}

pub fn mobius_add_rows(tape: &mut Tape, kappa: Curvature, x: Var, y: Var) -> Result<Var> {
    let k = kappa.value();
    if k == 0.0 {
        return tape.add(x, y);
    }
    let xy = tape.row_dot(x, y)?;
    let x2 = tape.row_sum_sq(x)?;
    let y2 = tape.row_sum_sq(y)?;

    let a = tape.scale(xy, -2.0 * k)?;
    let b = tape.scale(y2, -k)?;
    let cx = tape.add(a, b)?;
    let cx = tape.add_scalar(cx, 1.0)?;
    let cy = tape.scale(x2, k)?;
    let cy = tape.add_scalar(cy, 1.0)?;

    let x2y2 = tape.hadamard(x2, y2)?;
    let c = tape.scale(x2y2, k * k)?;
    let den = tape.add(a, c)?;
    let den = tape.add_scalar(den, 1.0)?;
    let min_den = tape
        .value(den)
        .data()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min_den < MOBIUS_DENOM_TOL {
        return Err(GeoError::Singular(format!(
            "mobius_add denominator {min_den:.3e} (antipodal configuration)"
        )));
    }

    let px = tape.mul_col(x, cx)?;
    let py = tape.mul_col(y, cy)?;
    let num = tape.add(px, py)?;
    tape.div_col(num, den)
}

/// Squared geodesic distance between matching rows, `n×1`.
pub fn dist_sq_rows(tape: &mut Tape, kappa: Curvature, x: Var, y: Var) -> Result<Var> {
    let neg = tape.scale(x, -1.0)?;
    let w = mobius_add_rows(tape, kappa, neg, y)?;
    let s = tape.row_sum_sq(w)?;
    tape.map(s, ScalarFn::DistSq(kappa.value()))
}
