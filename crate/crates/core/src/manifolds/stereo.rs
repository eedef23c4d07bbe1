//! Curvature-dependent scalar functions of the κ-stereographic model.
//!
//! `tanc` and `artanc` take the squared Euclidean norm `s` and return the
//! radial scaling factor together with its derivative in `s`. Near the origin
//! they switch to truncated Taylor series so neither value nor slope loses
//! precision to cancellation.

/// Below this value of `|κ|·s` the series branch is used.
const SERIES_CUTOFF: f64 = 1e-4;

/// `tan_κ`: `tanh` for κ<0, `tan` for κ>0, identity for κ=0.
pub fn tan_k(kappa: f64, x: f64) -> f64 {
    if kappa < 0.0 {
        x.tanh()
    } else if kappa > 0.0 {
        x.tan()
    } else {
        x
    }
}

/// Inverse of [`tan_k`].
pub fn artan_k(kappa: f64, x: f64) -> f64 {
    if kappa < 0.0 {
        x.atanh()
    } else if kappa > 0.0 {
        x.atan()
    } else {
        x
    }
}

/// `(tan_κ(u)/u, d/ds)` with `u = √(|κ|s)`.
pub fn tanc(kappa: f64, s: f64) -> (f64, f64) {
    if kappa == 0.0 {
        return (1.0, 0.0);
    }
    let a = kappa.abs();
    let sign = kappa.signum();
    let x = a * s;
    if x < SERIES_CUTOFF {
        let value = 1.0 + sign * x / 3.0 + 2.0 * x * x / 15.0 + sign * 17.0 * x * x * x / 315.0;
        let slope = a * (sign / 3.0 + 4.0 * x / 15.0 + sign * 51.0 * x * x / 315.0);
        return (value, slope);
    }
    let u = x.sqrt();
    let t = tan_k(kappa, u);
    // tanh' = 1 − t², tan' = 1 + t²
    let dt = 1.0 + sign * t * t;
    let value = t / u;
    let slope = a * (dt * u - t) / (2.0 * u * u * u);
    (value, slope)
}

/// `(tan_κ⁻¹(u)/u, d/ds)` with `u = √(|κ|s)`.
pub fn artanc(kappa: f64, s: f64) -> (f64, f64) {
    if kappa == 0.0 {
        return (1.0, 0.0);
    }
    let a = kappa.abs();
    let sign = kappa.signum();
    let x = a * s;
    if x < SERIES_CUTOFF {
        let value = 1.0 - sign * x / 3.0 + x * x / 5.0 - sign * x * x * x / 7.0;
        let slope = a * (-sign / 3.0 + 2.0 * x / 5.0 - sign * 3.0 * x * x / 7.0);
        return (value, slope);
    }
    let u = x.sqrt();
    let t = artan_k(kappa, u);
    // atanh' = 1/(1 − u²), atan' = 1/(1 + u²)
    let dt = 1.0 / (1.0 + sign * u * u);
    let value = t / u;
    let slope = a * (dt * u - t) / (2.0 * u * u * u);
    (value, slope)
}

/// Squared distance from the origin to a point of squared norm `s`:
/// `4 s · artanc(s)²`, which is `4s` in the flat case.
pub fn dist_sq_from_origin(kappa: f64, s: f64) -> (f64, f64) {
    let (g, dg) = artanc(kappa, s);
    (4.0 * s * g * g, 4.0 * g * g + 8.0 * s * g * dg)
}

/// Conformal factor `λ_x = 2 / (1 + κ‖x‖²)`.
pub fn conformal_factor(kappa: f64, norm_sq: f64) -> f64 {
    2.0 / (1.0 + kappa * norm_sq)
}
