use serde::{Deserialize, Serialize};

use super::linalg::{thin_qr, thin_svd};
use crate::error::{GeoError, Result};
use crate::numerics::{Matrix, Tape, Var};

const STIEFEL_TOL: f64 = 1e-8;

/// An `n×k` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiefelMatrix {
    mat: Matrix,
}

impl StiefelMatrix {
    /// Validates `‖mᵀm − I‖_F < 1e-8` and `n ≥ k`.
    pub fn new(mat: Matrix) -> Result<Self> {
        if mat.rows() < mat.cols() {
            return Err(GeoError::Dimension(format!(
                "Stiefel matrix needs n >= k, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        let residual = orth_residual(&mat);
        if residual >= STIEFEL_TOL {
            return Err(GeoError::Domain(format!(
                "columns are not orthonormal (‖XᵀX − I‖ = {residual:.3e})"
            )));
        }
        Ok(Self { mat })
    }

    pub fn n(&self) -> usize {
        self.mat.rows()
    }

    pub fn k(&self) -> usize {
        self.mat.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }
}

/// A point of the Grassmannian, represented by any orthonormal basis of the
/// subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrassmannRep {
    pub basis: StiefelMatrix,
}

impl GrassmannRep {
    /// `U·Uᵀ`, the basis-independent representative.
    pub fn projector(&self) -> Matrix {
        let u = self.basis.matrix();
        u.matmul_nt(u).expect("square by construction")
    }

    pub fn equivalent(&self, other: &GrassmannRep, tol: f64) -> bool {
        self.projector()
            .max_abs_diff(&other.projector())
            .is_ok_and(|d| d < tol)
    }
}

/// `‖mᵀm − I‖_F`
pub fn orth_residual(m: &Matrix) -> f64 {
    let gram = m.matmul_tn(m).expect("mᵀm always conforms");
    gram.sub(&Matrix::identity(m.cols()))
        .expect("square")
        .frobenius()
}

/// Q factor of the thin QR decomposition with `diag(R) > 0`.
pub fn stiefel_project(m: &Matrix) -> Result<StiefelMatrix> {
    let (q, _) = thin_qr(m)?;
    Ok(StiefelMatrix { mat: q })
}

/// Left singular factor of the thin SVD.
pub fn grassmann_project(m: &Matrix) -> Result<GrassmannRep> {
    let (u, _, _) = thin_svd(m)?;
    Ok(GrassmannRep {
        basis: StiefelMatrix { mat: u },
    })
}

/// `λ·‖YᵀY − I‖²_F`
pub fn orth_penalty(y: &Matrix, lambda: f64) -> f64 {
    let r = orth_residual(y);
    lambda * r * r
}

/// Differentiable [`orth_penalty`].
pub fn orth_penalty_var(tape: &mut Tape, y: Var, lambda: f64) -> Result<Var> {
    let k = tape.shape(y).1;
    let yt = tape.transpose(y)?;
    let gram = tape.matmul(yt, y)?;
    let eye = tape.constant(Matrix::identity(k));
    let diff = tape.sub(gram, eye)?;
    let sq = tape.frobenius_sq(diff)?;
    tape.scale(sq, lambda)
}

/// Projection of `g` onto the tangent space at `x`: `g − x·sym(xᵀg)`.
pub fn stiefel_tangent(x: &StiefelMatrix, g: &Matrix) -> Result<Matrix> {
    let xm = x.matrix();
    if g.shape() != xm.shape() {
        return Err(GeoError::Dimension(format!(
            "Stiefel tangent: gradient {:?} vs point {:?}",
            g.shape(),
            xm.shape()
        )));
    }
    let xtg = xm.matmul_tn(g)?;
    let sym = xtg.add(&xtg.transpose())?.scale(0.5);
    g.sub(&xm.matmul(&sym)?)
}

/// QR retraction of a step along the tangent projection of `g`.
pub fn stiefel_retract(x: &StiefelMatrix, g: &Matrix, step: f64) -> Result<StiefelMatrix> {
    let tangent = stiefel_tangent(x, g)?;
    let moved = x.matrix().sub(&tangent.scale(step))?;
    stiefel_project(&moved)
}
