//! Compute blocks of the GCN + linear-attention ensemble: graph convolution,
//! manifold Q/K projections, the factored "1 + cosine" attention, and the
//! weighted combination of both branches.
//!
//! Every block comes in a plain [`Matrix`] form and a form recorded on a
//! [`Tape`] for training.


use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::graphdata::NormalizedAdjacency;
use crate::manifolds::{grassmann_project, stiefel_project};
use crate::numerics::{Matrix, ScalarFn, Tape, Var};

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantTag {
    /// GCN branch plus linear attention, no projection.
    Base,
    /// Q and K replaced by their QR factors.
    Stiefel,
    /// Q and K replaced by their left singular factors.
    Grassmann,
    /// Mixture-of-experts front end fused by cross-attention.
    Rmoe,
    /// Plain graph convolution classifier, no attention branch.
    Gcn,
}

impl VariantTag {
    pub fn projects_qk(self) -> bool {
        matches!(self, VariantTag::Stiefel | VariantTag::Grassmann)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariantTag::Base => "base",
            VariantTag::Stiefel => "stiefel",
            VariantTag::Grassmann => "grassmann",
            VariantTag::Rmoe => "rmoe",
            VariantTag::Gcn => "gcn",
        }
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantTag {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(VariantTag::Base),
            "stiefel" => Ok(VariantTag::Stiefel),
            "grassmann" => Ok(VariantTag::Grassmann),
            "rmoe" => Ok(VariantTag::Rmoe),
            "gcn" => Ok(VariantTag::Gcn),
            other => Err(GeoError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// `H ← ReLU(Â H W)` for every layer but the last, which stays linear.
pub fn gcn_forward(adj: &NormalizedAdjacency, h: &Matrix, weights: &[Matrix]) -> Result<Matrix> {
    if weights.is_empty() {
        return Err(GeoError::Contract(
            "gcn_forward needs at least one layer".into(),
        ));
    }
    let mut h = h.clone();
    for (i, w) in weights.iter().enumerate() {
        h = adj.matrix().mul_dense(&h.matmul(w)?)?;
        if i + 1 < weights.len() {
            h = h.map(|x| x.max(0.0));
        }
    }
    Ok(h)
}

pub fn gcn_forward_var(
    tape: &mut Tape,
    adj: &NormalizedAdjacency,
    h: Var,
    weights: &[Var],
) -> Result<Var> {
    if weights.is_empty() {
        return Err(GeoError::Contract(
            "gcn_forward needs at least one layer".into(),
        ));
    }
    let mut h = h;
    for (i, &w) in weights.iter().enumerate() {
        let hw = tape.matmul(h, w)?;
        h = tape.spmm(adj.shared(), hw)?;
        if i + 1 < weights.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

fn project(variant: VariantTag, m: &Matrix) -> Result<Matrix> {
    match variant {
        VariantTag::Stiefel => Ok(stiefel_project(m)?.into_matrix()),
        VariantTag::Grassmann => Ok(grassmann_project(m)?.basis.into_matrix()),
        _ => Ok(m.clone()),
    }
}

/// Replaces `q` and `k` by orthonormal bases of their column spans for the
/// projected variants; identity otherwise.
pub fn qk_transform(variant: VariantTag, q: &Matrix, k: &Matrix) -> Result<(Matrix, Matrix)> {
    if !variant.projects_qk() {
        return Ok((q.clone(), k.clone()));
    }
    if q.rows() < q.cols() {
        return Err(GeoError::BatchSize {
            batch: q.rows(),
            hidden: q.cols(),
        });
    }
    Ok((project(variant, q)?, project(variant, k)?))
}

/// Tape form of [`qk_transform`]. The projections are straight-through:
/// their values enter the forward pass, gradients flow as if they were the
/// identity.
pub fn qk_transform_var(
    tape: &mut Tape,
    variant: VariantTag,
    q: Var,
    k: Var,
) -> Result<(Var, Var)> {
    if !variant.projects_qk() {
        return Ok((q, k));
    }
    let (pq, pk) = qk_transform(variant, tape.value(q), tape.value(k))?;
    Ok((tape.straight_through(q, pq)?, tape.straight_through(k, pk)?))
}

/// Queries, keys, values and the residual weight of one attention call.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub beta: f64,
}

impl AttentionInputs {
    pub fn new(q: Matrix, k: Matrix, v: Matrix, beta: f64) -> Result<Self> {
        if q.shape() != k.shape() || q.rows() != v.rows() {
            return Err(GeoError::Dimension(format!(
                "attention inputs q {:?}, k {:?}, v {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(GeoError::Contract(format!(
                "beta must lie in [0, 1], got {beta}"
            )));
        }
        Ok(Self { q, k, v, beta })
    }
}

/// Row-normalizes with a `1e-12` floor on the norm.
pub fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|x| *x /= n);
    }
    out
}

/// `β·v + (1−β)·attn` with the kernel `1 + q̂·k̂`, evaluated in
/// `O(N·d²)` through `K̂ᵀV` and `Σ k̂`.
pub fn linear_attention(inp: &AttentionInputs) -> Result<Matrix> {
    let n = inp.q.rows();
    let qh = normalize_rows(&inp.q);
    let kh = normalize_rows(&inp.k);
    let kv = kh.matmul_tn(&inp.v)?;
    let mut num = qh.matmul(&kv)?;
    let v_sum: Vec<f64> = (0..inp.v.cols())
        .map(|c| (0..n).map(|r| inp.v.get(r, c)).sum())
        .collect();
    let k_sum: Vec<f64> = (0..kh.cols())
        .map(|c| (0..n).map(|r| kh.get(r, c)).sum())
        .collect();
    let mut out = inp.v.scale(inp.beta);
    for r in 0..n {
        let den = n as f64
            + qh.row(r)
                .iter()
                .zip(&k_sum)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        let row = num.row_mut(r);
        for (x, s) in row.iter_mut().zip(&v_sum) {
            *x = (*x + s) / den;
        }
        for (o, x) in out.row_mut(r).iter_mut().zip(num.row(r)) {
            *o += (1.0 - inp.beta) * x;
        }
    }
    if !out.is_finite() {
        return Err(GeoError::NonFinite("linear_attention".into()));
    }
    Ok(out)
}

fn normalize_rows_var(tape: &mut Tape, m: Var) -> Result<Var> {
    let s = tape.row_sum_sq(m)?;
    let n = tape.map(s, ScalarFn::SafeNorm)?;
    tape.div_col(m, n)
}

pub fn linear_attention_var(tape: &mut Tape, q: Var, k: Var, v: Var, beta: f64) -> Result<Var> {
    let n = tape.shape(q).0;
    let qh = normalize_rows_var(tape, q)?;
    let kh = normalize_rows_var(tape, k)?;
    let kt = tape.transpose(kh)?;
    let kv = tape.matmul(kt, v)?;
    let qkv = tape.matmul(qh, kv)?;
    let v_sum = tape.col_sum(v)?;
    let v_sum = tape.broadcast_row(v_sum, n)?;
    let num = tape.add(qkv, v_sum)?;
    let k_sum = tape.col_sum(kh)?;
    let k_sum = tape.transpose(k_sum)?;
    let den = tape.matmul(qh, k_sum)?;
    let den = tape.add_scalar(den, n as f64)?;
    let attn = tape.div_col(num, den)?;
    let attn = tape.scale(attn, 1.0 - beta)?;
    let res = tape.scale(v, beta)?;
    tape.add(res, attn)
}

/// `α·Z + (1−α)·Z₀`
pub fn ensemble_combine(z_gnn: &Matrix, z_attn: &Matrix, alpha: f64) -> Result<Matrix> {
    z_gnn.zip_map(z_attn, |a, b| alpha * a + (1.0 - alpha) * b)
}

pub fn ensemble_combine_var(tape: &mut Tape, z_gnn: Var, z_attn: Var, alpha: f64) -> Result<Var> {
    let a = tape.scale(z_gnn, alpha)?;
    let b = tape.scale(z_attn, 1.0 - alpha)?;
    tape.add(a, b)
}
