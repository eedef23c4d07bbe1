use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::params::{ModelParams, ParamKind};
use crate::backbone::{
    ensemble_combine_var, gcn_forward_var, linear_attention_var, qk_transform_var, VariantTag,
};
use crate::error::{GeoError, Result};
use crate::graphdata::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::manifolds::{log0, log0_rows, orth_penalty, orth_penalty_var, Curvature, ManifoldPoint};
use crate::moe::{
    descriptor_matrix, expert_embed_var, expert_regularizer, expert_regularizer_var,
    gating_entropy, gating_entropy_var, gating_forward_var, link_loss_on_pairs, link_loss_var,
    ExpertConfig, ExpertEmbedding, LinkPairs, DESCRIPTOR_DIM,
};
use crate::numerics::{Matrix, ScalarFn, Tape, Var, LN_EPS};

pub const W_IN: &str = "w_in";
pub const W_Q: &str = "w_q";
pub const W_K: &str = "w_k";
pub const W_V: &str = "w_v";
pub const W_OUT: &str = "w_out";
pub const W_QC: &str = "w_qc";
pub const W_KC: &str = "w_kc";
pub const W_VC: &str = "w_vc";
pub const THETA_G: &str = "theta_g";

pub fn gcn_name(layer: usize) -> String {
    format!("gcn.{layer}")
}

pub fn expert_weight_name(e: usize) -> String {
    format!("expert.{e}.w")
}

pub fn expert_bias_name(e: usize) -> String {
    format!("expert.{e}.b")
}

/// Per-graph inputs that stay fixed during training.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub features: Matrix,
    pub adj: NormalizedAdjacency,
    /// `Â·X`, the expert encoders' input.
    pub propagated: Matrix,
    /// Standardized topology descriptors, present for the rmoe variant.
    pub descriptors: Option<Matrix>,
}

impl GraphInputs {
    pub fn new(g: &Graph, config: &TrainConfig) -> Result<Self> {
        let descriptors = if config.variant == VariantTag::Rmoe {
            Some(descriptor_matrix(
                g,
                config.descriptor_hops,
                config.descriptor_cap,
                config.seed,
            )?)
        } else {
            None
        };
        Self::with_descriptors(g, descriptors)
    }

    pub fn with_descriptors(g: &Graph, descriptors: Option<Matrix>) -> Result<Self> {
        let adj = normalize_adjacency(g);
        let propagated = adj.matrix().mul_dense(g.features())?;
        if let Some(d) = &descriptors {
            if d.rows() != g.num_nodes() {
                return Err(GeoError::Dimension(format!(
                    "{} descriptor rows for {} nodes",
                    d.rows(),
                    g.num_nodes()
                )));
            }
        }
        Ok(Self {
            features: g.features().clone(),
            adj,
            propagated,
            descriptors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Deterministic generator for the parameter `name`: independent of which
/// other parameters exist, so variants sharing a name share its start value.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn glorot(seed: u64, name: &str, rows: usize, cols: usize) -> Matrix {
    Matrix::glorot(rows, cols, &mut param_rng(seed, name))
}

/// Glorot-uniform Euclidean weights, manifold biases at the origin and a
/// zero gating map.
pub fn init_params(config: &TrainConfig, in_dim: usize, num_classes: usize) -> Result<ModelParams> {
    config.validate()?;
    let seed = config.seed;
    let dh = config.hidden_dim;
    let mut p = ModelParams::new();
    let mut add = |name: &str, r: usize, c: usize| {
        p.insert(name, glorot(seed, name, r, c), ParamKind::Euclidean)
    };
    if config.variant == VariantTag::Gcn {
        let depth = config.gcn_depth;
        for l in 0..depth {
            let rows = if l == 0 { in_dim } else { dh };
            let cols = if l + 1 == depth { num_classes } else { dh };
            add(&gcn_name(l), rows, cols);
        }
        return Ok(p);
    }
    add(W_IN, in_dim, dh);
    add(W_Q, dh, dh);
    add(W_K, dh, dh);
    add(W_V, dh, dh);
    add(W_OUT, dh, num_classes);
    for l in 0..config.gcn_depth {
        add(&gcn_name(l), dh, dh);
    }
    if config.variant == VariantTag::Rmoe {
        let de = config.expert_width();
        add(W_QC, in_dim, dh);
        add(W_KC, de, dh);
        add(W_VC, de, dh);
        for e in 0..config.num_experts {
            add(&expert_weight_name(e), in_dim, de);
        }
        p.insert(
            THETA_G,
            Matrix::zeros(DESCRIPTOR_DIM, config.num_experts),
            ParamKind::Euclidean,
        );
        for (e, kappa) in config.expert_curvatures()?.into_iter().enumerate() {
            p.insert(
                &expert_bias_name(e),
                Matrix::zeros(1, de),
                ParamKind::Stereographic(kappa),
            );
        }
    }
    Ok(p)
}

/// Rebuilds the expert list held in `params`.
pub fn experts_from_params(
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<Vec<ExpertConfig>> {
    if config.variant != VariantTag::Rmoe {
        return Ok(Vec::new());
    }
    config
        .expert_curvatures()?
        .into_iter()
        .enumerate()
        .map(|(e, kappa)| {
            let bias = params.get(&expert_bias_name(e))?;
            Ok(ExpertConfig {
                expert_id: e,
                kappa,
                weights: params.get(&expert_weight_name(e))?.clone(),
                bias: ManifoldPoint::new(kappa, bias.row(0).to_vec())?,
            })
        })
        .collect()
}

/// Registers each parameter on the tape at most once.
struct Leaves<'a> {
    params: &'a ModelParams,
    vars: BTreeMap<String, Var>,
}

impl<'a> Leaves<'a> {
    fn new(params: &'a ModelParams) -> Self {
        Self {
            params,
            vars: BTreeMap::new(),
        }
    }

    fn get(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let v = tape.param(name, self.params.get(name)?.clone());
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }
}

/// Cross-attention of each node's raw features over its K expert tangent
/// vectors, added to the `X·W_in` residual.
pub fn cross_attention_fuse(
    x: &Matrix,
    embeddings: &[ExpertEmbedding],
    gating: &Matrix,
    params: &ModelParams,
) -> Result<Matrix> {
    let w_in = params.get(W_IN)?;
    let w_qc = params.get(W_QC)?;
    let w_kc = params.get(W_KC)?;
    let w_vc = params.get(W_VC)?;
    if gating.cols() != embeddings.len() || gating.rows() != x.rows() {
        return Err(GeoError::Dimension(format!(
            "gating {:?} for {} nodes and {} experts",
            gating.shape(),
            x.rows(),
            embeddings.len()
        )));
    }
    let scale = 1.0 / (w_qc.cols() as f64).sqrt();
    let q = x.matmul(w_qc)?;
    let mut out = x.matmul(w_in)?;
    let mut keys = Vec::with_capacity(embeddings.len());
    let mut values = Vec::with_capacity(embeddings.len());
    for emb in embeddings {
        let mut t = Matrix::zeros(emb.points.rows(), emb.points.cols());
        for v in 0..t.rows() {
            t.row_mut(v)
                .copy_from_slice(&log0(emb.kappa, emb.points.row(v))?);
        }
        keys.push(t.matmul(w_kc)?);
        values.push(t.matmul(w_vc)?);
    }
    let k = embeddings.len();
    for v in 0..x.rows() {
        let logits: Vec<f64> = (0..k)
            .map(|e| {
                let dot: f64 = q
                    .row(v)
                    .iter()
                    .zip(keys[e].row(v))
                    .map(|(a, b)| a * b)
                    .sum();
                dot * scale + (gating.get(v, e) + LN_EPS).ln()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for e in 0..k {
            let a = exps[e] / total;
            for (o, val) in out.row_mut(v).iter_mut().zip(values[e].row(v)) {
                *o += a * val;
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cross_attention_fuse_var(
    tape: &mut Tape,
    x: Var,
    xw: Var,
    tokens: &[Var],
    gating: Var,
    w_qc: Var,
    w_kc: Var,
    w_vc: Var,
) -> Result<Var> {
    let dh = tape.shape(w_qc).1;
    let q = tape.matmul(x, w_qc)?;
    let log_w = tape.map(gating, ScalarFn::LnEps)?;
    let mut scores = Vec::with_capacity(tokens.len());
    let mut values = Vec::with_capacity(tokens.len());
    for (e, &t) in tokens.iter().enumerate() {
        let k = tape.matmul(t, w_kc)?;
        values.push(tape.matmul(t, w_vc)?);
        let s = tape.row_dot(q, k)?;
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt())?;
        let prior = tape.col(log_w, e)?;
        scores.push(tape.add(s, prior)?);
    }
    let scores = tape.concat_cols(&scores)?;
    let attn = tape.softmax_rows(scores)?;
    let mut out = xw;
    for (e, &v) in values.iter().enumerate() {
        let a = tape.col(attn, e)?;
        let term = tape.mul_col(v, a)?;
        out = tape.add(out, term)?;
    }
    Ok(out)
}

/// Handles to the recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub logits: Var,
    /// Representation fed to the classifier.
    pub y: Var,
    pub gating: Option<Var>,
    /// Expert point matrices, one per expert.
    pub embeddings: Vec<(Curvature, Var)>,
    /// `(κ, W_e, b_e)` leaves for the regularizer.
    pub expert_params: Vec<(Curvature, Var, Var)>,
}

pub fn forward_var(
    tape: &mut Tape,
    params: &ModelParams,
    inputs: &GraphInputs,
    config: &TrainConfig,
) -> Result<ForwardVars> {
    let mut leaves = Leaves::new(params);
    let x = tape.constant(inputs.features.clone());
    if config.variant == VariantTag::Gcn {
        let mut h = x;
        for l in 0..config.gcn_depth - 1 {
            let w = leaves.get(tape, &gcn_name(l))?;
            let hw = tape.matmul(h, w)?;
            let ah = tape.spmm(inputs.adj.shared(), hw)?;
            h = tape.relu(ah)?;
        }
        let w = leaves.get(tape, &gcn_name(config.gcn_depth - 1))?;
        let hw = tape.matmul(h, w)?;
        let logits = tape.spmm(inputs.adj.shared(), hw)?;
        return Ok(ForwardVars {
            logits,
            y: h,
            gating: None,
            embeddings: Vec::new(),
            expert_params: Vec::new(),
        });
    }

    let w_in = leaves.get(tape, W_IN)?;
    let xw = tape.matmul(x, w_in)?;
    let mut gating = None;
    let mut embeddings = Vec::new();
    let mut expert_params = Vec::new();
    let fused = if config.variant == VariantTag::Rmoe {
        let desc = inputs
            .descriptors
            .as_ref()
            .ok_or_else(|| GeoError::Contract("rmoe forward needs topology descriptors".into()))?;
        let desc = tape.constant(desc.clone());
        let theta = leaves.get(tape, THETA_G)?;
        let w = gating_forward_var(tape, desc, theta)?;
        let ax = tape.constant(inputs.propagated.clone());
        let mut tokens = Vec::new();
        for (e, kappa) in config.expert_curvatures()?.into_iter().enumerate() {
            let we = leaves.get(tape, &expert_weight_name(e))?;
            let be = leaves.get(tape, &expert_bias_name(e))?;
            let z = expert_embed_var(tape, kappa, ax, we, be)?;
            tokens.push(log0_rows(tape, kappa, z)?);
            embeddings.push((kappa, z));
            expert_params.push((kappa, we, be));
        }
        let w_qc = leaves.get(tape, W_QC)?;
        let w_kc = leaves.get(tape, W_KC)?;
        let w_vc = leaves.get(tape, W_VC)?;
        gating = Some(w);
        cross_attention_fuse_var(tape, x, xw, &tokens, w, w_qc, w_kc, w_vc)?
    } else {
        xw
    };

    let w_q = leaves.get(tape, W_Q)?;
    let w_k = leaves.get(tape, W_K)?;
    let w_v = leaves.get(tape, W_V)?;
    let q = tape.matmul(fused, w_q)?;
    let k = tape.matmul(fused, w_k)?;
    let v = tape.matmul(fused, w_v)?;
    let (q, k) = qk_transform_var(tape, config.variant, q, k)?;
    let z0 = linear_attention_var(tape, q, k, v, config.beta_attn)?;

    let gcn: Vec<Var> = (0..config.gcn_depth)
        .map(|l| leaves.get(tape, &gcn_name(l)))
        .collect::<Result<_>>()?;
    let z = gcn_forward_var(tape, &inputs.adj, xw, &gcn)?;
    let y = ensemble_combine_var(tape, z, z0, config.alpha)?;
    let w_out = leaves.get(tape, W_OUT)?;
    let logits = tape.matmul(y, w_out)?;
    Ok(ForwardVars {
        logits,
        y,
        gating,
        embeddings,
        expert_params,
    })
}

/// Values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub y: Matrix,
    pub gating: Option<Matrix>,
    pub embeddings: Vec<ExpertEmbedding>,
}

pub fn forward(
    params: &ModelParams,
    inputs: &GraphInputs,
    config: &TrainConfig,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let fv = forward_var(&mut tape, params, inputs, config)?;
    Ok(ForwardOutput {
        logits: tape.value(fv.logits).clone(),
        y: tape.value(fv.y).clone(),
        gating: fv.gating.map(|g| tape.value(g).clone()),
        embeddings: fv
            .embeddings
            .iter()
            .enumerate()
            .map(|(e, &(kappa, z))| ExpertEmbedding {
                expert_id: e,
                kappa,
                points: tape.value(z).clone(),
            })
            .collect(),
    })
}

/// Per-term values of the composite objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub orth: f64,
    pub entropy: f64,
    pub regularizer: f64,
    pub link: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.cross_entropy,
            self.orth,
            self.entropy,
            self.regularizer,
            self.link,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={} ce={} orth={} entropy={} reg={} link={}",
            self.total, self.cross_entropy, self.orth, self.entropy, self.regularizer, self.link
        )
    }
}

/// Labeled nodes of `mask` with their class ids.
pub fn masked_targets(labels: &[i64], mask: &[bool]) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.len() != mask.len() {
        return Err(GeoError::Dimension(format!(
            "{} labels for a mask of {}",
            labels.len(),
            mask.len()
        )));
    }
    let (idx, cls): (Vec<usize>, Vec<usize>) = mask
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (&m, &l))| m && l >= 0)
        .map(|(i, (_, &l))| (i, l as usize))
        .unzip();
    if idx.is_empty() {
        return Err(GeoError::Contract(
            "loss mask selects no labeled node".into(),
        ));
    }
    Ok((idx, cls))
}

/// The orthogonality penalty belongs to the projected variants only.
fn uses_orth(config: &TrainConfig) -> bool {
    config.variant.projects_qk() && config.lambda_orth != 0.0
}

fn uses_moe(config: &TrainConfig) -> bool {
    config.variant == VariantTag::Rmoe
}

/// Everything besides the logits that the composite objective reads.
#[derive(Debug, Clone, Copy)]
pub struct LossAux<'a> {
    pub y: &'a Matrix,
    pub gating: Option<&'a Matrix>,
    pub experts: &'a [ExpertConfig],
    pub embeddings: &'a [ExpertEmbedding],
    pub link_pairs: Option<&'a LinkPairs>,
}

fn cross_entropy(logits: &Matrix, idx: &[usize], cls: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (&i, &c) in idx.iter().zip(cls) {
        let row = logits.row(i);
        if c >= row.len() {
            return Err(GeoError::Dimension(format!(
                "label {c} with {} logits",
                row.len()
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[c];
    }
    Ok(total / idx.len() as f64)
}

/// Mean masked cross-entropy plus the regularizers enabled by `config`.
pub fn composite_loss(
    logits: &Matrix,
    labels: &[i64],
    mask: &[bool],
    aux: &LossAux<'_>,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let (idx, cls) = masked_targets(labels, mask)?;
    let mut b = LossBreakdown {
        cross_entropy: cross_entropy(logits, &idx, &cls)?,
        ..Default::default()
    };
    if uses_orth(config) {
        b.orth = orth_penalty(aux.y, config.lambda_orth);
    }
    if uses_moe(config) {
        let w = aux
            .gating
            .ok_or_else(|| GeoError::Contract("rmoe loss needs gating weights".into()))?;
        if config.gamma_ent != 0.0 {
            b.entropy = config.gamma_ent * gating_entropy(w);
        }
        if config.gamma_reg != 0.0 {
            b.regularizer = config.gamma_reg * expert_regularizer(aux.experts)?;
        }
        if config.gamma_link != 0.0 {
            let pairs = aux
                .link_pairs
                .ok_or_else(|| GeoError::Contract("link loss enabled without pairs".into()))?;
            b.link = config.gamma_link * link_loss_on_pairs(pairs, w, aux.embeddings)?;
        }
    }
    b.total = b.cross_entropy + b.orth + b.entropy + b.regularizer + b.link;
    Ok(b)
}

/// Tape form of [`composite_loss`]; returns the total and its breakdown.
pub fn composite_loss_var(
    tape: &mut Tape,
    fv: &ForwardVars,
    labels: &[i64],
    mask: &[bool],
    link_pairs: Option<&LinkPairs>,
    config: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    let (idx, cls) = masked_targets(labels, mask)?;
    let (_, c) = tape.shape(fv.logits);
    let mut onehot = Matrix::zeros(idx.len(), c);
    for (r, &k) in cls.iter().enumerate() {
        if k >= c {
            return Err(GeoError::Dimension(format!("label {k} with {c} logits")));
        }
        onehot.set(r, k, 1.0);
    }
    let logp = tape.log_softmax_rows(fv.logits)?;
    let picked = tape.select_rows(logp, &idx)?;
    let onehot = tape.constant(onehot);
    let picked = tape.hadamard(picked, onehot)?;
    let total = tape.sum(picked)?;
    let ce = tape.scale(total, -1.0 / idx.len() as f64)?;

    let mut b = LossBreakdown {
        cross_entropy: tape.scalar(ce),
        ..Default::default()
    };
    let mut loss = ce;
    if uses_orth(config) {
        let t = orth_penalty_var(tape, fv.y, config.lambda_orth)?;
        b.orth = tape.scalar(t);
        loss = tape.add(loss, t)?;
    }
    if uses_moe(config) {
        let w = fv
            .gating
            .ok_or_else(|| GeoError::Contract("rmoe loss needs gating weights".into()))?;
        if config.gamma_ent != 0.0 {
            let h = gating_entropy_var(tape, w)?;
            let t = tape.scale(h, config.gamma_ent)?;
            b.entropy = tape.scalar(t);
            loss = tape.add(loss, t)?;
        }
        if config.gamma_reg != 0.0 {
            let r = expert_regularizer_var(tape, &fv.expert_params)?;
            let t = tape.scale(r, config.gamma_reg)?;
            b.regularizer = tape.scalar(t);
            loss = tape.add(loss, t)?;
        }
        if config.gamma_link != 0.0 {
            let pairs = link_pairs
                .ok_or_else(|| GeoError::Contract("link loss enabled without pairs".into()))?;
            let l = link_loss_var(tape, pairs, w, &fv.embeddings)?;
            let t = tape.scale(l, config.gamma_link)?;
            b.link = tape.scalar(t);
            loss = tape.add(loss, t)?;
        }
    }
    b.total = tape.scalar(loss);
    Ok((loss, b))
}
