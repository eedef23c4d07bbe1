//! Riemannian mixture-of-experts front end: curvature-tagged graph encoders,
//! topology-driven gating, gated tangent fusion, aligned pairwise distances
//! and the auxiliary losses that act on them.
//!
//! Expert `e` maps node `v` to `z_v^e = b_e ⊕_κ exp0(clip(tanh(ÂXW_e)[v]))`.
//! Gating weights are `softmax(D·θ_g)` over per-node topology descriptors `D`.

#[cfg(test)]
mod tests;

use std::collections::{BTreeSet, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GeoError, Result};
use crate::graphdata::{Graph, NormalizedAdjacency};
use crate::manifolds::{
    dist, dist_sq_rows, exp0, exp0_rows, log0, log0_rows, mobius_add, mobius_add_rows,
    project_to_domain, Curvature, ManifoldPoint, DOMAIN_MARGIN,
};
use crate::numerics::{softmax_rows, softplus, Matrix, ScalarFn, Tape, Var, LN_EPS};

/// Number of topology descriptor features.
pub const DESCRIPTOR_DIM: usize = 4;
/// Fermi–Dirac decoder radius.
pub const LINK_R: f64 = 2.0;
/// Fermi–Dirac decoder temperature.
pub const LINK_T: f64 = 1.0;

/// One curvature-tagged encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    pub expert_id: usize,
    pub kappa: Curvature,
    /// `d × d_e` encoder weights.
    pub weights: Matrix,
    pub bias: ManifoldPoint,
}

/// Descriptors, gating parameters and the resulting routing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingState {
    pub descriptors: Matrix,
    pub theta: Matrix,
    pub weights: Matrix,
}

impl GatingState {
    pub fn new(descriptors: Matrix, theta: Matrix) -> Result<Self> {
        let weights = gating_forward(&descriptors, &theta)?;
        Ok(Self {
            descriptors,
            theta,
            weights,
        })
    }
}

/// Points of one expert, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertEmbedding {
    pub expert_id: usize,
    pub kappa: Curvature,
    pub points: Matrix,
}

impl ExpertEmbedding {
    pub fn point(&self, v: usize) -> ManifoldPoint {
        project_to_domain(self.kappa, self.points.row(v), DOMAIN_MARGIN)
    }
}

/// Largest tangent norm fed to `exp0`: `0.85/√|κ|` for κ<0, `0.45π/√κ` for
/// κ>0, unbounded when flat.
pub fn tangent_clip(kappa: Curvature) -> Option<f64> {
    let k = kappa.value();
    if k < 0.0 {
        Some(0.85 / (-k).sqrt())
    } else if k > 0.0 {
        Some(0.45 * std::f64::consts::PI / k.sqrt())
    } else {
        None
    }
}

/// Clustering coefficient of `v`; zero below degree 2.
fn clustering(g: &Graph, v: usize) -> f64 {
    let nb = g.neighbors(v);
    let d = nb.len();
    if d < 2 {
        return 0.0;
    }
    let mut closed = 0usize;
    for (i, &a) in nb.iter().enumerate() {
        for &b in &nb[i + 1..] {
            if g.has_edge(a, b) {
                closed += 1;
            }
        }
    }
    2.0 * closed as f64 / (d * (d - 1)) as f64
}

/// `[ln(1+deg), clustering, ln(1+mean neighbor degree), n₂/(1+n₁)]` where
/// `n₁`, `n₂` count the nodes at distance exactly 1 and 2.
pub fn topology_descriptor(g: &Graph, v: usize) -> [f64; DESCRIPTOR_DIM] {
    let nb = g.neighbors(v);
    let deg = nb.len();
    if deg == 0 {
        return [0.0; DESCRIPTOR_DIM];
    }
    let mean_nb_deg = nb.iter().map(|&u| g.degree(u)).sum::<usize>() as f64 / deg as f64;
    let mut two_hop = BTreeSet::new();
    for &u in nb {
        for &w in g.neighbors(u) {
            if w != v && nb.binary_search(&w).is_err() {
                two_hop.insert(w);
            }
        }
    }
    [
        (1.0 + deg as f64).ln(),
        clustering(g, v),
        (1.0 + mean_nb_deg).ln(),
        two_hop.len() as f64 / (1.0 + deg as f64),
    ]
}

/// BFS ball of radius `hops` around `v`. When it holds more than `cap`
/// nodes, `v` is kept together with a seeded uniform sample of `cap − 1`
/// others. `v` comes first, the rest ascending.
pub fn sample_local_subgraph(
    g: &Graph,
    v: usize,
    hops: usize,
    cap: usize,
    seed: u64,
) -> Vec<usize> {
    let cap = cap.max(1);
    let mut seen = BTreeSet::from([v]);
    let mut frontier = VecDeque::from([(v, 0usize)]);
    while let Some((u, d)) = frontier.pop_front() {
        if d == hops {
            continue;
        }
        for &w in g.neighbors(u) {
            if seen.insert(w) {
                frontier.push_back((w, d + 1));
            }
        }
    }
    seen.remove(&v);
    let mut others: Vec<usize> = seen.into_iter().collect();
    if others.len() + 1 > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = index::sample(&mut rng, others.len(), cap - 1)
            .into_iter()
            .map(|i| others[i])
            .collect();
        picked.sort_unstable();
        others = picked;
    }
    let mut out = Vec::with_capacity(others.len() + 1);
    out.push(v);
    out.extend(others);
    out
}

/// Descriptor of every node computed on its sampled ball, with each column
/// standardized to zero mean and unit variance (constant columns are only
/// centered).
pub fn descriptor_matrix(g: &Graph, hops: usize, cap: usize, seed: u64) -> Result<Matrix> {
    let n = g.num_nodes();
    let mut d = Matrix::zeros(n, DESCRIPTOR_DIM);
    for v in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(v as u64);
        let ball = sample_local_subgraph(g, v, hops, cap, rng.gen());
        let sub = g.induced_subgraph(&ball)?;
        d.row_mut(v).copy_from_slice(&topology_descriptor(&sub, 0));
    }
    for c in 0..DESCRIPTOR_DIM {
        let mean = (0..n).map(|r| d.get(r, c)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (d.get(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 1e-24 { var.sqrt() } else { 1.0 };
        for r in 0..n {
            d.set(r, c, (d.get(r, c) - mean) / sd);
        }
    }
    Ok(d)
}

/// `softmax_rows(D·θ_g)`
pub fn gating_forward(descriptors: &Matrix, theta: &Matrix) -> Result<Matrix> {
    Ok(softmax_rows(&descriptors.matmul(theta)?))
}

pub fn gating_forward_var(tape: &mut Tape, descriptors: Var, theta: Var) -> Result<Var> {
    let logits = tape.matmul(descriptors, theta)?;
    tape.softmax_rows(logits)
}

fn clip_rows(m: &mut Matrix, limit: Option<f64>) {
    let Some(limit) = limit else { return };
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > limit {
            row.iter_mut().for_each(|x| *x *= limit / n);
        }
    }
}

/// Embeds every node with one expert. `ax` is the propagated feature
/// matrix `Â·X`.
pub fn expert_embed_propagated(e: &ExpertConfig, ax: &Matrix) -> Result<ExpertEmbedding> {
    let mut h = ax.matmul(&e.weights)?.map(f64::tanh);
    clip_rows(&mut h, tangent_clip(e.kappa));
    let mut points = Matrix::zeros(h.rows(), h.cols());
    for r in 0..h.rows() {
        let t = exp0(e.kappa, h.row(r))?;
        let z = mobius_add(e.kappa, e.bias.coords(), t.coords())?;
        points.row_mut(r).copy_from_slice(z.coords());
    }
    Ok(ExpertEmbedding {
        expert_id: e.expert_id,
        kappa: e.kappa,
        points,
    })
}

pub fn expert_embed(
    e: &ExpertConfig,
    adj: &NormalizedAdjacency,
    x: &Matrix,
) -> Result<ExpertEmbedding> {
    expert_embed_propagated(e, &adj.matrix().mul_dense(x)?)
}

/// Tape form of [`expert_embed_propagated`]; `bias` is a `1 × d_e` row.
pub fn expert_embed_var(
    tape: &mut Tape,
    kappa: Curvature,
    ax: Var,
    weights: Var,
    bias: Var,
) -> Result<Var> {
    let n = tape.shape(ax).0;
    let h = tape.matmul(ax, weights)?;
    let h = tape.tanh(h)?;
    let h = match tangent_clip(kappa) {
        Some(limit) => tape.clip_row_norm(h, limit)?,
        None => h,
    };
    let t = exp0_rows(tape, kappa, h)?;
    let b = tape.broadcast_row(bias, n)?;
    mobius_add_rows(tape, kappa, b, t)
}

/// `z_v = Σ_e W[v,e]·log0(κ_e, z_v^e)`
pub fn fuse_tangent(w: &Matrix, embeddings: &[ExpertEmbedding]) -> Result<Matrix> {
    check_experts(w, embeddings.len())?;
    let first = embeddings
        .first()
        .ok_or_else(|| GeoError::Contract("fuse_tangent needs at least one expert".into()))?;
    let (n, d) = first.points.shape();
    let mut out = Matrix::zeros(n, d);
    for (e, emb) in embeddings.iter().enumerate() {
        if emb.points.shape() != (n, d) {
            return Err(GeoError::Dimension(
                "experts disagree on embedding shape".into(),
            ));
        }
        for v in 0..n {
            let t = log0(emb.kappa, emb.points.row(v))?;
            let wv = w.get(v, e);
            for (o, x) in out.row_mut(v).iter_mut().zip(t) {
                *o += wv * x;
            }
        }
    }
    Ok(out)
}

pub fn fuse_tangent_var(tape: &mut Tape, w: Var, embeddings: &[(Curvature, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (e, &(kappa, z)) in embeddings.iter().enumerate() {
        let t = log0_rows(tape, kappa, z)?;
        let we = tape.col(w, e)?;
        let term = tape.mul_col(t, we)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| GeoError::Contract("fuse_tangent needs at least one expert".into()))
}

fn check_experts(w: &Matrix, k: usize) -> Result<()> {
    if w.cols() != k {
        return Err(GeoError::Dimension(format!(
            "gating weights have {} columns for {k} experts",
            w.cols()
        )));
    }
    Ok(())
}

/// Normalized geometric mean of the two gating rows.
pub fn aligned_pair_weights(w: &Matrix, u: usize, v: usize) -> Vec<f64> {
    let raw: Vec<f64> = w
        .row(u)
        .iter()
        .zip(w.row(v))
        .map(|(a, b)| (a * b).sqrt())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// `Σ_e w_{(u,v),e}·d_κe(z_u^e, z_v^e)²`
pub fn pair_distance_sq(
    u: usize,
    v: usize,
    w: &Matrix,
    embeddings: &[ExpertEmbedding],
) -> Result<f64> {
    check_experts(w, embeddings.len())?;
    let aligned = aligned_pair_weights(w, u, v);
    let mut total = 0.0;
    for (a, emb) in aligned.iter().zip(embeddings) {
        let d = dist(emb.kappa, emb.points.row(u), emb.points.row(v))?;
        total += a * d * d;
    }
    Ok(total)
}

/// Mean row entropy `−Σ W ln(W + 1e-12)`.
pub fn gating_entropy(w: &Matrix) -> f64 {
    let total: f64 = w.data().iter().map(|&p| -p * (p + LN_EPS).ln()).sum();
    total / w.rows() as f64
}

pub fn gating_entropy_var(tape: &mut Tape, w: Var) -> Result<Var> {
    let n = tape.shape(w).0 as f64;
    let lw = tape.map(w, ScalarFn::LnEps)?;
    let plogp = tape.hadamard(w, lw)?;
    let s = tape.sum(plogp)?;
    tape.scale(s, -1.0 / n)
}

/// `Σ_e ‖W_e‖²_F + Σ_e ‖log0(κ_e, b_e)‖²`
pub fn expert_regularizer(experts: &[ExpertConfig]) -> Result<f64> {
    let mut total = 0.0;
    for e in experts {
        total += e.weights.frobenius_sq();
        total += log0(e.kappa, e.bias.coords())?
            .iter()
            .map(|x| x * x)
            .sum::<f64>();
    }
    Ok(total)
}

/// Tape form of [`expert_regularizer`] over `(κ, W_e, b_e)` triples.
pub fn expert_regularizer_var(tape: &mut Tape, experts: &[(Curvature, Var, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(kappa, w, b) in experts {
        let fw = tape.frobenius_sq(w)?;
        let tb = log0_rows(tape, kappa, b)?;
        let fb = tape.frobenius_sq(tb)?;
        let term = tape.add(fw, fb)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| GeoError::Contract("expert regularizer needs at least one expert".into()))
}

/// Positive (true edge) and negative (sampled non-edge) node pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkPairs {
    pub us: Vec<usize>,
    pub vs: Vec<usize>,
    pub positive: Vec<bool>,
}

impl LinkPairs {
    pub fn len(&self) -> usize {
        self.us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.us.is_empty()
    }
}

/// Every undirected edge plus `neg_ratio` seeded non-edges per edge.
pub fn sample_link_pairs(g: &Graph, neg_ratio: usize, seed: u64) -> Result<LinkPairs> {
    if neg_ratio < 1 {
        return Err(GeoError::Contract("neg_ratio must be at least 1".into()));
    }
    let n = g.num_nodes();
    let mut pairs = LinkPairs {
        us: Vec::new(),
        vs: Vec::new(),
        positive: Vec::new(),
    };
    for (u, v) in g.edges() {
        pairs.us.push(u);
        pairs.vs.push(v);
        pairs.positive.push(true);
    }
    let positives = pairs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..positives * neg_ratio {
        for _ in 0..100 {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b && !g.has_edge(a, b) {
                pairs.us.push(a);
                pairs.vs.push(b);
                pairs.positive.push(false);
                break;
            }
        }
    }
    Ok(pairs)
}

/// Binary cross-entropy of `p = 1/(1+exp((d²−r)/t))`: `softplus(x)` for
/// edges and `softplus(−x)` for non-edges, with `x = (d²−r)/t`.
pub fn link_bce(d2: f64, positive: bool) -> f64 {
    let x = (d2 - LINK_R) / LINK_T;
    if positive {
        softplus(x)
    } else {
        softplus(-x)
    }
}

/// Mean Fermi–Dirac cross-entropy over all edges and seeded negatives.
pub fn link_reconstruction_loss(
    g: &Graph,
    w: &Matrix,
    embeddings: &[ExpertEmbedding],
    neg_ratio: usize,
    seed: u64,
) -> Result<f64> {
    let pairs = sample_link_pairs(g, neg_ratio, seed)?;
    link_loss_on_pairs(&pairs, w, embeddings)
}

pub fn link_loss_on_pairs(
    pairs: &LinkPairs,
    w: &Matrix,
    embeddings: &[ExpertEmbedding],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(GeoError::Contract(
            "link loss needs at least one pair".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..pairs.len() {
        let d2 = pair_distance_sq(pairs.us[i], pairs.vs[i], w, embeddings)?;
        total += link_bce(d2, pairs.positive[i]);
    }
    Ok(total / pairs.len() as f64)
}

/// Tape form of [`link_loss_on_pairs`].
pub fn link_loss_var(
    tape: &mut Tape,
    pairs: &LinkPairs,
    w: Var,
    embeddings: &[(Curvature, Var)],
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(GeoError::Contract(
            "link loss needs at least one pair".into(),
        ));
    }
    let wu = tape.select_rows(w, &pairs.us)?;
    let wv = tape.select_rows(w, &pairs.vs)?;
    let prod = tape.hadamard(wu, wv)?;
    let root = tape.map(prod, ScalarFn::Sqrt)?;
    let norm = tape.row_sum(root)?;
    let aligned = tape.div_col(root, norm)?;
    let mut dists = Vec::with_capacity(embeddings.len());
    for &(kappa, z) in embeddings {
        let zu = tape.select_rows(z, &pairs.us)?;
        let zv = tape.select_rows(z, &pairs.vs)?;
        dists.push(dist_sq_rows(tape, kappa, zu, zv)?);
    }
    let dists = tape.concat_cols(&dists)?;
    let weighted = tape.hadamard(aligned, dists)?;
    let d2 = tape.row_sum(weighted)?;
    let x = tape.add_scalar(d2, -LINK_R)?;
    let x = tape.scale(x, 1.0 / LINK_T)?;
    let signs: Vec<f64> = pairs
        .positive
        .iter()
        .map(|&p| if p { 1.0 } else { -1.0 })
        .collect();
    let signs = tape.constant(Matrix::column(&signs));
    let x = tape.hadamard(x, signs)?;
    let bce = tape.map(x, ScalarFn::Softplus)?;
    tape.mean(bce)
}
