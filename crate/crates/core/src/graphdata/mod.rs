//! Undirected attributed graphs in CSR form, dataset directories, synthetic
//! generators, stratified splits and classification metrics.

mod io;
mod metrics;
mod split;
mod synthetic;

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{GeoError, Result};
use crate::numerics::{CsrMatrix, Matrix};

pub use io::{load_graph, write_dataset};
pub use metrics::{compute_metrics, Metrics};
pub use split::split_nodes;
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Label value of a node that carries no class.
pub const UNLABELED: i64 = -1;

/// Immutable undirected graph with dense node features.
///
/// Neighbor lists are sorted, symmetric, free of duplicates and self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Matrix,
    labels: Vec<i64>,
    num_classes: usize,
}

impl Graph {
    /// Builds the symmetric closure of `edges`. Duplicate pairs (in either
    /// direction) collapse to one edge and self-loops are dropped.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<i64>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(GeoError::Load(format!(
                "feature matrix has {} rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if labels.len() != num_nodes {
            return Err(GeoError::Load(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some((v, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l < UNLABELED || l >= num_classes as i64)
        {
            return Err(GeoError::Load(format!(
                "label {l} of node {v} outside [-1, {num_classes})"
            )));
        }
        let mut adj = vec![BTreeSet::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GeoError::Load(format!(
                    "edge ({u}, {v}) references a node outside [0, {num_nodes})"
                )));
            }
            if u != v {
                adj[u].insert(v);
                adj[v].insert(u);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        let mut targets = Vec::new();
        for nb in adj {
            targets.extend(nb);
            offsets.push(targets.len());
        }
        Ok(Self {
            offsets,
            targets,
            features,
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        usize::try_from(self.labels[v]).ok()
    }

    /// Subgraph on `nodes` (in the given order), keeping edges with both
    /// endpoints inside. Node `nodes[i]` becomes node `i`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            if v >= self.num_nodes() {
                return Err(GeoError::Dimension(format!(
                    "node {v} outside graph of {} nodes",
                    self.num_nodes()
                )));
            }
            local[v] = i;
        }
        let mut edges = Vec::new();
        for (i, &v) in nodes.iter().enumerate() {
            for &w in self.neighbors(v) {
                let j = local[w];
                if j != usize::MAX && i < j {
                    edges.push((i, j));
                }
            }
        }
        let labels = nodes.iter().map(|&v| self.labels[v]).collect();
        Graph::from_edges(
            nodes.len(),
            &edges,
            self.features.select_rows(nodes),
            labels,
            self.num_classes,
        )
    }
}

/// Train/validation/test node selections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    /// Masks from index lists, validated against `g`.
    pub fn from_indices(g: &Graph, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let n = g.num_nodes();
        let mask = |idx: &[usize], name: &str| -> Result<Vec<bool>> {
            let mut m = vec![false; n];
            for &v in idx {
                if v >= n {
                    return Err(GeoError::Load(format!(
                        "{name} split index {v} outside [0, {n})"
                    )));
                }
                m[v] = true;
            }
            Ok(m)
        };
        let masks = Self {
            train: mask(train, "train")?,
            val: mask(val, "val")?,
            test: mask(test, "test")?,
        };
        masks.validate(g)?;
        Ok(masks)
    }

    pub fn validate(&self, g: &Graph) -> Result<()> {
        let n = g.num_nodes();
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(GeoError::Load(format!(
                "split masks do not cover {n} nodes"
            )));
        }
        for v in 0..n {
            let hits = self.train[v] as u8 + self.val[v] as u8 + self.test[v] as u8;
            if hits > 1 {
                return Err(GeoError::Load(format!(
                    "node {v} appears in more than one split"
                )));
            }
            if hits == 1 && g.label(v).is_none() {
                return Err(GeoError::Load(format!("split node {v} is unlabeled")));
            }
        }
        Ok(())
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// `D̃^{−1/2}(A+I)D̃^{−1/2}` in CSR form, shared cheaply between tapes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    csr: Arc<CsrMatrix>,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn shared(&self) -> &Arc<CsrMatrix> {
        &self.csr
    }

    pub fn num_nodes(&self) -> usize {
        self.csr.n_rows
    }
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt())
        .collect();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    let mut indices = Vec::with_capacity(g.targets.len() + n);
    let mut values = Vec::with_capacity(g.targets.len() + n);
    for u in 0..n {
        let nb = g.neighbors(u);
        let split = nb.partition_point(|&w| w < u);
        let cols = nb[..split]
            .iter()
            .chain(std::iter::once(&u))
            .chain(&nb[split..]);
        for &w in cols {
            indices.push(w);
            values.push(inv_sqrt[u] * inv_sqrt[w]);
        }
        offsets.push(indices.len());
    }
    NormalizedAdjacency {
        csr: Arc::new(CsrMatrix {
            n_rows: n,
            n_cols: n,
            offsets,
            indices,
            values,
        }),
    }
}
