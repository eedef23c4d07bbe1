use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{split_nodes, Graph, SplitMasks};
use crate::error::{GeoError, Result};
use crate::numerics::Matrix;

const MAX_NODES: usize = 200_000;

fn default_noise() -> f64 {
    0.1
}

fn default_sbm_dim() -> usize {
    16
}

fn default_ring_dim() -> usize {
    8
}

/// Parameters of a synthetic graph family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticSpec {
    /// Complete `branching`-ary tree of the given depth. Features are a depth
    /// one-hot plus Gaussian noise; the label separates the upper half of the
    /// levels from the lower half.
    Tree {
        branching: usize,
        depth: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// Stochastic block model with Gaussian block-mean features.
    Sbm {
        block_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
        #[serde(default = "default_sbm_dim")]
        feature_dim: usize,
    },
    /// `count` cliques joined in a ring by single bridge edges; label is the
    /// clique id and features are pure noise.
    CliqueRing {
        clique_size: usize,
        count: usize,
        #[serde(default = "default_ring_dim")]
        feature_dim: usize,
    },
}

impl SyntheticSpec {
    fn validate(&self) -> Result<usize> {
        let bad = |msg: String| Err(GeoError::Config(msg));
        match self {
            SyntheticSpec::Tree {
                branching,
                depth,
                noise,
            } => {
                if *branching < 2 || *depth < 2 {
                    return bad(format!(
                        "tree needs branching >= 2 and depth >= 2, got b={branching} h={depth}"
                    ));
                }
                if !noise.is_finite() || *noise < 0.0 {
                    return bad(format!(
                        "tree noise must be a finite non-negative number, got {noise}"
                    ));
                }
                let mut n: usize = 0;
                let mut level: usize = 1;
                for _ in 0..=*depth {
                    n = n.saturating_add(level);
                    level = level.saturating_mul(*branching);
                }
                Ok(n)
            }
            SyntheticSpec::Sbm {
                block_sizes,
                p_in,
                p_out,
                feature_dim,
            } => {
                if block_sizes.is_empty() || block_sizes.iter().any(|&s| s < 3) {
                    return bad("sbm needs at least one block, each of size >= 3".into());
                }
                for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
                    if !(0.0..=1.0).contains(p) {
                        return bad(format!("sbm {name} must lie in [0, 1], got {p}"));
                    }
                }
                if *feature_dim == 0 {
                    return bad("sbm feature_dim must be positive".into());
                }
                Ok(block_sizes.iter().fold(0usize, |a, &s| a.saturating_add(s)))
            }
            SyntheticSpec::CliqueRing {
                clique_size,
                count,
                feature_dim,
            } => {
                if *clique_size < 3 || *count < 2 || *feature_dim == 0 {
                    return bad(format!(
                        "clique_ring needs clique_size >= 3, count >= 2, feature_dim >= 1, got {clique_size}/{count}/{feature_dim}"
                    ));
                }
                Ok(clique_size.saturating_mul(*count))
            }
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generates a labeled graph with a stratified 60/20/20 split.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Graph, SplitMasks)> {
    let n = spec.validate()?;
    if n > MAX_NODES {
        return Err(GeoError::Config(format!(
            "synthetic graph would have {n} nodes (limit {MAX_NODES})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    let graph = match spec {
        SyntheticSpec::Tree {
            branching,
            depth,
            noise,
        } => {
            let b = *branching;
            let mut node_depth = vec![0usize; n];
            for v in 1..n {
                let parent = (v - 1) / b;
                node_depth[v] = node_depth[parent] + 1;
                edges.push((parent, v));
            }
            let mut features = Matrix::zeros(n, depth + 1);
            for (v, &d) in node_depth.iter().enumerate() {
                for x in features.row_mut(v) {
                    *x = noise * gaussian(&mut rng);
                }
                features.set(v, d, features.get(v, d) + 1.0);
            }
            let labels = node_depth
                .iter()
                .map(|&d| i64::from(d > depth / 2))
                .collect();
            Graph::from_edges(n, &edges, features, labels, 2)?
        }
        SyntheticSpec::Sbm {
            block_sizes,
            p_in,
            p_out,
            feature_dim,
        } => {
            let block: Vec<usize> = block_sizes
                .iter()
                .enumerate()
                .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
                .collect();
            for u in 0..n {
                for v in u + 1..n {
                    let p = if block[u] == block[v] { *p_in } else { *p_out };
                    if rng.gen::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            let means: Vec<Vec<f64>> = (0..block_sizes.len())
                .map(|_| (0..*feature_dim).map(|_| gaussian(&mut rng)).collect())
                .collect();
            let mut features = Matrix::zeros(n, *feature_dim);
            for v in 0..n {
                for (x, m) in features.row_mut(v).iter_mut().zip(&means[block[v]]) {
                    *x = m + gaussian(&mut rng);
                }
            }
            let labels = block.iter().map(|&b| b as i64).collect();
            Graph::from_edges(n, &edges, features, labels, block_sizes.len())?
        }
        SyntheticSpec::CliqueRing {
            clique_size,
            count,
            feature_dim,
        } => {
            let s = *clique_size;
            for c in 0..*count {
                let base = c * s;
                for i in 0..s {
                    for j in i + 1..s {
                        edges.push((base + i, base + j));
                    }
                }
                let next = ((c + 1) % count) * s;
                edges.push((base + s - 1, next));
            }
            let mut features = Matrix::zeros(n, *feature_dim);
            for x in features.data_mut() {
                *x = gaussian(&mut rng);
            }
            let labels = (0..n).map(|v| (v / s) as i64).collect();
            Graph::from_edges(n, &edges, features, labels, *count)?
        }
    };
    let masks = split_nodes(&graph, (0.6, 0.2, 0.2), seed.wrapping_add(1))?;
    Ok((graph, masks))
}
