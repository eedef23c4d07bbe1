use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, SplitMasks};
use crate::error::{GeoError, Result};

/// Stratified train/val/test split. Each class is shuffled with a seeded
/// generator and cut at the rounded fractions; leftovers stay unassigned.
pub fn split_nodes(g: &Graph, fractions: (f64, f64, f64), seed: u64) -> Result<SplitMasks> {
    let (ft, fv, fs) = fractions;
    let valid = [ft, fv, fs].iter().all(|f| f.is_finite() && *f > 0.0);
    if !valid || ft + fv + fs > 1.0 + 1e-12 {
        return Err(GeoError::Split(format!(
            "fractions must be positive and sum to at most 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let n = g.num_nodes();
    let mut by_class = vec![Vec::new(); g.num_classes()];
    for v in 0..n {
        if let Some(c) = g.label(v) {
            by_class[c].push(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (c, mut nodes) in by_class.into_iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < 3 {
            return Err(GeoError::Split(format!(
                "class {c} has {} labeled nodes, need at least 3",
                nodes.len()
            )));
        }
        nodes.shuffle(&mut rng);
        let m = nodes.len();
        let n_train = ((ft * m as f64).round() as usize).clamp(1, m - 2);
        let n_val = ((fv * m as f64).round() as usize).clamp(1, m - n_train - 1);
        let n_test = ((fs * m as f64).round() as usize).clamp(1, m - n_train - n_val);
        for &v in &nodes[..n_train] {
            masks.train[v] = true;
        }
        for &v in &nodes[n_train..n_train + n_val] {
            masks.val[v] = true;
        }
        for &v in &nodes[n_train + n_val..n_train + n_val + n_test] {
            masks.test[v] = true;
        }
    }
    Ok(masks)
}
