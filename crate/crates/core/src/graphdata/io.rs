use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, SplitMasks};
use crate::error::{GeoError, Result};
use crate::numerics::Matrix;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Splits {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path)
        .map_err(|e| GeoError::Load(format!("cannot read {}: {e}", path.display())))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_index(tok: &str, file: &str, line: usize) -> Result<usize> {
    tok.trim()
        .parse()
        .map_err(|_| GeoError::Load(format!("{file}:{line}: bad node index {tok:?}")))
}

/// Reads a dataset directory (`meta.json`, `edges.tsv`, `features.csv`,
/// `labels.tsv`, `splits.json`).
pub fn load_graph(dir: &Path) -> Result<(Graph, SplitMasks)> {
    let meta: Meta = serde_json::from_str(&read(dir, "meta.json")?)
        .map_err(|e| GeoError::Load(format!("meta.json: {e}")))?;
    let n = meta.num_nodes;

    let mut edges = Vec::new();
    for (line, l) in content_lines(&read(dir, "edges.tsv")?) {
        let mut parts = l.split('\t');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(GeoError::Load(format!(
                "edges.tsv:{line}: expected two tab-separated indices"
            )));
        };
        let (u, v) = (
            parse_index(u, "edges.tsv", line)?,
            parse_index(v, "edges.tsv", line)?,
        );
        if u >= n || v >= n {
            return Err(GeoError::Load(format!(
                "edges.tsv:{line}: edge ({u}, {v}) outside [0, {n})"
            )));
        }
        edges.push((u, v));
    }

    let mut data = Vec::with_capacity(n * meta.num_features);
    let mut rows = 0;
    for (line, l) in content_lines(&read(dir, "features.csv")?) {
        let before = data.len();
        for tok in l.split(',') {
            let x: f64 = tok
                .trim()
                .parse()
                .map_err(|_| GeoError::Load(format!("features.csv:{line}: bad number {tok:?}")))?;
            if !x.is_finite() {
                return Err(GeoError::Load(format!(
                    "features.csv:{line}: non-finite value"
                )));
            }
            data.push(x);
        }
        if data.len() - before != meta.num_features {
            return Err(GeoError::Load(format!(
                "features.csv:{line}: {} columns, meta.json says {}",
                data.len() - before,
                meta.num_features
            )));
        }
        rows += 1;
    }
    if rows != n {
        return Err(GeoError::Load(format!(
            "features.csv has {rows} rows, meta.json says {n}"
        )));
    }
    let features = Matrix::from_vec(n, meta.num_features, data)?;

    let mut labels = Vec::with_capacity(n);
    for (line, l) in content_lines(&read(dir, "labels.tsv")?) {
        let y: i64 = l
            .parse()
            .map_err(|_| GeoError::Load(format!("labels.tsv:{line}: bad label {l:?}")))?;
        labels.push(y);
    }
    if labels.len() != n {
        return Err(GeoError::Load(format!(
            "labels.tsv has {} rows, meta.json says {n}",
            labels.len()
        )));
    }

    let graph = Graph::from_edges(n, &edges, features, labels, meta.num_classes)?;
    let splits: Splits = serde_json::from_str(&read(dir, "splits.json")?)
        .map_err(|e| GeoError::Load(format!("splits.json: {e}")))?;
    let masks = SplitMasks::from_indices(&graph, &splits.train, &splits.val, &splits.test)?;
    Ok((graph, masks))
}

/// Writes `g` and `masks` in the format read by [`load_graph`]. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_dataset(dir: &Path, g: &Graph, masks: &SplitMasks) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        num_nodes: g.num_nodes(),
        num_features: g.num_features(),
        num_classes: g.num_classes(),
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;

    let mut edges = String::new();
    for (u, v) in g.edges() {
        writeln!(edges, "{u}\t{v}").expect("writing to a String");
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let mut feats = String::new();
    for r in 0..g.num_nodes() {
        for (j, x) in g.features().row(r).iter().enumerate() {
            if j > 0 {
                feats.push(',');
            }
            write!(feats, "{x:?}").expect("writing to a String");
        }
        feats.push('\n');
    }
    fs::write(dir.join("features.csv"), feats)?;

    let mut labels = String::new();
    for y in g.labels() {
        writeln!(labels, "{y}").expect("writing to a String");
    }
    fs::write(dir.join("labels.tsv"), labels)?;

    let splits = Splits {
        train: SplitMasks::indices(&masks.train),
        val: SplitMasks::indices(&masks.val),
        test: SplitMasks::indices(&masks.test),
    };
    fs::write(
        dir.join("splits.json"),
        serde_json::to_string(&splits)? + "\n",
    )?;
    Ok(())
}
