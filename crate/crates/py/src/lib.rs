//! Python module `geoformer`.
//!
//! Points and matrices cross the boundary as lists of floats and lists of
//! rows. Configs, generator specs and metrics travel as JSON strings.

use std::path::PathBuf;

use geoformer::backbone::AttentionInputs;
use geoformer::cli::CliConfig;
use geoformer::graphdata::{self, SplitMasks, SyntheticSpec};
use geoformer::manifolds::{self, Curvature, DOMAIN_MARGIN};
use geoformer::model::{self, evaluate, ModelParams};
use geoformer::numerics::Matrix;
use geoformer::selftest::{run_suite, Suite};
use geoformer::GeoError;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(geoformer, GeoformerError, PyException);

/// Config and domain problems raise `ValueError`; everything else raises
/// `GeoformerError`.
fn to_py(e: GeoError) -> PyErr {
    match e {
        GeoError::Config(_) | GeoError::Domain(_) | GeoError::Dimension(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => GeoformerError::new_err(other.to_string()),
    }
}

fn kappa(k: f64) -> PyResult<Curvature> {
    Curvature::new(k).map_err(to_py)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(to_py)
}

#[pyfunction]
fn exp0(k: f64, v: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(manifolds::exp0(kappa(k)?, &v).map_err(to_py)?.into_coords())
}

#[pyfunction]
fn log0(k: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
    manifolds::log0(kappa(k)?, &x).map_err(to_py)
}

#[pyfunction]
fn mobius_add(k: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(manifolds::mobius_add(kappa(k)?, &x, &y)
        .map_err(to_py)?
        .into_coords())
}

#[pyfunction]
fn dist(k: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    manifolds::dist(kappa(k)?, &x, &y).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (k, x, margin = DOMAIN_MARGIN))]
fn project_to_domain(k: f64, x: Vec<f64>, margin: f64) -> PyResult<Vec<f64>> {
    Ok(manifolds::project_to_domain(kappa(k)?, &x, margin).into_coords())
}

#[pyfunction]
fn stiefel_project(m: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(manifolds::stiefel_project(&matrix(&m)?)
        .map_err(to_py)?
        .matrix()
        .to_rows())
}

#[pyfunction]
fn grassmann_project(m: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(manifolds::grassmann_project(&matrix(&m)?)
        .map_err(to_py)?
        .basis
        .matrix()
        .to_rows())
}

/// `‖MᵀM − I‖_F`
#[pyfunction]
fn orth_residual(m: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(manifolds::orth_residual(&matrix(&m)?))
}

#[pyfunction]
#[pyo3(signature = (q, k, v, beta = 0.5))]
fn linear_attention(
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    beta: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let inputs =
        AttentionInputs::new(matrix(&q)?, matrix(&k)?, matrix(&v)?, beta).map_err(to_py)?;
    Ok(geoformer::backbone::linear_attention(&inputs)
        .map_err(to_py)?
        .to_rows())
}

/// Runs one suite ("geometry", "attention" or "gradcheck") and returns
/// `(passed, report)`.
#[pyfunction]
fn selftest(suite: &str) -> PyResult<(bool, String)> {
    let suite: Suite = suite.parse().map_err(to_py)?;
    let report = run_suite(suite).map_err(to_py)?;
    Ok((report.passed(), report.render()))
}

/// A graph with its train/val/test split.
#[pyclass(module = "geoformer")]
pub struct Dataset {
    graph: graphdata::Graph,
    masks: SplitMasks,
}

#[pymethods]
impl Dataset {
    /// Reads a dataset directory.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let (graph, masks) = graphdata::load_graph(&dir).map_err(to_py)?;
        Ok(Self { graph, masks })
    }

    /// Builds a synthetic graph from a JSON spec such as
    /// `{"kind": "tree", "branching": 2, "depth": 3}`.
    #[staticmethod]
    #[pyo3(signature = (spec_json, seed = 0))]
    fn synthetic(spec_json: &str, seed: u64) -> PyResult<Self> {
        let spec: SyntheticSpec = serde_json::from_str(spec_json)
            .map_err(|e| PyValueError::new_err(format!("generator spec: {e}")))?;
        let (graph, masks) = graphdata::generate_synthetic(&spec, seed).map_err(to_py)?;
        Ok(Self { graph, masks })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        graphdata::write_dataset(&dir, &self.graph, &self.masks).map_err(to_py)
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.graph.num_edges()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.graph.num_features()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.graph.num_classes()
    }

    #[getter]
    fn labels(&self) -> Vec<i64> {
        self.graph.labels().to_vec()
    }

    /// Trains on this dataset and returns metrics JSON. With `out_dir` the
    /// run artifacts are written there too.
    #[pyo3(signature = (config_json, out_dir = None))]
    fn train(
        &self,
        py: Python<'_>,
        config_json: &str,
        out_dir: Option<PathBuf>,
    ) -> PyResult<String> {
        let cfg =
            CliConfig::from_json(config_json).map_err(|f| PyValueError::new_err(f.message))?;
        let run = py
            .detach(|| model::train(&cfg.train, &self.graph, &self.masks))
            .map_err(to_py)?;
        if let Some(dir) = out_dir {
            run.write(&dir).map_err(to_py)?;
        }
        run.metrics_json().map_err(to_py)
    }

    /// Scores saved `model.json` weights on one split ("train", "val" or
    /// "test") and returns metrics JSON.
    fn evaluate(&self, config_json: &str, model_json: &str, split: &str) -> PyResult<String> {
        let cfg =
            CliConfig::from_json(config_json).map_err(|f| PyValueError::new_err(f.message))?;
        let params = ModelParams::from_json(model_json).map_err(to_py)?;
        let mask = match split {
            "train" => &self.masks.train,
            "val" => &self.masks.val,
            "test" => &self.masks.test,
            other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        };
        let m = evaluate(&params, &cfg.train, &self.graph, mask).map_err(to_py)?;
        serde_json::to_string(&m).map_err(|e| GeoformerError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(num_nodes={}, num_edges={}, num_features={}, num_classes={})",
            self.graph.num_nodes(),
            self.graph.num_edges(),
            self.graph.num_features(),
            self.graph.num_classes()
        )
    }
}

#[pymodule]
#[pyo3(name = "geoformer")]
fn geoformer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GeoformerError", m.py().get_type::<GeoformerError>())?;
    m.add_class::<Dataset>()?;
    for f in [
        wrap_pyfunction!(exp0, m)?,
        wrap_pyfunction!(log0, m)?,
        wrap_pyfunction!(mobius_add, m)?,
        wrap_pyfunction!(dist, m)?,
        wrap_pyfunction!(project_to_domain, m)?,
        wrap_pyfunction!(stiefel_project, m)?,
        wrap_pyfunction!(grassmann_project, m)?,
        wrap_pyfunction!(orth_residual, m)?,
        wrap_pyfunction!(linear_attention, m)?,
        wrap_pyfunction!(selftest, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
