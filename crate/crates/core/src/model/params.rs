use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::manifolds::Curvature;
use crate::numerics::Matrix;

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

/// Geometry of a registered array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamKind {
    Euclidean,
    /// Every row is a point of the κ-stereographic chart.
    Stereographic(Curvature),
    /// The whole matrix has orthonormal columns.
    Stiefel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Matrix,
    pub kind: ParamKind,
}

/// Named registry of every trainable array.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    entries: BTreeMap<String, ParamEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpEntry {
    shape: [usize; 2],
    kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    stiefel: bool,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dump {
    format_version: u32,
    params: BTreeMap<String, DumpEntry>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Matrix, kind: ParamKind) {
        self.entries
            .insert(name.to_string(), ParamEntry { value, kind });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entry(name).map(|e| &e.value)
    }

    pub fn kind(&self, name: &str) -> Result<ParamKind> {
        self.entry(name).map(|e| e.kind)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| GeoError::Contract(format!("unknown parameter {name}")))
    }

    pub fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| GeoError::Contract(format!("unknown parameter {name}")))
    }

    /// Replaces a value, keeping its kind. The shape must not change.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let e = self.entry_mut(name)?;
        if e.value.shape() != value.shape() {
            return Err(GeoError::Dimension(format!(
                "parameter {name}: {:?} replaced by {:?}",
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Plain name → value map, the form consumed by `grad_check`.
    pub fn values(&self) -> BTreeMap<String, Matrix> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect()
    }

    /// Copy of `self` with values taken from `values` (same names and shapes).
    pub fn with_values(&self, values: &BTreeMap<String, Matrix>) -> Result<Self> {
        let mut out = self.clone();
        for (name, v) in values {
            out.set(name, v.clone())?;
        }
        Ok(out)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Versioned JSON weight dump.
    pub fn to_json(&self) -> Result<String> {
        let params = self
            .entries
            .iter()
            .map(|(name, e)| {
                let (kappa, stiefel) = match e.kind {
                    ParamKind::Euclidean => (None, false),
                    ParamKind::Stereographic(k) => (Some(k.value()), false),
                    ParamKind::Stiefel => (None, true),
                };
                let entry = DumpEntry {
                    shape: [e.value.rows(), e.value.cols()],
                    kappa,
                    stiefel,
                    data: e.value.data().to_vec(),
                };
                (name.clone(), entry)
            })
            .collect();
        let dump = Dump {
            format_version: WEIGHT_FORMAT_VERSION,
            params,
        };
        Ok(serde_json::to_string(&dump)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: Dump = serde_json::from_str(text)?;
        if dump.format_version != WEIGHT_FORMAT_VERSION {
            return Err(GeoError::Load(format!(
                "weight dump format_version {} (expected {WEIGHT_FORMAT_VERSION})",
                dump.format_version
            )));
        }
        let mut out = Self::new();
        for (name, e) in dump.params {
            let value = Matrix::from_vec(e.shape[0], e.shape[1], e.data)?;
            let kind = match (e.kappa, e.stiefel) {
                (Some(k), false) => ParamKind::Stereographic(Curvature::new(k)?),
                (None, true) => ParamKind::Stiefel,
                (None, false) => ParamKind::Euclidean,
                (Some(_), true) => {
                    return Err(GeoError::Load(format!(
                        "parameter {name} is flagged both stereographic and Stiefel"
                    )))
                }
            };
            out.insert(&name, value, kind);
        }
        Ok(out)
    }
}
