use serde::{Deserialize, Serialize};

use crate::backbone::VariantTag;
use crate::error::{GeoError, Result};
use crate::manifolds::Curvature;

/// Which update rule the manifold-valued parameters get.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerTag {
    /// Adam on Euclidean entries, Riemannian Adam on manifold entries.
    RiemannianAdam,
    /// Euclidean Adam everywhere; manifold rows are pulled back into their
    /// domain after each step.
    Adam,
}

/// Full hyperparameter record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: VariantTag,
    pub hidden_dim: usize,
    pub gcn_depth: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Weight of the GCN branch in `α·Z + (1−α)·Z₀`.
    pub alpha: f64,
    /// Residual weight inside linear attention.
    pub beta_attn: f64,
    pub lambda_orth: f64,
    pub num_experts: usize,
    /// One curvature per expert.
    pub curvatures: Vec<f64>,
    /// Expert tangent width; `None` means `hidden_dim`.
    pub expert_dim: Option<usize>,
    pub gamma_ent: f64,
    pub gamma_reg: f64,
    pub gamma_link: f64,
    pub link_neg_ratio: usize,
    pub descriptor_hops: usize,
    pub descriptor_cap: usize,
    /// Number of mini-batches per epoch, 0 for full batch.
    pub batches: usize,
    pub optimizer: OptimizerTag,
    pub seed: u64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: VariantTag::Base,
            hidden_dim: 64,
            gcn_depth: 2,
            lr: 0.01,
            epochs: 300,
            alpha: 0.5,
            beta_attn: 0.5,
            lambda_orth: 0.01,
            num_experts: 3,
            curvatures: vec![-1.0, 0.0, 1.0],
            expert_dim: None,
            gamma_ent: 0.01,
            gamma_reg: 1e-4,
            gamma_link: 0.0,
            link_neg_ratio: 1,
            descriptor_hops: 2,
            descriptor_cap: 64,
            batches: 0,
            optimizer: OptimizerTag::RiemannianAdam,
            seed: 0,
            patience: 100,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(GeoError::Config(msg()))
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| GeoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| GeoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.lr.is_finite() && self.lr >= 0.0, || {
            format!("lr must be a finite non-negative number, got {}", self.lr)
        })?;
        check((1..=10_000).contains(&self.epochs), || {
            format!("epochs must lie in [1, 10000], got {}", self.epochs)
        })?;
        check((0.0..=1.0).contains(&self.alpha), || {
            format!("alpha must lie in [0, 1], got {}", self.alpha)
        })?;
        check((0.0..=1.0).contains(&self.beta_attn), || {
            format!("beta_attn must lie in [0, 1], got {}", self.beta_attn)
        })?;
        check(self.hidden_dim >= 1, || {
            "hidden_dim must be at least 1".into()
        })?;
        check(self.gcn_depth >= 1, || {
            "gcn_depth must be at least 1".into()
        })?;
        check(self.expert_dim != Some(0), || {
            "expert_dim must be at least 1".into()
        })?;
        for (name, v) in [
            ("lambda_orth", self.lambda_orth),
            ("gamma_ent", self.gamma_ent),
            ("gamma_reg", self.gamma_reg),
            ("gamma_link", self.gamma_link),
        ] {
            check(v.is_finite(), || format!("{name} must be finite, got {v}"))?;
        }
        check(self.lambda_orth >= 0.0, || {
            "lambda_orth must be non-negative".into()
        })?;
        check(self.gamma_reg >= 0.0 && self.gamma_link >= 0.0, || {
            "gamma_reg and gamma_link must be non-negative".into()
        })?;
        check(self.link_neg_ratio >= 1, || {
            "link_neg_ratio must be at least 1".into()
        })?;
        check(self.descriptor_cap >= 1, || {
            "descriptor_cap must be at least 1".into()
        })?;
        if self.variant == VariantTag::Rmoe {
            check(!self.curvatures.is_empty(), || {
                "rmoe needs a nonempty curvature list".into()
            })?;
            check(self.num_experts == self.curvatures.len(), || {
                format!(
                    "num_experts is {} but {} curvatures are listed",
                    self.num_experts,
                    self.curvatures.len()
                )
            })?;
            self.expert_curvatures()?;
        }
        Ok(())
    }

    pub fn expert_curvatures(&self) -> Result<Vec<Curvature>> {
        self.curvatures
            .iter()
            .map(|&k| Curvature::new(k).map_err(|e| GeoError::Config(e.to_string())))
            .collect()
    }

    pub fn expert_width(&self) -> usize {
        self.expert_dim.unwrap_or(self.hidden_dim)
    }
}
