use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{OptimizerTag, TrainConfig};
use super::forward::{
    composite_loss_var, expert_bias_name, expert_weight_name, experts_from_params, forward,
    forward_var, init_params, GraphInputs, LossBreakdown, THETA_G,
};
use super::params::{ModelParams, ParamKind};
use crate::backbone::VariantTag;
use crate::error::{GeoError, Result};
use crate::graphdata::{compute_metrics, Graph, Metrics, SplitMasks};
use crate::manifolds::{orth_residual, project_to_domain, Curvature, DOMAIN_MARGIN};
use crate::moe::{
    descriptor_matrix, expert_embed_var, gating_forward, gating_forward_var, link_loss_var,
    link_reconstruction_loss, sample_link_pairs, ExpertEmbedding, DESCRIPTOR_DIM,
};
use crate::numerics::{Matrix, Tape};
use crate::optim::{adam_step, OptimState};

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_acc,val_wf1,orth_residual";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_wf1: f64,
    pub orth_residual: f64,
}

/// Final metrics of the restored best-epoch parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train: Metrics,
    pub val: Metrics,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub metrics: RunMetrics,
    pub history: Vec<HistoryRow>,
    pub params: ModelParams,
}

impl RunArtifacts {
    pub fn history_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.history {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_acc, r.val_wf1, r.orth_residual
            );
        }
        s
    }

    pub fn metrics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.metrics)? + "\n")
    }

    /// Writes `metrics.json`, `history.csv` and `model.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), self.metrics_json()?)?;
        fs::write(dir.join("history.csv"), self.history_csv())?;
        fs::write(dir.join("model.json"), self.params.to_json()? + "\n")?;
        Ok(())
    }
}

/// Result of one epoch. Evaluation values refer to the parameters the
/// epoch started from.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub train_loss: f64,
    pub logits: Matrix,
    pub y: Matrix,
}

/// Owns parameters and optimizer state of one run.
pub struct Trainer<'g> {
    config: TrainConfig,
    graph: &'g Graph,
    masks: SplitMasks,
    inputs: GraphInputs,
    params: ModelParams,
    opt: OptimState,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(config: &TrainConfig, g: &'g Graph, masks: &SplitMasks) -> Result<Self> {
        let params = init_params(config, g.num_features(), g.num_classes())?;
        Self::with_params(config, g, masks, params)
    }

    pub fn with_params(
        config: &TrainConfig,
        g: &'g Graph,
        masks: &SplitMasks,
        params: ModelParams,
    ) -> Result<Self> {
        config.validate()?;
        masks.validate(g)?;
        if !masks
            .train
            .iter()
            .zip(g.labels())
            .any(|(&m, &l)| m && l >= 0)
        {
            return Err(GeoError::Split("train mask has no labeled node".into()));
        }
        let inputs = GraphInputs::new(g, config)?;
        if config.batches == 0 && config.variant.projects_qk() && g.num_nodes() < config.hidden_dim
        {
            return Err(GeoError::BatchSize {
                batch: g.num_nodes(),
                hidden: config.hidden_dim,
            });
        }
        Ok(Self {
            config: config.clone(),
            graph: g,
            masks: masks.clone(),
            inputs,
            params,
            opt: OptimState::new(config.lr),
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn inputs(&self) -> &GraphInputs {
        &self.inputs
    }

    pub fn epoch(&mut self) -> Result<EpochReport> {
        self.epoch += 1;
        if self.config.batches == 0 {
            let (loss, logits, y) = self
                .step(&self.inputs.clone(), self.graph, &self.masks.train.clone())?
                .ok_or_else(|| GeoError::Contract("full batch has no labeled train node".into()))?;
            return Ok(EpochReport {
                train_loss: loss,
                logits,
                y,
            });
        }
        let before = forward(&self.params, &self.inputs, &self.config)?;
        let mut order: Vec<usize> = (0..self.graph.num_nodes()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);
        let m = self.config.batches.min(order.len());
        let size = order.len().div_ceil(m);
        let mut losses = Vec::new();
        for chunk in order.chunks(size) {
            let mut nodes = chunk.to_vec();
            nodes.sort_unstable();
            let sub = self.graph.induced_subgraph(&nodes)?;
            if self.config.variant.projects_qk() && nodes.len() < self.config.hidden_dim {
                return Err(GeoError::BatchSize {
                    batch: nodes.len(),
                    hidden: self.config.hidden_dim,
                });
            }
            let desc = self
                .inputs
                .descriptors
                .as_ref()
                .map(|d| d.select_rows(&nodes));
            let inputs = GraphInputs::with_descriptors(&sub, desc)?;
            let mask: Vec<bool> = nodes.iter().map(|&v| self.masks.train[v]).collect();
            if let Some((loss, _, _)) = self.step(&inputs, &sub, &mask)? {
                losses.push(loss);
            }
        }
        if losses.is_empty() {
            return Err(GeoError::Contract(
                "no batch contained a labeled train node".into(),
            ));
        }
        Ok(EpochReport {
            train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            logits: before.logits,
            y: before.y,
        })
    }

    /// One forward/backward/update on `inputs`. `None` when the mask holds
    /// no labeled node.
    fn step(
        &mut self,
        inputs: &GraphInputs,
        g: &Graph,
        mask: &[bool],
    ) -> Result<Option<(f64, Matrix, Matrix)>> {
        if !mask.iter().zip(g.labels()).any(|(&m, &l)| m && l >= 0) {
            return Ok(None);
        }
        let cfg = &self.config;
        let pairs = if cfg.variant == VariantTag::Rmoe && cfg.gamma_link != 0.0 && g.num_edges() > 0
        {
            Some(sample_link_pairs(
                g,
                cfg.link_neg_ratio,
                cfg.seed.wrapping_add(self.epoch as u64),
            )?)
        } else {
            None
        };
        let mut cfg_step = cfg.clone();
        if pairs.is_none() {
            cfg_step.gamma_link = 0.0;
        }
        let mut tape = Tape::new();
        let epoch = self.epoch;
        let abort = |e: GeoError| match e {
            GeoError::NonFinite(op) => GeoError::NumericalAbort {
                epoch,
                detail: format!("non-finite value in {op} during the forward pass"),
            },
            other => other,
        };
        let fv = forward_var(&mut tape, &self.params, inputs, &cfg_step).map_err(abort)?;
        let (loss, breakdown) =
            composite_loss_var(&mut tape, &fv, g.labels(), mask, pairs.as_ref(), &cfg_step)
                .map_err(abort)?;
        self.check_finite(&breakdown)?;
        let grads = tape.backward(loss)?.into_map();
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(GeoError::NumericalAbort {
                epoch: self.epoch,
                detail: format!("non-finite gradient for {name}; {breakdown}"),
            });
        }
        let logits = tape.value(fv.logits).clone();
        let y = tape.value(fv.y).clone();
        match cfg.optimizer {
            OptimizerTag::RiemannianAdam => self.opt.step(&mut self.params, &grads)?,
            OptimizerTag::Adam => euclidean_adam(&mut self.opt, &mut self.params, &grads)?,
        }
        Ok(Some((breakdown.total, logits, y)))
    }

    fn check_finite(&self, b: &LossBreakdown) -> Result<()> {
        if b.is_finite() {
            Ok(())
        } else {
            Err(GeoError::NumericalAbort {
                epoch: self.epoch,
                detail: b.to_string(),
            })
        }
    }
}

/// Plain Adam on every entry; manifold rows are then pulled back into their
/// domain.
fn euclidean_adam(
    opt: &mut OptimState,
    params: &mut ModelParams,
    grads: &std::collections::BTreeMap<String, Matrix>,
) -> Result<()> {
    let mut flat = ModelParams::new();
    for (name, e) in params.iter() {
        flat.insert(name, e.value.clone(), ParamKind::Euclidean);
    }
    adam_step(opt, &mut flat, grads)?;
    for (name, e) in params.iter_mut() {
        let mut v = flat.get(name)?.clone();
        if let ParamKind::Stereographic(k) = e.kind {
            for r in 0..v.rows() {
                let p = project_to_domain(k, v.row(r), DOMAIN_MARGIN);
                v.row_mut(r).copy_from_slice(p.coords());
            }
        }
        e.value = v;
    }
    Ok(())
}

/// Runs `config.epochs` epochs with early stopping on validation weighted F1
/// and returns the best epoch's parameters.
pub fn train(config: &TrainConfig, g: &Graph, masks: &SplitMasks) -> Result<RunArtifacts> {
    let trainer = Trainer::new(config, g, masks)?;
    run(trainer)
}

pub fn train_with_params(
    config: &TrainConfig,
    g: &Graph,
    masks: &SplitMasks,
    params: ModelParams,
) -> Result<RunArtifacts> {
    run(Trainer::with_params(config, g, masks, params)?)
}

fn run(mut trainer: Trainer<'_>) -> Result<RunArtifacts> {
    let g = trainer.graph;
    let masks = trainer.masks.clone();
    let config = trainer.config.clone();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 1..=config.epochs {
        let start = trainer.params.clone();
        let report = trainer.epoch()?;
        let val = metrics_from_logits(&report.logits, g, &masks.val)?;
        history.push(HistoryRow {
            epoch,
            train_loss: report.train_loss,
            val_acc: val.accuracy,
            val_wf1: val.weighted_f1,
            orth_residual: orth_residual(&report.y),
        });
        if best
            .as_ref()
            .is_none_or(|(score, _, _)| val.weighted_f1 > *score)
        {
            best = Some((val.weighted_f1, epoch, start));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }
    let (_, best_epoch, params) = best.ok_or_else(|| GeoError::Contract("no epoch ran".into()))?;
    let out = forward(&params, &trainer.inputs, &config)?;
    let metrics = RunMetrics {
        best_epoch,
        epochs_run: history.len(),
        train: metrics_from_logits(&out.logits, g, &masks.train)?,
        val: metrics_from_logits(&out.logits, g, &masks.val)?,
        test: metrics_from_logits(&out.logits, g, &masks.test)?,
    };
    Ok(RunArtifacts {
        metrics,
        history,
        params,
    })
}

fn metrics_from_logits(logits: &Matrix, g: &Graph, mask: &[bool]) -> Result<Metrics> {
    compute_metrics(&logits.argmax_rows(), g.labels(), mask, g.num_classes())
}

/// Row-argmax predictions on `mask` scored against the graph's labels.
pub fn evaluate(
    params: &ModelParams,
    config: &TrainConfig,
    g: &Graph,
    mask: &[bool],
) -> Result<Metrics> {
    let inputs = GraphInputs::new(g, config)?;
    let out = forward(params, &inputs, config)?;
    metrics_from_logits(&out.logits, g, mask)
}

/// Settings for fitting the expert front end to the graph's edges alone.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub curvatures: Vec<f64>,
    pub expert_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub neg_ratio: usize,
    pub seed: u64,
    pub descriptor_hops: usize,
    pub descriptor_cap: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            curvatures: vec![-1.0, 0.0, 1.0],
            expert_dim: 4,
            epochs: 200,
            lr: 0.01,
            neg_ratio: 1,
            seed: 0,
            descriptor_hops: 2,
            descriptor_cap: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkRun {
    /// Loss over every edge and a fixed negative sample after training.
    pub final_loss: f64,
    pub history: Vec<f64>,
    pub params: ModelParams,
}

/// Seed offset of the held-out negative sample used for `final_loss`.
const LINK_EVAL_SEED: u64 = 0x5eed_0ff5;

/// Trains experts and gating on `link_reconstruction_loss` only.
pub fn train_link_embedding(g: &Graph, cfg: &LinkConfig) -> Result<LinkRun> {
    if cfg.curvatures.is_empty() {
        return Err(GeoError::Config(
            "link training needs at least one expert".into(),
        ));
    }
    if g.num_edges() == 0 {
        return Err(GeoError::Contract(
            "link training needs at least one edge".into(),
        ));
    }
    let kappas: Vec<Curvature> = cfg
        .curvatures
        .iter()
        .map(|&k| Curvature::new(k).map_err(|e| GeoError::Config(e.to_string())))
        .collect::<Result<_>>()?;
    let train_cfg = TrainConfig {
        variant: VariantTag::Rmoe,
        num_experts: kappas.len(),
        curvatures: cfg.curvatures.clone(),
        expert_dim: Some(cfg.expert_dim),
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let full = init_params(&train_cfg, g.num_features(), g.num_classes().max(1))?;
    let mut params = ModelParams::new();
    for (name, e) in full.iter() {
        if name == THETA_G || name.starts_with("expert.") {
            params.insert(name, e.value.clone(), e.kind);
        }
    }
    let desc = descriptor_matrix(g, cfg.descriptor_hops, cfg.descriptor_cap, cfg.seed)?;
    let inputs = GraphInputs::with_descriptors(g, Some(desc))?;
    let mut opt = OptimState::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let pairs = sample_link_pairs(g, cfg.neg_ratio, cfg.seed.wrapping_add(epoch as u64))?;
        let mut tape = Tape::new();
        let desc = tape.constant(inputs.descriptors.clone().expect("set above"));
        let theta = tape.param(THETA_G, params.get(THETA_G)?.clone());
        let w = gating_forward_var(&mut tape, desc, theta)?;
        let ax = tape.constant(inputs.propagated.clone());
        let mut embs = Vec::with_capacity(kappas.len());
        for (e, &kappa) in kappas.iter().enumerate() {
            let we = tape.param(
                &expert_weight_name(e),
                params.get(&expert_weight_name(e))?.clone(),
            );
            let be = tape.param(
                &expert_bias_name(e),
                params.get(&expert_bias_name(e))?.clone(),
            );
            embs.push((kappa, expert_embed_var(&mut tape, kappa, ax, we, be)?));
        }
        let loss = link_loss_var(&mut tape, &pairs, w, &embs)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(GeoError::NumericalAbort {
                epoch,
                detail: format!("link loss {value}"),
            });
        }
        history.push(value);
        let grads = tape.backward(loss)?.into_map();
        opt.step(&mut params, &grads)?;
    }
    let final_loss = link_loss_of(g, &params, &inputs, &kappas, cfg)?;
    Ok(LinkRun {
        final_loss,
        history,
        params,
    })
}

fn link_loss_of(
    g: &Graph,
    params: &ModelParams,
    inputs: &GraphInputs,
    kappas: &[Curvature],
    cfg: &LinkConfig,
) -> Result<f64> {
    let desc = inputs
        .descriptors
        .as_ref()
        .expect("link inputs carry descriptors");
    debug_assert_eq!(desc.cols(), DESCRIPTOR_DIM);
    let w = gating_forward(desc, params.get(THETA_G)?)?;
    let embs = experts_from_link_params(params, kappas, inputs)?;
    link_reconstruction_loss(g, &w, &embs, cfg.neg_ratio, cfg.seed ^ LINK_EVAL_SEED)
}

fn experts_from_link_params(
    params: &ModelParams,
    kappas: &[Curvature],
    inputs: &GraphInputs,
) -> Result<Vec<ExpertEmbedding>> {
    let cfg = TrainConfig {
        variant: VariantTag::Rmoe,
        num_experts: kappas.len(),
        curvatures: kappas.iter().map(|k| k.value()).collect(),
        ..TrainConfig::default()
    };
    experts_from_params(params, &cfg)?
        .iter()
        .map(|e| crate::moe::expert_embed_propagated(e, &inputs.propagated))
        .collect()
}
