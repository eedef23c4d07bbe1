//! Model assembly: parameter registry, configuration, the forward pass of
//! every variant, the composite objective and the training loops.

mod config;
mod forward;
mod params;
mod train;

#[cfg(test)]
mod tests;

pub use config::{OptimizerTag, TrainConfig};
pub use forward::{
    composite_loss, composite_loss_var, cross_attention_fuse, expert_bias_name, expert_weight_name,
    experts_from_params, forward, forward_var, gcn_name, init_params, masked_targets,
    ForwardOutput, ForwardVars, GraphInputs, LossAux, LossBreakdown, THETA_G, W_IN, W_K, W_KC,
    W_OUT, W_Q, W_QC, W_V, W_VC,
};
pub use params::{ModelParams, ParamEntry, ParamKind, WEIGHT_FORMAT_VERSION};
pub use train::{
    evaluate, train, train_link_embedding, train_with_params, EpochReport, HistoryRow, LinkConfig,
    LinkRun, RunArtifacts, RunMetrics, Trainer, HISTORY_HEADER,
};
