use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub starting_neighbor_count: usize,
    pub final_neighbor_count: usize,
    pub stride: usize,
    pub tolerance: f64,
    pub tolerance_decay: f64,
    pub min_update_freq: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            starting_neighbor_count: 2,
            final_neighbor_count: 200,
            stride: 20,
            tolerance: 0.001,
            tolerance_decay: 0.95,
            min_update_freq: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptiveState {
    pub current_neighbor_count: usize,
    pub final_neighbor_count: usize,
    pub tolerance: f64,
    pub tolerance_decay: f64,
    pub stride: usize,
    pub min_update_freq: usize,
    pub last_metric: f64,
    /// Epoch whose metric the next step consumes, counted from 1.
    pub epoch: usize,
}

impl AdaptiveState {
    pub fn new(config: &AdaptiveConfig) -> Result<Self, PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if config.stride == 0 {
            return bad("stride must be at least 1");
        }
        if config.min_update_freq == 0 {
            return bad("min_update_freq must be at least 1");
        }
        if config.starting_neighbor_count > config.final_neighbor_count {
            return bad("starting neighbor count exceeds the final count");
        }
        if !(config.tolerance >= 0.0 && config.tolerance.is_finite()) {
            return bad("tolerance must be finite and non-negative");
        }
        if !(config.tolerance_decay >= 0.0 && config.tolerance_decay.is_finite()) {
            return bad("tolerance decay must be finite and non-negative");
        }
        Ok(Self {
            current_neighbor_count: config.starting_neighbor_count,
            final_neighbor_count: config.final_neighbor_count,
            tolerance: config.tolerance,
            tolerance_decay: config.tolerance_decay,
            stride: config.stride,
            min_update_freq: config.min_update_freq,
            last_metric: 0.0,
            epoch: 1,
        })
    }
}

/// One end-of-epoch update: grow the neighbor count when the metric did not
/// beat `last_metric + tolerance` or the epoch is a multiple of
/// `min_update_freq`.
pub fn adaptive_step(state: &AdaptiveState, current_metric: f64) -> Result<AdaptiveState, PipelineError> {
    if !current_metric.is_finite() {
        return Err(PipelineError::Config(format!("metric {current_metric} is not finite")));
    }
    let mut next = state.clone();
    if current_metric <= state.last_metric + state.tolerance || state.epoch % state.min_update_freq == 0 {
        next.current_neighbor_count = (state.current_neighbor_count + state.stride).min(state.final_neighbor_count);
    }
    next.last_metric = current_metric;
    next.tolerance = state.tolerance * state.tolerance_decay;
    next.epoch = state.epoch + 1;
    Ok(next)
}
