//! Cumulative-feature ablation grid: each variant adds one feature to the
//! previous one, from a non-separable convolution to dynamic convolutions.

use crate::conv::NormalizerKind;
use crate::error::Result;
use crate::model::{default_kernel_schedule, Mechanism, Model, ModelConfig};
use crate::train::{train, TrainConfig, TrainStatus};

pub const CSV_HEADER: &str = "variant,mechanism,kernel_params,total_params,token_accuracy,status";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub config: ModelConfig,
}

/// The seven cumulative variants built on `base` (its d, heads, layers and
/// vocabularies). The first two use a fixed width `k` in every layer; later
/// variants use the increasing default schedule. GLU is off throughout.
pub fn ablation_grid(base: &ModelConfig, k: usize, dropconnect_p: f64) -> Vec<AblationVariant> {
    let fixed = |n: usize| vec![k; n];
    let mut cfg = base.clone();
    cfg.mechanism = Mechanism::CnnNonSeparable;
    cfg.use_glu = false;
    cfg.windowed_attention = false;
    cfg.dropconnect_p = 0.0;
    cfg.normalizer = NormalizerKind::None;
    cfg.encoder_kernels = fixed(cfg.encoder_layers);
    cfg.decoder_kernels = fixed(cfg.decoder_layers);
    let mut grid = vec![AblationVariant {
        name: "cnn_nonseparable",
        config: cfg.clone(),
    }];
    let mut push = |name, f: &dyn Fn(&mut ModelConfig)| {
        f(&mut cfg);
        grid.push(AblationVariant {
            name,
            config: cfg.clone(),
        });
    };
    push("+depthwise", &|c| c.mechanism = Mechanism::CnnDepthwise);
    push("+increasing_kernels", &|c| {
        c.encoder_kernels = default_kernel_schedule(c.encoder_layers);
        c.decoder_kernels = default_kernel_schedule(c.decoder_layers);
    });
    push("+dropconnect", &|c| c.dropconnect_p = dropconnect_p);
    push("+weight_sharing", &|c| c.mechanism = Mechanism::LightConv);
    push("+softmax", &|c| c.normalizer = NormalizerKind::Softmax);
    push("+dynamic", &|c| c.mechanism = Mechanism::DynamicConv);
    grid
}

/// Kernel or kernel-predictor weights across all layers.
pub fn kernel_param_count(model: &Model) -> usize {
    model
        .params()
        .iter()
        .filter(|(name, _)| name.ends_with(".conv.kernel") || name.ends_with(".conv.predictor"))
        .map(|(_, t)| t.len())
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub mechanism: Mechanism,
    pub kernel_params: usize,
    pub total_params: usize,
    pub token_accuracy: f64,
    pub status: TrainStatus,
}

impl AblationRow {
    pub fn status_label(&self) -> &'static str {
        match self.status {
            TrainStatus::Diverged { .. } => "diverged",
            TrainStatus::ReachedTarget { .. } => "reached_target",
            TrainStatus::Completed => "completed",
        }
    }
}

/// Train every variant with the budget and seed of `template`. Divergence
/// is recorded in the row, not raised.
pub fn run_ablation(grid: &[AblationVariant], template: &TrainConfig) -> Result<Vec<AblationRow>> {
    grid.iter()
        .map(|v| {
            let mut cfg = template.clone();
            cfg.model = v.config.clone();
            let report = train(&cfg)?;
            Ok(AblationRow {
                variant: v.name.to_string(),
                mechanism: v.config.mechanism,
                kernel_params: kernel_param_count(&report.model),
                total_params: report.model.params().count(),
                token_accuracy: report.final_accuracy,
                status: report.status,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.6},{}\n",
            r.variant,
            r.mechanism,
            r.kernel_params,
            r.total_params,
            r.token_accuracy,
            r.status_label()
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cumulative() {
        let base = ModelConfig::tiny(Mechanism::LightConv, 2, 16, 4, 10);
        let grid = ablation_grid(&base, 3, 0.1);
        assert_eq!(grid.len(), 7);
        assert!(grid.iter().all(|v| v.config.validate().is_ok() && !v.config.use_glu));
        assert_eq!(grid[1].config.encoder_kernels, vec![3, 3]);
        assert_eq!(grid[2].config.encoder_kernels, vec![3, 7]);
        assert_eq!(grid[6].config.dropconnect_p, 0.1);
        assert_eq!(grid[6].config.normalizer, NormalizerKind::Softmax);
    }

    #[test]
    fn kernel_params_shrink_until_sharing() {
        let base = ModelConfig::tiny(Mechanism::LightConv, 1, 16, 4, 10);
        let grid = ablation_grid(&base, 3, 0.1);
        let counts: Vec<usize> = grid
            .iter()
            .map(|v| kernel_param_count(&Model::new(v.config.clone(), 1).unwrap()))
            .collect();
        // Two layers (one encoder, one decoder) of width 3.
        assert_eq!(counts[0], 2 * 16 * 16 * 3);
        assert_eq!(counts[1], 2 * 16 * 3);
        assert_eq!(counts[4], 2 * 4 * 3);
        assert!(counts[0] > counts[1] && counts[1] > counts[4]);
        assert_eq!(counts[6], 2 * 4 * 3 * 16);
    }
}
