//! Run configuration. Every field has a default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DestError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TemporalVariant {
    Tcn,
    LinearTransformer,
}

/// How a sub-feature's channel (or joint) axis is collapsed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    Convolution,
    Avgpool,
    Maxpool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    CrossAttention,
    Summation,
}

/// Frame-difference channels derived at load time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MotionChannels {
    /// Coordinates only.
    #[default]
    None,
    /// Coordinates followed by their frame differences.
    Append,
    /// Frame differences replace the coordinates.
    Only,
}

impl MotionChannels {
    /// Model input channels for `coords` coordinate channels.
    pub fn channels(self, coords: usize) -> usize {
        match self {
            MotionChannels::Append => 2 * coords,
            _ => coords,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    /// Raw input coordinates, flattened per frame.
    Input,
    /// Final trunk features.
    Hidden,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DestConfig {
    /// Joint count.
    #[serde(rename = "V")]
    pub joints: usize,
    /// Coordinate channels per joint.
    #[serde(rename = "C")]
    pub in_channels: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub beta: f64,
    pub symmetric_norm: bool,
    #[serde(rename = "M")]
    pub groups: usize,
    #[serde(rename = "C_mid")]
    pub mid_channels: usize,
    #[serde(rename = "C_s")]
    pub spatial_channels: usize,
    #[serde(rename = "C_t")]
    pub temporal_channels: usize,
    #[serde(rename = "C_f")]
    pub kernel_size: usize,
    #[serde(rename = "L_y")]
    pub temporal_layers: usize,
    #[serde(rename = "L_c")]
    pub interaction_layers: usize,
    #[serde(rename = "C_o")]
    pub classes: usize,
    pub temporal_variant: TemporalVariant,
    pub transform_mode: TransformMode,
    pub interaction_mode: InteractionMode,
    pub normalized_attention: bool,
    pub jwtm_baseline: bool,
    /// Attention temperature; `None` uses `T` per forward pass.
    pub tau: Option<f64>,
    pub asb_stages: usize,
    pub brb_stages: usize,
    pub stage_layers: usize,
    pub stage_channels: usize,
}

impl Default for DestConfig {
    fn default() -> Self {
        DestConfig {
            joints: 25,
            in_channels: 3,
            k_max: crate::graph::DEFAULT_K,
            beta: crate::graph::DEFAULT_BETA,
            symmetric_norm: false,
            groups: 10,
            mid_channels: 4,
            spatial_channels: 40,
            temporal_channels: 64,
            kernel_size: 3,
            temporal_layers: 11,
            interaction_layers: 10,
            classes: 4,
            temporal_variant: TemporalVariant::Tcn,
            transform_mode: TransformMode::Convolution,
            interaction_mode: InteractionMode::CrossAttention,
            normalized_attention: false,
            jwtm_baseline: false,
            tau: None,
            asb_stages: 2,
            brb_stages: 3,
            stage_layers: 10,
            stage_channels: 64,
        }
    }
}

impl DestConfig {
    /// The smallest configuration exercising every block; used for
    /// end-to-end gradient checks.
    pub fn micro() -> Self {
        DestConfig {
            joints: 4,
            in_channels: 2,
            k_max: 2,
            groups: 3,
            mid_channels: 2,
            spatial_channels: 6,
            temporal_channels: 4,
            temporal_layers: 3,
            interaction_layers: 2,
            classes: 3,
            asb_stages: 1,
            brb_stages: 1,
            stage_layers: 2,
            stage_channels: 4,
            ..DestConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(DestError::Config(m));
        if self.joints == 0 || self.in_channels == 0 || self.classes == 0 {
            return cfg("V, C and C_o must be positive".into());
        }
        if self.k_max < 1 {
            return cfg("K must be at least 1".into());
        }
        if self.beta <= 0.0 {
            return cfg("beta must be positive".into());
        }
        if self.groups < 2 {
            return cfg(format!("M must be at least 2, got {}", self.groups));
        }
        if self.spatial_channels == 0 || self.spatial_channels % self.groups != 0 {
            return cfg(format!(
                "C_s = {} is not divisible by M = {}",
                self.spatial_channels, self.groups
            ));
        }
        if self.mid_channels == 0 || self.temporal_channels == 0 {
            return cfg("C_mid and C_t must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return cfg(format!("C_f must be odd, got {}", self.kernel_size));
        }
        if self.temporal_layers == 0 && self.interaction_layers > 0 {
            return cfg("L_c > 0 requires at least one temporal layer".into());
        }
        if let Some(tau) = self.tau {
            if tau <= 0.0 || !tau.is_finite() {
                return cfg(format!("tau must be positive, got {tau}"));
            }
        }
        if self.jwtm_baseline && self.temporal_variant != TemporalVariant::Tcn {
            return cfg("the joint-shared baseline is defined for the TCN temporal variant".into());
        }
        if (self.asb_stages > 0 || self.brb_stages > 0) && self.stage_channels == 0 {
            return cfg("stage_channels must be positive".into());
        }
        Ok(())
    }

    /// `L_c` clamped to `L_y − 1`.
    pub fn effective_interaction_layers(&self) -> usize {
        let cap = self.temporal_layers.saturating_sub(1);
        if self.interaction_layers > cap {
            log::warn!(
                "L_c = {} exceeds L_y - 1 = {cap}; clamping",
                self.interaction_layers
            );
        }
        self.interaction_layers.min(cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub gamma: f64,
    pub gs_sigma: f64,
    pub gs_trunc: f64,
    pub similarity_source: SimilaritySource,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.1,
            gs_sigma: 1.0,
            gs_trunc: 4.0,
            similarity_source: SimilaritySource::Input,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(DestError::Config("gamma must be non-negative".into()));
        }
        if self.gs_trunc <= 0.0 || self.gs_sigma <= 0.0 {
            return Err(DestError::Config(
                "gs_trunc and gs_sigma must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Training schedules for the two benchmark regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 300 epochs, lr 0.0005, batch 1.
    Mcfs,
    /// 150 epochs, lr 0.001, batch 8.
    PkuLara,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Checkpoint every N epochs; 0 writes only the final checkpoint.
    pub save_every: usize,
    /// Early stop once training-set accuracy reaches this percentage
    /// (and `stop_at_f1_50`, if also set).
    pub stop_at_acc: Option<f64>,
    pub stop_at_f1_50: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::preset(Preset::Mcfs)
    }
}

impl OptimConfig {
    pub fn preset(p: Preset) -> Self {
        let (lr, batch_size, epochs) = match p {
            Preset::Mcfs => (0.0005, 1, 300),
            Preset::PkuLara => (0.001, 8, 150),
        };
        OptimConfig {
            lr,
            batch_size,
            epochs,
            seed: 0,
            save_every: 0,
            stop_at_acc: None,
            stop_at_f1_50: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(DestError::Config(
                "lr and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Per-sequence, per-channel z-score of coordinates at load time.
    pub normalize: bool,
    /// Keep every `stride`-th frame at load time.
    pub stride: usize,
    pub motion: MotionChannels,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            normalize: true,
            stride: 1,
            motion: MotionChannels::None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub topology: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: DestConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn with_preset(p: Preset) -> Self {
        RunConfig {
            optim: OptimConfig::preset(p),
            ..RunConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DestError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DestError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Pretty canonical JSON; field order is fixed by the struct layout.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        if self.data.stride == 0 {
            return Err(DestError::Config("stride must be positive".into()));
        }
        Ok(())
    }
}
