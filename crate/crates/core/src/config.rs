//! Declarative run configuration: one TOML file drives dataset generation,
//! schedules, training, curation, and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{ScheduleKind, ScheduleParams};
use crate::grip::GripConfig;
use crate::synth::{Archetype, GeneratorConfig, ARCHETYPES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error in {path}:\n{message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Top-level run configuration; every section has defaults so partial files
/// are valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub curate: CurateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub archetypes: Vec<Archetype>,
    pub clutter: usize,
    pub sigma_track: f64,
    pub twin_distractor: bool,
    pub robot_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            count: 100,
            width: 256,
            height: 256,
            archetypes: ARCHETYPES.to_vec(),
            clutter: 3,
            sigma_track: 0.0,
            twin_distractor: false,
            robot_fraction: 0.0,
            seed: 0,
        }
    }
}

impl GeneratorSection {
    pub fn to_generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            width: self.width,
            height: self.height,
            archetypes: self.archetypes.clone(),
            clutter: self.clutter,
            sigma_track: self.sigma_track,
            twin_distractor: self.twin_distractor,
            robot_fraction: self.robot_fraction,
            seed: self.seed,
            count: self.count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "default_location_schedule")]
    pub location: ComponentSchedule,
    #[serde(default = "default_rotation_schedule")]
    pub rotation: ComponentSchedule,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { location: default_location_schedule(), rotation: default_rotation_schedule() }
    }
}

fn default_location_schedule() -> ComponentSchedule {
    ComponentSchedule {
        kind: ScheduleKind::ScaledLinear,
        steps: 100,
        beta_start: 8.5e-4,
        beta_end: 0.012,
        offset: 0.008,
    }
}

fn default_rotation_schedule() -> ComponentSchedule {
    ComponentSchedule {
        kind: ScheduleKind::SquaredCosine,
        steps: 100,
        beta_start: 8.5e-4,
        beta_end: 0.012,
        offset: 0.008,
    }
}

/// One component's schedule: the kind selects which parameters apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    #[serde(default = "defaults::beta_start")]
    pub beta_start: f64,
    #[serde(default = "defaults::beta_end")]
    pub beta_end: f64,
    #[serde(default = "defaults::offset")]
    pub offset: f64,
}

impl ComponentSchedule {
    pub fn params(&self) -> ScheduleParams {
        match self.kind {
            ScheduleKind::ScaledLinear => ScheduleParams::ScaledLinear {
                beta_start: self.beta_start,
                beta_end: self.beta_end,
            },
            ScheduleKind::SquaredCosine => ScheduleParams::SquaredCosine { offset: self.offset },
        }
    }
}

mod defaults {
    pub fn beta_start() -> f64 {
        8.5e-4
    }
    pub fn beta_end() -> f64 {
        0.012
    }
    pub fn offset() -> f64 {
        0.008
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub patch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub w_loc: f64,
    pub w_rot: f64,
    pub seed: u64,
    pub mask_branch: bool,
    pub max_depth_m: f32,
    /// Learning rate ramps linearly from zero over this many steps.
    pub lr_warmup: usize,
    /// Learning rate multiplies by `lr_decay_factor` at this step; 0 = never.
    pub lr_decay_at: usize,
    pub lr_decay_factor: f64,
    pub holdout_fraction: f64,
    pub eval_every: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            patch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 32,
            steps: 1000,
            w_loc: 1.0,
            w_rot: 1.0,
            seed: 0,
            mask_branch: true,
            max_depth_m: 4.0,
            lr_warmup: 0,
            lr_decay_at: 0,
            lr_decay_factor: 0.2,
            holdout_fraction: 0.1,
            eval_every: 200,
        }
    }
}

impl ModelSection {
    pub fn to_train_config(&self) -> crate::denoiser::TrainConfig {
        crate::denoiser::TrainConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            patch_size: self.patch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            batch_size: self.batch_size,
            steps: self.steps,
            w_loc: self.w_loc,
            w_rot: self.w_rot,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub sigma_h: f64,
    pub samples_per_scene: usize,
    pub seed: u64,
    pub min_mask_px: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { sigma_h: 8.0, samples_per_scene: 8, seed: 0, min_mask_px: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateSection {
    pub min_success_rate: f64,
    pub gmm_k: usize,
    pub gmm_seed: u64,
    pub sigma_d: f64,
    pub contact_radius: f64,
    pub lambda: f64,
}

impl Default for CurateSection {
    fn default() -> Self {
        let grip = GripConfig::default();
        Self {
            min_success_rate: 0.9,
            gmm_k: 3,
            gmm_seed: 0,
            sigma_d: grip.sigma_d,
            contact_radius: grip.contact_radius,
            lambda: grip.lambda,
        }
    }
}

impl CurateSection {
    pub fn to_curate_config(&self) -> crate::synth::CurateConfig {
        crate::synth::CurateConfig {
            gmm_k: self.gmm_k,
            gmm_seed: self.gmm_seed,
            grip: GripConfig {
                sigma_d: self.sigma_d,
                contact_radius: self.contact_radius,
                lambda: self.lambda,
            },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let g = &self.generator;
        if g.count == 0 {
            return bad("generator.count must be positive".into());
        }
        if g.width < 16 || g.height < 16 {
            return bad(format!("generator image {}x{} too small (min 16)", g.width, g.height));
        }
        if g.archetypes.is_empty() {
            return bad("generator.archetypes must not be empty".into());
        }
        if !(0.0..=1.0).contains(&g.robot_fraction) {
            return bad(format!("generator.robot_fraction {} outside [0, 1]", g.robot_fraction));
        }
        if g.sigma_track < 0.0 || g.sigma_track > 32.0 {
            return bad(format!("generator.sigma_track {} outside [0, 32]", g.sigma_track));
        }
        for (name, s) in [("location", &self.schedule.location), ("rotation", &self.schedule.rotation)] {
            if s.steps == 0 || s.steps > 10_000 {
                return bad(format!("schedule.{name}.steps {} outside 1..=10000", s.steps));
            }
            if let ScheduleKind::ScaledLinear = s.kind {
                if !(0.0 < s.beta_start && s.beta_start < s.beta_end && s.beta_end < 1.0) {
                    return bad(format!(
                        "schedule.{name}: need 0 < beta_start < beta_end < 1, got ({}, {})",
                        s.beta_start, s.beta_end
                    ));
                }
            } else if !(s.offset > 0.0 && s.offset <= 0.1) {
                return bad(format!("schedule.{name}.offset {} outside (0, 0.1]", s.offset));
            }
        }
        if self.schedule.location.steps != self.schedule.rotation.steps {
            return bad("location and rotation schedules must share the step count".into());
        }
        let m = &self.model;
        if m.d_model == 0 || m.n_heads == 0 || !m.d_model.is_multiple_of(m.n_heads) {
            return bad(format!("model: d_model {} not divisible by n_heads {}", m.d_model, m.n_heads));
        }
        if !(m.d_model / m.n_heads).is_multiple_of(4) {
            return bad(format!(
                "model: head dim {} must be divisible by 4",
                m.d_model / m.n_heads
            ));
        }
        if !g.width.is_multiple_of(m.patch_size) || !g.height.is_multiple_of(m.patch_size) {
            return bad(format!(
                "generator image {}x{} not divisible by patch {}",
                g.width, g.height, m.patch_size
            ));
        }
        if m.learning_rate <= 0.0 || m.learning_rate > 1.0 {
            return bad(format!("model.learning_rate {} outside (0, 1]", m.learning_rate));
        }
        if !(0.0..1.0).contains(&m.beta1) || !(0.0..1.0).contains(&m.beta2) {
            return bad("model.beta1/beta2 must lie in [0, 1)".into());
        }
        if m.batch_size == 0 || m.steps == 0 {
            return bad("model.batch_size and model.steps must be positive".into());
        }
        if m.w_loc < 0.0 || m.w_rot < 0.0 || (m.w_loc == 0.0 && m.w_rot == 0.0) {
            return bad("loss weights must be non-negative and not both zero".into());
        }
        if !(0.0..0.9).contains(&m.holdout_fraction) {
            return bad(format!("model.holdout_fraction {} outside [0, 0.9)", m.holdout_fraction));
        }
        if !(m.lr_decay_factor > 0.0 && m.lr_decay_factor <= 1.0) {
            return bad(format!("model.lr_decay_factor {} outside (0, 1]", m.lr_decay_factor));
        }
        let e = &self.eval;
        if e.sigma_h <= 0.0 || e.sigma_h > 128.0 {
            return bad(format!("eval.sigma_h {} outside (0, 128]", e.sigma_h));
        }
        if e.samples_per_scene == 0 || e.samples_per_scene > 64 {
            return bad(format!("eval.samples_per_scene {} outside 1..=64", e.samples_per_scene));
        }
        let c = &self.curate;
        if !(0.0..=1.0).contains(&c.min_success_rate) {
            return bad(format!("curate.min_success_rate {} outside [0, 1]", c.min_success_rate));
        }
        if c.gmm_k == 0 || c.gmm_k > 16 {
            return bad(format!("curate.gmm_k {} outside 1..=16", c.gmm_k));
        }
        if c.sigma_d <= 0.0 || c.contact_radius <= 0.0 || c.lambda < 0.0 {
            return bad("curate grip constants must be positive".into());
        }
        Ok(())
    }
}
