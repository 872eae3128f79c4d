//! Run configuration file (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/reference"
//!
//! [scenario]     # nodes, frequency_hz, area
//! [reward]       # gain_scale, link_cost, decay_length_m, ineffective_threshold_m
//! [model]        # hidden_dims, activation, condition_gain (input_dim/output_dim echoed)
//! [diffusion]    # steps, schedule, kernel
//! [training]     # epochs, batch_size, baseline_decay, ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    condition_columns, feature_dim, make_schedule, NoiseSchedule, ReverseKernel, ScheduleKind,
};
use crate::fresnel::RewardParams;
use crate::graph::{Area, Point, Scenario, Violation, NUM_CATEGORIES};
use crate::nn::{Activation, Architecture, Mlp};
use crate::rng::seeded;
use crate::trainer::{validation_targets, TrainConfig};
use crate::{Error, Result};

pub const REFERENCE_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub nodes: Vec<Point>,
    pub frequency_hz: f64,
    pub area: Area,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    /// Initial weight multiplier on the target-position inputs.
    #[serde(default = "unit_gain")]
    pub condition_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dim: Option<usize>,
}

fn unit_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionBlock {
    pub steps: usize,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub kernel: ReverseKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub epochs: usize,
    pub batch_size: usize,
    pub baseline_decay: f64,
    #[serde(default)]
    pub entropy_coef: f64,
    pub grad_clip_norm: f64,
    pub learning_rate: f64,
    pub validation_targets: usize,
    pub eval_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scenario: ScenarioBlock,
    pub reward: RewardParams,
    pub model: ModelBlock,
    pub diffusion: DiffusionBlock,
    pub training: TrainingBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl RunConfig {
    pub fn reference() -> Self {
        let s = Scenario::reference();
        Self {
            seed: 7,
            output_dir: PathBuf::from("runs/reference"),
            scenario: ScenarioBlock {
                nodes: s.nodes,
                frequency_hz: s.frequency_hz,
                area: s.area,
            },
            reward: RewardParams::default(),
            model: ModelBlock {
                hidden_dims: vec![128, 128],
                activation: Activation::Silu,
                condition_gain: 20.0,
                input_dim: None,
                output_dim: None,
            },
            diffusion: DiffusionBlock {
                steps: REFERENCE_STEPS,
                schedule: ScheduleKind::Cosine,
                kernel: ReverseKernel::Posterior,
            },
            training: TrainingBlock {
                epochs: 300,
                batch_size: 64,
                baseline_decay: 0.9,
                entropy_coef: 0.0,
                grad_clip_norm: 5.0,
                learning_rate: 1e-3,
                validation_targets: 32,
                eval_seed: 2024,
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Serializes with the derived model dimensions filled in.
    pub fn to_resolved_toml(&self) -> Result<String> {
        let mut resolved = self.clone();
        let m = self.scenario().num_edges();
        resolved.model.input_dim = Some(feature_dim(m));
        resolved.model.output_dim = Some(m * NUM_CATEGORIES);
        toml::to_string(&resolved).map_err(|e| Error::format(e.to_string()))
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::new(
            self.scenario.nodes.clone(),
            self.scenario.frequency_hz,
            self.scenario.area,
            self.reward,
        )
    }

    pub fn architecture(&self) -> Architecture {
        let m = self.scenario().num_edges();
        Architecture {
            input_dim: feature_dim(m),
            hidden_dims: self.model.hidden_dims.clone(),
            output_dim: m * NUM_CATEGORIES,
            activation: self.model.activation,
        }
    }

    /// Glorot-initialized denoiser seeded from the run seed, with the
    /// target-position inputs amplified by `model.condition_gain`.
    pub fn init_network(&self) -> Result<Mlp> {
        let mut net = Mlp::init(self.architecture(), &mut seeded(self.seed))?;
        let m = self.scenario().num_edges();
        net.scale_input_columns(condition_columns(m), self.model.condition_gain);
        Ok(net)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(
            make_schedule(self.diffusion.steps, self.diffusion.schedule)?
                .with_kernel(self.diffusion.kernel),
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            baseline_decay: t.baseline_decay,
            entropy_coef: t.entropy_coef,
            grad_clip_norm: t.grad_clip_norm,
            learning_rate: t.learning_rate,
            validation: validation_targets(&self.scenario(), t.validation_targets, t.eval_seed),
            eval_seed: t.eval_seed,
            seed: self.seed,
        }
    }

    /// Every violated invariant across all blocks.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let scenario = self.scenario();
        let mut out = scenario.validate().err().unwrap_or_default();
        if !(self.model.condition_gain.is_finite() && self.model.condition_gain > 0.0) {
            out.push(Violation::new(
                "invalid_model",
                "model.condition_gain must be positive",
            ));
        }
        if self.model.hidden_dims.contains(&0) {
            out.push(Violation::new(
                "invalid_model",
                "hidden layer widths must be positive",
            ));
        }
        let arch = self.architecture();
        if self.model.input_dim.is_some_and(|d| d != arch.input_dim) {
            out.push(Violation::new(
                "model_dim_mismatch",
                format!("model.input_dim must be {}", arch.input_dim),
            ));
        }
        if self.model.output_dim.is_some_and(|d| d != arch.output_dim) {
            out.push(Violation::new(
                "model_dim_mismatch",
                format!("model.output_dim must be {}", arch.output_dim),
            ));
        }
        if self.diffusion.steps == 0 {
            out.push(Violation::new(
                "invalid_steps",
                "diffusion.steps must be at least 1",
            ));
        }
        if let Err(e) = self.train_config().validate() {
            out.push(Violation::new("invalid_training", e.to_string()));
        }
        if self.training.validation_targets == 0 {
            out.push(Violation::new(
                "invalid_training",
                "training.validation_targets must be at least 1",
            ));
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}
