//! Run configuration: one JSON document drives integration, training and
//! evaluation so an experiment is reproducible from a single file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::esd::{default_chaotic_params, default_initial_state, validate_params, EsdParameters, State};
use crate::rk45::ToleranceSpec;
use crate::trainer::{AdamConfig, OptimizerKind, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSection {
    pub alpha: f64,
    pub beta: f64,
    pub lr_initial: f64,
    pub lr_floor: f64,
    pub max_epochs: usize,
    pub epsilon_stop: f64,
    pub adam: AdamConfig,
    #[serde(default)]
    pub checkpoint_every: usize,
    pub t_initial: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub input_rescale: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// The whole experiment: system parameters, grids, network, training
/// schedule, integrator tolerances and artifact locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub esd_params: EsdParameters,
    pub initial_state: State,
    pub t_span: (f64, f64),
    pub n_points: usize,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub rk45: ToleranceSpec,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Err(violations) = validate_params(&self.esd_params) {
            let list: Vec<String> = violations.iter().map(|v| v.constraint.clone()).collect();
            return Err(Error::Config(format!(
                "esd_params violate: {}",
                list.join(", ")
            )));
        }
        if !self.initial_state.is_finite() {
            return Err(Error::Config("initial_state must be finite".into()));
        }
        self.rk45
            .validate()
            .map_err(|e| Error::Config(format!("rk45 tolerances: {e}")))?;
        self.training_config().validate()?;
        if self.output.dir.as_os_str().is_empty() {
            return Err(Error::Config("output.dir must not be empty".into()));
        }
        Ok(())
    }

    /// Assembles the trainer's view of this configuration.
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            t_span: self.t_span,
            n_points: self.n_points,
            hidden_layers: self.network.hidden_layers,
            hidden_width: self.network.hidden_width,
            seed: self.network.seed,
            alpha: self.training.alpha,
            beta: self.training.beta,
            lr_initial: self.training.lr_initial,
            lr_floor: self.training.lr_floor,
            max_epochs: self.training.max_epochs,
            epsilon_stop: self.training.epsilon_stop,
            adam: self.training.adam,
            checkpoint_every: self.training.checkpoint_every,
            t_initial: self.training.t_initial,
            initial_state: self.initial_state,
            optimizer: self.training.optimizer,
            input_rescale: self.training.input_rescale,
        }
    }

    /// SHA-256 of the canonical JSON form; identifies the effective
    /// configuration in report metadata.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The full-scale experiment configuration: 16x100 network, 20,000
    /// points on [0, 100], 175,000 epochs. Hours of compute.
    pub fn full_scale() -> Self {
        Self {
            esd_params: default_chaotic_params(),
            initial_state: default_initial_state(),
            t_span: (0.0, 100.0),
            n_points: 20_000,
            network: NetworkSection { hidden_layers: 16, hidden_width: 100, seed: 42 },
            training: TrainingSection {
                alpha: 10.0,
                beta: 1.0,
                lr_initial: 8e-5,
                lr_floor: 1e-6,
                max_epochs: 175_000,
                epsilon_stop: 1e-7,
                adam: AdamConfig::default(),
                checkpoint_every: 1000,
                t_initial: 0.0,
                optimizer: OptimizerKind::Adam,
                input_rescale: None,
            },
            rk45: ToleranceSpec { atol: 1e-6, rtol: 1e-3 },
            output: OutputSection { dir: PathBuf::from("runs/full") },
        }
    }

    /// A scaled-down profile that trains in minutes: 4x64 network, 2,000
    /// points on [0, 10].
    pub fn desk_default() -> Self {
        let mut config = Self::full_scale();
        config.t_span = (0.0, 10.0);
        config.n_points = 2000;
        config.network = NetworkSection { hidden_layers: 4, hidden_width: 64, seed: 42 };
        config.training.max_epochs = 30_000;
        config.training.checkpoint_every = 5000;
        config.training.input_rescale = Some(true);
        config.output.dir = PathBuf::from("runs/desk");
        config
    }
}
