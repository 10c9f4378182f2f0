//! TOML experiment configuration. Every table and key is optional; missing
//! values take the defaults of the reference experiment.

use std::path::{Path, PathBuf};

use dspp_core::dspp::ObservationScheme;
use dspp_core::inference::{AdamConfig, DiffusionConfig, ModelConfig, TrainConfig};
use dspp_core::queueing::{DlmMode, ServiceDist};
use dspp_core::sde::{DiffusionKind, DriftKind, DriftSpec, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub truth: TruthConfig,
    pub grid: GridConfig,
    pub scheme: SchemeConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub baseline: BaselineConfig,
    pub runthrough: RunThroughConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2021,
            out: PathBuf::from("out"),
            truth: TruthConfig::default(),
            grid: GridConfig::default(),
            scheme: SchemeConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            baseline: BaselineConfig::default(),
            runthrough: RunThroughConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// `dZ = rate (level - Z) dt + eta [level^alpha] sqrt(Z) dW`; the bracketed
/// factor is present only when `alpha` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub rate: f64,
    pub level: f64,
    pub eta: f64,
    pub alpha: Option<f64>,
    pub z0: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            rate: 0.3,
            level: 80.0,
            eta: 1.0,
            alpha: None,
            z0: 5.0,
        }
    }
}

impl TruthConfig {
    pub fn spec(&self) -> DriftSpec<'static, f64> {
        DriftSpec {
            drift: DriftKind::MeanReverting {
                rate: self.rate,
                level: self.level,
            },
            diffusion: match self.alpha {
                None => DiffusionKind::SqrtState { eta: self.eta },
                Some(alpha) => DiffusionKind::PowerLevel {
                    eta: self.eta,
                    level: self.level,
                    alpha,
                },
            },
        }
    }

    pub fn with_eta(self, eta: f64) -> Self {
        Self { eta, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 4.0,
            steps: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    /// Observation epochs; `T/2` and `T` when absent.
    pub epochs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
    /// Held-out truth samples used as the reference ("test") model.
    pub test_n: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n: 200, test_n: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub n_mc: usize,
    pub minibatch: usize,
    pub epochs: usize,
    /// Minibatches per epoch; `0` means a full pass over the data.
    pub batches_per_epoch: usize,
    pub lr_theta: f64,
    pub lr_beta: f64,
    pub lr_sigma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub fixed_inner_samples: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            n_mc: d.n_mc,
            minibatch: d.minibatch,
            epochs: d.epochs,
            batches_per_epoch: d.batches_per_epoch.unwrap_or(0),
            lr_theta: d.lr_theta,
            lr_beta: d.lr_beta,
            lr_sigma: d.lr_sigma,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            eps: d.adam.eps,
            fixed_inner_samples: d.fixed_inner_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Pieces of the main piecewise-linear fit.
    pub d: usize,
    /// Extra piece counts fitted by `baseline`.
    pub sweep: Vec<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            d: 2,
            sweep: vec![2, 10, 20, 50],
        }
    }
}

/// A service distribution with a table name. Unknown keys are not rejected
/// here: serde cannot combine that check with the flattened distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedService {
    pub name: String,
    #[serde(flatten)]
    pub service: ServiceDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunThroughConfig {
    pub replications: usize,
    pub dlm_mode: DlmMode,
    pub services: Vec<NamedService>,
}

impl Default for RunThroughConfig {
    fn default() -> Self {
        Self {
            replications: 500,
            dlm_mode: DlmMode::Conditioned,
            services: vec![
                NamedService {
                    name: "exponential".into(),
                    service: ServiceDist::Exponential { rate: 2.0 },
                },
                NamedService {
                    name: "erlang".into(),
                    service: ServiceDist::Erlang { k: 3, rate: 6.0 },
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Posterior paths per test sample in the intensity curves.
    pub curve_paths: usize,
    pub curves: bool,
    pub tables: bool,
    pub eta_sweep: Vec<f64>,
    pub d_sweep: Vec<usize>,
    pub learned_diffusion: Option<LearnedDiffusionConfig>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            curve_paths: 5,
            curves: true,
            tables: true,
            eta_sweep: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            d_sweep: vec![2, 10, 20, 50],
            learned_diffusion: Some(LearnedDiffusionConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnedDiffusionConfig {
    pub truth: TruthConfig,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub gain: f64,
    pub floor: f64,
}

impl Default for LearnedDiffusionConfig {
    fn default() -> Self {
        Self {
            truth: TruthConfig {
                rate: 1.0,
                level: 80.0,
                eta: 1.0,
                alpha: Some(0.25),
                z0: 5.0,
            },
            hidden_layers: 20,
            hidden_width: 10,
            gain: 30.0,
            floor: 1e-4,
        }
    }
}

impl LearnedDiffusionConfig {
    pub fn diffusion(&self) -> DiffusionConfig {
        DiffusionConfig::Learned {
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            gain: self.gain,
            floor: self.floor,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::new(self.grid.horizon, self.grid.steps).map_err(config_err)
    }

    pub fn scheme(&self) -> Result<ObservationScheme, CliError> {
        let grid = self.grid()?;
        match &self.scheme.epochs {
            Some(e) => ObservationScheme::new(e.clone(), &grid),
            None => ObservationScheme::half_and_end(&grid),
        }
        .map_err(config_err)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        Ok(TrainConfig {
            n_mc: t.n_mc,
            minibatch: t.minibatch,
            epochs: t.epochs,
            lr_theta: t.lr_theta,
            lr_beta: t.lr_beta,
            lr_sigma: t.lr_sigma,
            adam: AdamConfig {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            grid: self.grid()?,
            seed,
            fixed_inner_samples: t.fixed_inner_samples,
            batches_per_epoch: (t.batches_per_epoch > 0).then_some(t.batches_per_epoch),
        })
    }

    /// Checks every numeric constraint that can be checked without data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.grid()?;
        self.scheme()?;
        self.truth.spec().validate().map_err(config_err)?;
        self.model.validate().map_err(config_err)?;
        if self.dataset.n == 0 || self.dataset.test_n < 2 {
            return Err(CliError::Config("dataset.n must be >= 1 and test_n >= 2".into()));
        }
        self.train_config(self.seed)?
            .validate(self.dataset.n)
            .map_err(config_err)?;
        if self.baseline.d == 0 || self.baseline.sweep.contains(&0) {
            return Err(CliError::Config("piece counts must be positive".into()));
        }
        if self.runthrough.replications < 2 {
            return Err(CliError::Config("runthrough.replications must be >= 2".into()));
        }
        for s in &self.runthrough.services {
            s.service.validate().map_err(config_err)?;
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(CliError::Config(format!("service name {:?} is not file-safe", s.name)));
            }
        }
        if self.report.curve_paths == 0 {
            return Err(CliError::Config("report.curve_paths must be positive".into()));
        }
        if self.report.eta_sweep.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(CliError::Config("eta_sweep values must be nonnegative".into()));
        }
        if self.report.d_sweep.contains(&0) {
            return Err(CliError::Config("d_sweep values must be positive".into()));
        }
        if let Some(l) = &self.report.learned_diffusion {
            l.truth.spec().validate().map_err(config_err)?;
            let mut m = self.model;
            m.diffusion = l.diffusion();
            m.validate().map_err(config_err)?;
        }
        Ok(())
    }
}

fn config_err(e: dspp_core::Error) -> CliError {
    CliError::Config(e.to_string())
}
