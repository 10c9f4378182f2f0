//! Deep latent model for the intensity process.
//!
//! The prior is `dZ = b(Z, t; theta) dt + sigma(Z, t) dW` and the variational
//! family adds a mean-field control, `dZ = [b + sigma * u(k, t; beta)] dt + sigma dW`,
//! where `k` is the observed count context. The evidence lower bound is
//! `E_Q[log P(Y | Z)] - 1/2 int_0^T u^2 dt`.

mod adam;
mod elbo;
mod train;

pub use adam::{Adam, AdamConfig};
pub use elbo::{elbo_gradient, elbo_saa, ElboEstimate, LIKELIHOOD_EPS};
pub use train::{train, TrainConfig, TrainReport, Trainer, TRACE_SCHEMA};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{Checkpoint, Section};
use crate::dspp::CountSample;
use crate::nn::{MlpModel, MlpSpec};
use crate::sde::{
    DiffusionKind, DriftKind, DriftSpec, IntensityPath, NeuralControl, NeuralDiffusion,
    NeuralDrift, ParamLayout, TimeGrid,
};
use crate::seed::{stream, SeedTree};
use crate::{Error, Result, Scalar};

/// Which counts feed the control network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// `X(T)` only.
    #[default]
    Terminal,
    /// `(X(T/2), X(T))`, i.e. every observed cumulative count.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DiffusionConfig {
    /// Known `eta * sqrt(z)`.
    Fixed { eta: f64 },
    /// `floor + gain * softplus(net(z * state_scale, t))`.
    Learned {
        hidden_layers: usize,
        hidden_width: usize,
        gain: f64,
        floor: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub prior_layers: usize,
    pub prior_width: usize,
    pub control_layers: usize,
    pub control_width: usize,
    pub diffusion: DiffusionConfig,
    pub z0: f64,
    /// Multiplies the intensity before it enters the drift/diffusion nets.
    pub state_scale: f64,
    /// Multiplies the counts before they enter the control net.
    pub context_scale: f64,
    /// Output multiplier of the drift net.
    pub drift_gain: f64,
    /// Output multiplier of the control net.
    pub control_gain: f64,
    pub context: ContextMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            prior_layers: 20,
            prior_width: 10,
            control_layers: 20,
            control_width: 10,
            diffusion: DiffusionConfig::Fixed { eta: 1.0 },
            z0: 5.0,
            state_scale: 0.01,
            context_scale: 0.01,
            drift_gain: 10.0,
            control_gain: 1.0,
            context: ContextMode::Terminal,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(self.z0.is_finite() && self.z0 >= 0.0) {
            return Err(Error::InvalidArgument("z0 must be nonnegative".into()));
        }
        if !(pos(self.state_scale)
            && pos(self.context_scale)
            && pos(self.drift_gain)
            && pos(self.control_gain))
        {
            return Err(Error::InvalidArgument("scales and gains must be positive".into()));
        }
        match self.diffusion {
            DiffusionConfig::Fixed { eta } if !(eta.is_finite() && eta >= 0.0) => {
                Err(Error::InvalidArgument("eta must be nonnegative".into()))
            }
            DiffusionConfig::Learned { gain, floor, .. } if !(pos(gain) && pos(floor)) => Err(
                Error::InvalidArgument("learned diffusion needs positive gain and floor".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diffusion<T> {
    Fixed {
        eta: T,
    },
    Learned {
        net: MlpModel<T>,
        gain: T,
        floor: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalModel<T> {
    pub prior: MlpModel<T>,
    pub control: MlpModel<T>,
    pub diffusion: Diffusion<T>,
    pub z0: T,
    pub state_scale: T,
    pub context_scale: T,
    pub drift_gain: T,
    pub control_gain: T,
    pub context_mode: ContextMode,
}

impl<T: Scalar> VariationalModel<T> {
    /// Fresh model; network `r` (0 prior, 1 control, 2 diffusion) is initialized
    /// from `SeedTree(seed).child(INIT).child(r)`.
    pub fn init(cfg: &ModelConfig, n_epochs: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let root = SeedTree::new(seed).child(stream::INIT);
        let ctx_dim = match cfg.context {
            ContextMode::Terminal => 1,
            ContextMode::All => n_epochs,
        };
        let prior = MlpModel::init(
            MlpSpec::new(2, cfg.prior_layers, cfg.prior_width),
            root.child(0).seed(),
        )?;
        let control = MlpModel::init(
            MlpSpec::new(ctx_dim + 1, cfg.control_layers, cfg.control_width),
            root.child(1).seed(),
        )?;
        let diffusion = match cfg.diffusion {
            DiffusionConfig::Fixed { eta } => Diffusion::Fixed { eta: T::lit(eta) },
            DiffusionConfig::Learned {
                hidden_layers,
                hidden_width,
                gain,
                floor,
            } => Diffusion::Learned {
                net: MlpModel::init(
                    MlpSpec::new(2, hidden_layers, hidden_width),
                    root.child(2).seed(),
                )?,
                gain: T::lit(gain),
                floor: T::lit(floor),
            },
        };
        Ok(Self {
            prior,
            control,
            diffusion,
            z0: T::lit(cfg.z0),
            state_scale: T::lit(cfg.state_scale),
            context_scale: T::lit(cfg.context_scale),
            drift_gain: T::lit(cfg.drift_gain),
            control_gain: T::lit(cfg.control_gain),
            context_mode: cfg.context,
        })
    }

    /// Scaled count context fed to the control network.
    pub fn context(&self, counts: &CountSample) -> Vec<T> {
        match self.context_mode {
            ContextMode::Terminal => vec![T::from_count(counts.terminal()) * self.context_scale],
            ContextMode::All => counts
                .cumulative
                .iter()
                .map(|&c| T::from_count(c) * self.context_scale)
                .collect(),
        }
    }

    fn neural_prior(&self) -> NeuralDrift<'_, T> {
        NeuralDrift {
            net: &self.prior,
            state_scale: self.state_scale,
            gain: self.drift_gain,
        }
    }

    fn diffusion_kind(&self) -> DiffusionKind<'_, T> {
        match &self.diffusion {
            Diffusion::Fixed { eta } => DiffusionKind::SqrtState { eta: *eta },
            Diffusion::Learned { net, gain, floor } => DiffusionKind::Neural(NeuralDiffusion {
                net,
                state_scale: self.state_scale,
                gain: *gain,
                floor: *floor,
            }),
        }
    }

    /// Dynamics of the prior `P_theta`.
    pub fn prior_spec(&self) -> DriftSpec<'_, T> {
        DriftSpec {
            drift: DriftKind::Neural(self.neural_prior()),
            diffusion: self.diffusion_kind(),
        }
    }

    /// Dynamics of the variational measure for a given (scaled) context.
    pub fn controlled_spec<'a>(&'a self, context: &'a [T]) -> DriftSpec<'a, T> {
        DriftSpec {
            drift: DriftKind::Controlled {
                prior: self.neural_prior(),
                control: NeuralControl {
                    net: &self.control,
                    context,
                    gain: self.control_gain,
                },
            },
            diffusion: self.diffusion_kind(),
        }
    }

    /// `u(k, t)`.
    pub fn control_value(&self, context: &[T], t: T) -> Result<T> {
        let mut x = context.to_vec();
        x.push(t);
        Ok(self.control_gain * self.control.forward(&x)?)
    }

    /// `b(z, t) + sigma(z, t) * u(k, t)` at `max(z, 0)`.
    pub fn controlled_drift(&self, z: T, t: T, context: &[T]) -> T {
        self.controlled_spec(context).coefficients(z, t).0
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            prior: self.prior.params().len(),
            control: self.control.params().len(),
            diffusion: match &self.diffusion {
                Diffusion::Learned { net, .. } => net.params().len(),
                Diffusion::Fixed { .. } => 0,
            },
        }
    }

    /// Stacked `[prior | control | diffusion]` parameters.
    pub fn flat_params(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.layout().total());
        v.extend_from_slice(self.prior.params());
        v.extend_from_slice(self.control.params());
        if let Diffusion::Learned { net, .. } = &self.diffusion {
            v.extend_from_slice(net.params());
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        let layout = self.layout();
        if flat.len() != layout.total() {
            return Err(Error::DimensionMismatch {
                expected: layout.total(),
                got: flat.len(),
            });
        }
        let (p, rest) = flat.split_at(layout.prior);
        let (c, d) = rest.split_at(layout.control);
        self.prior.params_mut().copy_from_slice(p);
        self.control.params_mut().copy_from_slice(c);
        if let Diffusion::Learned { net, .. } = &mut self.diffusion {
            net.params_mut().copy_from_slice(d);
        }
        Ok(())
    }

    /// `m` paths of the controlled SDE for the context of `counts`; path `j`
    /// uses noise seed `SeedTree(seed).child(j)`.
    pub fn posterior_paths(
        &self,
        counts: &CountSample,
        grid: TimeGrid,
        m: usize,
        seed: u64,
    ) -> Result<Vec<IntensityPath<T>>> {
        let ctx = self.context(counts);
        let spec = self.controlled_spec(&ctx);
        let root = SeedTree::new(seed);
        (0..m)
            .map(|j| crate::sde::simulate_path(&spec, self.z0, grid, root.child(j as u64).seed()))
            .collect()
    }

    /// One path of the prior dynamics.
    pub fn prior_path(&self, grid: TimeGrid, seed: u64) -> Result<IntensityPath<T>> {
        crate::sde::simulate_path(&self.prior_spec(), self.z0, grid, seed)
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let diffusion = match &self.diffusion {
            Diffusion::Fixed { eta } => json!({"mode": "fixed", "eta": eta.as_f64()}),
            Diffusion::Learned { gain, floor, .. } => {
                json!({"mode": "learned", "gain": gain.as_f64(), "floor": floor.as_f64()})
            }
        };
        let mut ck = Checkpoint::new(json!({
            "kind": "dspp-variational-model",
            "diffusion": diffusion,
            "z0": self.z0.as_f64(),
            "state_scale": self.state_scale.as_f64(),
            "context_scale": self.context_scale.as_f64(),
            "drift_gain": self.drift_gain.as_f64(),
            "control_gain": self.control_gain.as_f64(),
            "context": self.context_mode,
            "extra": extra,
        }));
        ck.push(Section::network("prior_drift", &self.prior));
        ck.push(Section::network("control", &self.control));
        if let Diffusion::Learned { net, .. } = &self.diffusion {
            ck.push(Section::network("diffusion", net));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.metadata;
        let num = |v: &serde_json::Value, key: &str| -> Result<T> {
            v.get(key)
                .and_then(|x| x.as_f64())
                .map(T::lit)
                .ok_or_else(|| Error::Checkpoint(format!("metadata field `{key}` missing")))
        };
        if meta.get("kind").and_then(|k| k.as_str()) != Some("dspp-variational-model") {
            return Err(Error::Checkpoint("not a variational model checkpoint".into()));
        }
        let dmeta = meta
            .get("diffusion")
            .ok_or_else(|| Error::Checkpoint("metadata field `diffusion` missing".into()))?;
        let diffusion = match dmeta.get("mode").and_then(|m| m.as_str()) {
            Some("fixed") => Diffusion::Fixed {
                eta: num(dmeta, "eta")?,
            },
            Some("learned") => Diffusion::Learned {
                net: ck.require("diffusion")?.to_network()?,
                gain: num(dmeta, "gain")?,
                floor: num(dmeta, "floor")?,
            },
            other => {
                return Err(Error::Checkpoint(format!("unknown diffusion mode {other:?}")));
            }
        };
        let context_mode = meta
            .get("context")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Checkpoint(e.to_string()))?
            .unwrap_or_default();
        Ok(Self {
            prior: ck.require("prior_drift")?.to_network()?,
            control: ck.require("control")?.to_network()?,
            diffusion,
            z0: num(meta, "z0")?,
            state_scale: num(meta, "state_scale")?,
            context_scale: num(meta, "context_scale")?,
            drift_gain: num(meta, "drift_gain")?,
            control_gain: num(meta, "control_gain")?,
            context_mode,
        })
    }
}
