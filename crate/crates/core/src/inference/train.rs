use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde_json::json;

use super::elbo::estimate;
use super::{Adam, AdamConfig, ModelConfig, VariationalModel};
use crate::checkpoint::{Checkpoint, Section};
use crate::dspp::Dataset;
use crate::sde::TimeGrid;
use crate::seed::{stream, SeedTree};
use crate::{Error, Result, Scalar};

pub const TRACE_SCHEMA: &str = "# schema: dspp-train-trace/1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Inner Monte Carlo paths per sample.
    pub n_mc: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub lr_theta: f64,
    pub lr_beta: f64,
    /// Learning rate of the diffusion network, when it is learned.
    pub lr_sigma: f64,
    pub adam: AdamConfig,
    pub grid: TimeGrid,
    pub seed: u64,
    /// Reuse one set of inner noise paths for every update (plain SAA) instead
    /// of fresh paths per update.
    pub fixed_inner_samples: bool,
    /// Minibatches drawn per epoch; `None` means a full pass (`n / minibatch`).
    pub batches_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_mc: 5,
            minibatch: 10,
            epochs: 35,
            lr_theta: 0.01,
            lr_beta: 0.01,
            lr_sigma: 0.01,
            adam: AdamConfig::default(),
            grid: TimeGrid::with_spacing(4.0, 1.0 / 15.0).expect("default grid"),
            seed: 0,
            fixed_inner_samples: false,
            batches_per_epoch: Some(10),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.n_mc == 0 || self.minibatch == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "n_mc, minibatch and epochs must be positive".into(),
            ));
        }
        if self.batches_per_epoch == Some(0) {
            return Err(Error::InvalidArgument("batches_per_epoch must be positive".into()));
        }
        if self.minibatch > dataset_len {
            return Err(Error::InvalidArgument(format!(
                "minibatch {} exceeds dataset size {dataset_len}",
                self.minibatch
            )));
        }
        for lr in [self.lr_theta, self.lr_beta, self.lr_sigma] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::InvalidArgument("learning rates must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn updates_per_epoch(&self, dataset_len: usize) -> usize {
        let full = dataset_len / self.minibatch;
        self.batches_per_epoch.map_or(full, |b| b.min(full))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Global index of the first update in this report.
    pub first_update: usize,
    pub elbo: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub wallclock_ms: Vec<f64>,
}

impl TrainReport {
    pub fn len(&self) -> usize {
        self.elbo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elbo.is_empty()
    }

    /// `update,elbo,grad_norm,wallclock_ms`; wallclock is cumulative since the
    /// start of the run.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_SCHEMA}")?;
        writeln!(w, "update,elbo,grad_norm,wallclock_ms")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{:.3}",
                self.first_update + i,
                self.elbo[i],
                self.grad_norm[i],
                self.wallclock_ms[i]
            )?;
        }
        Ok(())
    }
}

/// Model plus optimizer state; resumable across calls.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: VariationalModel<T>,
    pub adam: Adam<T>,
    pub updates_done: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: VariationalModel<T>, adam: AdamConfig) -> Self {
        let n = model.layout().total();
        Self {
            model,
            adam: Adam::new(adam, n),
            updates_done: 0,
        }
    }

    /// Runs `epochs * updates_per_epoch` Adam ascent steps. Epoch `e` (global)
    /// shuffles with `SeedTree(seed).child(SHUFFLE).child(e)`; update `u`
    /// (global) draws the inner paths of dataset sample `i` from
    /// `SeedTree(seed).child(INNER_MC).child(u).child(i)`.
    pub fn run(&mut self, dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        config.validate(dataset.len())?;
        let per_epoch = config.updates_per_epoch(dataset.len());
        let layout = self.model.layout();
        let (c_off, d_off) = (layout.control_offset(), layout.diffusion_offset());
        let lr_theta = T::lit(config.lr_theta);
        let lr_beta = T::lit(config.lr_beta);
        let lr_sigma = T::lit(config.lr_sigma);
        let lr = |i: usize| {
            if i < c_off {
                lr_theta
            } else if i < d_off {
                lr_beta
            } else {
                lr_sigma
            }
        };

        let root = SeedTree::new(config.seed);
        let mut report = TrainReport {
            first_update: self.updates_done,
            ..TrainReport::default()
        };
        let start = Instant::now();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut params = self.model.flat_params();

        for _ in 0..config.epochs {
            let epoch = self.updates_done / per_epoch.max(1);
            order.sort_unstable();
            order.shuffle(&mut root.child(stream::SHUFFLE).child(epoch as u64).rng());
            for chunk in order.chunks_exact(config.minibatch).take(per_epoch) {
                let update = self.updates_done;
                let inner = if config.fixed_inner_samples {
                    root.child(stream::INNER_MC)
                } else {
                    root.child(stream::INNER_MC).child(update as u64)
                };
                let batch: Vec<_> = chunk.iter().map(|&i| dataset.samples[i].clone()).collect();
                let seeds: Vec<u64> = chunk.iter().map(|&i| inner.child(i as u64).seed()).collect();
                let est = estimate(
                    &self.model,
                    &batch,
                    &seeds,
                    &dataset.scheme,
                    config.grid,
                    config.n_mc,
                    true,
                )
                .map_err(|e| Error::Divergence {
                    update,
                    what: e.to_string(),
                })?;
                if !est.value.is_finite() {
                    return Err(Error::Divergence {
                        update,
                        what: format!("objective {}", est.value),
                    });
                }
                let norm = est
                    .gradient
                    .iter()
                    .fold(T::zero(), |a, g| a + *g * *g)
                    .sqrt();
                if !norm.is_finite() {
                    return Err(Error::Divergence {
                        update,
                        what: "non-finite gradient".into(),
                    });
                }
                self.adam.ascend(&mut params, &est.gradient, lr);
                self.model.set_flat_params(&params)?;
                self.updates_done += 1;

                report.elbo.push(est.value.as_f64());
                report.grad_norm.push(norm.as_f64());
                report
                    .wallclock_ms
                    .push(start.elapsed().as_secs_f64() * 1e3);
            }
        }
        Ok(report)
    }

    /// Checkpoint with the model, Adam moments and the update counter.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut ck = self.model.to_checkpoint(json!({
            "updates": self.updates_done,
            "adam_steps": self.adam.steps,
            "adam": {
                "beta1": self.adam.config.beta1,
                "beta2": self.adam.config.beta2,
                "eps": self.adam.config.eps,
            },
            "run": extra,
        }));
        ck.push(Section::vector("adam_m", &self.adam.m));
        ck.push(Section::vector("adam_v", &self.adam.v));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = VariationalModel::from_checkpoint(ck)?;
        let extra = ck.metadata.get("extra");
        let get = |k: &str| extra.and_then(|e| e.get(k));
        let updates = get("updates").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        let steps = get("adam_steps").and_then(|v| v.as_u64()).unwrap_or(0);
        let adam_cfg = get("adam")
            .map(|a| AdamConfig {
                beta1: a.get("beta1").and_then(|v| v.as_f64()).unwrap_or(0.9),
                beta2: a.get("beta2").and_then(|v| v.as_f64()).unwrap_or(0.999),
                eps: a.get("eps").and_then(|v| v.as_f64()).unwrap_or(1e-8),
            })
            .unwrap_or_default();
        let n = model.layout().total();
        let mut adam = Adam::new(adam_cfg, n);
        if let (Some(m), Some(v)) = (ck.section("adam_m"), ck.section("adam_v")) {
            if m.values.len() != n || v.values.len() != n {
                return Err(Error::Checkpoint("optimizer state size mismatch".into()));
            }
            adam.m = m.to_vector();
            adam.v = v.to_vector();
            adam.steps = steps;
        }
        Ok(Self {
            model,
            adam,
            updates_done: updates,
        })
    }
}

/// Initializes a model from `arch` with `init_seed` and trains it.
pub fn train<T: Scalar>(
    dataset: &Dataset,
    config: &TrainConfig,
    arch: &ModelConfig,
    init_seed: u64,
) -> Result<(VariationalModel<T>, TrainReport)> {
    let model = VariationalModel::init(arch, dataset.scheme.len(), init_seed)?;
    let mut trainer = Trainer::new(model, config.adam);
    let report = trainer.run(dataset, config)?;
    Ok((trainer.model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dspp::{generate_dataset, ObservationScheme};
    use crate::sde::DriftSpec;

    fn setup() -> (Dataset, TrainConfig, ModelConfig) {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let scheme = ObservationScheme::half_and_end(&grid).unwrap();
        let truth = DriftSpec::cir(0.3, 20.0, 0.0);
        let data = generate_dataset(&truth, 20.0, grid, &scheme, 8, 3, false).unwrap();
        let cfg = TrainConfig {
            n_mc: 2,
            minibatch: 4,
            epochs: 2,
            grid,
            seed: 5,
            batches_per_epoch: None,
            ..TrainConfig::default()
        };
        let arch = ModelConfig {
            prior_layers: 2,
            prior_width: 4,
            control_layers: 2,
            control_width: 4,
            z0: 20.0,
            ..ModelConfig::default()
        };
        (data, cfg, arch)
    }

    #[test]
    fn trace_length_and_determinism() {
        let (data, cfg, arch) = setup();
        let (m1, r1) = train::<f64>(&data, &cfg, &arch, 1).unwrap();
        let (m2, r2) = train::<f64>(&data, &cfg, &arch, 1).unwrap();
        assert_eq!(r1.len(), 2 * (8 / 4));
        assert_eq!(r1.elbo, r2.elbo);
        assert_eq!(r1.grad_norm, r2.grad_norm);
        assert_eq!(m1, m2);
        assert!(r1.grad_norm.iter().all(|g| g.is_finite() && *g > 0.0));
    }

    #[test]
    fn resume_continues_numbering() {
        let (data, cfg, arch) = setup();
        let model = VariationalModel::<f64>::init(&arch, 2, 1).unwrap();
        let mut full = Trainer::new(model.clone(), cfg.adam);
        let one = TrainConfig { epochs: 1, ..cfg.clone() };
        full.run(&data, &cfg).unwrap();

        let mut first = Trainer::new(model, cfg.adam);
        first.run(&data, &one).unwrap();
        let ck = first.to_checkpoint(json!({}));
        let mut resumed = Trainer::<f64>::from_checkpoint(&ck).unwrap();
        assert_eq!(resumed.updates_done, 2);
        let report = resumed.run(&data, &one).unwrap();
        assert_eq!(report.first_update, 2);
        assert_eq!(resumed.model, full.model);
    }

    #[test]
    fn rejects_bad_configs() {
        let (data, cfg, arch) = setup();
        let big = TrainConfig { minibatch: 9, ..cfg.clone() };
        assert!(train::<f64>(&data, &big, &arch, 1).is_err());
        let zero = TrainConfig { n_mc: 0, ..cfg };
        assert!(train::<f64>(&data, &zero, &arch, 1).is_err());
    }

    #[test]
    fn trace_csv_shape() {
        let (data, cfg, arch) = setup();
        let (_, r) = train::<f64>(&data, &cfg, &arch, 1).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[1], "update,elbo,grad_norm,wallclock_ms");
        assert_eq!(lines.len(), 2 + r.len());
        assert!(lines[2].starts_with("0,"));
    }
}
