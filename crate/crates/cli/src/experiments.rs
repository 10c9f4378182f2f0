//! The experiment suites: intensity curves, run-through tables, the noise
//! sweep, the NHPP piece sweep and the learned-diffusion comparison.
//!
//! Seeds: an experiment rooted at master seed `s` generates its training data
//! from `s`, its held-out test set from `SeedTree(s).child(TEST_SET)`, trains
//! with `s`, draws curve paths for test sample `i` from
//! `SeedTree(s).child(POSTERIOR).child(i)` and runs service `j` from
//! `SeedTree(s).child(RUN_THROUGH).child(j)` (shared by all traffic sources,
//! so they see common random numbers). Sweep point `i` uses the master
//! `SeedTree(seed).child(ETA_SWEEP + i)` (or `D_SWEEP`, `LEARNED`).

use std::io::Write;

use dspp_core::baselines::{pl_mle, PiecewiseIntensity};
use dspp_core::dspp::{generate_dataset, Dataset};
use dspp_core::inference::{train, DiffusionConfig, ModelConfig, TrainReport, VariationalModel};
use dspp_core::queueing::{run_through, RunThrough, ServiceDist, TrafficSource};
use dspp_core::seed::{stream, SeedTree};
use dspp_core::stats::SummaryStats;

use crate::config::{ExperimentConfig, TruthConfig};
use crate::CliResult;

pub const CURVES_SCHEMA: &str = "# schema: dspp-intensity-curves/1";
pub const INTEGRATED_SCHEMA: &str = "# schema: dspp-integrated-curves/1";
pub const ETA_SWEEP_SCHEMA: &str = "# schema: dspp-eta-sweep/1";
pub const D_SWEEP_SCHEMA: &str = "# schema: dspp-d-sweep/1";

/// Seed labels of the sweep experiments.
pub mod labels {
    pub const ETA_SWEEP: u64 = 1000;
    pub const D_SWEEP: u64 = 2000;
    pub const LEARNED: u64 = 3000;
}

pub fn sweep_seed(master: u64, label: u64, index: usize) -> u64 {
    SeedTree::new(master).child(label + index as u64).seed()
}

/// Training data for `truth`, seeded by `master`.
pub fn training_set(cfg: &ExperimentConfig, truth: &TruthConfig, master: u64, keep_paths: bool) -> CliResult<Dataset> {
    Ok(generate_dataset(
        &truth.spec(),
        truth.z0,
        cfg.grid()?,
        &cfg.scheme()?,
        cfg.dataset.n,
        master,
        keep_paths,
    )?)
}

/// Held-out truth samples, latent paths included.
pub fn test_set(cfg: &ExperimentConfig, truth: &TruthConfig, master: u64) -> CliResult<Dataset> {
    Ok(generate_dataset(
        &truth.spec(),
        truth.z0,
        cfg.grid()?,
        &cfg.scheme()?,
        cfg.dataset.test_n,
        SeedTree::new(master).child(stream::TEST_SET).seed(),
        true,
    )?)
}

pub fn fit_model(
    cfg: &ExperimentConfig,
    data: &Dataset,
    arch: &ModelConfig,
    master: u64,
) -> CliResult<(VariationalModel<f64>, TrainReport)> {
    Ok(train::<f64>(data, &cfg.train_config(master)?, arch, master)?)
}

/// Mean intensity curves on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub times: Vec<f64>,
    pub test: Vec<f64>,
    /// Average over test samples of the posterior mean given their counts.
    pub dlm: Vec<f64>,
    pub pl: Vec<f64>,
}

pub fn intensity_curves(
    cfg: &ExperimentConfig,
    model: &VariationalModel<f64>,
    test: &Dataset,
    pl: &PiecewiseIntensity,
    master: u64,
) -> CliResult<Curves> {
    let grid = cfg.grid()?;
    let paths = test
        .paths
        .as_ref()
        .ok_or_else(|| crate::CliError::Config("test set has no latent paths".into()))?;
    let n = grid.steps() + 1;
    let m = cfg.report.curve_paths;
    let root = SeedTree::new(master).child(stream::POSTERIOR);
    let mut test_mean = vec![0.0; n];
    let mut dlm = vec![0.0; n];
    for (i, (counts, truth)) in test.samples.iter().zip(paths).enumerate() {
        for (acc, v) in test_mean.iter_mut().zip(&truth.values) {
            *acc += v;
        }
        for p in model.posterior_paths(counts, grid, m, root.child(i as u64).seed())? {
            for (acc, v) in dlm.iter_mut().zip(&p.values) {
                *acc += v;
            }
        }
    }
    let k = test.len() as f64;
    test_mean.iter_mut().for_each(|v| *v /= k);
    dlm.iter_mut().for_each(|v| *v /= k * m as f64);
    let times: Vec<f64> = grid.times().collect();
    let pl_curve = times
        .iter()
        .map(|&t| pl.evaluate(t))
        .collect::<dspp_core::Result<Vec<_>>>()?;
    Ok(Curves {
        times,
        test: test_mean,
        dlm,
        pl: pl_curve,
    })
}

/// Integrated mean intensity `int_0^t`: left Riemann sums for the simulated
/// curves, exact for the piecewise-linear fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Integrated {
    pub times: Vec<f64>,
    pub test: Vec<f64>,
    pub dlm: Vec<f64>,
    pub pl: Vec<f64>,
}

pub fn integrated_curves(curves: &Curves, pl: &PiecewiseIntensity) -> CliResult<Integrated> {
    let cumulate = |v: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for (w, t) in v.windows(2).zip(curves.times.windows(2)) {
            acc += w[0] * (t[1] - t[0]);
            out.push(acc);
        }
        out
    };
    let pl_int = curves
        .times
        .iter()
        .map(|&t| pl.integrated(0.0, t))
        .collect::<dspp_core::Result<Vec<_>>>()?;
    Ok(Integrated {
        times: curves.times.clone(),
        test: cumulate(&curves.test),
        dlm: cumulate(&curves.dlm),
        pl: pl_int,
    })
}

/// Run-through rows labelled `test`, `dlm` and `pl`.
pub type SourceRows = Vec<(String, RunThrough)>;

pub fn compare_sources(
    cfg: &ExperimentConfig,
    truth: &TruthConfig,
    model: &VariationalModel<f64>,
    pl: &PiecewiseIntensity,
    service: &ServiceDist,
    seed: u64,
) -> CliResult<SourceRows> {
    let grid = cfg.grid()?;
    let scheme = cfg.scheme()?;
    let probes = scheme.epochs().to_vec();
    let spec = truth.spec();
    let r = cfg.runthrough.replications;
    let sources = [
        ("test", TrafficSource::Truth { spec: &spec, z0: truth.z0 }),
        (
            "dlm",
            TrafficSource::Dlm {
                model,
                scheme: &scheme,
                mode: cfg.runthrough.dlm_mode,
            },
        ),
        ("pl", TrafficSource::Piecewise(pl)),
    ];
    sources
        .iter()
        .map(|(label, src)| Ok((label.to_string(), run_through(src, service, grid, &probes, r, seed)?)))
        .collect()
}

pub fn runthrough_seed(master: u64, service_index: usize) -> u64 {
    SeedTree::new(master)
        .child(stream::RUN_THROUGH)
        .child(service_index as u64)
        .seed()
}

/// Everything an experiment on one truth model produces.
pub struct Fitted {
    pub data: Dataset,
    pub model: VariationalModel<f64>,
    pub report: TrainReport,
    pub pl: PiecewiseIntensity,
}

pub fn fit_all(
    cfg: &ExperimentConfig,
    truth: &TruthConfig,
    arch: &ModelConfig,
    pieces: usize,
    master: u64,
) -> CliResult<Fitted> {
    let data = training_set(cfg, truth, master, false)?;
    let (model, report) = fit_model(cfg, &data, arch, master)?;
    let pl = pl_mle(&data, pieces)?;
    Ok(Fitted {
        data,
        model,
        report,
        pl,
    })
}

/// One sweep point: its parameter and the source rows.
#[derive(Debug, Clone)]
pub struct SweepPoint<K> {
    pub key: K,
    pub rows: SourceRows,
}

/// Occupancy under the first configured service as the truth's noise level
/// varies; the model's known diffusion follows the truth.
pub fn eta_sweep(cfg: &ExperimentConfig) -> CliResult<Vec<SweepPoint<f64>>> {
    let service = first_service(cfg)?;
    cfg.report
        .eta_sweep
        .iter()
        .enumerate()
        .map(|(i, &eta)| {
            let master = sweep_seed(cfg.seed, labels::ETA_SWEEP, i);
            let truth = cfg.truth.with_eta(eta);
            let arch = ModelConfig {
                diffusion: DiffusionConfig::Fixed { eta },
                ..cfg.model
            };
            let fit = fit_all(cfg, &truth, &arch, cfg.baseline.d, master)?;
            let rows = compare_sources(cfg, &truth, &fit.model, &fit.pl, &service, runthrough_seed(master, 0))?;
            Ok(SweepPoint { key: eta, rows })
        })
        .collect()
}

/// NHPP truth (the configured drift with no noise); the model assumes
/// diffusion `d^{-1/2} sqrt(z)` and the baseline uses `d` pieces.
pub fn d_sweep(cfg: &ExperimentConfig) -> CliResult<Vec<SweepPoint<usize>>> {
    let service = first_service(cfg)?;
    let truth = TruthConfig {
        eta: 0.0,
        alpha: None,
        ..cfg.truth
    };
    cfg.report
        .d_sweep
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let master = sweep_seed(cfg.seed, labels::D_SWEEP, i);
            let arch = ModelConfig {
                diffusion: DiffusionConfig::Fixed {
                    eta: 1.0 / (d as f64).sqrt(),
                },
                ..cfg.model
            };
            let fit = fit_all(cfg, &truth, &arch, d, master)?;
            let rows = compare_sources(cfg, &truth, &fit.model, &fit.pl, &service, runthrough_seed(master, 0))?;
            Ok(SweepPoint { key: d, rows })
        })
        .collect()
}

/// Traffic counts when the diffusion is learned by a third network.
pub fn learned_diffusion(cfg: &ExperimentConfig) -> CliResult<Option<SourceRows>> {
    let Some(l) = cfg.report.learned_diffusion else {
        return Ok(None);
    };
    let service = first_service(cfg)?;
    let master = sweep_seed(cfg.seed, labels::LEARNED, 0);
    let arch = ModelConfig {
        diffusion: l.diffusion(),
        z0: l.truth.z0,
        ..cfg.model
    };
    let fit = fit_all(cfg, &l.truth, &arch, cfg.baseline.d, master)?;
    compare_sources(cfg, &l.truth, &fit.model, &fit.pl, &service, runthrough_seed(master, 0)).map(Some)
}

fn first_service(cfg: &ExperimentConfig) -> CliResult<ServiceDist> {
    cfg.runthrough
        .services
        .first()
        .map(|s| s.service)
        .ok_or_else(|| crate::CliError::Config("no run-through service configured".into()))
}

pub fn find<'a>(rows: &'a SourceRows, label: &str) -> &'a RunThrough {
    &rows
        .iter()
        .find(|(l, _)| l == label)
        .unwrap_or_else(|| panic!("missing source {label}"))
        .1
}

pub fn write_curves<W: Write>(mut w: W, c: &Curves) -> CliResult<()> {
    writeln!(w, "{CURVES_SCHEMA}")?;
    writeln!(w, "t,test_mean,dlm_mean,pl")?;
    for i in 0..c.times.len() {
        writeln!(w, "{},{},{},{}", c.times[i], c.test[i], c.dlm[i], c.pl[i])?;
    }
    Ok(())
}

pub fn write_integrated<W: Write>(mut w: W, c: &Integrated) -> CliResult<()> {
    writeln!(w, "{INTEGRATED_SCHEMA}")?;
    writeln!(w, "t,test,dlm,pl")?;
    for i in 0..c.times.len() {
        writeln!(w, "{},{},{},{}", c.times[i], c.test[i], c.dlm[i], c.pl[i])?;
    }
    Ok(())
}

fn stats_fields(s: &SummaryStats) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.6},{:.6},{}",
        s.mean, s.ci_half, s.variance, s.var_lo, s.var_hi, s.n
    )
}

/// Occupancy rows per noise level.
pub fn write_eta_sweep<W: Write>(mut w: W, points: &[SweepPoint<f64>]) -> CliResult<()> {
    writeln!(w, "{ETA_SWEEP_SCHEMA}")?;
    writeln!(w, "eta,source,probe,mean,ci_half,variance,var_lo,var_hi,replications")?;
    for p in points {
        for (label, rt) in &p.rows {
            for (t, s) in rt.probes.iter().zip(&rt.occupancy) {
                writeln!(w, "{},{label},{t},{}", p.key, stats_fields(s))?;
            }
        }
    }
    Ok(())
}

/// Traffic-count rows per piece count.
pub fn write_d_sweep<W: Write>(mut w: W, points: &[SweepPoint<usize>]) -> CliResult<()> {
    writeln!(w, "{D_SWEEP_SCHEMA}")?;
    writeln!(w, "d,source,probe,mean,ci_half,variance,var_lo,var_hi,replications")?;
    for p in points {
        for (label, rt) in &p.rows {
            for (t, s) in rt.probes.iter().zip(&rt.traffic) {
                writeln!(w, "{},{label},{t},{}", p.key, stats_fields(s))?;
            }
        }
    }
    Ok(())
}
