//! Subcommand bodies. All files live under the configured output directory:
//!
//! | file | written by |
//! |------|------------|
//! | `dataset.csv`, `dataset.meta.json`, `paths.csv` (with `--keep-paths`) | `generate` |
//! | `model.ckpt`, `trace.csv` | `train` |
//! | `baseline_pc.csv`, `baseline_pl_d{d}.csv` | `baseline` |
//! | `runthrough_{service}.csv` | `runthrough`, `report` |
//! | `intensity_curves.csv`, `integrated_curves.csv`, `eta_sweep.csv`, `d_sweep.csv`, `learned_diffusion.csv`, `report.meta.json` | `report` |

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dspp_core::baselines::{pc_mle, pl_mle, PiecewiseIntensity};
use dspp_core::checkpoint::Checkpoint;
use dspp_core::dspp::Dataset;
use dspp_core::inference::{Trainer, TrainReport, VariationalModel};
use dspp_core::queueing::{write_results_csv, Metric};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::experiments::{self, compare_sources, runthrough_seed};
use crate::{CliError, CliResult};

pub const DATASET_FILE: &str = "dataset.csv";
pub const DATASET_META_FILE: &str = "dataset.meta.json";
pub const PATHS_FILE: &str = "paths.csv";
pub const PATHS_SCHEMA: &str = "# schema: dspp-paths/1";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "trace.csv";
pub const PC_FILE: &str = "baseline_pc.csv";
pub const REPORT_META_FILE: &str = "report.meta.json";

pub fn pl_file(d: usize) -> String {
    format!("baseline_pl_d{d}.csv")
}

pub fn runthrough_file(service: &str) -> String {
    format!("runthrough_{service}.csv")
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(io_at(&path))?))
}

fn open(dir: &Path, name: &str) -> CliResult<BufReader<File>> {
    let path = dir.join(name);
    Ok(BufReader::new(File::open(&path).map_err(io_at(&path))?))
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> CliResult<PathBuf>
where
    F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
{
    let mut w = create(dir, name)?;
    f(&mut w)?;
    w.flush().map_err(io_at(&dir.join(name)))?;
    Ok(dir.join(name))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> CliResult<PathBuf> {
    write_with(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

/// Training data from the configured truth.
pub fn cmd_generate(cfg: &ExperimentConfig, keep_paths: bool) -> CliResult<Dataset> {
    let data = experiments::training_set(cfg, &cfg.truth, cfg.seed, keep_paths)?;
    let out = &cfg.out;
    write_with(out, DATASET_FILE, |w| Ok(data.write_csv(w)?))?;
    write_json(
        out,
        DATASET_META_FILE,
        &json!({
            "schema": "dspp-dataset-meta/1",
            "generator": data.provenance,
            "truth": cfg.truth,
            "epochs": data.scheme.epochs(),
        }),
    )?;
    if let Some(paths) = &data.paths {
        write_with(out, PATHS_FILE, |w| {
            writeln!(w, "{PATHS_SCHEMA}")?;
            writeln!(w, "sample_id,t,value")?;
            for (i, p) in paths.iter().enumerate() {
                for (t, v) in p.grid.times().zip(&p.values) {
                    writeln!(w, "{i},{t},{v}")?;
                }
            }
            Ok(())
        })?;
    }
    let (mean, var) = terminal_moments(&data);
    eprintln!(
        "generated {} samples; terminal count mean {mean:.2}, index of dispersion {:.3}",
        data.len(),
        var / mean.max(f64::MIN_POSITIVE)
    );
    Ok(data)
}

fn terminal_moments(data: &Dataset) -> (f64, f64) {
    let xs: Vec<f64> = data.samples.iter().map(|s| s.terminal() as f64).collect();
    if xs.len() < 2 {
        return (xs.first().copied().unwrap_or(0.0), 0.0);
    }
    (
        dspp_core::stats::mean(&xs),
        dspp_core::stats::sample_variance(&xs),
    )
}

pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    let data = Dataset::read_csv(open(&cfg.out, DATASET_FILE)?, &cfg.grid()?)?;
    if data.scheme != cfg.scheme()? {
        return Err(CliError::Config(format!(
            "dataset epochs {:?} differ from the configured scheme",
            data.scheme.epochs()
        )));
    }
    Ok(data)
}

pub struct TrainOutcome {
    pub model: VariationalModel<f64>,
    pub report: TrainReport,
    pub checkpoint: PathBuf,
}

/// Trains from scratch, or continues from `resume` with update numbering
/// carried over. `init_only` writes the initialized model without training.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    data: &Dataset,
    resume: Option<&Path>,
    init_only: bool,
) -> CliResult<TrainOutcome> {
    let tc = cfg.train_config(cfg.seed)?;
    let mut trainer = match resume {
        Some(path) => Trainer::from_checkpoint(&Checkpoint::load(path)?)?,
        None => Trainer::new(
            VariationalModel::init(&cfg.model, data.scheme.len(), cfg.seed)?,
            tc.adam,
        ),
    };
    let report = if init_only {
        TrainReport {
            first_update: trainer.updates_done,
            ..TrainReport::default()
        }
    } else {
        trainer.run(data, &tc)?
    };
    let ck = trainer.to_checkpoint(json!({
        "seed": cfg.seed,
        "dataset_size": data.len(),
    }));
    fs::create_dir_all(&cfg.out).map_err(io_at(&cfg.out))?;
    let path = cfg.out.join(CHECKPOINT_FILE);
    ck.save(&path)?;
    write_with(&cfg.out, TRACE_FILE, |w| Ok(report.write_csv(w)?))?;
    if let Some(last) = report.elbo.last() {
        eprintln!(
            "trained updates {}..{}; final minibatch objective {last:.3}",
            report.first_update,
            report.first_update + report.len()
        );
    }
    Ok(TrainOutcome {
        model: trainer.model,
        report,
        checkpoint: path,
    })
}

pub fn load_model(cfg: &ExperimentConfig) -> CliResult<(VariationalModel<f64>, bool)> {
    let ck = Checkpoint::load(cfg.out.join(CHECKPOINT_FILE))?;
    let updates = ck
        .metadata
        .get("extra")
        .and_then(|e| e.get("updates"))
        .and_then(|u| u.as_u64())
        .unwrap_or(0);
    Ok((VariationalModel::from_checkpoint(&ck)?, updates > 0))
}

/// Piecewise-constant fit and one piecewise-linear fit per configured piece
/// count; returns the main (`baseline.d`) linear fit.
pub fn cmd_baseline(cfg: &ExperimentConfig, data: &Dataset) -> CliResult<PiecewiseIntensity> {
    let pc = pc_mle(data)?;
    write_with(&cfg.out, PC_FILE, |w| Ok(pc.write_csv(w)?))?;
    let mut ds = cfg.baseline.sweep.clone();
    ds.push(cfg.baseline.d);
    ds.sort_unstable();
    ds.dedup();
    let mut main = None;
    for d in ds {
        let fit = pl_mle(data, d)?;
        write_with(&cfg.out, &pl_file(d), |w| Ok(fit.write_csv(w)?))?;
        if d == cfg.baseline.d {
            main = Some(fit);
        }
    }
    Ok(main.expect("main piece count is fitted"))
}

pub fn load_pl(cfg: &ExperimentConfig) -> CliResult<PiecewiseIntensity> {
    Ok(PiecewiseIntensity::read_csv(open(&cfg.out, &pl_file(cfg.baseline.d))?)?)
}

/// Occupancy tables, one file per configured service.
pub fn cmd_runthrough(
    cfg: &ExperimentConfig,
    model: &VariationalModel<f64>,
    pl: &PiecewiseIntensity,
) -> CliResult<Vec<(String, experiments::SourceRows)>> {
    let mut tables = Vec::new();
    for (j, named) in cfg.runthrough.services.iter().enumerate() {
        let rows = compare_sources(cfg, &cfg.truth, model, pl, &named.service, runthrough_seed(cfg.seed, j))?;
        write_with(&cfg.out, &runthrough_file(&named.name), |w| {
            let refs: Vec<(&str, &_)> = rows.iter().map(|(l, r)| (l.as_str(), r)).collect();
            Ok(write_results_csv(w, &refs, Metric::Occupancy)?)
        })?;
        tables.push((named.name.clone(), rows));
    }
    Ok(tables)
}

/// Every report section enabled in the configuration.
pub fn cmd_report(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: &VariationalModel<f64>,
    trained: bool,
) -> CliResult<Vec<PathBuf>> {
    let pl = pl_mle(data, cfg.baseline.d)?;
    let mut files = Vec::new();
    if cfg.report.curves {
        let test = experiments::test_set(cfg, &cfg.truth, cfg.seed)?;
        let curves = experiments::intensity_curves(cfg, model, &test, &pl, cfg.seed)?;
        files.push(write_with(&cfg.out, "intensity_curves.csv", |w| {
            experiments::write_curves(w, &curves)
        })?);
        let integrated = experiments::integrated_curves(&curves, &pl)?;
        files.push(write_with(&cfg.out, "integrated_curves.csv", |w| {
            experiments::write_integrated(w, &integrated)
        })?);
    }
    if cfg.report.tables {
        cmd_runthrough(cfg, model, &pl)?;
        files.extend(cfg.runthrough.services.iter().map(|s| cfg.out.join(runthrough_file(&s.name))));
    }
    if !cfg.report.eta_sweep.is_empty() {
        let points = experiments::eta_sweep(cfg)?;
        files.push(write_with(&cfg.out, "eta_sweep.csv", |w| {
            experiments::write_eta_sweep(w, &points)
        })?);
    }
    if !cfg.report.d_sweep.is_empty() {
        let points = experiments::d_sweep(cfg)?;
        files.push(write_with(&cfg.out, "d_sweep.csv", |w| {
            experiments::write_d_sweep(w, &points)
        })?);
    }
    if let Some(rows) = experiments::learned_diffusion(cfg)? {
        files.push(write_with(&cfg.out, "learned_diffusion.csv", |w| {
            let refs: Vec<(&str, &_)> = rows.iter().map(|(l, r)| (l.as_str(), r)).collect();
            Ok(write_results_csv(w, &refs, Metric::Traffic)?)
        })?);
    }
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    files.push(write_json(
        &cfg.out,
        REPORT_META_FILE,
        &json!({
            "schema": "dspp-report-meta/1",
            "trained": trained,
            "seed": cfg.seed,
            "files": names,
        }),
    )?);
    Ok(files)
}
