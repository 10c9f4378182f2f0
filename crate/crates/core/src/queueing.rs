//! Run-through experiments: infinite-server queues fed by traffic drawn from a
//! true, DLM-estimated or piecewise-linear intensity model.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::PiecewiseIntensity;
use crate::dspp::{sample_counts, sample_poisson, ObservationScheme};
use crate::inference::VariationalModel;
use crate::sde::{simulate_path, DriftSpec, IntensityPath, TimeGrid};
use crate::seed::{stream, SeedTree};
use crate::stats::{summarize, SummaryStats};
use crate::{Error, Result};

pub const RESULTS_SCHEMA: &str = "# schema: dspp-runthrough/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ServiceDist {
    Exponential { rate: f64 },
    Erlang { k: u32, rate: f64 },
}

impl ServiceDist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ServiceDist::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            ServiceDist::Erlang { k, rate } => k >= 1 && rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid service distribution {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ServiceDist::Exponential { rate } => 1.0 / rate,
            ServiceDist::Erlang { k, rate } => k as f64 / rate,
        }
    }

    /// `P(S > t)`.
    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match *self {
            ServiceDist::Exponential { rate } => (-rate * t).exp(),
            ServiceDist::Erlang { k, rate } => {
                let x = rate * t;
                let mut term = 1.0;
                let mut sum = 1.0;
                for j in 1..k {
                    term *= x / j as f64;
                    sum += term;
                }
                (-x).exp() * sum
            }
        }
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            ServiceDist::Exponential { rate } => {
                Sampler::Exp(Exp::new(rate).map_err(|e| Error::InvalidArgument(e.to_string()))?)
            }
            ServiceDist::Erlang { k, rate } => Sampler::Gamma(
                Gamma::new(k as f64, 1.0 / rate).map_err(|e| Error::InvalidArgument(e.to_string()))?,
            ),
        })
    }
}

enum Sampler {
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
}

impl Sampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Exp(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
        }
    }
}

/// Sorted arrival epochs in `[0, T]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArrivalStream {
    pub times: Vec<f64>,
}

impl ArrivalStream {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of arrivals in `[0, t]`.
    pub fn count_until(&self, t: f64) -> usize {
        self.times.partition_point(|&a| a <= t)
    }
}

/// Cell `[t_m, t_{m+1})` receives `Poi(Z(t_m) dt)` arrivals placed uniformly
/// (sorted) inside it, so interval counts follow the same law as
/// [`crate::dspp::sample_counts`].
pub fn arrivals_from_path(path: &IntensityPath<f64>, seed: u64) -> ArrivalStream {
    let mut rng = SeedTree::new(seed).rng();
    let dt = path.grid.dt();
    let mut times = Vec::new();
    for m in 0..path.grid.steps() {
        let n = sample_poisson(path.values[m].max(0.0) * dt, &mut rng);
        let start = times.len();
        let t0 = path.grid.time(m);
        for _ in 0..n {
            times.push(t0 + dt * rng.random::<f64>());
        }
        times[start..].sort_by(f64::total_cmp);
    }
    ArrivalStream { times }
}

/// Busy servers at each probe: `#{i : a_i <= t < a_i + S_i}`.
pub fn simulate_infinite_server(
    stream: &ArrivalStream,
    service: &ServiceDist,
    probes: &[f64],
    seed: u64,
) -> Result<Vec<u64>> {
    let sampler = service.sampler()?;
    let mut rng = SeedTree::new(seed).rng();
    let mut busy = vec![0u64; probes.len()];
    for &a in &stream.times {
        let done = a + sampler.sample(&mut rng);
        for (b, &t) in busy.iter_mut().zip(probes) {
            if a <= t && t < done {
                *b += 1;
            }
        }
    }
    Ok(busy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DlmMode {
    /// Controlled dynamics conditioned on counts the fitted prior generates
    /// in each replication.
    Conditioned,
    /// The fitted prior alone.
    Prior,
}

pub enum TrafficSource<'a> {
    Truth {
        spec: &'a DriftSpec<'a, f64>,
        z0: f64,
    },
    Dlm {
        model: &'a VariationalModel<f64>,
        scheme: &'a ObservationScheme,
        mode: DlmMode,
    },
    Piecewise(&'a PiecewiseIntensity),
}

impl TrafficSource<'_> {
    /// Intensity path of one replication rooted at `rep`.
    fn draw(&self, grid: TimeGrid, rep: SeedTree, fixed: Option<&IntensityPath<f64>>) -> Result<IntensityPath<f64>> {
        if let Some(p) = fixed {
            return Ok(p.clone());
        }
        match self {
            TrafficSource::Truth { spec, z0 } => {
                simulate_path(spec, *z0, grid, rep.child(stream::PATH).seed())
            }
            TrafficSource::Dlm { model, scheme, mode } => match mode {
                DlmMode::Prior => model.prior_path(grid, rep.child(stream::PATH).seed()),
                DlmMode::Conditioned => {
                    let ctx_path = model.prior_path(grid, rep.child(stream::CONTEXT).seed())?;
                    let counts = sample_counts(&ctx_path, scheme, rep.child(stream::COUNTS).seed())?;
                    let ctx = model.context(&counts);
                    simulate_path(
                        &model.controlled_spec(&ctx),
                        model.z0,
                        grid,
                        rep.child(stream::POSTERIOR).seed(),
                    )
                }
            },
            TrafficSource::Piecewise(_) => unreachable!("piecewise paths are precomputed"),
        }
    }
}

/// Occupancy and cumulative traffic-count summaries per probe epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunThrough {
    pub probes: Vec<f64>,
    pub occupancy: Vec<SummaryStats>,
    pub traffic: Vec<SummaryStats>,
}

/// `replications` independent replications: intensity path, arrivals, then
/// occupancy. Replication `r` draws everything from
/// `SeedTree(seed).child(r)` (children PATH, ARRIVALS, SERVICE, and for the
/// conditioned DLM source CONTEXT, COUNTS, POSTERIOR).
pub fn run_through(
    source: &TrafficSource<'_>,
    service: &ServiceDist,
    grid: TimeGrid,
    probes: &[f64],
    replications: usize,
    seed: u64,
) -> Result<RunThrough> {
    if replications < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: replications,
        });
    }
    service.validate()?;
    let horizon = grid.horizon();
    if let Some(&t) = probes.iter().find(|&&t| !(0.0..=horizon).contains(&t)) {
        return Err(Error::OffGrid(t));
    }
    let fixed = match source {
        TrafficSource::Piecewise(pi) => Some(pi.to_path(grid)?),
        _ => None,
    };
    let root = SeedTree::new(seed);
    // Per replication: busy servers and cumulative arrivals at each probe.
    type Draw = (Vec<u64>, Vec<u64>);
    let reps: Vec<Draw> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let rep = root.child(r as u64);
            let path = source.draw(grid, rep, fixed.as_ref())?;
            let arrivals = arrivals_from_path(&path, rep.child(stream::ARRIVALS).seed());
            let busy =
                simulate_infinite_server(&arrivals, service, probes, rep.child(stream::SERVICE).seed())?;
            let counts = probes.iter().map(|&t| arrivals.count_until(t) as u64).collect();
            Ok((busy, counts))
        })
        .collect::<Result<_>>()?;

    let column = |pick: fn(&Draw) -> &Vec<u64>, p: usize| -> Vec<f64> {
        reps.iter().map(|r| pick(r)[p] as f64).collect()
    };
    let occupancy = (0..probes.len())
        .map(|p| occupancy_stats(&column(|r| &r.0, p)))
        .collect::<Result<_>>()?;
    let traffic = (0..probes.len())
        .map(|p| occupancy_stats(&column(|r| &r.1, p)))
        .collect::<Result<_>>()?;
    Ok(RunThrough {
        probes: probes.to_vec(),
        occupancy,
        traffic,
    })
}

/// Mean with 95% normal interval and unbiased variance with 95% chi-square
/// interval.
pub fn occupancy_stats(samples: &[f64]) -> Result<SummaryStats> {
    summarize(samples)
}

/// Which summary of a [`RunThrough`] a results table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Occupancy,
    Traffic,
}

pub fn write_results_csv<W: Write>(
    mut w: W,
    rows: &[(&str, &RunThrough)],
    metric: Metric,
) -> Result<()> {
    writeln!(w, "{RESULTS_SCHEMA}")?;
    writeln!(w, "source,probe,mean,ci_half,variance,var_lo,var_hi,replications")?;
    for (label, rt) in rows {
        let stats = match metric {
            Metric::Occupancy => &rt.occupancy,
            Metric::Traffic => &rt.traffic,
        };
        for (t, s) in rt.probes.iter().zip(stats) {
            writeln!(
                w,
                "{label},{t},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                s.mean, s.ci_half, s.variance, s.var_lo, s.var_hi, s.n
            )?;
        }
    }
    Ok(())
}
