//! Observation model: cumulative Poisson counts at fixed epochs given an
//! intensity path.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::sde::{simulate_path, DriftSpec, IntensityPath, TimeGrid};
use crate::seed::{stream, SeedTree};
use crate::{Error, Result, Scalar};

pub const DATASET_SCHEMA: &str = "# schema: dspp-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationScheme {
    epochs: Vec<f64>,
}

impl ObservationScheme {
    pub fn new(epochs: Vec<f64>, grid: &TimeGrid) -> Result<Self> {
        if epochs.is_empty() {
            return Err(Error::InvalidArgument("observation scheme needs an epoch".into()));
        }
        let mut prev = 0usize;
        for &t in &epochs {
            let m = grid.epoch_index(t)?;
            if m <= prev {
                return Err(Error::InvalidArgument(format!(
                    "epochs must be strictly increasing and positive (at {t})"
                )));
            }
            prev = m;
        }
        Ok(Self { epochs })
    }

    /// Epochs `T/2` and `T`.
    pub fn half_and_end(grid: &TimeGrid) -> Result<Self> {
        Self::new(vec![grid.horizon() / 2.0, grid.horizon()], grid)
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Grid index boundaries `[0, m_1, m_2, ...]` of the observation intervals.
    pub fn boundaries(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        let mut b = vec![0];
        for &t in &self.epochs {
            b.push(grid.epoch_index(t)?);
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSample {
    pub cumulative: Vec<u64>,
}

impl CountSample {
    pub fn new(cumulative: Vec<u64>) -> Result<Self> {
        if cumulative.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Nonconforming("cumulative counts must be nondecreasing".into()));
        }
        Ok(Self { cumulative })
    }

    pub fn increments(&self) -> impl Iterator<Item = u64> + '_ {
        let mut prev = 0;
        self.cumulative.iter().map(move |&c| {
            let d = c - prev;
            prev = c;
            d
        })
    }

    pub fn terminal(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    fn check(&self, scheme: &ObservationScheme) -> Result<()> {
        if self.cumulative.len() != scheme.len() {
            return Err(Error::Nonconforming(format!(
                "{} counts for {} epochs",
                self.cumulative.len(),
                scheme.len()
            )));
        }
        if self.cumulative.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Nonconforming("cumulative counts decrease".into()));
        }
        Ok(())
    }
}

/// Poisson variate: sequential inversion for small means, PTRS
/// (transformed rejection with squeeze) otherwise.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 30.0 {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf && k < 1000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        return k;
    }
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -mean + k * loglam - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// Independent Poisson increments with means given by the interval integrals
/// of `path`, accumulated.
pub fn sample_counts<T: Scalar>(
    path: &IntensityPath<T>,
    scheme: &ObservationScheme,
    seed: u64,
) -> Result<CountSample> {
    let bounds = scheme.boundaries(&path.grid)?;
    let mut rng = SeedTree::new(seed).rng();
    let mut total = 0u64;
    let cumulative = bounds
        .windows(2)
        .map(|w| {
            total += sample_poisson(path.integrated_steps(w[0], w[1]).as_f64(), &mut rng);
            total
        })
        .collect();
    Ok(CountSample { cumulative })
}

/// Interval integrals of `path` over the observation intervals.
pub fn interval_integrals<T: Scalar>(
    path: &IntensityPath<T>,
    scheme: &ObservationScheme,
) -> Result<Vec<T>> {
    let bounds = scheme.boundaries(&path.grid)?;
    Ok(bounds
        .windows(2)
        .map(|w| path.integrated_steps(w[0], w[1]))
        .collect())
}

/// Poisson log-likelihood of one interval with integrated intensity `lambda`
/// and `k` arrivals. `0 * log 0 = 0`; `k > 0` with `lambda = 0` gives `-inf`.
pub fn poisson_log_pmf<T: Scalar>(k: u64, lambda: T) -> T {
    let lf = T::lit(ln_gamma(k as f64 + 1.0));
    if k == 0 {
        -lambda
    } else if lambda <= T::zero() {
        T::neg_infinity()
    } else {
        -lambda + T::from_count(k) * lambda.ln() - lf
    }
}

/// Log-probability of the observed counts conditional on the intensity path.
pub fn log_likelihood<T: Scalar>(
    counts: &CountSample,
    path: &IntensityPath<T>,
    scheme: &ObservationScheme,
) -> Result<T> {
    counts.check(scheme)?;
    let lambdas = interval_integrals(path, scheme)?;
    Ok(counts
        .increments()
        .zip(lambdas)
        .map(|(k, lam)| poisson_log_pmf(k, lam))
        .fold(T::zero(), |a, b| a + b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scheme: ObservationScheme,
    pub samples: Vec<CountSample>,
    /// Generator configuration and seeds, as written to the metadata sidecar.
    pub provenance: serde_json::Value,
    /// Latent paths, only when explicitly retained for diagnostics.
    pub paths: Option<Vec<IntensityPath<f64>>>,
}

/// Seed of the latent path of dataset sample `i`.
pub fn sample_path_seed(master_seed: u64, i: usize) -> u64 {
    SeedTree::new(master_seed)
        .child(stream::DATASET)
        .child(i as u64)
        .child(stream::PATH)
        .seed()
}

/// Seed of the Poisson counts of dataset sample `i`.
pub fn sample_count_seed(master_seed: u64, i: usize) -> u64 {
    SeedTree::new(master_seed)
        .child(stream::DATASET)
        .child(i as u64)
        .child(stream::COUNTS)
        .seed()
}

/// `n` independent (path, counts) draws. Sample `i` uses
/// [`sample_path_seed`] and [`sample_count_seed`].
pub fn generate_dataset(
    truth: &DriftSpec<'_, f64>,
    z0: f64,
    grid: TimeGrid,
    scheme: &ObservationScheme,
    n: usize,
    master_seed: u64,
    keep_paths: bool,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    truth.validate()?;
    let mut samples = Vec::with_capacity(n);
    let mut paths = keep_paths.then(|| Vec::with_capacity(n));
    for i in 0..n {
        let path = simulate_path(truth, z0, grid, sample_path_seed(master_seed, i))?;
        samples.push(sample_counts(&path, scheme, sample_count_seed(master_seed, i))?);
        if let Some(p) = paths.as_mut() {
            p.push(path);
        }
    }
    Ok(Dataset {
        scheme: scheme.clone(),
        samples,
        provenance: serde_json::json!({
            "master_seed": master_seed,
            "n": n,
            "z0": z0,
            "horizon": grid.horizon(),
            "steps": grid.steps(),
        }),
        paths,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean count increment per observation interval.
    pub fn mean_increments(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.scheme.len()];
        for s in &self.samples {
            for (a, d) in acc.iter_mut().zip(s.increments()) {
                *a += d as f64;
            }
        }
        let n = self.samples.len().max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{DATASET_SCHEMA}")?;
        writeln!(w, "sample_id,epoch,cumulative_count")?;
        for (i, s) in self.samples.iter().enumerate() {
            for (t, c) in self.scheme.epochs().iter().zip(&s.cumulative) {
                writeln!(w, "{i},{t},{c}")?;
            }
        }
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv); `#` lines are
    /// comments. Every sample must report the same epochs.
    pub fn read_csv<R: BufRead>(r: R, grid: &TimeGrid) -> Result<Self> {
        let mut rows: BTreeMap<usize, Vec<(f64, u64)>> = BTreeMap::new();
        let mut saw_header = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != "sample_id,epoch,cumulative_count" {
                    return Err(Error::Parse(format!("unexpected dataset header `{line}`")));
                }
                saw_header = true;
                continue;
            }
            let bad = || Error::Parse(format!("line {}: `{line}`", lineno + 1));
            let mut parts = line.split(',');
            let id: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
            let t: f64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
            let c: u64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            rows.entry(id).or_default().push((t, c));
        }
        let first = rows
            .values()
            .next()
            .ok_or_else(|| Error::Parse("dataset has no samples".into()))?;
        let epochs: Vec<f64> = first.iter().map(|(t, _)| *t).collect();
        let scheme = ObservationScheme::new(epochs.clone(), grid)?;
        let mut samples = Vec::with_capacity(rows.len());
        for (expected, (id, r)) in rows.into_iter().enumerate() {
            if id != expected {
                return Err(Error::Parse(format!("sample ids must be 0..n, missing {expected}")));
            }
            if r.iter().map(|(t, _)| *t).ne(epochs.iter().copied()) {
                return Err(Error::Nonconforming(format!("sample {id} uses different epochs")));
            }
            samples.push(CountSample::new(r.into_iter().map(|(_, c)| c).collect())?);
        }
        Ok(Self {
            scheme,
            samples,
            provenance: serde_json::Value::Null,
            paths: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(4.0, 60).unwrap()
    }

    #[test]
    fn scheme_validation() {
        let g = grid();
        assert!(ObservationScheme::new(vec![2.0, 4.0], &g).is_ok());
        assert!(ObservationScheme::new(vec![4.0, 2.0], &g).is_err());
        assert!(ObservationScheme::new(vec![0.0, 2.0], &g).is_err());
        assert!(ObservationScheme::new(vec![2.0, 5.0], &g).is_err());
        assert!(ObservationScheme::new(vec![1.01], &g).is_err());
        assert!(ObservationScheme::new(vec![], &g).is_err());
    }

    #[test]
    fn zero_path_gives_zero_counts() {
        let g = grid();
        let s = ObservationScheme::half_and_end(&g).unwrap();
        let c = sample_counts(&IntensityPath::constant(g, 0.0f64), &s, 3).unwrap();
        assert_eq!(c.cumulative, vec![0, 0]);
    }

    #[test]
    fn empty_counts_likelihood() {
        let g = grid();
        let s = ObservationScheme::half_and_end(&g).unwrap();
        let p = IntensityPath::constant(g, 3.0f64);
        let ll = log_likelihood(&CountSample::new(vec![0, 0]).unwrap(), &p, &s).unwrap();
        assert!((ll + 12.0).abs() < 1e-12);
    }

    #[test]
    fn one_arrival_per_interval() {
        let g = grid();
        let s = ObservationScheme::half_and_end(&g).unwrap();
        let p = IntensityPath::constant(g, 1.0f64);
        let ll = log_likelihood(&CountSample::new(vec![1, 2]).unwrap(), &p, &s).unwrap();
        // log(2) - 2 + log(2) - 2 ... with unit rate each half has mean 2
        let expected = 2.0 * (2.0f64.ln() - 2.0);
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn impossible_counts_are_neg_infinite() {
        let g = grid();
        let s = ObservationScheme::half_and_end(&g).unwrap();
        let p = IntensityPath::constant(g, 0.0f64);
        let ll = log_likelihood(&CountSample::new(vec![0, 1]).unwrap(), &p, &s).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn nonconforming_counts_rejected() {
        let g = grid();
        let s = ObservationScheme::half_and_end(&g).unwrap();
        let p = IntensityPath::constant(g, 1.0f64);
        assert!(CountSample::new(vec![3, 2]).is_err());
        let three = CountSample::new(vec![1, 2, 3]).unwrap();
        assert!(log_likelihood(&three, &p, &s).is_err());
    }

    #[test]
    fn likelihood_factorizes_over_split_intervals() {
        let g = grid();
        let coarse = ObservationScheme::new(vec![4.0], &g).unwrap();
        let fine = ObservationScheme::new(vec![2.0, 4.0], &g).unwrap();
        let p = IntensityPath::new(g, g.times().map(|t| 1.0 + t).collect()).unwrap();
        let lam: Vec<f64> = interval_integrals(&p, &fine).unwrap();
        // Splitting a count of 7 into (3, 4): the fine likelihood equals the
        // coarse one plus the binomial split term.
        let fine_ll = log_likelihood(&CountSample::new(vec![3, 7]).unwrap(), &p, &fine).unwrap();
        let coarse_ll = log_likelihood(&CountSample::new(vec![7]).unwrap(), &p, &coarse).unwrap();
        let total = lam[0] + lam[1];
        let split = ln_gamma(8.0) - ln_gamma(4.0) - ln_gamma(5.0)
            + 3.0 * (lam[0] / total).ln()
            + 4.0 * (lam[1] / total).ln();
        assert!((fine_ll - (coarse_ll + split)).abs() < 1e-10);
    }

    #[test]
    fn poisson_sampler_moments() {
        let mut rng = SeedTree::new(1).rng();
        for &mean in &[0.5, 7.0, 29.9, 30.0, 160.0] {
            let n = 40_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_poisson(mean, &mut rng) as f64).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (mean / n as f64).sqrt();
            assert!((m - mean).abs() < 4.0 * se, "mean {m} vs {mean}");
            assert!((v / mean - 1.0).abs() < 0.05, "var {v} vs {mean}");
        }
    }

    #[test]
    fn dataset_determinism_and_csv_round_trip() {
        let g = grid();
        let s = ObservationScheme::half_and_end(&g).unwrap();
        let truth = DriftSpec::cir(0.3, 80.0, 1.0);
        let a = generate_dataset(&truth, 5.0, g, &s, 20, 9, false).unwrap();
        let b = generate_dataset(&truth, 5.0, g, &s, 20, 9, false).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2 + 20 * 2);
        let back = Dataset::read_csv(&buf[..], &g).unwrap();
        assert_eq!(back.samples, a.samples);
        assert_eq!(back.scheme, a.scheme);
    }

    #[test]
    fn single_sample_dataset_is_composition() {
        let g = grid();
        let s = ObservationScheme::half_and_end(&g).unwrap();
        let truth = DriftSpec::cir(0.3, 80.0, 1.0);
        let d = generate_dataset(&truth, 5.0, g, &s, 1, 4, true).unwrap();
        let path = simulate_path(&truth, 5.0, g, sample_path_seed(4, 0)).unwrap();
        let counts = sample_counts(&path, &s, sample_count_seed(4, 0)).unwrap();
        assert_eq!(d.samples[0], counts);
        assert_eq!(d.paths.unwrap()[0], path);
    }
}
