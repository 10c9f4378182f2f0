//! Nonhomogeneous Poisson baselines fitted to interval counts: a
//! piecewise-constant and a continuous piecewise-linear maximum-likelihood
//! intensity.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dspp::Dataset;
use crate::sde::{IntensityPath, TimeGrid};
use crate::{Error, Result};

pub const BASELINE_SCHEMA: &str = "# schema: dspp-baseline/1";

/// Relative slack when checking that a time lies inside the knot span.
const SPAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PieceKind {
    /// Value `values[j]` on `[t_j, t_{j+1})`; the last value repeats the final
    /// piece so every knot carries one.
    Constant,
    /// Linear interpolation between nodal values.
    Linear,
}

impl PieceKind {
    fn as_str(self) -> &'static str {
        match self {
            PieceKind::Constant => "constant",
            PieceKind::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseIntensity {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: PieceKind,
}

impl PiecewiseIntensity {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, kind: PieceKind) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} knots and {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots[0] != 0.0 || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("knots must increase from 0".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("values must be finite and nonnegative".into()));
        }
        Ok(Self { knots, values, kind })
    }

    /// Uniform knots `jT/d` for `j = 0..=d`.
    pub fn uniform_knots(horizon: f64, d: usize) -> Vec<f64> {
        (0..=d).map(|j| horizon * j as f64 / d as f64).collect()
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().expect("at least two knots")
    }

    pub fn pieces(&self) -> usize {
        self.knots.len() - 1
    }

    fn piece_of(&self, t: f64) -> Result<usize> {
        let h = self.horizon();
        if !(t >= -SPAN_TOL * h && t <= h * (1.0 + SPAN_TOL)) {
            return Err(Error::OffGrid(t));
        }
        // Right-piece convention: a time on an interior knot belongs to the
        // piece starting there.
        let j = self.knots.partition_point(|&k| k <= t);
        Ok(j.saturating_sub(1).min(self.pieces() - 1))
    }

    pub fn evaluate(&self, t: f64) -> Result<f64> {
        let j = self.piece_of(t)?;
        Ok(match self.kind {
            PieceKind::Constant => self.values[j],
            PieceKind::Linear => {
                let (a, b) = (self.knots[j], self.knots[j + 1]);
                let w = ((t - a) / (b - a)).clamp(0.0, 1.0);
                self.values[j] * (1.0 - w) + self.values[j + 1] * w
            }
        })
    }

    /// Exact `int_s^t Z(u) du`.
    pub fn integrated(&self, s: f64, t: f64) -> Result<f64> {
        if t < s {
            return Err(Error::InvalidArgument(format!("integration bounds {s} > {t}")));
        }
        self.piece_of(s)?;
        self.piece_of(t)?;
        let coeffs = self.integral_weights(s, t);
        Ok(coeffs.iter().zip(&self.values).map(|(c, v)| c * v).sum())
    }

    /// Weights `w` with `int_s^t Z = sum_j w_j values[j]`; the integral is
    /// linear in the values for both kinds.
    fn integral_weights(&self, s: f64, t: f64) -> Vec<f64> {
        let mut w = vec![0.0; self.values.len()];
        for j in 0..self.pieces() {
            let (a, b) = (self.knots[j], self.knots[j + 1]);
            let (l, r) = (s.max(a), t.min(b));
            if r <= l {
                continue;
            }
            let len = r - l;
            match self.kind {
                PieceKind::Constant => w[j] += len,
                PieceKind::Linear => {
                    let al = (l - a) / (b - a);
                    let ar = (r - a) / (b - a);
                    w[j] += 0.5 * len * ((1.0 - al) + (1.0 - ar));
                    w[j + 1] += 0.5 * len * (al + ar);
                }
            }
        }
        w
    }

    /// Left-point samples on `grid`, for use as a deterministic traffic path.
    pub fn to_path(&self, grid: TimeGrid) -> Result<IntensityPath<f64>> {
        let values = grid
            .times()
            .map(|t| self.evaluate(t))
            .collect::<Result<Vec<_>>>()?;
        IntensityPath::new(grid, values)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{BASELINE_SCHEMA}")?;
        writeln!(w, "knot_time,value,kind")?;
        for (t, v) in self.knots.iter().zip(&self.values) {
            writeln!(w, "{t},{v},{}", self.kind.as_str())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut knots = Vec::new();
        let mut values = Vec::new();
        let mut kind = None;
        let mut header = false;
        for (no, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header {
                if line != "knot_time,value,kind" {
                    return Err(Error::Parse(format!("unexpected header {line:?}")));
                }
                header = true;
                continue;
            }
            let bad = || Error::Parse(format!("line {}: {line:?}", no + 1));
            let mut f = line.split(',');
            let t: f64 = f.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let v: f64 = f.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let k = match f.next() {
                Some("constant") => PieceKind::Constant,
                Some("linear") => PieceKind::Linear,
                _ => return Err(bad()),
            };
            if f.next().is_some() || kind.is_some_and(|prev| prev != k) {
                return Err(bad());
            }
            kind = Some(k);
            knots.push(t);
            values.push(v);
        }
        let kind = kind.ok_or_else(|| Error::Parse("no baseline rows".into()))?;
        Self::new(knots, values, kind)
    }
}

/// Observation interval endpoints `[0, e_1, ..., e_k]`.
fn interval_edges(dataset: &Dataset) -> Vec<f64> {
    std::iter::once(0.0)
        .chain(dataset.scheme.epochs().iter().copied())
        .collect()
}

/// Piecewise-constant MLE on the observation intervals: mean increment over
/// interval length.
pub fn pc_mle(dataset: &Dataset) -> Result<PiecewiseIntensity> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let edges = interval_edges(dataset);
    let mut values: Vec<f64> = dataset
        .mean_increments()
        .iter()
        .zip(edges.windows(2))
        .map(|(k, w)| k / (w[1] - w[0]))
        .collect();
    values.push(*values.last().expect("nonempty scheme"));
    PiecewiseIntensity::new(edges, values, PieceKind::Constant)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlOptions {
    /// Stop once one accepted step changes the objective by less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PlOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100_000,
        }
    }
}

/// Concave per-sample objective `sum_i [kbar_i log(A v)_i - (A v)_i]` of the
/// linear family with nodal values `v`.
struct PlObjective {
    rows: Vec<Vec<f64>>,
    kbar: Vec<f64>,
}

impl PlObjective {
    fn value(&self, v: &[f64]) -> f64 {
        let mut f = 0.0;
        for (row, &k) in self.rows.iter().zip(&self.kbar) {
            let lam: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            if k > 0.0 {
                if lam <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                f += k * lam.ln();
            }
            f -= lam;
        }
        f
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; v.len()];
        for (row, &k) in self.rows.iter().zip(&self.kbar) {
            let lam: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            let w = if k > 0.0 { k / lam - 1.0 } else { -1.0 };
            for (gj, a) in g.iter_mut().zip(row) {
                *gj += w * a;
            }
        }
        g
    }
}

/// Continuous piecewise-linear MLE with `d` pieces on uniform knots, by
/// projected gradient ascent with Armijo backtracking, started from the flat
/// intensity at the overall mean rate.
pub fn pl_mle(dataset: &Dataset, d: usize) -> Result<PiecewiseIntensity> {
    pl_mle_with(dataset, d, PlOptions::default())
}

pub fn pl_mle_with(dataset: &Dataset, d: usize, opts: PlOptions) -> Result<PiecewiseIntensity> {
    if d == 0 {
        return Err(Error::InvalidArgument("need at least one piece".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let edges = interval_edges(dataset);
    let horizon = *edges.last().expect("nonempty scheme");
    let knots = PiecewiseIntensity::uniform_knots(horizon, d);
    let shape = PiecewiseIntensity::new(knots.clone(), vec![0.0; d + 1], PieceKind::Linear)?;
    let obj = PlObjective {
        rows: edges
            .windows(2)
            .map(|w| shape.integral_weights(w[0], w[1]))
            .collect(),
        kbar: dataset.mean_increments(),
    };

    let total: f64 = obj.kbar.iter().sum();
    if total == 0.0 {
        return PiecewiseIntensity::new(knots, vec![0.0; d + 1], PieceKind::Linear);
    }
    let mut v = vec![total / horizon; d + 1];
    let mut f = obj.value(&v);
    let mut step = 1.0;
    for _ in 0..opts.max_iterations {
        let g = obj.gradient(&v);
        let mut accepted = None;
        let mut s = step;
        for _ in 0..200 {
            let cand: Vec<f64> = v.iter().zip(&g).map(|(x, gx)| (x + s * gx).max(0.0)).collect();
            let fc = obj.value(&cand);
            let lin: f64 = g.iter().zip(cand.iter().zip(&v)).map(|(gx, (c, x))| gx * (c - x)).sum();
            if fc.is_finite() && fc >= f + 1e-4 * lin {
                accepted = Some((cand, fc));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            // No ascent direction left at floating-point resolution.
            return PiecewiseIntensity::new(knots, v, PieceKind::Linear);
        };
        let change = fc - f;
        v = cand;
        f = fc;
        step = s * 2.0;
        if change.abs() < opts.tolerance {
            return PiecewiseIntensity::new(knots, v, PieceKind::Linear);
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        last: v,
    })
}
