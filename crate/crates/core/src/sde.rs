//! Intensity SDEs on a uniform grid: Euler-Maruyama paths, pathwise parameter
//! sensitivities, and interval integrals.
//!
//! All schemes use full truncation: coefficients are evaluated at `max(Z, 0)` and
//! the state is clamped to be nonnegative after every step.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};

use crate::nn::{MlpModel, MlpWorkspace};
use crate::seed::SeedTree;
use crate::{Error, Result, Scalar};

/// Below this state value the `1/sqrt(Z)` coefficients of the sensitivity
/// recursion are set to zero.
pub const SINGULAR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with spacing `dt`; `horizon / dt` must be (numerically) an integer.
    pub fn with_spacing(horizon: f64, dt: f64) -> Result<Self> {
        let n = horizon / dt;
        let steps = n.round();
        if !(steps >= 1.0 && (n - steps).abs() < 1e-9 * steps.max(1.0)) {
            return Err(Error::InvalidArgument(format!(
                "spacing {dt} does not divide horizon {horizon}"
            )));
        }
        Self::new(horizon, steps as usize)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.steps {
            self.horizon
        } else {
            self.horizon * m as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|m| self.time(m))
    }

    /// Index `m` with `t_m == t`, allowing for floating-point noise in `t`.
    pub fn epoch_index(&self, t: f64) -> Result<usize> {
        let x = t / self.dt();
        let m = x.round();
        if !(m >= 0.0 && m <= self.steps as f64 && (x - m).abs() < 1e-7) {
            return Err(Error::OffGrid(t));
        }
        Ok(m as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPath<T> {
    pub grid: TimeGrid,
    pub values: Vec<T>,
}

impl<T: Scalar> IntensityPath<T> {
    pub fn new(grid: TimeGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.steps() + 1 {
            return Err(Error::DimensionMismatch {
                expected: grid.steps() + 1,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidArgument(
                "intensity values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, c: T) -> Self {
        Self {
            grid,
            values: vec![c; grid.steps() + 1],
        }
    }

    /// Left-endpoint Riemann sum of the path over `[s, t)`; both must be grid epochs.
    pub fn integrated(&self, s: f64, t: f64) -> Result<T> {
        let i = self.grid.epoch_index(s)?;
        let j = self.grid.epoch_index(t)?;
        if i > j {
            return Err(Error::InvalidArgument(format!("interval start {s} after end {t}")));
        }
        Ok(self.integrated_steps(i, j))
    }

    /// Same as [`integrated`](Self::integrated) with grid indices.
    pub fn integrated_steps(&self, i: usize, j: usize) -> T {
        let dt = T::lit(self.grid.dt());
        self.values[i..j].iter().fold(T::zero(), |acc, &z| acc + z * dt)
    }

    /// Writes `t,value` rows, one per grid epoch.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in self.grid.times().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Free function form of [`IntensityPath::integrated`].
pub fn integrated_intensity<T: Scalar>(path: &IntensityPath<T>, s: f64, t: f64) -> Result<T> {
    path.integrated(s, t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath<T> {
    pub grid: TimeGrid,
    pub increments: Vec<T>,
}

/// `N` i.i.d. `sqrt(dt) * N(0, 1)` Brownian increments.
pub fn sample_noise<T: Scalar>(grid: TimeGrid, seed: u64) -> NoisePath<T> {
    let mut rng = SeedTree::new(seed).rng();
    let sd = grid.dt().sqrt();
    let increments = (0..grid.steps())
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            T::lit(sd * x)
        })
        .collect();
    NoisePath { grid, increments }
}

/// `gain * net(z * state_scale, t)`.
#[derive(Debug, Clone, Copy)]
pub struct NeuralDrift<'a, T> {
    pub net: &'a MlpModel<T>,
    pub state_scale: T,
    pub gain: T,
}

/// `gain * net(context.., t)`; never reads the intensity state.
#[derive(Debug, Clone, Copy)]
pub struct NeuralControl<'a, T> {
    pub net: &'a MlpModel<T>,
    pub context: &'a [T],
    pub gain: T,
}

/// `floor + gain * softplus(net(z * state_scale, t))`.
#[derive(Debug, Clone, Copy)]
pub struct NeuralDiffusion<'a, T> {
    pub net: &'a MlpModel<T>,
    pub state_scale: T,
    pub gain: T,
    pub floor: T,
}

#[derive(Debug, Clone, Copy)]
pub enum DriftKind<'a, T> {
    /// `rate * (level - z)`; with zero diffusion this is the ODE model.
    MeanReverting { rate: T, level: T },
    Neural(NeuralDrift<'a, T>),
    /// Prior drift plus `sigma(z, t) * u(k, t)`.
    Controlled {
        prior: NeuralDrift<'a, T>,
        control: NeuralControl<'a, T>,
    },
}

#[derive(Debug, Clone, Copy)]
pub enum DiffusionKind<'a, T> {
    /// `eta * sqrt(z)`.
    SqrtState { eta: T },
    /// `eta * level^alpha * sqrt(z)`.
    PowerLevel { eta: T, level: T, alpha: T },
    Neural(NeuralDiffusion<'a, T>),
}

#[derive(Debug, Clone, Copy)]
pub struct DriftSpec<'a, T> {
    pub drift: DriftKind<'a, T>,
    pub diffusion: DiffusionKind<'a, T>,
}

fn input_pair<T: Scalar>(buf: &mut Vec<T>, a: T, t: T) -> &[T] {
    buf.clear();
    buf.push(a);
    buf.push(t);
    buf
}

#[inline]
fn softplus<T: Scalar>(y: T) -> T {
    // log(1 + e^y) without overflow
    if y > T::zero() {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Scalar>(y: T) -> T {
    T::one() / (T::one() + (-y).exp())
}

/// Per-path scratch space for coefficient evaluation.
pub(crate) struct Scratch<T> {
    input: Vec<T>,
    drift_ws: Option<MlpWorkspace<T>>,
    control_ws: Option<MlpWorkspace<T>>,
    diffusion_ws: Option<MlpWorkspace<T>>,
}

impl<'a, T: Scalar> DriftSpec<'a, T> {
    /// CIR dynamics `rate * (level - z) dt + eta * sqrt(z) dW`.
    pub fn cir(rate: T, level: T, eta: T) -> Self {
        Self {
            drift: DriftKind::MeanReverting { rate, level },
            diffusion: DiffusionKind::SqrtState { eta },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DriftKind::MeanReverting { rate, level } = self.drift {
            if !(rate > T::zero() && level > T::zero()) {
                return Err(Error::InvalidArgument(
                    "mean-reversion rate and level must be positive".into(),
                ));
            }
        }
        match self.diffusion {
            DiffusionKind::SqrtState { eta } if eta.is_nan() || eta < T::zero() => Err(
                Error::InvalidArgument("noise magnitude must be nonnegative".into()),
            ),
            DiffusionKind::PowerLevel { eta, level, alpha }
                if !(eta >= T::zero()
                    && level > T::zero()
                    && alpha > T::zero()
                    && alpha <= T::lit(0.5)) =>
            {
                Err(Error::InvalidArgument(
                    "power-level diffusion needs eta >= 0, level > 0, alpha in (0, 1/2]".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn scratch(&self) -> Scratch<T> {
        let (drift_ws, control_ws) = match &self.drift {
            DriftKind::MeanReverting { .. } => (None, None),
            DriftKind::Neural(p) => (Some(p.net.workspace()), None),
            DriftKind::Controlled { prior, control } => {
                (Some(prior.net.workspace()), Some(control.net.workspace()))
            }
        };
        let diffusion_ws = match &self.diffusion {
            DiffusionKind::Neural(d) => Some(d.net.workspace()),
            _ => None,
        };
        Scratch {
            input: Vec::with_capacity(4),
            drift_ws,
            control_ws,
            diffusion_ws,
        }
    }

    /// Prior (uncontrolled) drift at a nonnegative state.
    fn base_drift(&self, z: T, t: T, s: &mut Scratch<T>) -> T {
        match &self.drift {
            DriftKind::MeanReverting { rate, level } => *rate * (*level - z),
            DriftKind::Neural(p) | DriftKind::Controlled { prior: p, .. } => {
                let x = input_pair(&mut s.input, z * p.state_scale, t);
                let ws = s.drift_ws.as_mut().expect("drift workspace");
                p.gain * p.net.eval(x, ws)
            }
        }
    }

    fn control(&self, t: T, s: &mut Scratch<T>) -> T {
        match &self.drift {
            DriftKind::Controlled { control, .. } => {
                s.input.clear();
                s.input.extend_from_slice(control.context);
                s.input.push(t);
                let ws = s.control_ws.as_mut().expect("control workspace");
                control.gain * control.net.eval(&s.input, ws)
            }
            _ => T::zero(),
        }
    }

    fn sigma(&self, z: T, t: T, s: &mut Scratch<T>) -> T {
        match &self.diffusion {
            DiffusionKind::SqrtState { eta } => *eta * z.sqrt(),
            DiffusionKind::PowerLevel { eta, level, alpha } => *eta * level.powf(*alpha) * z.sqrt(),
            DiffusionKind::Neural(d) => {
                let x = input_pair(&mut s.input, z * d.state_scale, t);
                let ws = s.diffusion_ws.as_mut().expect("diffusion workspace");
                d.floor + d.gain * softplus(d.net.eval(x, ws))
            }
        }
    }

    /// Drift and diffusion at `(z, t)` with `z` truncated at zero. The drift
    /// includes the control term for controlled dynamics.
    pub fn coefficients(&self, z: T, t: T) -> (T, T) {
        let mut s = self.scratch();
        self.coefficients_with(z, t, &mut s)
    }

    pub(crate) fn coefficients_with(&self, z: T, t: T, s: &mut Scratch<T>) -> (T, T) {
        let z = z.max(T::zero());
        let b = self.base_drift(z, t, s);
        let sigma = self.sigma(z, t, s);
        let u = self.control(t, s);
        (b + sigma * u, sigma)
    }

    /// Sizes of the trainable parameter blocks `[prior | control | diffusion]`.
    pub fn layout(&self) -> ParamLayout {
        let (prior, control) = match &self.drift {
            DriftKind::MeanReverting { .. } => (0, 0),
            DriftKind::Neural(p) => (p.net.params().len(), 0),
            DriftKind::Controlled { prior, control } => {
                (prior.net.params().len(), control.net.params().len())
            }
        };
        let diffusion = match &self.diffusion {
            DiffusionKind::Neural(d) => d.net.params().len(),
            _ => 0,
        };
        ParamLayout {
            prior,
            control,
            diffusion,
        }
    }
}

/// Full-truncation Euler-Maruyama:
/// `Z_{m+1} = max(Z_m + (b + sigma*u) dt + sigma dW_m, 0)`.
pub fn euler_maruyama<T: Scalar>(
    spec: &DriftSpec<'_, T>,
    z0: T,
    grid: TimeGrid,
    noise: &NoisePath<T>,
) -> Result<IntensityPath<T>> {
    if !(z0 >= T::zero() && z0.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial intensity must be >= 0, got {z0}")));
    }
    if noise.grid != grid || noise.increments.len() != grid.steps() {
        return Err(Error::GridMismatch("noise path was sampled on a different grid".into()));
    }
    let dt = T::lit(grid.dt());
    let mut s = spec.scratch();
    let mut values = Vec::with_capacity(grid.steps() + 1);
    let mut z = z0;
    values.push(z);
    for (m, dw) in noise.increments.iter().enumerate() {
        let t = T::lit(grid.time(m));
        let (drift, sigma) = spec.coefficients_with(z, t, &mut s);
        if !drift.is_finite() {
            return Err(Error::Integration { step: m, what: "drift" });
        }
        if !sigma.is_finite() {
            return Err(Error::Integration { step: m, what: "diffusion" });
        }
        z = (z + drift * dt + sigma * *dw).max(T::zero());
        values.push(z);
    }
    Ok(IntensityPath { grid, values })
}

/// Noise sampling followed by [`euler_maruyama`].
pub fn simulate_path<T: Scalar>(
    spec: &DriftSpec<'_, T>,
    z0: T,
    grid: TimeGrid,
    seed: u64,
) -> Result<IntensityPath<T>> {
    let noise = sample_noise(grid, seed);
    euler_maruyama(spec, z0, grid, &noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamLayout {
    pub prior: usize,
    pub control: usize,
    pub diffusion: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    Prior,
    Control,
    Diffusion,
}

/// One scalar coordinate of the stacked parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCoord {
    pub block: ParamBlock,
    pub index: usize,
}

impl ParamLayout {
    pub fn total(&self) -> usize {
        self.prior + self.control + self.diffusion
    }

    pub fn control_offset(&self) -> usize {
        self.prior
    }

    pub fn diffusion_offset(&self) -> usize {
        self.prior + self.control
    }

    pub fn flat_index(&self, c: ParamCoord) -> Result<usize> {
        let (len, off) = match c.block {
            ParamBlock::Prior => (self.prior, 0),
            ParamBlock::Control => (self.control, self.control_offset()),
            ParamBlock::Diffusion => (self.diffusion, self.diffusion_offset()),
        };
        if c.index >= len {
            return Err(Error::InvalidArgument(format!(
                "parameter index {} out of range for {:?} block of size {len}",
                c.index, c.block
            )));
        }
        Ok(off + c.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityPath<T> {
    pub grid: TimeGrid,
    pub values: Vec<T>,
}

/// Forward sensitivities of a discretized path with respect to every trainable
/// parameter at once.
///
/// Differentiates the full-truncation recursion exactly: with `a_m = 1 + (b_z +
/// sigma_z u) dt + sigma_z dW_m`,
///
/// ```text
/// D_{m+1} = a_m D_m + b_p dt + sigma u_p dt + sigma_p (u dt + dW_m)   if Z_{m+1} > 0
/// D_{m+1} = 0                                                          otherwise
/// ```
///
/// `visit(m, D_m)` is called for `m = 0..=N`, `D_0 = 0`.
pub fn sensitivity_sweep<T: Scalar>(
    spec: &DriftSpec<'_, T>,
    path: &IntensityPath<T>,
    noise: &NoisePath<T>,
    mut visit: impl FnMut(usize, &[T]),
) -> Result<()> {
    let grid = path.grid;
    if noise.grid != grid || noise.increments.len() != grid.steps() {
        return Err(Error::GridMismatch("noise and path grids differ".into()));
    }
    if path.values.len() != grid.steps() + 1 {
        return Err(Error::GridMismatch("path length does not match its grid".into()));
    }
    let layout = spec.layout();
    let (p_len, c_len) = (layout.prior, layout.control);
    let c_off = layout.control_offset();
    let d_off = layout.diffusion_offset();
    let dt = T::lit(grid.dt());
    let eps = T::lit(SINGULAR_EPS);

    let mut d = vec![T::zero(); layout.total()];
    let mut g = vec![T::zero(); layout.total()];
    let mut gin = [T::zero(); 2];
    let mut s = spec.scratch();
    let mut ctl_in: Vec<T> = Vec::new();

    visit(0, &d);
    for m in 0..grid.steps() {
        let z = path.values[m].max(T::zero());
        let t = T::lit(grid.time(m));
        let dw = noise.increments[m];
        for gi in g.iter_mut() {
            *gi = T::zero();
        }

        // Prior drift: value, d/dz, d/dtheta (into g[..p_len]).
        let b_z = match &spec.drift {
            DriftKind::MeanReverting { rate, .. } => -*rate,
            DriftKind::Neural(p) | DriftKind::Controlled { prior: p, .. } => {
                let x = input_pair(&mut s.input, z * p.state_scale, t);
                let ws = s.drift_ws.as_mut().expect("drift workspace");
                p.net.eval(x, ws);
                p.net.backward(ws, p.gain * dt, Some(&mut g[..p_len]), Some(&mut gin));
                p.gain * p.state_scale * gin[0]
            }
        };

        // Diffusion: value, d/dz, and d/dtheta_hat (unscaled, into the diffusion block).
        let (sigma, sigma_z) = match &spec.diffusion {
            DiffusionKind::SqrtState { eta } => {
                let sz = if z > eps { *eta / (T::lit(2.0) * z.sqrt()) } else { T::zero() };
                (*eta * z.sqrt(), sz)
            }
            DiffusionKind::PowerLevel { eta, level, alpha } => {
                let c = *eta * level.powf(*alpha);
                let sz = if z > eps { c / (T::lit(2.0) * z.sqrt()) } else { T::zero() };
                (c * z.sqrt(), sz)
            }
            DiffusionKind::Neural(nd) => {
                let x = input_pair(&mut s.input, z * nd.state_scale, t);
                let ws = s.diffusion_ws.as_mut().expect("diffusion workspace");
                let y = nd.net.eval(x, ws);
                let slope = nd.gain * sigmoid(y);
                nd.net.backward(ws, slope, Some(&mut g[d_off..]), Some(&mut gin));
                (nd.floor + nd.gain * softplus(y), slope * nd.state_scale * gin[0])
            }
        };

        // Control: value and sigma * dt * d/dbeta.
        let u = match &spec.drift {
            DriftKind::Controlled { control, .. } => {
                ctl_in.clear();
                ctl_in.extend_from_slice(control.context);
                ctl_in.push(t);
                let ws = s.control_ws.as_mut().expect("control workspace");
                let u = control.gain * control.net.eval(&ctl_in, ws);
                control.net.backward(
                    ws,
                    control.gain * sigma * dt,
                    Some(&mut g[c_off..c_off + c_len]),
                    None,
                );
                u
            }
            _ => T::zero(),
        };

        if path.values[m + 1] > T::zero() {
            let a = T::one() + (b_z + sigma_z * u) * dt + sigma_z * dw;
            let noise_factor = u * dt + dw;
            for (i, (di, gi)) in d.iter_mut().zip(g.iter()).enumerate() {
                let forcing = if i >= d_off { *gi * noise_factor } else { *gi };
                *di = a * *di + forcing;
            }
        } else {
            for di in d.iter_mut() {
                *di = T::zero();
            }
        }
        visit(m + 1, &d);
    }
    Ok(())
}

/// Sensitivity path `dZ(t_m)/dp` for a single parameter coordinate.
pub fn simulate_sensitivity<T: Scalar>(
    spec: &DriftSpec<'_, T>,
    path: &IntensityPath<T>,
    noise: &NoisePath<T>,
    which: ParamCoord,
) -> Result<SensitivityPath<T>> {
    let idx = spec.layout().flat_index(which)?;
    let mut values = Vec::with_capacity(path.grid.steps() + 1);
    sensitivity_sweep(spec, path, noise, |_, d| values.push(d[idx]))?;
    Ok(SensitivityPath {
        grid: path.grid,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpSpec;

    fn grid60() -> TimeGrid {
        TimeGrid::new(4.0, 60).unwrap()
    }

    #[test]
    fn grid_epochs() {
        let g = TimeGrid::with_spacing(4.0, 1.0 / 15.0).unwrap();
        assert_eq!(g.steps(), 60);
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(60), 4.0);
        assert_eq!(g.epoch_index(2.0).unwrap(), 30);
        assert!(g.epoch_index(2.01).is_err());
        assert!(g.epoch_index(4.5).is_err());
        assert!(TimeGrid::with_spacing(4.0, 0.3).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn noise_is_deterministic() {
        let a: NoisePath<f64> = sample_noise(grid60(), 5);
        let b: NoisePath<f64> = sample_noise(grid60(), 5);
        assert_eq!(a, b);
        assert_ne!(a, sample_noise(grid60(), 6));
    }

    #[test]
    fn zero_dynamics_keep_constant_path() {
        let spec = DriftSpec {
            drift: DriftKind::MeanReverting { rate: 0.0, level: 1.0 },
            diffusion: DiffusionKind::SqrtState { eta: 0.0 },
        };
        let noise = sample_noise(grid60(), 1);
        let p = euler_maruyama(&spec, 5.0, grid60(), &noise).unwrap();
        assert!(p.values.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn ode_limit_matches_closed_form() {
        let g = TimeGrid::new(4.0, 600).unwrap();
        let spec = DriftSpec::cir(0.3, 80.0, 0.0);
        let noise = sample_noise(g, 3);
        let p = euler_maruyama(&spec, 5.0, g, &noise).unwrap();
        let exact = 80.0 - 75.0 * (-1.2f64).exp();
        assert!((exact - 57.409).abs() < 2e-3);
        assert!((p.values[600] - exact).abs() <= 0.1);
        // Independent of the noise when eta = 0.
        let other = euler_maruyama(&spec, 5.0, g, &sample_noise(g, 4)).unwrap();
        assert_eq!(p, other);
    }

    #[test]
    fn grid_refinement_is_first_order() {
        let spec = DriftSpec::cir(0.3, 80.0, 0.0);
        let exact = 80.0 - 75.0 * (-1.2f64).exp();
        let err = |n: usize| {
            let g = TimeGrid::new(4.0, n).unwrap();
            let p = euler_maruyama(&spec, 5.0, g, &sample_noise(g, 0)).unwrap();
            (p.values[n] - exact).abs()
        };
        let (e1, e2) = (err(60), err(120));
        assert!((e1 / e2 - 2.0).abs() < 0.1, "ratio {}", e1 / e2);
    }

    #[test]
    fn paths_stay_nonnegative_near_zero() {
        // Large noise relative to the level forces truncation events.
        let spec = DriftSpec::cir(0.3, 1.0, 3.0);
        for seed in 0..50 {
            let p = simulate_path(&spec, 0.5, grid60(), seed).unwrap();
            assert!(p.values.iter().all(|&v: &f64| v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn integrated_intensity_cases() {
        let g = grid60();
        let c = IntensityPath::constant(g, 2.5f64);
        assert!((c.integrated(0.0, 4.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(c.integrated(2.0, 2.0).unwrap(), 0.0);
        assert!(c.integrated(3.0, 1.0).is_err());
        assert!(c.integrated(0.0, 1.01).is_err());

        let ramp = IntensityPath::new(g, g.times().collect()).unwrap();
        let left = ramp.integrated(0.0, 4.0).unwrap();
        // 8 - T*dt/2
        assert!((left - (8.0 - 4.0 / 30.0)).abs() < 1e-12);
        assert!((left - 7.8667).abs() < 1e-4);
    }

    #[test]
    fn path_csv_has_one_row_per_epoch() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let mut out = Vec::new();
        IntensityPath::constant(g, 1.0f64).write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().next(), Some("t,value"));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(DriftSpec::cir(0.0, 80.0, 1.0).validate().is_err());
        assert!(DriftSpec::cir(0.3, 80.0, -1.0).validate().is_err());
        let bad_alpha = DriftSpec {
            drift: DriftKind::MeanReverting { rate: 1.0, level: 80.0 },
            diffusion: DiffusionKind::PowerLevel { eta: 1.0, level: 80.0, alpha: 0.7 },
        };
        assert!(bad_alpha.validate().is_err());
        assert!(DriftSpec::cir(0.3, 80.0, 1.0).validate().is_ok());
    }

    #[test]
    fn sensitivity_starts_at_zero_and_ignores_dead_branches() {
        let g = TimeGrid::new(1.0, 15).unwrap();
        let prior = MlpModel::<f64>::init(MlpSpec::new(2, 2, 4), 1).unwrap();
        // Control net whose output weights are zero: its first-layer weights
        // have no pathwise influence.
        let mut control = MlpModel::<f64>::init(MlpSpec::new(2, 2, 4), 2).unwrap();
        let last = *control.layer_slots().last().unwrap();
        for w in &mut control.params_mut()[last.weights..last.biases] {
            *w = 0.0;
        }
        let ctx = [1.5];
        let spec = DriftSpec {
            drift: DriftKind::Controlled {
                prior: NeuralDrift { net: &prior, state_scale: 0.1, gain: 1.0 },
                control: NeuralControl { net: &control, context: &ctx, gain: 1.0 },
            },
            diffusion: DiffusionKind::SqrtState { eta: 1.0 },
        };
        let noise = sample_noise(g, 9);
        let path = euler_maruyama(&spec, 5.0, g, &noise).unwrap();
        let s = simulate_sensitivity(
            &spec,
            &path,
            &noise,
            ParamCoord { block: ParamBlock::Control, index: 0 },
        )
        .unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        let s = simulate_sensitivity(
            &spec,
            &path,
            &noise,
            ParamCoord { block: ParamBlock::Prior, index: 3 },
        )
        .unwrap();
        assert_eq!(s.values[0], 0.0);
        assert!(s.values.iter().any(|&v| v != 0.0));
        assert!(simulate_sensitivity(
            &spec,
            &path,
            &noise,
            ParamCoord { block: ParamBlock::Diffusion, index: 0 },
        )
        .is_err());
    }
}
