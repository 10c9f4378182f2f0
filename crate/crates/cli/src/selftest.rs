//! Fast oracle checks runnable from the binary.

use dspp_core::baselines::pc_mle;
use dspp_core::checkpoint::Checkpoint;
use dspp_core::dspp::{generate_dataset, log_likelihood, CountSample, Dataset, ObservationScheme};
use dspp_core::inference::{elbo_gradient, elbo_saa, ModelConfig, VariationalModel};
use dspp_core::queueing::{run_through, ServiceDist, TrafficSource};
use dspp_core::sde::{euler_maruyama, sample_noise, DriftSpec, IntensityPath, TimeGrid};
use dspp_core::Result;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run() -> Vec<Check> {
    vec![
        check("elbo gradient vs central differences", gradient_fd),
        check("noise-free Euler limit", ode_limit),
        check("likelihood sums to one", normalization),
        check("piecewise-constant closed form", pc_closed_form),
        check("M/M/inf transient mean", mm_inf_mean),
        check("checkpoint round trip", checkpoint_round_trip),
    ]
}

fn gradient_fd() -> Result<(bool, String)> {
    let cfg = ModelConfig {
        prior_layers: 3,
        prior_width: 8,
        control_layers: 3,
        control_width: 8,
        ..ModelConfig::default()
    };
    let mut model = VariationalModel::<f64>::init(&cfg, 2, 1)?;
    let grid = TimeGrid::new(1.0, 15)?;
    let scheme = ObservationScheme::new(vec![0.6, 1.0], &grid)?;
    let batch = vec![CountSample::new(vec![3, 7])?, CountSample::new(vec![1, 4])?];
    let g = elbo_gradient(&model, &batch, &scheme, grid, 2, 3)?.gradient;
    let base = model.flat_params();
    let h = 1e-5;
    let mut bad = 0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        model.set_flat_params(&p)?;
        let up = elbo_saa(&model, &batch, &scheme, grid, 2, 3)?;
        p[i] = base[i] - h;
        model.set_flat_params(&p)?;
        let down = elbo_saa(&model, &batch, &scheme, grid, 2, 3)?;
        let fd = (up - down) / (2.0 * h);
        let err = (g[i] - fd).abs();
        if err > 1e-6 && err > 1e-3 * fd.abs().max(g[i].abs()) {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{bad} of {} coordinates off", base.len())))
}

fn ode_limit() -> Result<(bool, String)> {
    let grid = TimeGrid::new(4.0, 600)?;
    let p = euler_maruyama(&DriftSpec::cir(0.3, 80.0, 0.0), 5.0, grid, &sample_noise(grid, 0))?;
    let exact = 80.0 - 75.0 * (-1.2f64).exp();
    let z = p.values[600];
    Ok(((z - exact).abs() <= 0.1, format!("Z(4) = {z:.4}, exact {exact:.4}")))
}

fn normalization() -> Result<(bool, String)> {
    let grid = TimeGrid::new(2.0, 20)?;
    let scheme = ObservationScheme::half_and_end(&grid)?;
    let path = IntensityPath::<f64>::constant(grid, 0.5);
    let mut total = 0.0f64;
    for k1 in 0..=20u64 {
        for k2 in k1..=k1 + 20 {
            total += log_likelihood(&CountSample::new(vec![k1, k2])?, &path, &scheme)?.exp();
        }
    }
    Ok(((total - 1.0).abs() < 1e-6, format!("sum = {total:.12}")))
}

fn pc_closed_form() -> Result<(bool, String)> {
    let grid = TimeGrid::new(4.0, 60)?;
    let data = Dataset {
        scheme: ObservationScheme::half_and_end(&grid)?,
        samples: vec![CountSample::new(vec![10, 30])?],
        provenance: serde_json::Value::Null,
        paths: None,
    };
    let v = pc_mle(&data)?.values;
    Ok((v[..2] == [5.0, 10.0], format!("values {v:?}")))
}

fn mm_inf_mean() -> Result<(bool, String)> {
    let grid = TimeGrid::new(4.0, 60)?;
    let spec = DriftSpec::cir(0.0, 0.0, 0.0);
    let truth = TrafficSource::Truth {
        spec: &spec,
        z0: 80.0,
    };
    let rt = run_through(&truth, &ServiceDist::Exponential { rate: 2.0 }, grid, &[4.0], 2000, 5)?;
    let s = rt.occupancy[0];
    let exact = 40.0 * (1.0 - (-8.0f64).exp());
    let se = s.standard_error();
    Ok((
        (s.mean - exact).abs() <= 3.0 * se,
        format!("mean {:.3} vs {exact:.3} (3 se = {:.3})", s.mean, 3.0 * se),
    ))
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let grid = TimeGrid::new(1.0, 10)?;
    let scheme = ObservationScheme::half_and_end(&grid)?;
    let data = generate_dataset(&DriftSpec::cir(0.3, 10.0, 0.5), 5.0, grid, &scheme, 3, 1, false)?;
    let model = VariationalModel::<f64>::init(&ModelConfig::default(), data.scheme.len(), 4)?;
    let bytes = model.to_checkpoint(serde_json::json!({})).to_bytes();
    let ck = Checkpoint::read_from(&bytes[..])?;
    let back = VariationalModel::<f64>::from_checkpoint(&ck)?;
    Ok((back == model, "model restored".into()))
}
