//! Sample-average ELBO and its pathwise gradient.

use rayon::prelude::*;

use super::VariationalModel;
use crate::dspp::{interval_integrals, poisson_log_pmf, CountSample, ObservationScheme};
use crate::sde::{euler_maruyama, sample_noise, sensitivity_sweep, TimeGrid};
use crate::seed::SeedTree;
use crate::{Error, Result, Scalar};

/// Floor on interval integrals with positive counts. Paths absorbed at zero
/// would otherwise make the objective `-inf`; below the floor the term is
/// constant in the parameters.
pub const LIKELIHOOD_EPS: f64 = 1e-8;

/// `log P(k | lam)` with the floor applied, and its derivative in `lam`.
fn floored_term<T: Scalar>(k: u64, lam: T, eps: T) -> (T, T) {
    if k == 0 {
        (-lam, -T::one())
    } else if lam < eps {
        (poisson_log_pmf(k, eps), T::zero())
    } else {
        (poisson_log_pmf(k, lam), T::from_count(k) / lam - T::one())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate<T> {
    pub value: T,
    /// Gradient over the stacked `[prior | control | diffusion]` parameters;
    /// empty when only the value was requested.
    pub gradient: Vec<T>,
}

/// SAA objective
/// `1/(n m) sum_i sum_j [log P(Y_i | Z^{ij}) - 1/2 int u(k_i, s)^2 ds]`.
///
/// Sample `i` of the batch draws its `m` noise paths from
/// `SeedTree(seed).child(i).child(j)`.
pub fn elbo_saa<T: Scalar>(
    model: &VariationalModel<T>,
    batch: &[CountSample],
    scheme: &ObservationScheme,
    grid: TimeGrid,
    m: usize,
    seed: u64,
) -> Result<T> {
    let seeds = batch_seeds(batch.len(), seed);
    Ok(estimate(model, batch, &seeds, scheme, grid, m, false)?.value)
}

/// [`elbo_saa`] together with its exact gradient at the same noise.
pub fn elbo_gradient<T: Scalar>(
    model: &VariationalModel<T>,
    batch: &[CountSample],
    scheme: &ObservationScheme,
    grid: TimeGrid,
    m: usize,
    seed: u64,
) -> Result<ElboEstimate<T>> {
    let seeds = batch_seeds(batch.len(), seed);
    estimate(model, batch, &seeds, scheme, grid, m, true)
}

fn batch_seeds(n: usize, seed: u64) -> Vec<u64> {
    let root = SeedTree::new(seed);
    (0..n).map(|i| root.child(i as u64).seed()).collect()
}

/// Core estimator; `sample_seeds[i]` seeds the inner paths of `batch[i]`.
pub(crate) fn estimate<T: Scalar>(
    model: &VariationalModel<T>,
    batch: &[CountSample],
    sample_seeds: &[u64],
    scheme: &ObservationScheme,
    grid: TimeGrid,
    m: usize,
    with_gradient: bool,
) -> Result<ElboEstimate<T>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one inner path".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    debug_assert_eq!(batch.len(), sample_seeds.len());
    let per_sample: Vec<ElboEstimate<T>> = batch
        .par_iter()
        .zip(sample_seeds.par_iter())
        .map(|(counts, &seed)| sample_terms(model, counts, seed, scheme, grid, m, with_gradient))
        .collect::<Result<_>>()?;

    // Fixed left-to-right reduction.
    let n = T::from_usize(batch.len()).expect("batch size");
    let mut value = T::zero();
    let mut gradient = if with_gradient {
        vec![T::zero(); model.layout().total()]
    } else {
        Vec::new()
    };
    for est in &per_sample {
        value = value + est.value;
        for (g, s) in gradient.iter_mut().zip(&est.gradient) {
            *g = *g + *s;
        }
    }
    for g in &mut gradient {
        *g = *g / n;
    }
    Ok(ElboEstimate {
        value: value / n,
        gradient,
    })
}

/// Per-sample term averaged over its `m` paths.
fn sample_terms<T: Scalar>(
    model: &VariationalModel<T>,
    counts: &CountSample,
    seed: u64,
    scheme: &ObservationScheme,
    grid: TimeGrid,
    m: usize,
    with_gradient: bool,
) -> Result<ElboEstimate<T>> {
    let bounds = scheme.boundaries(&grid)?;
    if counts.cumulative.len() != scheme.len() {
        return Err(Error::Nonconforming(format!(
            "{} counts for {} epochs",
            counts.cumulative.len(),
            scheme.len()
        )));
    }
    let increments: Vec<u64> = counts.increments().collect();
    let ctx = model.context(counts);
    let spec = model.controlled_spec(&ctx);
    let layout = model.layout();
    let total = layout.total();
    let dt = T::lit(grid.dt());
    let half = T::lit(0.5);

    // Deterministic penalty 1/2 sum_m u(t_m)^2 dt and its gradient -sum u u_beta dt.
    let mut gradient = vec![T::zero(); if with_gradient { total } else { 0 }];
    let mut penalty = T::zero();
    {
        let net = &model.control;
        let mut ws = net.workspace();
        let mut x = ctx.clone();
        x.push(T::zero());
        let c_off = layout.control_offset();
        for mi in 0..grid.steps() {
            *x.last_mut().expect("time slot") = T::lit(grid.time(mi));
            let u = model.control_gain * net.eval(&x, &mut ws);
            penalty = penalty + half * u * u * dt;
            if with_gradient {
                net.backward(
                    &mut ws,
                    -(u * model.control_gain * dt),
                    Some(&mut gradient[c_off..c_off + layout.control]),
                    None,
                );
            }
        }
    }

    let root = SeedTree::new(seed);
    let inv_m = T::one() / T::from_usize(m).expect("m");
    let eps = T::lit(LIKELIHOOD_EPS);
    let mut loglik_sum = T::zero();
    let mut path_grad = vec![T::zero(); if with_gradient { total } else { 0 }];
    let mut interval_sens: Vec<Vec<T>> = if with_gradient {
        vec![vec![T::zero(); total]; scheme.len()]
    } else {
        Vec::new()
    };

    for j in 0..m {
        let noise = sample_noise(grid, root.child(j as u64).seed());
        let path = euler_maruyama(&spec, model.z0, grid, &noise)?;
        let lambdas = interval_integrals(&path, scheme)?;
        let ll = increments
            .iter()
            .zip(&lambdas)
            .fold(T::zero(), |acc, (&k, &lam)| acc + floored_term(k, lam, eps).0);
        loglik_sum = loglik_sum + ll;

        if with_gradient {
            for acc in &mut interval_sens {
                acc.iter_mut().for_each(|a| *a = T::zero());
            }
            let mut interval = 0usize;
            sensitivity_sweep(&spec, &path, &noise, |mi, d| {
                while interval < bounds.len() - 1 && mi >= bounds[interval + 1] {
                    interval += 1;
                }
                if interval < bounds.len() - 1 && mi >= bounds[interval] {
                    for (a, di) in interval_sens[interval].iter_mut().zip(d) {
                        *a = *a + *di * dt;
                    }
                }
            })?;
            for ((&k, &lam), sens) in increments.iter().zip(&lambdas).zip(&interval_sens) {
                let w = floored_term(k, lam, eps).1;
                for (g, s) in path_grad.iter_mut().zip(sens) {
                    *g = *g + w * *s;
                }
            }
        }
    }

    for (g, pg) in gradient.iter_mut().zip(&path_grad) {
        *g = *g + *pg * inv_m;
    }
    Ok(ElboEstimate {
        value: loglik_sum * inv_m - penalty,
        gradient,
    })
}
