//! Dense Kalman filter, smoother and forward-filter backward-sampler.
//!
//! These carry full `n x n` covariances and serve both as the reference
//! method and as oracles for the sparse algorithms.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{psd_cholesky, simulate_with, NoiseFactor};
use crate::ops;
use crate::parallel::{map_indices, worker_count};
use crate::rng::substream;
use crate::sparse::CsrMatrix;
use crate::ssm::{PerTime, StateSpaceModel};

/// Moments per time point; vectors are indexed by `t - 1` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSequence {
    pub forecast_mean: Vec<DVector<f64>>,
    pub forecast_cov: Vec<DMatrix<f64>>,
    pub filter_mean: Vec<DVector<f64>>,
    pub filter_cov: Vec<DMatrix<f64>>,
    /// Empty until smoothed.
    pub smooth_mean: Vec<DVector<f64>>,
    /// Filled only when smoothing covariances are requested.
    pub smooth_cov: Vec<DMatrix<f64>>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn count_product(a: usize, b: usize, c: usize) {
    ops::add((a * b * c) as u64);
}

/// `E S E^T` for symmetric `S`.
fn propagate(e: &CsrMatrix, s: &DMatrix<f64>) -> DMatrix<f64> {
    let es = e.mul_dense(s);
    let mut out = e.mul_dense(&es.transpose());
    symmetrize(&mut out);
    out
}

/// Kalman gain for one time point, as `K` (`n x n_t`) with the updated covariance.
struct GainStep {
    gain: DMatrix<f64>,
    filter_cov: DMatrix<f64>,
}

fn gain_step(sigma: &DMatrix<f64>, observed: &[usize], noise: &[f64]) -> Result<GainStep> {
    let n = sigma.nrows();
    let k = observed.len();
    if k == 0 {
        return Ok(GainStep {
            gain: DMatrix::zeros(n, 0),
            filter_cov: sigma.clone(),
        });
    }
    let hs = sigma.select_rows(observed);
    let mut innov = hs.select_columns(observed);
    for (d, r) in noise.iter().enumerate() {
        innov[(d, d)] += r;
    }
    count_product(k, k, k);
    let chol = innov.cholesky().ok_or(Error::NotPositiveDefinite { row: 0, pivot: f64::NAN })?;
    // X = S^{-1} H Sigma, so K = X^T.
    let x = chol.solve(&hs);
    count_product(k, k, n);
    let mut filter_cov = sigma - hs.transpose() * &x;
    count_product(n, k, n);
    symmetrize(&mut filter_cov);
    Ok(GainStep {
        gain: x.transpose(),
        filter_cov,
    })
}

fn apply_gain(gain: &DMatrix<f64>, observed: &[usize], y: &DVector<f64>, forecast: &DVector<f64>) -> DVector<f64> {
    if observed.is_empty() {
        return forecast.clone();
    }
    let innovation = DVector::from_iterator(observed.len(), observed.iter().zip(y.iter()).map(|(&i, &v)| v - forecast[i]));
    count_product(gain.nrows(), gain.ncols(), 1);
    forecast + gain * innovation
}

fn dense_cov(m: &StateSpaceModel) -> (DMatrix<f64>, PerTime<DMatrix<f64>>) {
    (m.init_cov().to_dense(), m.model_error_all().map(|q| q.to_dense()))
}

struct ForwardPass {
    moments: MomentSequence,
    gains: Vec<DMatrix<f64>>,
}

fn forward(m: &StateSpaceModel, y: &[DVector<f64>]) -> Result<ForwardPass> {
    m.check_data(y)?;
    let (mut cov, q) = dense_cov(m);
    let mut mean = m.init_mean().clone();
    let t_max = m.horizon();
    let mut out = MomentSequence {
        forecast_mean: Vec::with_capacity(t_max),
        forecast_cov: Vec::with_capacity(t_max),
        filter_mean: Vec::with_capacity(t_max),
        filter_cov: Vec::with_capacity(t_max),
        smooth_mean: Vec::new(),
        smooth_cov: Vec::new(),
    };
    let mut gains = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let e = m.evolution(t);
        let fc_mean = e.mul_vec(&mean);
        let fc_cov = propagate(e, &cov) + q.at(t);
        count_product(2 * e.max_row_nnz(), m.n(), m.n());
        let h = m.observation(t);
        let step = gain_step(&fc_cov, h.indices(), h.noise_variance()).map_err(|err| err.at_time("kalman_filter", t))?;
        mean = apply_gain(&step.gain, h.indices(), &y[t - 1], &fc_mean);
        cov = step.filter_cov;
        out.forecast_mean.push(fc_mean);
        out.forecast_cov.push(fc_cov);
        out.filter_mean.push(mean.clone());
        out.filter_cov.push(cov.clone());
        gains.push(step.gain);
    }
    Ok(ForwardPass { moments: out, gains })
}

/// Forecast and filtering moments.
pub fn kalman_filter(m: &StateSpaceModel, y: &[DVector<f64>]) -> Result<MomentSequence> {
    Ok(forward(m, y)?.moments)
}

/// `J_t = Sigma_{t|t} E_{t+1}^T Sigma_{t+1|t}^{-1}`; a pseudo-inverse is used when
/// the forecast covariance is singular (degenerate priors).
fn smoother_gain(filter_cov: &DMatrix<f64>, e_next: &CsrMatrix, forecast_cov_next: &DMatrix<f64>) -> DMatrix<f64> {
    let n = filter_cov.nrows();
    // J^T = P^{-1} E Sigma.
    let e_sigma = e_next.mul_dense(filter_cov);
    count_product(n, n, n);
    let jt = match forecast_cov_next.clone().cholesky() {
        Some(c) => c.solve(&e_sigma),
        None => {
            let pinv = forecast_cov_next
                .clone()
                .pseudo_inverse(1e-12 * forecast_cov_next.amax().max(f64::MIN_POSITIVE))
                .unwrap_or_else(|_| DMatrix::zeros(n, n));
            pinv * e_sigma
        }
    };
    count_product(n, n, n);
    jt.transpose()
}

fn backward_means(
    filter_mean: &[DVector<f64>],
    forecast_mean: &[DVector<f64>],
    smoother_gains: &[DMatrix<f64>],
) -> Vec<DVector<f64>> {
    let t_max = filter_mean.len();
    let mut out = filter_mean.to_vec();
    for t in (1..t_max).rev() {
        let diff = &out[t] - &forecast_mean[t];
        let j = &smoother_gains[t - 1];
        count_product(j.nrows(), j.ncols(), 1);
        out[t - 1] = &filter_mean[t - 1] + j * diff;
    }
    out
}

/// Kalman smoother. Smoothing covariances are computed when `with_cov` is set.
pub fn kalman_smoother(m: &StateSpaceModel, y: &[DVector<f64>], with_cov: bool) -> Result<MomentSequence> {
    let mut moments = kalman_filter(m, y)?;
    let t_max = m.horizon();
    let gains: Vec<DMatrix<f64>> = (1..t_max)
        .map(|t| smoother_gain(&moments.filter_cov[t - 1], m.evolution(t + 1), &moments.forecast_cov[t]))
        .collect();
    moments.smooth_mean = backward_means(&moments.filter_mean, &moments.forecast_mean, &gains);
    if with_cov {
        let mut covs = moments.filter_cov.clone();
        for t in (1..t_max).rev() {
            let j = &gains[t - 1];
            let mut c = &moments.filter_cov[t - 1] + j * (&covs[t] - &moments.forecast_cov[t]) * j.transpose();
            symmetrize(&mut c);
            covs[t - 1] = c;
        }
        moments.smooth_cov = covs;
    }
    Ok(moments)
}

/// Data-independent part of exact FFBS: filter and smoother gains plus noise
/// factors. Each draw then costs `O(n^2 T)`.
pub struct DenseSmoother {
    model: StateSpaceModel,
    forecast_mean_gains: Vec<DMatrix<f64>>,
    smoother_gains: Vec<DMatrix<f64>>,
    init_noise: NoiseFactor,
    model_noise: PerTime<NoiseFactor>,
}

impl DenseSmoother {
    pub fn new(m: &StateSpaceModel) -> Result<Self> {
        let empty: Vec<DVector<f64>> = m.observations().iter().map(|h| DVector::zeros(h.len())).collect();
        let pass = forward(m, &empty)?;
        let t_max = m.horizon();
        let smoother_gains = (1..t_max)
            .map(|t| smoother_gain(&pass.moments.filter_cov[t - 1], m.evolution(t + 1), &pass.moments.forecast_cov[t]))
            .collect();
        let init_noise = NoiseFactor::Dense(psd_cholesky(&m.init_cov().to_dense())?);
        let model_noise = m.model_error_all().try_map(|q| psd_cholesky(&q.to_dense()).map(NoiseFactor::Dense))?;
        Ok(Self {
            model: m.clone(),
            forecast_mean_gains: pass.gains,
            smoother_gains,
            init_noise,
            model_noise,
        })
    }

    /// Smoothing means for data `y`.
    pub fn smooth_mean(&self, y: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let m = &self.model;
        m.check_data(y)?;
        let mut mean = m.init_mean().clone();
        let mut forecast = Vec::with_capacity(m.horizon());
        let mut filtered = Vec::with_capacity(m.horizon());
        for t in 1..=m.horizon() {
            let fc = m.evolution(t).mul_vec(&mean);
            mean = apply_gain(&self.forecast_mean_gains[t - 1], m.observation(t).indices(), &y[t - 1], &fc);
            forecast.push(fc);
            filtered.push(mean.clone());
        }
        Ok(backward_means(&filtered, &forecast, &self.smoother_gains))
    }

    /// Draw number `index` of the sample set seeded by `seed`; returns `x_1..x_T`.
    pub fn draw(&self, y: &[DVector<f64>], seed: u64, index: u64) -> Result<Vec<DVector<f64>>> {
        let mut rng = substream(seed, index);
        let synth = simulate_with(&self.model, &self.init_noise, &self.model_noise, false, &mut rng);
        let y_star: Vec<DVector<f64>> = y.iter().zip(&synth.observations).map(|(a, b)| a - b).collect();
        let mu = self.smooth_mean(&y_star)?;
        Ok(synth.states[1..].iter().zip(mu).map(|(x, m)| x + m).collect())
    }

    pub fn sample(&self, y: &[DVector<f64>], n_samples: usize, seed: u64) -> Result<Vec<Vec<DVector<f64>>>> {
        map_indices(n_samples, worker_count(), |i| self.draw(y, seed, i as u64))
            .into_iter()
            .collect()
    }
}

/// Exact draws from `[x_{1:T} | y_{1:T}]`; `samples[s][t - 1]` is `x_t` of draw `s`.
pub fn ffbs(m: &StateSpaceModel, y: &[DVector<f64>], n_samples: usize, seed: u64) -> Result<Vec<Vec<DVector<f64>>>> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    DenseSmoother::new(m)?.sample(y, n_samples, seed)
}

#[cfg(test)]
pub(crate) mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::models::{Covariance, CovarianceSpec, Kernel};
    use crate::ordering::SpatialGrid;
    use crate::rng::standard_normal_vector;
    use crate::ssm::ObservationOperator;
    use rand::Rng;

    fn scalar_model(e: f64, q: f64, s0: f64, r: &[Option<f64>]) -> StateSpaceModel {
        let dense = |v: f64| Covariance::Dense(Arc::new(DMatrix::from_element(1, 1, v)));
        let obs = r
            .iter()
            .map(|v| match v {
                Some(v) => ObservationOperator::uniform(vec![0], *v).unwrap(),
                None => ObservationOperator::empty(),
            })
            .collect();
        StateSpaceModel::new(
            PerTime::Constant(CsrMatrix::from_dense(&DMatrix::from_element(1, 1, e))),
            PerTime::Constant(dense(q)),
            obs,
            DVector::zeros(1),
            dense(s0),
        )
        .unwrap()
    }

    fn scalars(v: &[Option<f64>]) -> Vec<DVector<f64>> {
        v.iter()
            .map(|x| match x {
                Some(x) => DVector::from_element(1, *x),
                None => DVector::zeros(0),
            })
            .collect()
    }

    /// Random model on a `side x side` grid with a random sparse evolution and
    /// partially observed, possibly empty, data.
    pub(crate) fn random_model(side: usize, horizon: usize, seed: u64) -> (StateSpaceModel, Vec<DVector<f64>>) {
        let g = SpatialGrid::regular(side, side).unwrap();
        let n = g.len();
        let mut rng = substream(seed, 999);
        let locs = Arc::new(g.locations().to_vec());
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, rng.gen_range(0.5..0.9)));
            for _ in 0..2 {
                trip.push((i, rng.gen_range(0..n), rng.gen_range(-0.2..0.2)));
            }
        }
        let e = CsrMatrix::from_triplets(n, n, trip).unwrap();
        let q = Covariance::kernel(CovarianceSpec::new(Kernel::Exponential, 0.3, 0.4).unwrap(), locs.clone());
        let s0 = Covariance::kernel(CovarianceSpec::new(Kernel::Matern15, 1.0, 0.3).unwrap(), locs);
        let obs = (0..horizon)
            .map(|t| {
                if t == 1 {
                    return ObservationOperator::empty();
                }
                let k = rng.gen_range(1..=n);
                let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                let r = (0..k).map(|_| rng.gen_range(0.05..0.5)).collect();
                ObservationOperator::new(idx, r).unwrap()
            })
            .collect();
        let mean = standard_normal_vector(&mut rng, n);
        let m = StateSpaceModel::new(PerTime::Constant(e), PerTime::Constant(q), obs, mean, s0).unwrap();
        let y = m.observations().iter().map(|h| standard_normal_vector(&mut rng, h.len())).collect();
        (m, y)
    }

    /// Means and covariances of `x_t | y_{1:T}` (or `y_{1:k}`) by conditioning
    /// the joint Gaussian of all states and observations.
    pub(crate) fn joint_conditional(
        m: &StateSpaceModel,
        y: &[DVector<f64>],
        upto: usize,
    ) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
        let n = m.n();
        let t_max = m.horizon();
        let mut means = vec![m.init_mean().clone()];
        // cross[s][t] = Cov(x_s, x_t)
        let mut cross = vec![vec![m.init_cov().to_dense()]];
        for t in 1..=t_max {
            let e = m.evolution(t).to_dense();
            means.push(&e * &means[t - 1]);
            let mut row = Vec::new();
            for s in 0..t {
                row.push(&e * &cross[t - 1][s]);
            }
            row.push(&e * &cross[t - 1][t - 1] * e.transpose() + m.model_error(t).to_dense());
            cross.push(row);
        }
        let cov = |a: usize, b: usize| -> DMatrix<f64> {
            if a >= b {
                cross[a][b].clone()
            } else {
                cross[b][a].transpose()
            }
        };
        let mut rows = Vec::new();
        for t in 1..=upto {
            for &i in m.observation(t).indices() {
                rows.push((t, i));
            }
        }
        let k = rows.len();
        let mut syy = DMatrix::zeros(k, k);
        let mut yv = DVector::zeros(k);
        let mut my = DVector::zeros(k);
        let mut offset = 0;
        for t in 1..=upto {
            for (d, (&i, &r)) in m.observation(t).indices().iter().zip(m.observation(t).noise_variance()).enumerate() {
                yv[offset + d] = y[t - 1][d];
                my[offset + d] = means[t][i];
                syy[(offset + d, offset + d)] += r;
            }
            offset += m.observation(t).len();
        }
        for (a, &(ta, ia)) in rows.iter().enumerate() {
            for (b, &(tb, ib)) in rows.iter().enumerate() {
                syy[(a, b)] += cov(ta, tb)[(ia, ib)];
            }
        }
        let mut out_m = Vec::new();
        let mut out_c = Vec::new();
        for t in 1..=t_max {
            let mut sxy = DMatrix::zeros(n, k);
            for (b, &(tb, ib)) in rows.iter().enumerate() {
                let c = cov(t, tb);
                for i in 0..n {
                    sxy[(i, b)] = c[(i, ib)];
                }
            }
            if k == 0 {
                out_m.push(means[t].clone());
                out_c.push(cov(t, t));
                continue;
            }
            let inv = syy.clone().cholesky().unwrap();
            let g = inv.solve(&sxy.transpose()).transpose();
            out_m.push(&means[t] + &g * (&yv - &my));
            out_c.push(cov(t, t) - &g * sxy.transpose());
        }
        (out_m, out_c)
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    fn relv(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn scalar_conjugate_update() {
        let m = scalar_model(1.0, 0.0, 1.0, &[Some(1.0)]);
        let k = kalman_filter(&m, &scalars(&[Some(2.0)])).unwrap();
        assert!((k.filter_mean[0][0] - 1.0).abs() < 1e-15);
        assert!((k.filter_cov[0][(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_data_propagates_mean() {
        let (m, _) = random_model(3, 4, 1);
        let m = m.with_observations(vec![ObservationOperator::empty(); 4]).unwrap();
        let y = vec![DVector::zeros(0); 4];
        let k = kalman_filter(&m, &y).unwrap();
        let mut mean = m.init_mean().clone();
        for t in 1..=4 {
            mean = m.evolution(t).mul_vec(&mean);
            assert!(relv(&k.filter_mean[t - 1], &mean) < 1e-14);
            assert_eq!(k.filter_mean[t - 1], k.forecast_mean[t - 1]);
        }
    }

    #[test]
    fn filter_matches_joint_gaussian() {
        let (m, y) = random_model(3, 4, 2);
        let k = kalman_filter(&m, &y).unwrap();
        for t in 1..=4 {
            let (mu, c) = joint_conditional(&m, &y, t);
            assert!(relv(&k.filter_mean[t - 1], &mu[t - 1]) < 1e-9, "t={t}");
            assert!(rel(&k.filter_cov[t - 1], &c[t - 1]) < 1e-9, "t={t}");
        }
    }

    #[test]
    fn filtering_never_increases_variance() {
        let (m, y) = random_model(3, 4, 3);
        let k = kalman_filter(&m, &y).unwrap();
        for t in 0..4 {
            let d = &k.forecast_cov[t] - &k.filter_cov[t];
            let min = d.symmetric_eigenvalues().min();
            assert!(min > -1e-10, "t={} min eig {min}", t + 1);
        }
    }

    #[test]
    fn smoother_matches_joint_gaussian() {
        let (m, y) = random_model(3, 4, 4);
        let s = kalman_smoother(&m, &y, true).unwrap();
        let (mu, c) = joint_conditional(&m, &y, 4);
        for t in 0..4 {
            assert!(relv(&s.smooth_mean[t], &mu[t]) < 1e-9, "t={}", t + 1);
            assert!(rel(&s.smooth_cov[t], &c[t]) < 1e-9, "t={}", t + 1);
        }
    }

    #[test]
    fn single_time_smoother_is_filter() {
        let (m, y) = random_model(2, 1, 5);
        let s = kalman_smoother(&m, &y, true).unwrap();
        assert_eq!(s.smooth_mean, s.filter_mean);
        assert_eq!(s.smooth_cov, s.filter_cov);
    }

    #[test]
    fn scalar_two_step_smoother() {
        let m = scalar_model(1.0, 1.0, 1.0, &[None, Some(1.0)]);
        let y = scalars(&[None, Some(3.0)]);
        let s = kalman_smoother(&m, &y, false).unwrap();
        // x_1 ~ N(0, 2), x_2 | x_1 ~ N(x_1, 1), y_2 = x_2 + N(0, 1).
        let sigma11 = 2.0;
        let sigma21 = 3.0;
        let mu22 = 3.0 * 3.0 / 4.0;
        let j = sigma11 / sigma21;
        assert!((s.filter_mean[1][0] - mu22).abs() < 1e-14);
        assert!((s.smooth_mean[0][0] - j * mu22).abs() < 1e-14);
    }

    #[test]
    fn degenerate_prior_gives_deterministic_draws() {
        let (m, y) = random_model(3, 3, 6);
        let zero = Covariance::Dense(Arc::new(DMatrix::zeros(9, 9)));
        let m = StateSpaceModel::new(
            m.evolution_all().clone(),
            PerTime::Constant(zero.clone()),
            m.observations().to_vec(),
            m.init_mean().clone(),
            zero,
        )
        .unwrap();
        let draws = ffbs(&m, &y, 3, 7).unwrap();
        let mut mean = m.init_mean().clone();
        for t in 1..=3 {
            mean = m.evolution(t).mul_vec(&mean);
            for d in &draws {
                assert!(relv(&d[t - 1], &mean) < 1e-10);
            }
        }
    }

    fn moments(draws: &[Vec<DVector<f64>>], t: usize, i: usize) -> (f64, f64) {
        let v: Vec<f64> = draws.iter().map(|d| d[t][i]).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (mean, var)
    }

    #[test]
    fn scalar_draws_match_smoother_moments() {
        let m = scalar_model(0.9, 0.5, 1.0, &[Some(0.5), None, Some(0.2)]);
        let y = scalars(&[Some(1.0), None, Some(-2.0)]);
        let s = kalman_smoother(&m, &y, true).unwrap();
        let draws = ffbs(&m, &y, 10_000, 3).unwrap();
        for t in 0..3 {
            let (mean, var) = moments(&draws, t, 0);
            let target_var = s.smooth_cov[t][(0, 0)];
            let se = (target_var / 10_000.0).sqrt();
            assert!((mean - s.smooth_mean[t][0]).abs() < 4.0 * se, "t={} mean {mean}", t + 1);
            assert!((var - target_var).abs() / target_var < 0.1, "t={} var {var}", t + 1);
        }
    }

    #[test]
    fn draws_without_data_follow_the_prior() {
        let m = scalar_model(0.8, 0.3, 1.0, &[None, None]);
        let m = StateSpaceModel::new(
            m.evolution_all().clone(),
            m.model_error_all().clone(),
            m.observations().to_vec(),
            DVector::from_element(1, 2.0),
            m.init_cov().clone(),
        )
        .unwrap();
        let y = vec![DVector::zeros(0); 2];
        let draws = ffbs(&m, &y, 10_000, 4).unwrap();
        let var1 = 0.64 + 0.3;
        let var2 = 0.64 * var1 + 0.3;
        for (t, (mu, var)) in [(1.6, var1), (1.28, var2)].into_iter().enumerate() {
            let (mean, v) = moments(&draws, t, 0);
            assert!((mean - mu).abs() < 4.0 * (var / 10_000f64).sqrt());
            assert!((v - var).abs() / var < 0.1);
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let (m, y) = random_model(3, 3, 8);
        let a = ffbs(&m, &y, 4, 9).unwrap();
        let b = ffbs(&m, &y, 4, 9).unwrap();
        assert_eq!(a, b);
        let c = ffbs(&m, &y, 4, 10).unwrap();
        assert_ne!(a, c);
        // Each draw depends only on its own index.
        assert_eq!(ffbs(&m, &y, 2, 9).unwrap()[..], a[..2]);
    }

    #[test]
    fn data_shape_is_checked() {
        let (m, y) = random_model(2, 3, 9);
        assert!(kalman_filter(&m, &y[..2]).is_err());
        assert!(ffbs(&m, &y, 0, 1).is_err());
    }
}
