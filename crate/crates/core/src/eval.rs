//! Ensemble scoring and the Gibbs sampler for the model-error variance.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::hv::{HvFactors, PatternCovariance, ScalableSmoother};
use crate::models::Covariance;
use crate::rng::substream;
use crate::sparse::{SparseLowerTriangular, SparsityPattern};
use crate::ssm::{PerTime, StateSpaceModel};

/// Energy-form CRPS of an ensemble against a realized vector:
/// mean distance to the target minus half the mean pairwise member distance.
pub fn crps(members: &[DVector<f64>], target: &DVector<f64>) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::InvalidInput("ensemble has no members".into()));
    }
    if let Some(m) = members.iter().find(|m| m.len() != target.len()) {
        return Err(Error::DimensionMismatch(format!(
            "member of length {} against target of length {}",
            m.len(),
            target.len()
        )));
    }
    let k = members.len() as f64;
    let spread_to_target: f64 = members.iter().map(|m| (m - target).norm()).sum();
    let mut pairwise = 0.0;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            pairwise += 2.0 * (&members[i] - &members[j]).norm();
        }
    }
    Ok(spread_to_target / k - pairwise / (2.0 * k * k))
}

/// CRPS at each time point of a sample set (`samples[s][t]`) against `truth[t]`.
pub fn crps_per_time(samples: &[Vec<DVector<f64>>], truth: &[DVector<f64>]) -> Result<Vec<f64>> {
    if samples.iter().any(|s| s.len() != truth.len()) {
        return Err(Error::DimensionMismatch("samples and truth cover different horizons".into()));
    }
    (0..truth.len())
        .map(|t| {
            let members: Vec<DVector<f64>> = samples.iter().map(|s| s[t].clone()).collect();
            crps(&members, &truth[t])
        })
        .collect()
}

/// Elementwise `method / reference`, times 100 when `percent` is set.
pub fn crps_ratio(method: &[f64], reference: &[f64], percent: bool) -> Result<Vec<f64>> {
    if method.len() != reference.len() {
        return Err(Error::DimensionMismatch("score sequences differ in length".into()));
    }
    let scale = if percent { 100.0 } else { 1.0 };
    method
        .iter()
        .zip(reference)
        .enumerate()
        .map(|(t, (&a, &b))| {
            if b == 0.0 {
                Err(Error::InvalidInput(format!("reference score is zero at index {t}")))
            } else {
                Ok(scale * a / b)
            }
        })
        .collect()
}

/// Pointwise average of per-time scores across replicates.
pub fn average_replicates(replicates: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = replicates
        .first()
        .ok_or_else(|| Error::InvalidInput("no replicates to average".into()))?;
    if replicates.iter().any(|r| r.len() != first.len()) {
        return Err(Error::DimensionMismatch("replicates differ in length".into()));
    }
    let k = replicates.len() as f64;
    Ok((0..first.len()).map(|t| replicates.iter().map(|r| r[t]).sum::<f64>() / k).collect())
}

/// Inverse gamma with density proportional to `x^{-shape-1} exp(-scale/x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "inverse gamma needs positive shape and scale, got ({shape}, {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// Defined for `shape > 1`.
    pub fn mean(&self) -> f64 {
        self.scale / (self.shape - 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.scale).expect("validated parameters");
        1.0 / g.sample(rng)
    }
}

/// Conjugate update of the model-error variance given states `x_1..x_T`, for
/// `Q_t = sigma^2 C` where `corr_factor` is a factor of `C`.
pub fn sigma_w_posterior(
    states: &[DVector<f64>],
    m: &StateSpaceModel,
    corr_factor: &SparseLowerTriangular,
    prior: InverseGammaParams,
) -> Result<InverseGammaParams> {
    let n = m.n();
    if corr_factor.n() != n {
        return Err(Error::DimensionMismatch("correlation factor size".into()));
    }
    if states.len() > m.horizon() || states.iter().any(|x| x.len() != n) {
        return Err(Error::DimensionMismatch("state sequence does not fit the model".into()));
    }
    let t_max = states.len();
    let mut quad = 0.0;
    for t in 2..=t_max {
        let r = &states[t - 1] - m.evolution(t).mul_vec(&states[t - 2]);
        let z = corr_factor.solve(&r, false)?;
        quad += z.norm_squared();
    }
    InverseGammaParams::new(
        prior.shape + (n * t_max.saturating_sub(1)) as f64 / 2.0,
        prior.scale + 0.5 * quad,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    pub iters: usize,
    pub init: f64,
    pub prior: InverseGammaParams,
    pub jitter: f64,
}

fn variance_stream(k: usize) -> u64 {
    (1u64 << 40) + k as u64
}

/// Gibbs chain for the model-error variance: alternates a scalable FFBS draw
/// of the states under `Q = sigma^2 C` with a conjugate draw of `sigma^2`.
/// The model must be in pattern order; its own model-error term is ignored.
pub fn gibbs_sigma_w(
    m: &StateSpaceModel,
    y: &[DVector<f64>],
    pattern: &Arc<SparsityPattern>,
    correlation: &Covariance,
    cfg: &GibbsConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if cfg.iters == 0 || !(cfg.init > 0.0) {
        return Err(Error::InvalidInput("Gibbs needs iters >= 1 and a positive initial value".into()));
    }
    m.check_data(y)?;
    let corr = PatternCovariance::new(pattern, correlation, cfg.jitter)?;
    let init = PatternCovariance::new(pattern, m.init_cov(), cfg.jitter)?.factor().clone();
    let mut sigma2 = cfg.init;
    let mut chain = Vec::with_capacity(cfg.iters);
    for k in 0..cfg.iters {
        let q = PerTime::Constant(corr.scaled(sigma2));
        let factors = HvFactors::from_parts(m, pattern, init.clone(), &q, cfg.jitter)?;
        let states = ScalableSmoother::with_factors(m, Arc::new(factors)).draw(y, seed, k as u64)?;
        let post = sigma_w_posterior(&states, m, corr.factor(), cfg.prior)?;
        sigma2 = post.sample(&mut substream(seed, variance_stream(k)));
        chain.push(sigma2);
        log::debug!("gibbs iteration {k}: sigma_w^2 = {sigma2:.5}");
    }
    Ok(chain)
}

/// Variance chain with the states held fixed (no state update step).
pub fn gibbs_fixed_states(
    states: &[DVector<f64>],
    m: &StateSpaceModel,
    corr_factor: &SparseLowerTriangular,
    prior: InverseGammaParams,
    iters: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let post = sigma_w_posterior(states, m, corr_factor, prior)?;
    Ok((0..iters).map(|k| post.sample(&mut substream(seed, variance_stream(k)))).collect())
}

/// Mean of the chain after discarding the leading `burn_in` fraction.
pub fn post_burn_in_mean(chain: &[f64], burn_in: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::InvalidInput(format!("burn-in fraction {burn_in} must be in [0, 1)")));
    }
    let start = (burn_in * chain.len() as f64).floor() as usize;
    let tail = &chain[start.min(chain.len())..];
    if tail.is_empty() {
        return Err(Error::InvalidInput("chain is empty after burn-in".into()));
    }
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ordering::build_dense_pattern;
    use crate::rng::standard_normal_vector;
    use crate::sparse::{hcf, CsrMatrix};
    use crate::ssm::ObservationOperator;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps(&[v(&[1.0, 2.0])], &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(crps(&[v(&[3.0]), v(&[3.0])], &v(&[3.0])).unwrap(), 0.0);
        assert_eq!(crps(&[v(&[0.0]), v(&[2.0])], &v(&[1.0])).unwrap(), 0.5);
        assert!(crps(&[], &v(&[1.0])).is_err());
        assert!(crps(&[v(&[1.0, 2.0])], &v(&[1.0])).is_err());
    }

    #[test]
    fn single_member_is_distance() {
        let q = v(&[3.0, 4.0]);
        assert_eq!(crps(&[q], &v(&[0.0, 0.0])).unwrap(), 5.0);
    }

    proptest! {
        #[test]
        fn translation_invariant(seed in any::<u64>(), k in 1usize..6, d in 1usize..5) {
            let mut rng = substream(seed, 0);
            let members: Vec<_> = (0..k).map(|_| standard_normal_vector(&mut rng, d)).collect();
            let target = standard_normal_vector(&mut rng, d);
            let shift = standard_normal_vector(&mut rng, d) * 10.0;
            let a = crps(&members, &target).unwrap();
            let moved: Vec<_> = members.iter().map(|m| m + &shift).collect();
            let b = crps(&moved, &(&target + &shift)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn true_predictive_beats_a_shifted_one() {
        let mut rng = substream(17, 0);
        let (mut good, mut bad) = (0.0, 0.0);
        for _ in 0..200 {
            let target = standard_normal_vector(&mut rng, 3);
            let members: Vec<_> = (0..20).map(|_| standard_normal_vector(&mut rng, 3)).collect();
            let shifted: Vec<_> = members.iter().map(|m| m.add_scalar(2.0)).collect();
            good += crps(&members, &target).unwrap();
            bad += crps(&shifted, &target).unwrap();
        }
        assert!(good < bad);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(crps_ratio(&[2.0, 4.0], &[4.0, 4.0], false).unwrap(), vec![0.5, 1.0]);
        assert_eq!(crps_ratio(&[2.0, 4.0], &[4.0, 4.0], true).unwrap(), vec![50.0, 100.0]);
        assert_eq!(crps_ratio(&[1.5, 2.5], &[1.5, 2.5], false).unwrap(), vec![1.0, 1.0]);
        assert!(crps_ratio(&[1.0], &[0.0], false).is_err());
        assert!(crps_ratio(&[1.0], &[1.0, 2.0], false).is_err());
    }

    #[test]
    fn replicate_average() {
        let avg = average_replicates(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(avg, vec![2.0, 4.0]);
        assert!(average_replicates(&[]).is_err());
    }

    fn walk_model(n: usize, horizon: usize) -> StateSpaceModel {
        let corr = Covariance::Dense(Arc::new(DMatrix::identity(n, n)));
        StateSpaceModel::new(
            PerTime::Constant(CsrMatrix::identity(n)),
            PerTime::Constant(corr.clone()),
            vec![ObservationOperator::empty(); horizon],
            DVector::zeros(n),
            corr,
        )
        .unwrap()
    }

    fn identity_factor(n: usize) -> SparseLowerTriangular {
        SparseLowerTriangular::identity(Arc::new(build_dense_pattern(n).unwrap()))
    }

    #[test]
    fn posterior_shape_and_scale() {
        let prior = InverseGammaParams::new(0.001, 0.001).unwrap();
        let m = walk_model(4, 3);
        let states = vec![DVector::from_element(4, 1.0); 3];
        let post = sigma_w_posterior(&states, &m, &identity_factor(4), prior).unwrap();
        assert_eq!(post.shape, 4.001);
        assert_eq!(post.scale, 0.001);

        let m = walk_model(1, 3);
        let states = vec![v(&[0.0]), v(&[1.0]), v(&[2.0])];
        let prior = InverseGammaParams { shape: 1.0, scale: 0.0 };
        let post = sigma_w_posterior(&states, &m, &identity_factor(1), prior);
        // A zero prior scale is rejected only when the residuals are also zero.
        assert_eq!(post.unwrap().scale, 1.0);
    }

    #[test]
    fn posterior_is_symmetric_in_time_order() {
        let m = walk_model(2, 4);
        let base = vec![v(&[0.0, 0.0]), v(&[1.0, -1.0]), v(&[1.0, 1.0]), v(&[3.0, 1.0])];
        // Increments (1,-1), (0,2), (2,0); reorder them and rebuild the path.
        let incs = [v(&[2.0, 0.0]), v(&[1.0, -1.0]), v(&[0.0, 2.0])];
        let mut other = vec![base[0].clone()];
        for d in &incs {
            let next = other.last().unwrap() + d;
            other.push(next);
        }
        let f = identity_factor(2);
        let prior = InverseGammaParams::new(0.5, 0.5).unwrap();
        assert_eq!(
            sigma_w_posterior(&base, &m, &f, prior).unwrap(),
            sigma_w_posterior(&other, &m, &f, prior).unwrap()
        );
    }

    #[test]
    fn correlation_factor_is_used() {
        let m = walk_model(2, 2);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = Arc::new(build_dense_pattern(2).unwrap());
        let l = hcf(&p, &c).unwrap();
        let states = vec![v(&[0.0, 0.0]), v(&[1.0, 2.0])];
        let prior = InverseGammaParams::new(1.0, 1.0).unwrap();
        let post = sigma_w_posterior(&states, &m, &l, prior).unwrap();
        let r = v(&[1.0, 2.0]);
        let quad = (r.transpose() * c.try_inverse().unwrap() * &r)[0];
        assert!((post.scale - (1.0 + 0.5 * quad)).abs() < 1e-12);
    }

    #[test]
    fn fixed_state_chain_mean() {
        let m = walk_model(3, 5);
        let mut rng = substream(2, 0);
        let states: Vec<_> = (0..5).map(|_| standard_normal_vector(&mut rng, 3)).collect();
        let prior = InverseGammaParams::new(0.001, 0.001).unwrap();
        let post = sigma_w_posterior(&states, &m, &identity_factor(3), prior).unwrap();
        let chain = gibbs_fixed_states(&states, &m, &identity_factor(3), prior, 10_000, 3).unwrap();
        let mean = chain.iter().sum::<f64>() / chain.len() as f64;
        let sd = post.mean() / (post.shape - 2.0).sqrt();
        let se = sd / (chain.len() as f64).sqrt();
        assert!((mean - post.mean()).abs() < 3.0 * se, "{mean} vs {}", post.mean());
    }

    #[test]
    fn burn_in_mean() {
        assert_eq!(post_burn_in_mean(&[10.0, 1.0, 3.0, 2.0, 4.0], 0.2).unwrap(), 2.5);
        assert!(post_burn_in_mean(&[1.0], 1.0).is_err());
        assert!(post_burn_in_mean(&[], 0.0).is_err());
    }

    #[test]
    fn single_iteration_chain() {
        let n = 4;
        let mut m = walk_model(n, 3);
        let obs = vec![ObservationOperator::uniform(vec![0, 2], 0.1).unwrap(); 3];
        m = m.with_observations(obs).unwrap();
        let y = vec![v(&[0.3, -0.2]); 3];
        let p = Arc::new(build_dense_pattern(n).unwrap());
        let corr = Covariance::Dense(Arc::new(DMatrix::identity(n, n)));
        let cfg = GibbsConfig {
            iters: 1,
            init: 0.2,
            prior: InverseGammaParams::new(0.001, 0.001).unwrap(),
            jitter: 0.0,
        };
        let a = gibbs_sigma_w(&m, &y, &p, &corr, &cfg, 9).unwrap();
        assert_eq!(a.len(), 1);
        assert!(a[0] > 0.0);
        assert_eq!(a, gibbs_sigma_w(&m, &y, &p, &corr, &cfg, 9).unwrap());
        let bad = GibbsConfig { init: 0.0, ..cfg };
        assert!(gibbs_sigma_w(&m, &y, &p, &corr, &bad, 9).is_err());
    }
}
