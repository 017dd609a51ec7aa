//! Hierarchical Vecchia filter, smoother and scalable FFBS.
//!
//! Every covariance is carried as a lower-triangular factor on a fixed
//! sparsity pattern. The factors do not depend on the data, so they are built
//! once ([`HvFactors`]) and shared by every mean recursion and every draw.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::models::{simulate_with, NoiseFactor};
use crate::ordering::PatternOrdering;
use crate::parallel::{map_indices, worker_count};
use crate::rng::substream;
use crate::sparse::{
    filter_update_factor, hcf_values, selected_gram_values, SparseLowerTriangular, SparsityPattern, SymmetricEntries,
};
use crate::ssm::{permute_vector, unpermute_vector, PerTime, StateSpaceModel};

/// A covariance gathered on a pattern together with its pattern factor.
#[derive(Debug, Clone)]
pub struct PatternCovariance {
    values: Vec<f64>,
    factor: SparseLowerTriangular,
}

impl PatternCovariance {
    pub fn new<A: SymmetricEntries + ?Sized>(pattern: &Arc<SparsityPattern>, cov: &A, jitter: f64) -> Result<Self> {
        if cov.dim() != pattern.n() {
            return Err(Error::DimensionMismatch("covariance and pattern sizes differ".into()));
        }
        let values = cov.gather(pattern);
        let factor = hcf_values(pattern, with_jitter(pattern, values.clone(), jitter))?;
        Ok(Self { values, factor })
    }

    /// The same covariance multiplied by `s > 0`; the factor scales by `sqrt(s)`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            factor: self.factor.scaled(s.sqrt()),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn factor(&self) -> &SparseLowerTriangular {
        &self.factor
    }
}

fn with_jitter(pattern: &SparsityPattern, mut values: Vec<f64>, jitter: f64) -> Vec<f64> {
    if jitter != 0.0 {
        for i in 0..pattern.n() {
            values[pattern.diag_position(i)] *= 1.0 + jitter;
        }
    }
    values
}

/// Data-independent factor sequence of the filter.
#[derive(Debug, Clone)]
pub struct HvFactors {
    pattern: Arc<SparsityPattern>,
    init: SparseLowerTriangular,
    model_noise: PerTime<SparseLowerTriangular>,
    forecast: Vec<SparseLowerTriangular>,
    filter: Vec<SparseLowerTriangular>,
}

impl HvFactors {
    /// Builds all factors for model `m` (already in pattern order).
    pub fn new(m: &StateSpaceModel, pattern: &Arc<SparsityPattern>, jitter: f64) -> Result<Self> {
        check_pattern(m, pattern)?;
        let init = PatternCovariance::new(pattern, m.init_cov(), jitter).map_err(|e| e.at_time("hvf", 0))?;
        let mut t = 0;
        let q = m.model_error_all().try_map(|c| {
            t += 1;
            PatternCovariance::new(pattern, c, jitter).map_err(|e| e.at_time("hvf", t))
        })?;
        Self::from_parts(m, pattern, init.factor, &q, jitter)
    }

    /// Builds the forecast and filtering factors from a prepared initial factor
    /// and model-error covariances.
    pub fn from_parts(
        m: &StateSpaceModel,
        pattern: &Arc<SparsityPattern>,
        init: SparseLowerTriangular,
        model_error: &PerTime<PatternCovariance>,
        jitter: f64,
    ) -> Result<Self> {
        check_pattern(m, pattern)?;
        if !Arc::ptr_eq(init.pattern(), pattern) && **init.pattern() != **pattern {
            return Err(Error::InvalidInput("initial factor uses a different pattern".into()));
        }
        let t_max = m.horizon();
        let mut forecast = Vec::with_capacity(t_max);
        let mut filter: Vec<SparseLowerTriangular> = Vec::with_capacity(t_max);
        for t in 1..=t_max {
            let prev = filter.last().unwrap_or(&init);
            let step = || -> Result<(SparseLowerTriangular, SparseLowerTriangular)> {
                let gram = selected_gram_values(m.evolution(t), prev, model_error.at(t).values(), pattern)?;
                let l_fc = hcf_values(pattern, with_jitter(pattern, gram.into_values(), jitter))?;
                let h = m.observation(t);
                let l_tt = filter_update_factor(&l_fc, h.indices(), &h.noise_precision())?;
                Ok((l_fc, l_tt))
            };
            let (l_fc, l_tt) = step().map_err(|e| e.at_time("hvf", t))?;
            forecast.push(l_fc);
            filter.push(l_tt);
        }
        Ok(Self {
            pattern: pattern.clone(),
            init,
            model_noise: model_error.map(|q| q.factor.clone()),
            forecast,
            filter,
        })
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    /// `L_{0|0}`.
    pub fn init(&self) -> &SparseLowerTriangular {
        &self.init
    }

    /// `L_{t|t-1}` for `t = 1..=T`.
    pub fn forecast(&self, t: usize) -> &SparseLowerTriangular {
        &self.forecast[t - 1]
    }

    /// `L_{t|t}` for `t = 1..=T`.
    pub fn filter(&self, t: usize) -> &SparseLowerTriangular {
        &self.filter[t - 1]
    }

    /// Factor of the model-error covariance at time `t`.
    pub fn model_noise(&self, t: usize) -> &SparseLowerTriangular {
        self.model_noise.at(t)
    }

    pub fn horizon(&self) -> usize {
        self.forecast.len()
    }

    /// Forecast and filtering means for data `y`.
    pub fn filter_means(&self, m: &StateSpaceModel, y: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        m.check_data(y)?;
        self.check_model(m)?;
        let n = m.n();
        let mut mean = m.init_mean().clone();
        let mut forecast = Vec::with_capacity(m.horizon());
        let mut filtered = Vec::with_capacity(m.horizon());
        for t in 1..=m.horizon() {
            let fc = m.evolution(t).mul_vec(&mean);
            let h = m.observation(t);
            mean = if h.is_empty() {
                fc.clone()
            } else {
                let l = self.filter(t);
                let resid = &y[t - 1] - h.select(&fc);
                let v = h.scatter_weighted(&resid, n);
                &fc + l.mul_vec(&l.mul_transpose_vec(&v))
            };
            forecast.push(fc);
            filtered.push(mean.clone());
        }
        Ok((forecast, filtered))
    }

    /// Smoothing means for data `y`.
    pub fn smooth_means(&self, m: &StateSpaceModel, y: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let (forecast, filtered) = self.filter_means(m, y)?;
        self.backward(m, &forecast, filtered)
    }

    fn backward(&self, m: &StateSpaceModel, forecast: &[DVector<f64>], mut means: Vec<DVector<f64>>) -> Result<Vec<DVector<f64>>> {
        for t in (1..m.horizon()).rev() {
            let step = || -> Result<DVector<f64>> {
                let l_fc = self.forecast(t + 1);
                let diff = &means[t] - &forecast[t];
                let a = l_fc.solve(&diff, false)?;
                let b = l_fc.solve(&a, true)?;
                let c = m.evolution(t + 1).mul_transpose_vec(&b);
                let l = self.filter(t);
                Ok(l.mul_vec(&l.mul_transpose_vec(&c)))
            };
            let delta = step().map_err(|e| e.at_time("hvs", t))?;
            means[t - 1] += delta;
        }
        Ok(means)
    }

    fn check_model(&self, m: &StateSpaceModel) -> Result<()> {
        if m.n() != self.pattern.n() || m.horizon() != self.horizon() {
            return Err(Error::DimensionMismatch("factors were built for a different model".into()));
        }
        Ok(())
    }
}

fn check_pattern(m: &StateSpaceModel, pattern: &SparsityPattern) -> Result<()> {
    if pattern.n() != m.n() {
        return Err(Error::DimensionMismatch(format!(
            "pattern of size {} for a state of size {}",
            pattern.n(),
            m.n()
        )));
    }
    Ok(())
}

/// Filter output: the shared factors with the data-dependent means.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub factors: Arc<HvFactors>,
    /// `t = 1..=T` at index `t - 1`.
    pub forecast_mean: Vec<DVector<f64>>,
    pub filter_mean: Vec<DVector<f64>>,
}

/// Hierarchical Vecchia filter.
pub fn hvf(m: &StateSpaceModel, y: &[DVector<f64>], pattern: &Arc<SparsityPattern>) -> Result<FilterState> {
    m.check_data(y)?;
    let factors = Arc::new(HvFactors::new(m, pattern, 0.0)?);
    let (forecast_mean, filter_mean) = factors.filter_means(m, y)?;
    Ok(FilterState {
        factors,
        forecast_mean,
        filter_mean,
    })
}

/// Hierarchical Vecchia smoother; returns the smoothing means for `t = 1..=T`.
pub fn hvs(m: &StateSpaceModel, y: &[DVector<f64>], pattern: &Arc<SparsityPattern>) -> Result<Vec<DVector<f64>>> {
    let state = hvf(m, y, pattern)?;
    state.factors.backward(m, &state.forecast_mean, state.filter_mean)
}

/// Scalable FFBS sampler with prepared factors.
pub struct ScalableSmoother {
    model: StateSpaceModel,
    factors: Arc<HvFactors>,
    init_noise: NoiseFactor,
    model_noise: PerTime<NoiseFactor>,
}

impl ScalableSmoother {
    pub fn new(m: &StateSpaceModel, pattern: &Arc<SparsityPattern>, jitter: f64) -> Result<Self> {
        Ok(Self::with_factors(m, Arc::new(HvFactors::new(m, pattern, jitter)?)))
    }

    pub fn with_factors(m: &StateSpaceModel, factors: Arc<HvFactors>) -> Self {
        let init_noise = NoiseFactor::Sparse(factors.init.clone());
        let model_noise = factors.model_noise.map(|l| NoiseFactor::Sparse(l.clone()));
        Self {
            model: m.clone(),
            factors,
            init_noise,
            model_noise,
        }
    }

    pub fn factors(&self) -> &Arc<HvFactors> {
        &self.factors
    }

    /// Draw number `index` of the sample set seeded by `seed`; returns `x_1..x_T`.
    pub fn draw(&self, y: &[DVector<f64>], seed: u64, index: u64) -> Result<Vec<DVector<f64>>> {
        self.model.check_data(y)?;
        let mut rng = substream(seed, index);
        let synth = simulate_with(&self.model, &self.init_noise, &self.model_noise, false, &mut rng);
        let y_star: Vec<DVector<f64>> = y.iter().zip(&synth.observations).map(|(a, b)| a - b).collect();
        let mu = self.factors.smooth_means(&self.model, &y_star)?;
        Ok(synth.states[1..].iter().zip(mu).map(|(x, m)| x + m).collect())
    }

    pub fn sample(&self, y: &[DVector<f64>], n_samples: usize, seed: u64) -> Result<Vec<Vec<DVector<f64>>>> {
        map_indices(n_samples, worker_count(), |i| self.draw(y, seed, i as u64))
            .into_iter()
            .collect()
    }
}

/// Approximate draws from `[x_{1:T} | y_{1:T}]` for a model in pattern order;
/// `samples[s][t - 1]` is `x_t` of draw `s`.
pub fn scalable_ffbs(
    m: &StateSpaceModel,
    y: &[DVector<f64>],
    pattern: &Arc<SparsityPattern>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    m.check_data(y)?;
    ScalableSmoother::new(m, pattern, 0.0)?.sample(y, n_samples, seed)
}

/// A model re-expressed in the variable order of a pattern, with conversions
/// back to the original order.
#[derive(Debug, Clone)]
pub struct OrderedModel {
    pub model: StateSpaceModel,
    pub ordering: PatternOrdering,
}

impl OrderedModel {
    pub fn new(m: &StateSpaceModel, ordering: PatternOrdering) -> Result<Self> {
        Ok(Self {
            model: m.permuted(&ordering.order)?,
            ordering,
        })
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.ordering.pattern
    }

    /// State vector from original order to pattern order.
    pub fn to_pattern(&self, x: &DVector<f64>) -> DVector<f64> {
        permute_vector(x, &self.ordering.order)
    }

    /// State vector from pattern order back to original order.
    pub fn to_original(&self, x: &DVector<f64>) -> DVector<f64> {
        unpermute_vector(x, &self.ordering.order)
    }

    /// Scalable FFBS with inputs and outputs in the original order. Observation
    /// vectors need no reordering since only the selector labels change.
    pub fn sample(&self, y: &[DVector<f64>], n_samples: usize, seed: u64, jitter: f64) -> Result<Vec<Vec<DVector<f64>>>> {
        if n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be at least 1".into()));
        }
        self.model.check_data(y)?;
        let draws = ScalableSmoother::new(&self.model, self.pattern(), jitter)?.sample(y, n_samples, seed)?;
        Ok(draws
            .into_iter()
            .map(|d| d.iter().map(|x| self.to_original(x)).collect())
            .collect())
    }
}
