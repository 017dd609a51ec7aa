//! Linear-Gaussian state-space model
//!
//! `x_t = E_t x_{t-1} + w_t`, `w_t ~ N(0, Q_t)`;
//! `y_t = H_t x_t + v_t`, `v_t ~ N(0, R_t)`;
//! `x_0 ~ N(mu_0, Sigma_0)`, for `t = 1..=T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::Covariance;
use crate::ordering::invert_permutation;
use crate::sparse::{CsrMatrix, SymmetricEntries};

/// A per-time quantity that is either shared by every time point or given for each.
#[derive(Debug, Clone, PartialEq)]
pub enum PerTime<T> {
    Constant(T),
    Varying(Vec<T>),
}

impl<T> PerTime<T> {
    /// Value at time `t` (1-based).
    pub fn at(&self, t: usize) -> &T {
        match self {
            PerTime::Constant(v) => v,
            PerTime::Varying(v) => &v[t - 1],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, PerTime::Constant(_))
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerTime<U> {
        match self {
            PerTime::Constant(v) => PerTime::Constant(f(v)),
            PerTime::Varying(v) => PerTime::Varying(v.iter().map(f).collect()),
        }
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(&T) -> std::result::Result<U, E>) -> std::result::Result<PerTime<U>, E> {
        Ok(match self {
            PerTime::Constant(v) => PerTime::Constant(f(v)?),
            PerTime::Varying(v) => PerTime::Varying(v.iter().map(f).collect::<std::result::Result<_, _>>()?),
        })
    }

    fn check_len(&self, horizon: usize, what: &str) -> Result<()> {
        match self {
            PerTime::Varying(v) if v.len() != horizon => Err(Error::DimensionMismatch(format!(
                "{what}: {} entries for horizon {horizon}",
                v.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Observation operator `H_t` as a row selection of the state, with diagonal `R_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperator {
    indices: Vec<usize>,
    noise_variance: Vec<f64>,
}

impl ObservationOperator {
    pub fn new(indices: Vec<usize>, noise_variance: Vec<f64>) -> Result<Self> {
        if indices.len() != noise_variance.len() {
            return Err(Error::DimensionMismatch("one noise variance per observed row".into()));
        }
        if let Some(v) = noise_variance.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!("observation noise variance {v} must be positive")));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("observed rows must be distinct".into()));
        }
        Ok(Self { indices, noise_variance })
    }

    /// Same noise variance for every observed row.
    pub fn uniform(indices: Vec<usize>, variance: f64) -> Result<Self> {
        let v = vec![variance; indices.len()];
        Self::new(indices, v)
    }

    pub fn empty() -> Self {
        Self {
            indices: vec![],
            noise_variance: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn noise_variance(&self) -> &[f64] {
        &self.noise_variance
    }

    pub fn noise_precision(&self) -> Vec<f64> {
        self.noise_variance.iter().map(|v| 1.0 / v).collect()
    }

    /// `H x`.
    pub fn select(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.indices.iter().map(|&i| x[i]))
    }

    /// `H^T R^{-1} v` as a state-sized vector.
    pub fn scatter_weighted(&self, v: &DVector<f64>, n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for ((&i, &r), &vi) in self.indices.iter().zip(&self.noise_variance).zip(v.iter()) {
            out[i] += vi / r;
        }
        out
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.len(), n);
        for (r, &i) in self.indices.iter().enumerate() {
            h[(r, i)] = 1.0;
        }
        h
    }

    fn relabeled(&self, inverse: &[usize]) -> Self {
        Self {
            indices: self.indices.iter().map(|&i| inverse[i]).collect(),
            noise_variance: self.noise_variance.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    n: usize,
    horizon: usize,
    evolution: PerTime<CsrMatrix>,
    model_error: PerTime<Covariance>,
    observations: Vec<ObservationOperator>,
    init_mean: DVector<f64>,
    init_cov: Covariance,
}

impl StateSpaceModel {
    pub fn new(
        evolution: PerTime<CsrMatrix>,
        model_error: PerTime<Covariance>,
        observations: Vec<ObservationOperator>,
        init_mean: DVector<f64>,
        init_cov: Covariance,
    ) -> Result<Self> {
        let n = init_mean.len();
        let horizon = observations.len();
        if n == 0 || horizon == 0 {
            return Err(Error::InvalidInput("state dimension and horizon must be positive".into()));
        }
        evolution.check_len(horizon, "evolution")?;
        model_error.check_len(horizon, "model error")?;
        for t in 1..=horizon {
            let e = evolution.at(t);
            if e.nrows() != n || e.ncols() != n {
                return Err(Error::DimensionMismatch(format!("E_{t} is not {n}x{n}")));
            }
            if model_error.at(t).dim() != n {
                return Err(Error::DimensionMismatch(format!("Q_{t} is not {n}x{n}")));
            }
            if let Some(&i) = observations[t - 1].indices().iter().find(|&&i| i >= n) {
                return Err(Error::DimensionMismatch(format!("H_{t} selects row {i} of {n}")));
            }
        }
        if init_cov.dim() != n {
            return Err(Error::DimensionMismatch("Sigma_0 has the wrong size".into()));
        }
        Ok(Self {
            n,
            horizon,
            evolution,
            model_error,
            observations,
            init_mean,
            init_cov,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of data time points `T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn evolution(&self, t: usize) -> &CsrMatrix {
        self.evolution.at(t)
    }

    pub fn evolution_all(&self) -> &PerTime<CsrMatrix> {
        &self.evolution
    }

    pub fn model_error(&self, t: usize) -> &Covariance {
        self.model_error.at(t)
    }

    pub fn model_error_all(&self) -> &PerTime<Covariance> {
        &self.model_error
    }

    pub fn observation(&self, t: usize) -> &ObservationOperator {
        &self.observations[t - 1]
    }

    pub fn observations(&self) -> &[ObservationOperator] {
        &self.observations
    }

    pub fn init_mean(&self) -> &DVector<f64> {
        &self.init_mean
    }

    pub fn init_cov(&self) -> &Covariance {
        &self.init_cov
    }

    pub fn with_model_error(&self, model_error: PerTime<Covariance>) -> Result<Self> {
        Self::new(
            self.evolution.clone(),
            model_error,
            self.observations.clone(),
            self.init_mean.clone(),
            self.init_cov.clone(),
        )
    }

    pub fn with_observations(&self, observations: Vec<ObservationOperator>) -> Result<Self> {
        Self::new(
            self.evolution.clone(),
            self.model_error.clone(),
            observations,
            self.init_mean.clone(),
            self.init_cov.clone(),
        )
    }

    /// Re-expresses the model with variables reordered: new index `k` holds old index `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let inverse = invert_permutation(order);
        Ok(Self {
            n: self.n,
            horizon: self.horizon,
            evolution: self.evolution.try_map(|e| e.permute_symmetric(order))?,
            model_error: self.model_error.map(|q| q.permuted(order)),
            observations: self.observations.iter().map(|o| o.relabeled(&inverse)).collect(),
            init_mean: permute_vector(&self.init_mean, order),
            init_cov: self.init_cov.permuted(order),
        })
    }

    /// Checks an observation sequence against `H_t`.
    pub fn check_data(&self, y: &[DVector<f64>]) -> Result<()> {
        if y.len() != self.horizon {
            return Err(Error::DimensionMismatch(format!(
                "{} observation vectors for horizon {}",
                y.len(),
                self.horizon
            )));
        }
        for (t, (yt, h)) in y.iter().zip(&self.observations).enumerate() {
            if yt.len() != h.len() {
                return Err(Error::DimensionMismatch(format!(
                    "y_{} has length {} but H_{} selects {} rows",
                    t + 1,
                    yt.len(),
                    t + 1,
                    h.len()
                )));
            }
        }
        Ok(())
    }
}

/// `out[k] = x[order[k]]`.
pub fn permute_vector(x: &DVector<f64>, order: &[usize]) -> DVector<f64> {
    DVector::from_iterator(order.len(), order.iter().map(|&i| x[i]))
}

/// Inverse of [`permute_vector`].
pub fn unpermute_vector(x: &DVector<f64>, order: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(order.len());
    for (k, &i) in order.iter().enumerate() {
        out[i] = x[k];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_operator_validation() {
        assert!(ObservationOperator::new(vec![0, 1], vec![1.0]).is_err());
        assert!(ObservationOperator::new(vec![0, 0], vec![1.0, 1.0]).is_err());
        assert!(ObservationOperator::uniform(vec![0, 2], 0.0).is_err());
        let h = ObservationOperator::uniform(vec![2, 0], 0.5).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(h.select(&x).as_slice(), &[3.0, 1.0]);
        assert_eq!(h.scatter_weighted(&DVector::from_vec(vec![1.0, 1.0]), 3).as_slice(), &[2.0, 0.0, 2.0]);
        assert_eq!(&h.to_dense(3) * &x, h.select(&x));
    }

    #[test]
    fn permutation_roundtrip() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let order = [3, 1, 0, 2];
        assert_eq!(permute_vector(&x, &order).as_slice(), &[4.0, 2.0, 1.0, 3.0]);
        assert_eq!(unpermute_vector(&permute_vector(&x, &order), &order), x);
    }

    #[test]
    fn model_dimension_checks() {
        let n = 3;
        let cov = Covariance::Dense(std::sync::Arc::new(DMatrix::identity(n, n)));
        let ok = StateSpaceModel::new(
            PerTime::Constant(CsrMatrix::identity(n)),
            PerTime::Constant(cov.clone()),
            vec![ObservationOperator::empty(); 2],
            DVector::zeros(n),
            cov.clone(),
        );
        assert!(ok.is_ok());
        let bad = StateSpaceModel::new(
            PerTime::Constant(CsrMatrix::identity(n + 1)),
            PerTime::Constant(cov.clone()),
            vec![ObservationOperator::empty(); 2],
            DVector::zeros(n),
            cov.clone(),
        );
        assert!(bad.is_err());
        let m = ok.unwrap();
        assert!(m.check_data(&[DVector::zeros(0)]).is_err());
        assert!(m.check_data(&[DVector::zeros(0), DVector::zeros(0)]).is_ok());
    }
}
