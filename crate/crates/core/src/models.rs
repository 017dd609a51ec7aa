//! Process-model builders: covariance kernels, the advection-diffusion
//! evolution operator, observation selection and trajectory simulation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ordering::{grid_spacing, Point};
use crate::rng::standard_normal_vector;
use crate::sparse::{hcf, CsrMatrix, SparseLowerTriangular, SparsityPattern, SymmetricEntries};
use crate::ssm::{ObservationOperator, PerTime, StateSpaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Exponential,
    /// Matérn with smoothness 3/2.
    Matern15,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Exponential => "exponential",
            Kernel::Matern15 => "matern15",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exponential" => Some(Kernel::Exponential),
            "matern15" => Some(Kernel::Matern15),
            _ => None,
        }
    }
}

/// Stationary isotropic covariance: marginal variance times a correlation of distance / range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSpec {
    pub kernel: Kernel,
    pub variance: f64,
    pub range: f64,
}

impl CovarianceSpec {
    pub fn new(kernel: Kernel, variance: f64, range: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidInput(format!("range must be positive, got {range}")));
        }
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::InvalidInput(format!("variance must be non-negative, got {variance}")));
        }
        Ok(Self { kernel, variance, range })
    }

    pub fn correlation(&self, d: f64) -> f64 {
        let u = d / self.range;
        match self.kernel {
            Kernel::Exponential => (-u).exp(),
            Kernel::Matern15 => {
                let s = 3f64.sqrt() * u;
                (1.0 + s) * (-s).exp()
            }
        }
    }

    pub fn value(&self, d: f64) -> f64 {
        self.variance * self.correlation(d)
    }
}

/// Kernel covariance over a set of locations, evaluated lazily per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCovariance {
    pub spec: CovarianceSpec,
    pub locations: Arc<Vec<Point>>,
}

impl KernelCovariance {
    pub fn new(spec: CovarianceSpec, locations: Arc<Vec<Point>>) -> Self {
        Self { spec, locations }
    }
}

impl SymmetricEntries for KernelCovariance {
    fn dim(&self) -> usize {
        self.locations.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.spec.variance;
        }
        let a = self.locations[i];
        let b = self.locations[j];
        self.spec.value(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
    }
}

/// Covariance matrix handle used by the model: a lazily evaluated kernel or an explicit matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Kernel(KernelCovariance),
    Dense(Arc<DMatrix<f64>>),
}

impl Covariance {
    pub fn kernel(spec: CovarianceSpec, locations: Arc<Vec<Point>>) -> Self {
        Covariance::Kernel(KernelCovariance::new(spec, locations))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Dense(m) => (**m).clone(),
            Covariance::Kernel(k) => {
                let n = k.dim();
                let mut m = DMatrix::zeros(n, n);
                for j in 0..n {
                    for i in j..n {
                        let v = k.entry(i, j);
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                m
            }
        }
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        match self {
            Covariance::Dense(m) => {
                Covariance::Dense(Arc::new(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(order[i], order[j])])))
            }
            Covariance::Kernel(k) => Covariance::kernel(
                k.spec,
                Arc::new(order.iter().map(|&i| k.locations[i]).collect()),
            ),
        }
    }

    /// Same structure with the matrix multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        match self {
            Covariance::Dense(m) => Covariance::Dense(Arc::new(&**m * s)),
            Covariance::Kernel(k) => {
                let mut spec = k.spec;
                spec.variance *= s;
                Covariance::kernel(spec, k.locations.clone())
            }
        }
    }
}

impl SymmetricEntries for Covariance {
    fn dim(&self) -> usize {
        match self {
            Covariance::Dense(m) => m.nrows(),
            Covariance::Kernel(k) => k.dim(),
        }
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            Covariance::Dense(m) => m[(i, j)],
            Covariance::Kernel(k) => k.entry(i, j),
        }
    }
}

/// Dense covariance for a spec over locations.
pub fn covariance_matrix(spec: &CovarianceSpec, locations: &[Point]) -> DMatrix<f64> {
    Covariance::kernel(*spec, Arc::new(locations.to_vec())).to_dense()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvectionDiffusionConfig {
    pub diffusion: f64,
    pub advection: f64,
    pub spacing: f64,
    pub time_step: f64,
    pub damping: f64,
}

impl AdvectionDiffusionConfig {
    /// Unit-square grid with `cols` columns and one model step per data time.
    pub fn unit_square(diffusion: f64, advection: f64, damping: f64, cols: usize) -> Self {
        Self {
            diffusion,
            advection,
            spacing: grid_spacing(cols),
            time_step: 1.0,
            damping,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion >= 0.0 && self.advection >= 0.0) {
            return Err(Error::InvalidInput("diffusion and advection must be non-negative".into()));
        }
        if !(self.spacing > 0.0 && self.time_step > 0.0) {
            return Err(Error::InvalidInput("spacing and time step must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!("damping must be in (0, 1], got {}", self.damping)));
        }
        Ok(())
    }

    /// `4 a dt / h^2 + 2 b dt / h`; the explicit scheme is flagged when this reaches 1.
    pub fn stability_number(&self) -> f64 {
        let h = self.spacing;
        4.0 * self.diffusion * self.time_step / (h * h) + 2.0 * self.advection * self.time_step / h
    }
}

/// Explicit centered finite-difference step of
/// `dx/dt = a (x_ss + x_rr) + b (x_s + x_r)` on a row-major `rows x cols` grid,
/// scaled by the damping factor. Neighbors outside the grid are taken as zero.
pub fn advection_diffusion_matrix(cfg: &AdvectionDiffusionConfig, rows: usize, cols: usize) -> Result<CsrMatrix> {
    cfg.validate()?;
    if cfg.stability_number() >= 1.0 {
        log::warn!(
            "advection-diffusion step may be unstable: 4*a*dt/h^2 + 2*b*dt/h = {:.4}",
            cfg.stability_number()
        );
    }
    let h = cfg.spacing;
    let diff = cfg.diffusion * cfg.time_step / (h * h);
    let adv = cfg.advection * cfg.time_step / (2.0 * h);
    let c = cfg.damping;
    let mut t = Vec::with_capacity(5 * rows * cols);
    for r in 0..rows {
        for col in 0..cols {
            let i = r * cols + col;
            t.push((i, i, c * (1.0 - 4.0 * diff)));
            if col + 1 < cols {
                t.push((i, i + 1, c * (diff + adv)));
            }
            if col > 0 {
                t.push((i, i - 1, c * (diff - adv)));
            }
            if r + 1 < rows {
                t.push((i, i + cols, c * (diff + adv)));
            }
            if r > 0 {
                t.push((i, i - cols, c * (diff - adv)));
            }
        }
    }
    CsrMatrix::from_triplets(rows * cols, rows * cols, t)
}

/// Uniformly random subset of `floor(fraction * n)` grid indices, sorted ascending.
pub fn observation_selector<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("observed fraction must be in (0, 1], got {fraction}")));
    }
    let k = ((fraction * n as f64) + 1e-9).floor() as usize;
    let k = k.min(n);
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// One independent selector per time point, all with noise variance `noise_variance`.
pub fn observation_operators<R: Rng + ?Sized>(
    n: usize,
    horizon: usize,
    fraction: f64,
    noise_variance: f64,
    rng: &mut R,
) -> Result<Vec<ObservationOperator>> {
    (0..horizon)
        .map(|_| ObservationOperator::uniform(observation_selector(n, fraction, rng)?, noise_variance))
        .collect()
}

/// A simulated state trajectory with its observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0, ..., x_T`.
    pub states: Vec<DVector<f64>>,
    /// `y_1, ..., y_T`.
    pub observations: Vec<DVector<f64>>,
}

/// How Gaussian noise is generated during simulation.
#[derive(Debug, Clone)]
pub enum NoisePath {
    /// Dense Cholesky factors (zero covariances allowed).
    Dense,
    /// Pattern-restricted factors.
    Sparse(Arc<SparsityPattern>),
}

pub(crate) enum NoiseFactor {
    Dense(DMatrix<f64>),
    Sparse(SparseLowerTriangular),
}

impl NoiseFactor {
    pub(crate) fn new(cov: &Covariance, path: &NoisePath) -> Result<Self> {
        Ok(match path {
            NoisePath::Dense => NoiseFactor::Dense(psd_cholesky(&cov.to_dense())?),
            NoisePath::Sparse(p) => NoiseFactor::Sparse(hcf(p, cov)?),
        })
    }

    pub(crate) fn apply(&self, eps: &DVector<f64>) -> DVector<f64> {
        match self {
            NoiseFactor::Dense(l) => l * eps,
            NoiseFactor::Sparse(l) => l.mul_vec(eps),
        }
    }
}

/// Lower Cholesky factor of a positive semidefinite matrix. Pivots at or below
/// `1e-14` of the largest diagonal entry produce a zero column.
pub fn psd_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-14 * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            if d < -1e-8 * scale.max(1.0) {
                return Err(Error::NotPositiveDefinite { row: j, pivot: d });
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Draws `x_{0:T}` and `y_{1:T}` from the model.
pub fn simulate_trajectory<R: Rng + ?Sized>(m: &StateSpaceModel, path: &NoisePath, rng: &mut R) -> Result<Trajectory> {
    let init = NoiseFactor::new(m.init_cov(), path)?;
    let q = m.model_error_all().try_map(|c| NoiseFactor::new(c, path))?;
    Ok(simulate_with(m, &init, &q, true, rng))
}

/// Simulation with prepared noise factors. When `with_mean` is false the initial
/// state is centered at zero, as needed for the synthetic draws of FFBS.
pub(crate) fn simulate_with<R: Rng + ?Sized>(
    m: &StateSpaceModel,
    init: &NoiseFactor,
    q: &PerTime<NoiseFactor>,
    with_mean: bool,
    rng: &mut R,
) -> Trajectory {
    let n = m.n();
    let mut x = init.apply(&standard_normal_vector(rng, n));
    if with_mean {
        x += m.init_mean();
    }
    let mut states = Vec::with_capacity(m.horizon() + 1);
    let mut observations = Vec::with_capacity(m.horizon());
    states.push(x.clone());
    for t in 1..=m.horizon() {
        x = m.evolution(t).mul_vec(&x) + q.at(t).apply(&standard_normal_vector(rng, n));
        let h = m.observation(t);
        let noise = standard_normal_vector(rng, h.len());
        let y = DVector::from_iterator(
            h.len(),
            h.indices()
                .iter()
                .zip(h.noise_variance())
                .zip(noise.iter())
                .map(|((&i, &r), &e)| x[i] + r.sqrt() * e),
        );
        states.push(x.clone());
        observations.push(y);
    }
    Trajectory { states, observations }
}
