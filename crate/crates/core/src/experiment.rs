//! Experiment orchestration: data generation from a configuration, pattern
//! selection, and the CRPS, Gibbs and timing studies.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;

use crate::config::{ExperimentConfig, MethodConfig, ModelConfig, PatternKind};
use crate::error::{Error, Result};
use crate::eval::{average_replicates, crps_per_time, crps_ratio, gibbs_sigma_w, post_burn_in_mean, GibbsConfig, InverseGammaParams};
use crate::exact::{kalman_filter, kalman_smoother, DenseSmoother};
use crate::hv::{hvf, hvs, OrderedModel, ScalableSmoother};
use crate::models::{
    advection_diffusion_matrix, observation_operators, simulate_trajectory, AdvectionDiffusionConfig, Covariance,
    CovarianceSpec, NoisePath, Trajectory,
};
use crate::ops;
use crate::ordering::{
    auto_depth, build_dense_pattern, build_hierarchy, build_hv_pattern, build_lowrank_pattern, PatternOrdering,
    SpatialGrid,
};
use crate::rng::substream;
use crate::ssm::{PerTime, StateSpaceModel};

const STREAM_SELECT: u64 = 1 << 60;
const STREAM_TRUTH: u64 = (1 << 60) + 1;
const STREAM_GIBBS_INIT: u64 = (1 << 60) + 2;

/// Seed of replicate `k`; replicate 0 uses the base seed.
pub fn replicate_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Simulated data set in the original grid order.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: SpatialGrid,
    pub model: StateSpaceModel,
    /// Unit-variance correlation underlying the model error.
    pub correlation: Covariance,
    pub truth: Trajectory,
}

impl Problem {
    pub fn observations(&self) -> &[DVector<f64>] {
        &self.truth.observations
    }

    /// True states `x_1..x_T`.
    pub fn states(&self) -> &[DVector<f64>] {
        &self.truth.states[1..]
    }
}

pub fn build_grid(cfg: &ModelConfig) -> Result<SpatialGrid> {
    SpatialGrid::regular(cfg.rows, cfg.cols)
}

/// Model, observation selectors and true trajectory for `seed`.
pub fn build_problem(cfg: &ModelConfig, seed: u64) -> Result<Problem> {
    let grid = build_grid(cfg)?;
    build_problem_on(cfg, grid, seed)
}

pub fn build_problem_on(cfg: &ModelConfig, grid: SpatialGrid, seed: u64) -> Result<Problem> {
    let n = grid.len();
    let locs = Arc::new(grid.locations().to_vec());
    let ad = AdvectionDiffusionConfig::unit_square(cfg.alpha, cfg.beta, cfg.damping, cfg.cols);
    let e = advection_diffusion_matrix(&ad, cfg.rows, cfg.cols)?;
    let correlation = Covariance::kernel(CovarianceSpec::new(cfg.kernel, 1.0, cfg.range)?, locs.clone());
    let init = Covariance::kernel(CovarianceSpec::new(cfg.kernel, cfg.sigma0_sq, cfg.range)?, locs);
    let obs = observation_operators(
        n,
        cfg.horizon,
        cfg.observed_fraction,
        cfg.sigmav_sq,
        &mut substream(seed, STREAM_SELECT),
    )?;
    let model = StateSpaceModel::new(
        PerTime::Constant(e),
        PerTime::Constant(correlation.scaled(cfg.sigmaw_sq)),
        obs,
        DVector::zeros(n),
        init,
    )?;
    let truth = simulate_trajectory(&model, &NoisePath::Dense, &mut substream(seed, STREAM_TRUTH))?;
    Ok(Problem {
        grid,
        model,
        correlation,
        truth,
    })
}

/// Knot counts and depth of the hierarchy described by `method`.
pub fn hv_layout(method: &MethodConfig, grid: &SpatialGrid) -> Result<(Vec<usize>, usize)> {
    let j = method.branching;
    match (&method.knots, method.depth) {
        (Some(k), Some(d)) if k.len() == d + 1 => Ok((k.clone(), d)),
        (Some(k), Some(d)) if k.len() == 1 => Ok((vec![k[0]; d + 1], d)),
        (Some(k), Some(d)) => Err(Error::Config {
            line: None,
            msg: format!("r: {} knot counts do not fit depth {d}", k.len()),
        }),
        (Some(k), None) if k.len() == 1 => {
            let d = auto_depth(grid, j, k[0])?;
            Ok((vec![k[0]; d + 1], d))
        }
        (Some(k), None) => Ok((k.clone(), k.len() - 1)),
        (None, _) => {
            let target = method.max_row_nnz.ok_or_else(|| Error::Config {
                line: None,
                msg: "N: a target is needed when r = auto".into(),
            })?;
            layout_for_target(grid, j, target, method.depth)
        }
    }
}

fn pattern_n(grid: &SpatialGrid, j: usize, knots: &[usize], depth: usize) -> Result<usize> {
    let h = build_hierarchy(grid, j, knots, depth)?;
    Ok(build_hv_pattern(&h)?.pattern.max_row_nnz())
}

/// The largest uniform knot count `r` (with the smallest adequate depth) whose
/// pattern stays within `target` rows, then the root knot count raised until
/// the maximum row count reaches `target`. The closest layout wins.
fn layout_for_target(grid: &SpatialGrid, j: usize, target: usize, depth: Option<usize>) -> Result<(Vec<usize>, usize)> {
    let n = grid.len();
    if target >= n {
        return Ok((vec![n], 0));
    }
    let mut base: Option<(usize, usize)> = None;
    for r in 1..=target {
        let d = match depth {
            Some(d) => d,
            None => auto_depth(grid, j, r)?,
        };
        if d + 1 > n {
            continue;
        }
        if pattern_n(grid, j, &vec![r; d + 1], d)? <= target {
            base = Some((r, d));
        }
    }
    let (r, d) = base.ok_or_else(|| Error::InvalidInput(format!("no hierarchy has at most {target} entries per row")))?;
    let mut knots = vec![r; d + 1];
    let mut best = (usize::MAX, knots.clone());
    for r0 in r..=n {
        knots[0] = r0;
        let got = pattern_n(grid, j, &knots, d)?;
        if got.abs_diff(target) < best.0 {
            best = (got.abs_diff(target), knots.clone());
        }
        if got >= target {
            break;
        }
    }
    Ok((best.1, d))
}

/// Pattern and variable order for the given method family.
pub fn build_ordering(method: &MethodConfig, kind: PatternKind, grid: &SpatialGrid) -> Result<PatternOrdering> {
    let n = grid.len();
    match kind {
        PatternKind::Hv => {
            let (knots, depth) = hv_layout(method, grid)?;
            build_hv_pattern(&build_hierarchy(grid, method.branching, &knots, depth)?)
        }
        PatternKind::LowRank => {
            let (knots, depth) = hv_layout(method, grid)?;
            let target = pattern_n(grid, method.branching, &knots, depth)?;
            let leading = target.saturating_sub(1).clamp(1, n);
            PatternOrdering::new(build_lowrank_pattern(n, leading)?, grid.order().to_vec())
        }
        PatternKind::Dense => PatternOrdering::new(build_dense_pattern(n)?, grid.order().to_vec()),
    }
}

/// A posterior sampler for one method; draws are returned in the original order.
pub enum Sampler {
    Exact(Box<DenseSmoother>),
    Scalable { ordered: OrderedModel, smoother: ScalableSmoother },
}

impl Sampler {
    pub fn new(cfg: &ExperimentConfig, kind: PatternKind, problem: &Problem) -> Result<Self> {
        match kind {
            PatternKind::Dense => Ok(Sampler::Exact(Box::new(DenseSmoother::new(&problem.model)?))),
            _ => {
                let ordering = build_ordering(&cfg.method, kind, &problem.grid)?;
                let ordered = OrderedModel::new(&problem.model, ordering)?;
                let smoother = ScalableSmoother::new(&ordered.model, ordered.pattern(), cfg.method.jitter)?;
                Ok(Sampler::Scalable { ordered, smoother })
            }
        }
    }

    /// Maximum row count of the pattern in use (`n` for the exact sampler).
    pub fn max_row_nnz(&self, n: usize) -> usize {
        match self {
            Sampler::Exact(_) => n,
            Sampler::Scalable { ordered, .. } => ordered.pattern().max_row_nnz(),
        }
    }

    pub fn sample(&self, y: &[DVector<f64>], n_samples: usize, seed: u64) -> Result<Vec<Vec<DVector<f64>>>> {
        match self {
            Sampler::Exact(s) => s.sample(y, n_samples, seed),
            Sampler::Scalable { ordered, smoother } => Ok(smoother
                .sample(y, n_samples, seed)?
                .into_iter()
                .map(|d| d.iter().map(|x| ordered.to_original(x)).collect())
                .collect()),
        }
    }
}

/// Filtering or smoothing means for one method, in the original order.
pub fn posterior_means(cfg: &ExperimentConfig, kind: PatternKind, problem: &Problem, smooth: bool) -> Result<Vec<DVector<f64>>> {
    let y = problem.observations();
    match kind {
        PatternKind::Dense => {
            if smooth {
                Ok(kalman_smoother(&problem.model, y, false)?.smooth_mean)
            } else {
                Ok(kalman_filter(&problem.model, y)?.filter_mean)
            }
        }
        _ => {
            let ordered = OrderedModel::new(&problem.model, build_ordering(&cfg.method, kind, &problem.grid)?)?;
            let means = if smooth {
                hvs(&ordered.model, y, ordered.pattern())?
            } else {
                hvf(&ordered.model, y, ordered.pattern())?.filter_mean
            };
            Ok(means.iter().map(|m| ordered.to_original(m)).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScores {
    pub kind: PatternKind,
    pub max_row_nnz: usize,
    /// CRPS per time point averaged over replicates.
    pub crps: Vec<f64>,
    /// `crps / reference crps` per time point.
    pub ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrpsStudy {
    pub reference: PatternKind,
    pub reference_crps: Vec<f64>,
    pub methods: Vec<MethodScores>,
}

/// Average CRPS against the truth over `n_iter` replicates for each method
/// and the reference, with their ratios. All methods share the data and the
/// sampling seeds of each replicate.
pub fn crps_study(cfg: &ExperimentConfig, methods: &[PatternKind]) -> Result<CrpsStudy> {
    let reference = cfg.run.reference;
    let mut kinds = vec![reference];
    kinds.extend(methods.iter().copied().filter(|k| *k != reference));
    let mut scores: Vec<Vec<Vec<f64>>> = vec![Vec::new(); kinds.len()];
    let mut nnz = vec![0; kinds.len()];
    for k in 0..cfg.run.n_iter {
        let seed = replicate_seed(cfg.run.seed, k);
        let problem = build_problem(&cfg.model, seed)?;
        for (slot, &kind) in kinds.iter().enumerate() {
            let start = Instant::now();
            let sampler = Sampler::new(cfg, kind, &problem)?;
            nnz[slot] = sampler.max_row_nnz(problem.grid.len());
            let draws = sampler.sample(problem.observations(), cfg.run.n_samples, seed)?;
            scores[slot].push(crps_per_time(&draws, problem.states())?);
            log::info!("replicate {k} method {} done in {:.1?}", kind.name(), start.elapsed());
        }
    }
    let averaged: Vec<Vec<f64>> = scores.iter().map(|s| average_replicates(s)).collect::<Result<_>>()?;
    let reference_crps = averaged[0].clone();
    let methods = methods
        .iter()
        .map(|&kind| {
            let slot = kinds.iter().position(|k| *k == kind).unwrap_or(0);
            Ok(MethodScores {
                kind,
                max_row_nnz: nnz[slot],
                crps: averaged[slot].clone(),
                ratio: crps_ratio(&averaged[slot], &reference_crps, false)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CrpsStudy {
        reference,
        reference_crps,
        methods,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsRun {
    pub kind: PatternKind,
    pub init: f64,
    pub chain: Vec<f64>,
    pub post_burn_in_mean: f64,
}

/// Initial variance for the chain: fixed by config or uniform on (0, 0.5).
pub fn gibbs_initial_value(cfg: &ExperimentConfig, seed: u64) -> f64 {
    cfg.run.gibbs_init.unwrap_or_else(|| {
        let mut rng = substream(seed, STREAM_GIBBS_INIT);
        loop {
            let v: f64 = rng.gen_range(0.0..0.5);
            if v > 0.0 {
                return v;
            }
        }
    })
}

/// Gibbs chain for the model-error variance on the data set of `seed`.
pub fn gibbs_study(cfg: &ExperimentConfig, kind: PatternKind, seed: u64) -> Result<GibbsRun> {
    let problem = build_problem(&cfg.model, seed)?;
    gibbs_on(cfg, kind, &problem, seed)
}

pub fn gibbs_on(cfg: &ExperimentConfig, kind: PatternKind, problem: &Problem, seed: u64) -> Result<GibbsRun> {
    let ordering = build_ordering(&cfg.method, kind, &problem.grid)?;
    let ordered = OrderedModel::new(&problem.model, ordering)?;
    let correlation = problem.correlation.permuted(&ordered.ordering.order);
    let init = gibbs_initial_value(cfg, seed);
    let gc = GibbsConfig {
        iters: cfg.run.gibbs_iters,
        init,
        prior: InverseGammaParams::new(cfg.run.prior_shape, cfg.run.prior_scale)?,
        jitter: cfg.method.jitter,
    };
    let chain = gibbs_sigma_w(&ordered.model, problem.observations(), ordered.pattern(), &correlation, &gc, seed)?;
    let post_burn_in_mean = post_burn_in_mean(&chain, cfg.run.burn_in)?;
    Ok(GibbsRun {
        kind,
        init,
        chain,
        post_burn_in_mean,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub side: usize,
    pub n: usize,
    pub kind: PatternKind,
    pub max_row_nnz: usize,
    pub seconds: f64,
    pub ops: u64,
}

/// One posterior draw per method on square grids of each configured side,
/// recording wall-clock time and counted operations of the sampler.
pub fn bench(cfg: &ExperimentConfig, methods: &[PatternKind]) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &side in &cfg.run.bench_sizes {
        let mut model = cfg.model.clone();
        model.rows = side;
        model.cols = side;
        let problem = build_problem(&model, cfg.run.seed)?;
        let local = ExperimentConfig {
            model,
            ..cfg.clone()
        };
        for &kind in methods {
            let ordered = match kind {
                PatternKind::Dense => None,
                _ => Some(OrderedModel::new(&problem.model, build_ordering(&local.method, kind, &problem.grid)?)?),
            };
            let y = problem.observations();
            let start = Instant::now();
            let (res, count) = ops::measure(|| -> Result<usize> {
                match &ordered {
                    None => {
                        DenseSmoother::new(&problem.model)?.sample(y, 1, cfg.run.seed)?;
                        Ok(problem.grid.len())
                    }
                    Some(o) => {
                        ScalableSmoother::new(&o.model, o.pattern(), cfg.method.jitter)?.sample(y, 1, cfg.run.seed)?;
                        Ok(o.pattern().max_row_nnz())
                    }
                }
            });
            let seconds = start.elapsed().as_secs_f64();
            let max_row_nnz = res?;
            log::info!("bench n={} {}: {seconds:.3}s, {count} ops", problem.grid.len(), kind.name());
            rows.push(BenchRow {
                side,
                n: problem.grid.len(),
                kind,
                max_row_nnz,
                seconds,
                ops: count,
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("slope needs at least two paired points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("slope needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("slope needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

/// Operation-count slope of one method across a bench sweep.
pub fn bench_slope(rows: &[BenchRow], kind: PatternKind) -> Result<f64> {
    let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.kind == kind).collect();
    let x: Vec<f64> = sel.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = sel.iter().map(|r| r.ops as f64).collect();
    loglog_slope(&x, &y)
}
