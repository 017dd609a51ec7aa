//! Experiment configuration: `[section]` headers with `key = value` lines.
//!
//! Serialization is canonical (fixed key order, shortest round-trip float
//! formatting), so `parse(to_text(c)) == c` and the hash of `to_text` identifies
//! a configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::Kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Hv,
    LowRank,
    Dense,
}

impl PatternKind {
    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Hv => "hv",
            PatternKind::LowRank => "lowrank",
            PatternKind::Dense => "dense",
        }
    }
}

impl FromStr for PatternKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hv" => Ok(PatternKind::Hv),
            "lowrank" => Ok(PatternKind::LowRank),
            "dense" => Ok(PatternKind::Dense),
            _ => Err(format!("unknown pattern `{s}` (expected hv, lowrank or dense)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub rows: usize,
    pub cols: usize,
    pub horizon: usize,
    pub kernel: Kernel,
    pub sigma0_sq: f64,
    pub sigmaw_sq: f64,
    pub sigmav_sq: f64,
    pub range: f64,
    pub alpha: f64,
    pub beta: f64,
    pub damping: f64,
    pub observed_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            rows: 34,
            cols: 34,
            horizon: 20,
            kernel: Kernel::Exponential,
            sigma0_sq: 1.0,
            sigmaw_sq: 0.1,
            sigmav_sq: 0.05,
            range: 0.15,
            alpha: 4e-5,
            beta: 1e-2,
            damping: 1.0,
            observed_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub pattern: PatternKind,
    pub branching: usize,
    /// Knots per level; `None` picks them to hit `max_row_nnz`.
    pub knots: Option<Vec<usize>>,
    /// `None` picks the smallest depth whose terminal groups fit the knot count.
    pub depth: Option<usize>,
    /// Target maximum row count `N` of the pattern.
    pub max_row_nnz: Option<usize>,
    pub jitter: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            pattern: PatternKind::Hv,
            branching: 2,
            knots: None,
            depth: None,
            max_row_nnz: Some(50),
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_samples: usize,
    pub n_iter: usize,
    pub seed: u64,
    pub out: String,
    pub reference: PatternKind,
    pub gibbs_iters: usize,
    /// `None` draws the initial value uniformly from (0, 0.5).
    pub gibbs_init: Option<f64>,
    pub burn_in: f64,
    pub bench_sizes: Vec<usize>,
    pub prior_shape: f64,
    pub prior_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_samples: 50,
            n_iter: 10,
            seed: 1,
            out: "results".into(),
            reference: PatternKind::Dense,
            gibbs_iters: 500,
            gibbs_init: None,
            burn_in: 0.2,
            bench_sizes: vec![17, 24, 34],
            prior_shape: 0.001,
            prior_scale: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub method: MethodConfig,
    pub run: RunConfig,
}

const SECTIONS: [&str; 3] = ["model", "method", "run"];

fn cfg_err(line: Option<usize>, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn parse_list(key: &str, value: &str) -> std::result::Result<Vec<usize>, String> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn auto_text<T: std::fmt::Debug>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), |x| format!("{x:?}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section: Option<&str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                section = Some(
                    SECTIONS
                        .iter()
                        .find(|s| **s == name)
                        .ok_or_else(|| cfg_err(Some(line_no), format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(Some(line_no), format!("expected `key = value`, got `{line}`")))?;
            let sec = section.ok_or_else(|| cfg_err(Some(line_no), "key outside of a section"))?;
            cfg.set_in(sec, key.trim(), value.trim())
                .map_err(|msg| cfg_err(Some(line_no), msg))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies an override `section.key=value`, or `key=value` when the key
    /// names a field in exactly one section.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| cfg_err(None, format!("override `{assignment}` is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let result = match key.split_once('.') {
            Some((sec, k)) => {
                if !SECTIONS.contains(&sec) {
                    return Err(cfg_err(None, format!("unknown section `{sec}` in override")));
                }
                self.set_in(sec, k, value)
            }
            None => {
                let owners: Vec<&str> = SECTIONS.iter().copied().filter(|s| Self::has_key(s, key)).collect();
                match owners.as_slice() {
                    [sec] => self.set_in(sec, key, value),
                    [] => Err(format!("unknown key `{key}`")),
                    _ => Err(format!("key `{key}` is ambiguous; prefix it with a section")),
                }
            }
        };
        result.map_err(|msg| cfg_err(None, msg))?;
        self.validate()
    }

    fn has_key(section: &str, key: &str) -> bool {
        Self::default().set_in(section, key, "__probe__") != Err(format!("unknown key `{key}` in [{section}]"))
    }

    fn set_in(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        let m = &mut self.model;
        let me = &mut self.method;
        let r = &mut self.run;
        match (section, key) {
            ("model", "rows") => m.rows = parse_value(key, v)?,
            ("model", "cols") => m.cols = parse_value(key, v)?,
            ("model", "T") => m.horizon = parse_value(key, v)?,
            ("model", "kernel") => {
                m.kernel = Kernel::parse(v).ok_or_else(|| format!("kernel: unknown kernel `{v}`"))?
            }
            ("model", "sigma0_sq") => m.sigma0_sq = parse_value(key, v)?,
            ("model", "sigmaw_sq") => m.sigmaw_sq = parse_value(key, v)?,
            ("model", "sigmav_sq") => m.sigmav_sq = parse_value(key, v)?,
            ("model", "range") => m.range = parse_value(key, v)?,
            ("model", "alpha") => m.alpha = parse_value(key, v)?,
            ("model", "beta") => m.beta = parse_value(key, v)?,
            ("model", "c") => m.damping = parse_value(key, v)?,
            ("model", "observed_fraction") => m.observed_fraction = parse_value(key, v)?,
            ("method", "pattern") => me.pattern = parse_value(key, v)?,
            ("method", "J") => me.branching = parse_value(key, v)?,
            ("method", "r") => me.knots = if v == "auto" { None } else { Some(parse_list(key, v)?) },
            ("method", "depth") => me.depth = parse_auto(key, v)?,
            ("method", "N") => me.max_row_nnz = parse_auto(key, v)?,
            ("method", "jitter") => me.jitter = parse_value(key, v)?,
            ("run", "n_samples") => r.n_samples = parse_value(key, v)?,
            ("run", "n_iter") => r.n_iter = parse_value(key, v)?,
            ("run", "seed") => r.seed = parse_value(key, v)?,
            ("run", "out") => r.out = v.to_string(),
            ("run", "reference") => r.reference = parse_value(key, v)?,
            ("run", "gibbs_iters") => r.gibbs_iters = parse_value(key, v)?,
            ("run", "gibbs_init") => {
                r.gibbs_init = if v == "random" { None } else { Some(parse_value(key, v)?) }
            }
            ("run", "burn_in") => r.burn_in = parse_value(key, v)?,
            ("run", "bench_sizes") => r.bench_sizes = parse_list(key, v)?,
            ("run", "prior_shape") => r.prior_shape = parse_value(key, v)?,
            ("run", "prior_scale") => r.prior_scale = parse_value(key, v)?,
            _ => return Err(format!("unknown key `{key}` in [{section}]")),
        }
        Ok(())
    }

    /// Checks documented ranges; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(cfg_err(None, format!("{field}: {why}")));
        let m = &self.model;
        if m.rows == 0 || m.cols == 0 {
            return bad("rows/cols", "grid must be non-empty");
        }
        if m.horizon == 0 {
            return bad("T", "must be at least 1");
        }
        for (name, v) in [("sigma0_sq", m.sigma0_sq), ("sigmaw_sq", m.sigmaw_sq), ("sigmav_sq", m.sigmav_sq)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, "must be positive");
            }
        }
        if !(m.range > 0.0 && m.range.is_finite()) {
            return bad("range", "must be positive");
        }
        if !(m.alpha >= 0.0 && m.alpha.is_finite()) {
            return bad("alpha", "must be non-negative");
        }
        if !(m.beta >= 0.0 && m.beta.is_finite()) {
            return bad("beta", "must be non-negative");
        }
        if !(m.damping > 0.0 && m.damping <= 1.0) {
            return bad("c", "must be in (0, 1]");
        }
        if !(m.observed_fraction > 0.0 && m.observed_fraction <= 1.0) {
            return bad("observed_fraction", "must be in (0, 1]");
        }
        let me = &self.method;
        if me.branching < 2 || !me.branching.is_power_of_two() {
            return bad("J", "must be a power of two of at least 2");
        }
        if let Some(k) = &me.knots {
            if k.is_empty() || k.contains(&0) {
                return bad("r", "knot counts must be positive");
            }
        }
        if me.max_row_nnz == Some(0) {
            return bad("N", "must be positive");
        }
        if me.knots.is_none() && me.max_row_nnz.is_none() && me.pattern != PatternKind::Dense {
            return bad("N", "either r or N must be given");
        }
        if !(me.jitter >= 0.0 && me.jitter.is_finite()) {
            return bad("jitter", "must be non-negative");
        }
        let r = &self.run;
        if r.n_samples == 0 {
            return bad("n_samples", "must be at least 1");
        }
        if r.n_iter == 0 {
            return bad("n_iter", "must be at least 1");
        }
        if r.gibbs_iters == 0 {
            return bad("gibbs_iters", "must be at least 1");
        }
        if let Some(v) = r.gibbs_init {
            if !(v > 0.0 && v.is_finite()) {
                return bad("gibbs_init", "must be positive or `random`");
            }
        }
        if !(0.0..1.0).contains(&r.burn_in) {
            return bad("burn_in", "must be in [0, 1)");
        }
        if r.bench_sizes.is_empty() || r.bench_sizes.contains(&0) {
            return bad("bench_sizes", "must list positive grid sides");
        }
        if !(r.prior_shape > 0.0 && r.prior_scale > 0.0) {
            return bad("prior_shape/prior_scale", "must be positive");
        }
        if r.out.is_empty() {
            return bad("out", "must not be empty");
        }
        Ok(())
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let me = &self.method;
        let r = &self.run;
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "rows = {}", m.rows);
        let _ = writeln!(s, "cols = {}", m.cols);
        let _ = writeln!(s, "T = {}", m.horizon);
        let _ = writeln!(s, "kernel = {}", m.kernel.name());
        let _ = writeln!(s, "sigma0_sq = {:?}", m.sigma0_sq);
        let _ = writeln!(s, "sigmaw_sq = {:?}", m.sigmaw_sq);
        let _ = writeln!(s, "sigmav_sq = {:?}", m.sigmav_sq);
        let _ = writeln!(s, "range = {:?}", m.range);
        let _ = writeln!(s, "alpha = {:?}", m.alpha);
        let _ = writeln!(s, "beta = {:?}", m.beta);
        let _ = writeln!(s, "c = {:?}", m.damping);
        let _ = writeln!(s, "observed_fraction = {:?}", m.observed_fraction);
        let _ = writeln!(s, "\n[method]");
        let _ = writeln!(s, "pattern = {}", me.pattern.name());
        let _ = writeln!(s, "J = {}", me.branching);
        let _ = writeln!(s, "r = {}", me.knots.as_deref().map_or_else(|| "auto".into(), join));
        let _ = writeln!(s, "depth = {}", auto_text(&me.depth));
        let _ = writeln!(s, "N = {}", auto_text(&me.max_row_nnz));
        let _ = writeln!(s, "jitter = {:?}", me.jitter);
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "n_samples = {}", r.n_samples);
        let _ = writeln!(s, "n_iter = {}", r.n_iter);
        let _ = writeln!(s, "seed = {}", r.seed);
        let _ = writeln!(s, "out = {}", r.out);
        let _ = writeln!(s, "reference = {}", r.reference.name());
        let _ = writeln!(s, "gibbs_iters = {}", r.gibbs_iters);
        let _ = writeln!(
            s,
            "gibbs_init = {}",
            r.gibbs_init.map_or_else(|| "random".into(), |v| format!("{v:?}"))
        );
        let _ = writeln!(s, "burn_in = {:?}", r.burn_in);
        let _ = writeln!(s, "bench_sizes = {}", join(&r.bench_sizes));
        let _ = writeln!(s, "prior_shape = {:?}", r.prior_shape);
        let _ = writeln!(s, "prior_scale = {:?}", r.prior_scale);
        s
    }

    /// Hex SHA-256 of the canonical text, leaving out the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out.clear();
        hex::encode(Sha256::digest(c.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const REFERENCE: &str = include_str!("../../../configs/reference.conf");

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse("[model]\nrows = 10\ncols = 12\nT = 5\n").unwrap();
        assert_eq!((c.model.rows, c.model.cols, c.model.horizon), (10, 12, 5));
        let d = ExperimentConfig::default();
        assert_eq!(c.method, d.method);
        assert_eq!(c.run, d.run);
        assert_eq!(c.model.range, 0.15);
    }

    #[test]
    fn reference_file_parses_to_documented_values() {
        let c = ExperimentConfig::parse(REFERENCE).unwrap();
        assert_eq!(c.model.alpha, 4e-5);
        assert_eq!(c.model.beta, 1e-2);
        assert_eq!(c.model.sigmaw_sq, 0.1);
        assert_eq!(c.model.range, 0.15);
        assert_eq!(c.model.sigma0_sq, 1.0);
        assert_eq!(c.model.sigmav_sq, 0.05);
        assert_eq!(c.model.horizon, 20);
        assert_eq!((c.model.rows, c.model.cols), (34, 34));
    }

    #[test]
    fn errors_name_field_and_line() {
        let e = ExperimentConfig::parse("[model]\nrange = -0.1\n").unwrap_err();
        assert!(e.to_string().contains("range"), "{e}");
        let e = ExperimentConfig::parse("[model]\nrows = 3\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(3), .. }), "{e}");
        let e = ExperimentConfig::parse("rows = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(1), .. }));
        let e = ExperimentConfig::parse("[other]\n").unwrap_err();
        assert!(e.to_string().contains("other"));
        let e = ExperimentConfig::parse("[method]\nJ = 3\n").unwrap_err();
        assert!(e.to_string().contains("J"));
        assert!(ExperimentConfig::parse("[model]\nrows = x\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = ExperimentConfig::parse("# header\n\n[run]\nseed = 7 # trailing\n").unwrap();
        assert_eq!(c.run.seed, 7);
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_override("seed=9").unwrap();
        c.apply_override("method.pattern = lowrank").unwrap();
        c.apply_override("r=4,2,2").unwrap();
        assert_eq!(c.run.seed, 9);
        assert_eq!(c.method.pattern, PatternKind::LowRank);
        assert_eq!(c.method.knots, Some(vec![4, 2, 2]));
        assert!(c.apply_override("nope=1").is_err());
        assert!(c.apply_override("seed").is_err());
        assert!(c.apply_override("model.seed=1").is_err());
        assert!(c.apply_override("c=2").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.run.out = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.run.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            (1usize..50, 1usize..50, 1usize..30, any::<bool>()),
            (1e-6f64..10.0, 1e-6f64..10.0, 1e-6f64..10.0, 1e-6f64..5.0),
            (0.0f64..1e-3, 0.0f64..1.0, 1e-3f64..=1.0, 1e-3f64..=1.0),
            (prop::sample::select(vec![PatternKind::Hv, PatternKind::LowRank, PatternKind::Dense]), 1u32..3),
            (prop::option::of(prop::collection::vec(1usize..10, 1..4)), prop::option::of(0usize..8), prop::option::of(1usize..100)),
            (any::<u64>(), 1usize..100, prop::option::of(1e-3f64..0.5), 0.0f64..0.9, 0.0f64..1e-3),
        )
            .prop_map(|(g, v, p, meth, knots, run)| {
                let mut c = ExperimentConfig::default();
                c.model.rows = g.0;
                c.model.cols = g.1;
                c.model.horizon = g.2;
                c.model.kernel = if g.3 { Kernel::Exponential } else { Kernel::Matern15 };
                c.model.sigma0_sq = v.0;
                c.model.sigmaw_sq = v.1;
                c.model.sigmav_sq = v.2;
                c.model.range = v.3;
                c.model.alpha = p.0;
                c.model.beta = p.1;
                c.model.damping = p.2;
                c.model.observed_fraction = p.3;
                c.method.pattern = meth.0;
                c.method.branching = 1 << meth.1;
                c.method.knots = knots.0;
                c.method.depth = knots.1;
                c.method.max_row_nnz = knots.2.or(Some(10));
                c.method.jitter = run.4;
                c.run.seed = run.0;
                c.run.n_samples = run.1;
                c.run.gibbs_init = run.2;
                c.run.burn_in = run.3;
                c
            })
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(c in arb_config()) {
            let text = c.to_text();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
