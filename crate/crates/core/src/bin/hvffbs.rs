use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use hvffbs::config::{ExperimentConfig, PatternKind};
use hvffbs::experiment::{
    bench, bench_slope, build_grid, build_ordering, build_problem, crps_study, gibbs_study, posterior_means, Problem,
    Sampler,
};
use hvffbs::hv::{HvFactors, OrderedModel};
use hvffbs::output::{fmt_f64, write_atomic, CsvDocument};
use hvffbs::Error;

#[derive(Parser, Debug)]
#[command(name = "hvffbs", version, about = "Scalable forward-filter backward-sampling on spatial grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Method or comma-separated methods: hv, lowrank, dense.
    #[arg(long, global = true)]
    method: Option<String>,

    #[arg(long = "n-samples", global = true)]
    n_samples: Option<usize>,

    /// `key=value` or `section.key=value`; repeatable.
    #[arg(long = "override", global = true)]
    overrides: Vec<String>,

    /// Writes the sparsity pattern of the method in use.
    #[arg(long = "pattern-file", global = true)]
    pattern_file: Option<PathBuf>,

    /// Writes the final filtering factor (`filter` with a sparse method).
    #[arg(long = "factor-file", global = true)]
    factor_file: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// True states and observations.
    Simulate,
    /// Filtering means.
    Filter,
    /// Smoothing means.
    Smooth,
    /// Posterior draws of the state trajectory.
    Sample,
    /// Gibbs chain for the model-error variance.
    Gibbs,
    /// Per-time CRPS of each method and its ratio to the reference.
    EvalCrps,
    /// Timing and operation counts over grid sizes.
    Bench,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Filter => "filter",
            Command::Smooth => "smooth",
            Command::Sample => "sample",
            Command::Gibbs => "gibbs",
            Command::EvalCrps => "eval-crps",
            Command::Bench => "bench",
        }
    }
}

struct Run {
    cfg: ExperimentConfig,
    command: Command,
    methods: Vec<PatternKind>,
    out: PathBuf,
}

impl Run {
    fn metadata(&self, extra: &[(String, String)]) -> Vec<(String, String)> {
        let mut m = vec![
            ("hvffbs".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("command".to_string(), self.command.name().to_string()),
            ("seed".to_string(), self.cfg.run.seed.to_string()),
            ("config_hash".to_string(), self.cfg.hash()),
        ];
        m.extend_from_slice(extra);
        m
    }

    fn write(&self, name: &str, doc: &CsvDocument) -> hvffbs::Result<()> {
        let path = self.out.join(name);
        write_atomic(&path, doc.text())?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

enum Failure {
    Config(Error),
    Run(Error),
}

fn load(cli: &Cli) -> Result<Run, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = cli.n_samples {
        cfg.apply_override(&format!("run.n_samples={n}"))?;
    }
    if let Some(o) = &cli.out {
        cfg.run.out = o.to_string_lossy().into_owned();
    }
    let methods = match &cli.method {
        Some(list) => list
            .split(',')
            .map(|m| {
                m.trim().parse::<PatternKind>().map_err(|msg| Error::Config {
                    line: None,
                    msg: format!("--method: {msg}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![cfg.method.pattern],
    };
    if cli.factor_file.is_some() && (cli.command != Command::Filter || methods.contains(&PatternKind::Dense)) {
        return Err(Error::Config {
            line: None,
            msg: "--factor-file applies to `filter` with a sparse method".into(),
        });
    }
    Ok(Run {
        out: PathBuf::from(&cfg.run.out),
        cfg,
        command: cli.command,
        methods,
    })
}

fn state_rows(doc: &mut CsvDocument, prefix: &[String], t: usize, x: &DVector<f64>) {
    for (i, v) in x.iter().enumerate() {
        let mut row = prefix.to_vec();
        row.push(t.to_string());
        row.push(i.to_string());
        row.push(fmt_f64(*v));
        doc.row(&row);
    }
}

fn simulate(run: &Run, p: &Problem) -> hvffbs::Result<()> {
    let mut truth = CsvDocument::new(&run.metadata(&[]), &["t", "index", "x", "y", "value"]);
    for (t, x) in p.truth.states.iter().enumerate() {
        for (i, v) in x.iter().enumerate() {
            let loc = p.grid.locations()[i];
            truth.row(&[t.to_string(), i.to_string(), fmt_f64(loc[0]), fmt_f64(loc[1]), fmt_f64(*v)]);
        }
    }
    run.write("truth.csv", &truth)?;
    let mut obs = CsvDocument::new(&run.metadata(&[]), &["t", "index", "value"]);
    for (t, y) in p.truth.observations.iter().enumerate() {
        for (&i, v) in p.model.observation(t + 1).indices().iter().zip(y.iter()) {
            obs.row(&[(t + 1).to_string(), i.to_string(), fmt_f64(*v)]);
        }
    }
    run.write("observations.csv", &obs)
}

fn means(run: &Run, p: &Problem, smooth: bool, factor_file: Option<&Path>) -> hvffbs::Result<()> {
    for &kind in &run.methods {
        let m = posterior_means(&run.cfg, kind, p, smooth)?;
        let mut doc = CsvDocument::new(&run.metadata(&[("method".into(), kind.name().into())]), &["t", "index", "mean"]);
        for (t, x) in m.iter().enumerate() {
            state_rows(&mut doc, &[], t + 1, x);
        }
        let stem = if smooth { "smooth" } else { "filter" };
        run.write(&format!("{stem}_{}.csv", kind.name()), &doc)?;
        if let Some(path) = factor_file {
            let ordered = OrderedModel::new(&p.model, build_ordering(&run.cfg.method, kind, &p.grid)?)?;
            let f = HvFactors::new(&ordered.model, ordered.pattern(), run.cfg.method.jitter)?;
            write_atomic(path, &f.filter(f.horizon()).to_text())?;
        }
    }
    Ok(())
}

fn sample(run: &Run, p: &Problem) -> hvffbs::Result<()> {
    for &kind in &run.methods {
        let sampler = Sampler::new(&run.cfg, kind, p)?;
        let draws = sampler.sample(p.observations(), run.cfg.run.n_samples, run.cfg.run.seed)?;
        let meta = run.metadata(&[
            ("method".into(), kind.name().into()),
            ("N".into(), sampler.max_row_nnz(p.grid.len()).to_string()),
        ]);
        let mut doc = CsvDocument::new(&meta, &["sample", "t", "index", "value"]);
        for (s, d) in draws.iter().enumerate() {
            for (t, x) in d.iter().enumerate() {
                state_rows(&mut doc, &[s.to_string()], t + 1, x);
            }
        }
        run.write(&format!("samples_{}.csv", kind.name()), &doc)?;
    }
    Ok(())
}

fn gibbs(run: &Run) -> hvffbs::Result<()> {
    for &kind in &run.methods {
        let g = gibbs_study(&run.cfg, kind, run.cfg.run.seed)?;
        let meta = run.metadata(&[
            ("method".into(), kind.name().into()),
            ("initial_value".into(), fmt_f64(g.init)),
            ("true_value".into(), fmt_f64(run.cfg.model.sigmaw_sq)),
            ("post_burn_in_mean".into(), fmt_f64(g.post_burn_in_mean)),
        ]);
        let mut doc = CsvDocument::new(&meta, &["iter", "sigmaw_sq"]);
        for (k, v) in g.chain.iter().enumerate() {
            doc.row(&[(k + 1).to_string(), fmt_f64(*v)]);
        }
        run.write(&format!("gibbs_{}.csv", kind.name()), &doc)?;
        println!("{}: post-burn-in mean {:.5}", kind.name(), g.post_burn_in_mean);
    }
    Ok(())
}

fn eval_crps(run: &Run) -> hvffbs::Result<()> {
    let s = crps_study(&run.cfg, &run.methods)?;
    let mut header = vec!["t".to_string(), format!("crps_{}_reference", s.reference.name())];
    header.extend(s.methods.iter().map(|m| format!("crps_{}", m.kind.name())));
    header.extend(s.methods.iter().map(|m| format!("ratio_{}", m.kind.name())));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut extra = vec![
        ("reference".to_string(), s.reference.name().to_string()),
        ("n_iter".to_string(), run.cfg.run.n_iter.to_string()),
        ("n_samples".to_string(), run.cfg.run.n_samples.to_string()),
    ];
    for m in &s.methods {
        extra.push((format!("N_{}", m.kind.name()), m.max_row_nnz.to_string()));
    }
    let mut doc = CsvDocument::new(&run.metadata(&extra), &header);
    for t in 0..s.reference_crps.len() {
        let mut row = vec![(t + 1).to_string(), fmt_f64(s.reference_crps[t])];
        row.extend(s.methods.iter().map(|m| fmt_f64(m.crps[t])));
        row.extend(s.methods.iter().map(|m| fmt_f64(m.ratio[t])));
        doc.row(&row);
    }
    run.write("crps.csv", &doc)?;
    for m in &s.methods {
        let avg = m.ratio.iter().sum::<f64>() / m.ratio.len() as f64;
        println!("{} (N = {}): mean CRPS ratio {avg:.4}", m.kind.name(), m.max_row_nnz);
    }
    Ok(())
}

fn run_bench(run: &Run) -> hvffbs::Result<()> {
    let methods = if run.methods.len() == 1 && run.methods[0] != PatternKind::Dense {
        vec![run.methods[0], PatternKind::Dense]
    } else {
        run.methods.clone()
    };
    let rows = bench(&run.cfg, &methods)?;
    let mut extra = Vec::new();
    for &m in &methods {
        if let Ok(s) = bench_slope(&rows, m) {
            extra.push((format!("ops_slope_{}", m.name()), format!("{s:.4}")));
            println!("{}: operation-count slope {s:.3}", m.name());
        }
    }
    let mut doc = CsvDocument::new(&run.metadata(&extra), &["side", "n", "method", "N", "seconds", "ops"]);
    for r in &rows {
        doc.row(&[
            r.side.to_string(),
            r.n.to_string(),
            r.kind.name().into(),
            r.max_row_nnz.to_string(),
            format!("{:.6}", r.seconds),
            r.ops.to_string(),
        ]);
    }
    run.write("bench.csv", &doc)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let run = load(cli).map_err(Failure::Config)?;
    let res = (|| -> hvffbs::Result<()> {
        if let Some(path) = &cli.pattern_file {
            let grid = build_grid(&run.cfg.model)?;
            let o = build_ordering(&run.cfg.method, run.methods[0], &grid)?;
            write_atomic(path, &o.pattern.to_text())?;
        }
        let problem = || build_problem(&run.cfg.model, run.cfg.run.seed);
        match run.command {
            Command::Simulate => simulate(&run, &problem()?),
            Command::Filter => means(&run, &problem()?, false, cli.factor_file.as_deref()),
            Command::Smooth => means(&run, &problem()?, true, None),
            Command::Sample => sample(&run, &problem()?),
            Command::Gibbs => gibbs(&run),
            Command::EvalCrps => eval_crps(&run),
            Command::Bench => run_bench(&run),
        }
    })();
    res.map_err(|e| match e {
        Error::Config { .. } | Error::Parse { .. } => Failure::Config(e),
        other => Failure::Run(other),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("hvffbs: configuration error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) if e.is_numerical() => {
            eprintln!("hvffbs: numerical failure: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Run(e)) => {
            eprintln!("hvffbs: {e}");
            ExitCode::from(1)
        }
    }
}
