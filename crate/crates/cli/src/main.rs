use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use localindep::discovery::{learn_graph_ca, CAConfig};
use localindep::experiments::{
    run_calibration_suite, run_level_power, run_shd_experiment, CalibrationConfig, LevelPowerConfig, ShdConfig,
};
use localindep::io::{atomic_write, read_events, write_events, Sidecar};
use localindep::simulate::{
    restrict_to_observed, sample_random_graph, simulate_hawkes, RandomGraphConfig, DEFAULT_BURN_IN, DEFAULT_HORIZON,
    DEFAULT_MAX_EVENTS,
};
use localindep::{
    test_local_independence, BasisSpec, ExpansionOrder, FitConfig, LITestConfig, LinkFunction, MarkedEventSequence,
    SimulationConfig, Structure,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "localindep", version, about = "Local independence tests and graph learning for event data")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "LI_THREADS")]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a benchmark structure or a random graph and write events.
    Simulate(SimulateArgs),
    /// Test whether mark j is locally independent of mark k given a set.
    Test(TestArgs),
    /// Learn a local independence graph.
    Learn(LearnArgs),
    /// Run a simulation study.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Null calibration, time-rescaling and derivative checks.
    Calibrate(CalibrateArgs),
}

#[derive(Subcommand, Debug)]
enum ExperimentCommand {
    /// Rejection rates on the benchmark structures.
    LevelPower(LevelPowerArgs),
    /// Structural Hamming distance of learned random graphs.
    Shd(ShdArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Benchmark structure: L1, L2, L3, P1, P2 or P3.
    #[arg(long, conflicts_with = "random_d")]
    structure: Option<Structure>,
    /// Dimension of a random graph instead of a structure.
    #[arg(long)]
    random_d: Option<usize>,
    /// Edge probability of the random graph.
    #[arg(long, default_value_t = 0.2)]
    edge_prob: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: f64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_EVENTS)]
    max_events: usize,
    /// Marks to keep, by label (j,c,k) or index. Structures default to their
    /// observed marks.
    #[arg(long, value_delimiter = ',')]
    observed: Option<Vec<String>>,
    /// Event CSV; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    out: PathBuf,
    /// Also write the true graph (restricted to observed marks when all of
    /// them are kept) as JSON.
    #[arg(long)]
    graph_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Event CSV with header time,mark.
    #[arg(long)]
    data: PathBuf,
    /// Sidecar JSON with t_start, t_end and d (default: next to the CSV).
    #[arg(long, conflicts_with_all = ["t_start", "t_end", "d"])]
    meta: Option<PathBuf>,
    #[arg(long, requires_all = ["t_end", "d"])]
    t_start: Option<f64>,
    #[arg(long, requires_all = ["t_start", "d"])]
    t_end: Option<f64>,
    #[arg(long, requires_all = ["t_start", "t_end"])]
    d: Option<usize>,
    /// Separate exactly tied times by multiples of this amount.
    #[arg(long)]
    jitter: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Penalty weight.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Kernel support of the spline basis.
    #[arg(long, default_value_t = 5.0)]
    support: f64,
    #[arg(long, default_value_t = 6)]
    num_basis: usize,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Quadrature spacing.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// identity, log or piecewise.
    #[arg(long, default_value_t = LinkFunction::PiecewiseLogLinear)]
    link: LinkFunction,
    /// Do not condition on the target's own history.
    #[arg(long)]
    no_target_history: bool,
    /// Wald grid size (default: number of basis functions).
    #[arg(long)]
    wald_points: Option<usize>,
    /// Penalize the tested kernel like the nuisance kernels.
    #[arg(long)]
    penalize_test: bool,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

impl ModelArgs {
    fn config(&self, order: u8) -> anyhow::Result<LITestConfig> {
        let cfg = LITestConfig {
            order: ExpansionOrder::try_from(order).map_err(|e| anyhow!("{e}"))?,
            alpha: self.alpha,
            basis: BasisSpec {
                support: self.support,
                num_basis: self.num_basis,
                degree: self.degree,
            },
            delta: self.delta,
            fit: FitConfig {
                kappa: self.kappa,
                max_iterations: self.max_iter,
                ..FitConfig::default()
            },
            link: self.link,
            include_target_history: !self.no_target_history,
            wald_points: self.wald_points,
            penalize_test_block: self.penalize_test,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    j: usize,
    #[arg(long)]
    k: usize,
    /// Conditioning marks, comma separated.
    #[arg(long, value_delimiter = ',')]
    cond: Vec<usize>,
    /// Expansion order of the nuisance intensity (1 or 2).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    order: u8,
    #[command(flatten)]
    model: ModelArgs,
    /// Result JSON (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LearnArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Expansion order of the nuisance intensity (1 or 2).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    order: u8,
    #[command(flatten)]
    model: ModelArgs,
    /// Largest conditioning set size (default d - 2).
    #[arg(long)]
    max_cond: Option<usize>,
    /// Graph JSON {"d":..,"edges":[[j,k],..]} (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Vertex names for the DOT file, comma separated.
    #[arg(long, value_delimiter = ',')]
    names: Option<Vec<String>>,
    /// Scan targets one at a time.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug, Clone)]
struct StudyArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: f64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: f64,
    /// Orders to compare.
    #[arg(long, value_delimiter = ',', default_value = "1,2", value_parser = clap::value_parser!(u8).range(1..=2))]
    orders: Vec<u8>,
    /// Summary CSV; per-repetition rows and a manifest are written next to it.
    #[arg(long)]
    out: PathBuf,
}

impl StudyArgs {
    fn orders(&self) -> Vec<ExpansionOrder> {
        let mut v: Vec<ExpansionOrder> = self.orders.iter().filter_map(|&o| ExpansionOrder::try_from(o).ok()).collect();
        v.sort();
        v.dedup();
        v
    }
}

#[derive(Args, Debug)]
struct LevelPowerArgs {
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "L1,L2,L3,P1,P2,P3")]
    structures: Vec<Structure>,
    #[command(flatten)]
    study: StudyArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct ShdArgs {
    /// Dimensions as a range `3:7` or a list `3,5,7`.
    #[arg(long, default_value = "3:7")]
    dims: String,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0.2)]
    edge_prob: f64,
    #[arg(long)]
    max_cond: Option<usize>,
    #[command(flatten)]
    study: StudyArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    null_reps: usize,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: f64,
    #[arg(long, default_value_t = 100)]
    rescaling_reps: usize,
    #[arg(long, default_value_t = 20)]
    derivative_points: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2", value_parser = clap::value_parser!(u8).range(1..=2))]
    orders: Vec<u8>,
    /// Report CSV; a manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 2 when a check fails.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    model: ModelArgs,
}

/// Invalid input found after parsing; exits with status 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_json(path: Option<&Path>, value: &Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => atomic_write(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load(data: &DataArgs) -> anyhow::Result<MarkedEventSequence> {
    let meta = match (&data.meta, data.t_start, data.t_end, data.d) {
        (Some(p), ..) => Some(localindep::io::read_sidecar(p)?),
        (None, Some(t_start), Some(t_end), Some(d)) => Some(Sidecar { t_start, t_end, d }),
        _ => None,
    };
    read_events(&data.data, meta, data.jitter).with_context(|| format!("reading {}", data.data.display()))
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let config = SimulationConfig {
        horizon: args.horizon,
        burn_in: args.burn_in,
        seed: args.seed,
        max_events: args.max_events,
    };
    let (spec, labels, default_observed) = match (args.structure, args.random_d) {
        (Some(s), None) => {
            let b = s.build();
            let observed = b.observed();
            (b.spec, b.labels, observed)
        }
        (None, Some(d)) => {
            if d == 0 {
                return Err(usage("--random-d must be at least 1"));
            }
            if !(0.0..=1.0).contains(&args.edge_prob) {
                return Err(usage("--edge-prob must lie in [0, 1]"));
            }
            let (_, spec) = sample_random_graph(&RandomGraphConfig::new(d, args.edge_prob, args.seed))?;
            (spec, (0..d).map(|v| v.to_string()).collect(), (0..d).collect())
        }
        _ => return Err(usage("give one of --structure <L1|L2|L3|P1|P2|P3> or --random-d <D>")),
    };
    let observed = match &args.observed {
        None => default_observed,
        Some(items) => items
            .iter()
            .map(|item| {
                labels
                    .iter()
                    .position(|l| l == item)
                    .or_else(|| item.parse::<usize>().ok().filter(|&i| i < labels.len()))
                    .ok_or_else(|| usage(format!("--observed: unknown mark `{item}` (marks: {})", labels.join(","))))
            })
            .collect::<anyhow::Result<Vec<_>>>()?,
    };
    let seq = simulate_hawkes(&spec, &config)?;
    let (seq, mapping) = restrict_to_observed(&seq, &observed)?;
    write_events(&args.out, &seq)?;
    if let Some(path) = &args.graph_out {
        let full = spec.graph();
        let mut g = localindep::DirectedGraph::empty(mapping.len());
        for (a, &ja) in mapping.iter().enumerate() {
            for (b, &kb) in mapping.iter().enumerate() {
                if full.has_edge(ja, kb) {
                    g.add_edge(a, b);
                }
            }
        }
        atomic_write(path, serde_json::to_string(&g)?.as_bytes())?;
    }
    let kept: Vec<&str> = mapping.iter().map(|&m| labels[m].as_str()).collect();
    eprintln!(
        "wrote {} events of marks [{}] to {}",
        seq.len(),
        kept.join(","),
        args.out.display()
    );
    Ok(())
}

fn run_test(args: &TestArgs) -> anyhow::Result<()> {
    let cfg = args.model.config(args.order)?;
    if args.j == args.k {
        return Err(usage("--j and --k must differ"));
    }
    if args.cond.contains(&args.j) {
        return Err(usage("--cond must not contain --j"));
    }
    let seq = load(&args.data)?;
    if let Some(m) = [args.j, args.k].iter().chain(&args.cond).find(|&&m| m >= seq.d()) {
        return Err(usage(format!("mark {m} is out of range for d = {}", seq.d())));
    }
    let result = test_local_independence(&seq, args.j, args.k, &args.cond, &cfg)?;
    let value = json!({
        "version": VERSION,
        "data": args.data.data,
        "window": seq.window(),
        "d": seq.d(),
        "config": cfg,
        "j": args.j,
        "k": args.k,
        "cond": result.hypothesis.conditioning,
        "p_value": result.p_value,
        "statistic": result.statistic,
        "df": result.df,
        "reject": result.reject,
        "flag": result.flag,
        "grid": result.wald.as_ref().map(|w| &w.grid),
        "kernel_values": result.wald.as_ref().map(|w| &w.kernel_values),
        "fit": result.fit,
    });
    write_json(args.out.as_deref(), &value)
}

fn learn(args: &LearnArgs) -> anyhow::Result<()> {
    let test = args.model.config(args.order)?;
    let seq = load(&args.data)?;
    let config = CAConfig {
        test,
        max_conditioning: args.max_cond,
        alpha: test.alpha,
        parallel: !args.sequential,
    };
    let trace = learn_graph_ca(&seq, &config)?;
    let graph_json = serde_json::to_string(&trace.graph)?;
    match &args.out {
        Some(p) => atomic_write(p, graph_json.as_bytes())?,
        None => println!("{graph_json}"),
    }
    if let Some(p) = &args.trace {
        write_json(
            Some(p),
            &json!({
                "version": VERSION,
                "data": args.data.data,
                "window": seq.window(),
                "d": seq.d(),
                "config": config,
                "records": trace.records,
                "graph": trace.graph,
            }),
        )?;
    }
    if let Some(p) = &args.dot {
        atomic_write(p, trace.graph.to_dot(args.names.as_deref()).as_bytes())?;
    }
    Ok(())
}

fn parse_dims(s: &str) -> anyhow::Result<Vec<usize>> {
    let bad = || usage(format!("--dims: expected `a:b` or `a,b,..`, got `{s}`"));
    let dims: Vec<usize> = if let Some((a, b)) = s.split_once(':') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<anyhow::Result<_>>()?
    };
    if dims.is_empty() || dims.iter().any(|&d| d < 2) {
        return Err(usage(format!("--dims: need dimensions of at least 2, got `{s}`")));
    }
    Ok(dims)
}

fn manifest(kind: &str, config: Value, started: Instant, extra: Value) -> Value {
    json!({
        "experiment": kind,
        "version": VERSION,
        "threads": rayon::current_num_threads(),
        "config": config,
        "seed_scheme": "ChaCha8 keyed by the root seed, one stream per (study, case, repetition)",
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "results": extra,
    })
}

fn level_power(args: &LevelPowerArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let test = args.model.config(2)?;
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let config = LevelPowerConfig {
        reps: args.reps,
        horizon: args.study.horizon,
        burn_in: args.study.burn_in,
        seed: args.study.seed,
        structures: args.structures.clone(),
        orders: args.study.orders(),
        test,
    };
    let report = run_level_power(&config)?;
    atomic_write(&args.study.out, report.summary_csv().as_bytes())?;
    atomic_write(&sibling(&args.study.out, "records.csv"), report.records_csv().as_bytes())?;
    let m = manifest(
        "level-power",
        serde_json::to_value(&config)?,
        started,
        json!({ "summary": report.summary, "failure_rate": report.failure_rate() }),
    );
    write_json(Some(&sibling(&args.study.out, "manifest.json")), &m)?;
    eprint!("{}", report.summary_csv());
    report.check_failure_rate()?;
    Ok(())
}

fn shd_experiment(args: &ShdArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let test = args.model.config(2)?;
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let config = ShdConfig {
        dims: parse_dims(&args.dims)?,
        reps: args.reps,
        horizon: args.study.horizon,
        burn_in: args.study.burn_in,
        seed: args.study.seed,
        edge_prob: args.edge_prob,
        orders: args.study.orders(),
        ca: CAConfig {
            test,
            max_conditioning: args.max_cond,
            alpha: test.alpha,
            parallel: true,
        },
    };
    let report = run_shd_experiment(&config)?;
    atomic_write(&args.study.out, report.summary_csv().as_bytes())?;
    atomic_write(&sibling(&args.study.out, "records.csv"), report.records_csv().as_bytes())?;
    let gaps: Vec<Value> = config
        .dims
        .iter()
        .map(|&d| json!({ "d": d, "median_gap": report.median_gap(d) }))
        .collect();
    let m = manifest(
        "shd",
        serde_json::to_value(&config)?,
        started,
        json!({ "summary": report.summary, "median_gaps": gaps, "failure_rate": report.failure_rate() }),
    );
    write_json(Some(&sibling(&args.study.out, "manifest.json")), &m)?;
    eprint!("{}", report.summary_csv());
    report.check_failure_rate()?;
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let test = args.model.config(2)?;
    let mut orders: Vec<ExpansionOrder> =
        args.orders.iter().filter_map(|&o| ExpansionOrder::try_from(o).ok()).collect();
    orders.sort();
    orders.dedup();
    let config = CalibrationConfig {
        seed: args.seed,
        null_reps: args.null_reps,
        null_horizon: args.horizon,
        orders,
        test,
        rescaling_reps: args.rescaling_reps,
        derivative_points: args.derivative_points,
        ..CalibrationConfig::default()
    };
    let report = run_calibration_suite(&config)?;
    atomic_write(&args.out, report.csv().as_bytes())?;
    let m = manifest(
        "calibrate",
        serde_json::to_value(&config)?,
        started,
        json!({ "checks": report.checks, "passed": report.passed() }),
    );
    write_json(Some(&sibling(&args.out, "manifest.json")), &m)?;
    for c in &report.checks {
        eprintln!(
            "{} {}: {} (threshold {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.statistic,
            c.threshold
        );
    }
    if args.strict && !report.passed() {
        bail!("calibration checks failed");
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Test(a) => run_test(a),
        Command::Learn(a) => learn(a),
        Command::Experiment(ExperimentCommand::LevelPower(a)) => level_power(a),
        Command::Experiment(ExperimentCommand::Shd(a)) => shd_experiment(a),
        Command::Calibrate(a) => calibrate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
