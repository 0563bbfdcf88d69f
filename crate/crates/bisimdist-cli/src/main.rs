//! Command-line frontend: distance computation, instance generation, the
//! benchmark harness, the reachability-bound checker, and explicit-game
//! inspection.

use std::fmt::Write as _;
use std::fs;
use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use bisimdist::automaton::GenParams;
use bisimdist::bench::{run_comparison, BenchError, CSV_HEADER};
use bisimdist::coupling::SolveError;
use bisimdist::modelcheck::{check_bound, BoundReport, Mode, ReachQuery};
use bisimdist::policy_iter::{spi_discounted, spi_undiscounted, SpiError};
use bisimdist::ssg::{build_game, Game, VertexKind};
use bisimdist::value_iter::{vi_run, Budget};
use bisimdist::{parse, serialize, Automaton, DistMatrix};

/// Exit codes: 0 ok, 1 input error, 2 numeric non-convergence, 3 internal
/// assertion failure.
#[derive(Debug)]
enum AppError {
    Input(String),
    NonConvergence(String),
    Internal(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Input(_) => 1,
            AppError::NonConvergence(_) => 2,
            AppError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Input(m) | AppError::NonConvergence(m) | AppError::Internal(m) => m,
        }
    }
}

impl From<SpiError> for AppError {
    fn from(e: SpiError) -> AppError {
        match e {
            SpiError::Solve(_) | SpiError::IterationCap { .. } => {
                AppError::NonConvergence(e.to_string())
            }
            SpiError::Internal(_) => AppError::Internal(e.to_string()),
        }
    }
}

impl From<SolveError> for AppError {
    fn from(e: SolveError) -> AppError {
        AppError::NonConvergence(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "bisimdist",
    about = "Behavioural distances for labelled probabilistic automata",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the pairwise distance matrix of an automaton file.
    Dist(DistArgs),
    /// Generate a random automaton file from seeded parameters.
    Gen(GenArgs),
    /// Run the policy-iteration / value-iteration comparison harness.
    Bench(BenchArgs),
    /// Check the reachability-probability bound against the distances.
    Check(CheckArgs),
    /// Build the explicit game of a small automaton and serialize it.
    Game(GameArgs),
}

#[derive(Args)]
struct DistArgs {
    /// Automaton file.
    file: PathBuf,
    /// Discount factor in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Comparison tolerance.
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Solver: policy iteration or the value-iteration baseline.
    #[arg(long, default_value = "spi", value_parser = ["spi", "vi"])]
    method: String,
    /// Skip the bisimilarity precomputation in the undiscounted solver.
    #[arg(long)]
    no_bisim_precompute: bool,
    /// Output format for the matrix.
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    out: String,
    /// Write the matrix to a file instead of stdout.
    #[arg(long)]
    out_file: Option<PathBuf>,
    /// Value-iteration budget: iteration count.
    #[arg(long)]
    max_iters: Option<u64>,
    /// Value-iteration budget: wall-clock seconds.
    #[arg(long)]
    max_seconds: Option<f64>,
    /// Value-iteration budget: supremum-norm residual.
    #[arg(long)]
    target_residual: Option<f64>,
}

#[derive(Args)]
struct GenArgs {
    /// Number of states.
    #[arg(long)]
    states: usize,
    /// Inclusive range a..b for the per-state number of distributions.
    #[arg(long, default_value = "1..3")]
    nd_degree: String,
    /// Inclusive range a..b for the support size of each distribution.
    #[arg(long, default_value = "2..3")]
    prob_degree: String,
    /// Label alphabet size.
    #[arg(long, default_value_t = 2)]
    labels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output automaton file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated list of state counts, e.g. 10,15,20.
    #[arg(long)]
    states: String,
    /// Instances per state count.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0.8)]
    lambda: f64,
    /// Base seed; instances use consecutive offsets.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "1..3")]
    nd_degree: String,
    #[arg(long, default_value = "2..3")]
    prob_degree: String,
    #[arg(long, default_value_t = 2)]
    labels: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Write the CSV to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Automaton file.
    file: PathBuf,
    /// Target labels (comma-separated or repeated).
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    target: Vec<String>,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
}

#[derive(Args)]
struct GameArgs {
    /// Automaton file (small instances only).
    file: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Write the game to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not errors
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let outcome = panic::catch_unwind(|| run(cli));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
        Err(_) => {
            eprintln!("error: internal assertion failed");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Dist(args) => cmd_dist(args),
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Check(args) => cmd_check(args),
        Cmd::Game(args) => cmd_game(args),
    }
}

fn load_automaton(path: &PathBuf) -> Result<Automaton, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::Input(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| AppError::Input(e.to_string()))
}

fn parse_range(text: &str) -> Result<(usize, usize), AppError> {
    let bad = || AppError::Input(format!("bad range {text:?}, expected a..b"));
    if let Some((lo, hi)) = text.split_once("..") {
        Ok((lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?))
    } else {
        let k: usize = text.parse().map_err(|_| bad())?;
        Ok((k, k))
    }
}

fn check_lambda(lambda: f64) -> Result<(), AppError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(AppError::Input(format!("lambda must lie in (0,1], got {lambda}")));
    }
    Ok(())
}

fn write_output(path: &Option<PathBuf>, content: &str) -> Result<(), AppError> {
    match path {
        Some(p) => fs::write(p, content)
            .map_err(|e| AppError::Input(format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn cmd_dist(args: DistArgs) -> Result<(), AppError> {
    check_lambda(args.lambda)?;
    if args.eps <= 0.0 {
        return Err(AppError::Input("eps must be positive".into()));
    }
    let a = load_automaton(&args.file)?;
    let (d, trace): (DistMatrix, Value) = match args.method.as_str() {
        "spi" => {
            let t = if args.lambda < 1.0 {
                spi_discounted(&a, args.lambda, args.eps)?
            } else {
                spi_undiscounted(&a, args.eps, !args.no_bisim_precompute)?
            };
            let trace = json!({
                "iterations": t.iterations,
                "tp_count": t.tp_count,
                "outer_loops": t.outer_loops,
                "wall_time": t.wall_time,
            });
            (t.final_d, trace)
        }
        "vi" => {
            let budgets = [
                args.max_iters.map(Budget::MaxIters),
                args.max_seconds.map(Budget::MaxSeconds),
                args.target_residual.map(Budget::TargetResidual),
            ];
            let mut chosen: Vec<Budget> = budgets.into_iter().flatten().collect();
            if chosen.len() > 1 {
                return Err(AppError::Input(
                    "set at most one of --max-iters, --max-seconds, --target-residual".into(),
                ));
            }
            let budget = chosen.pop().unwrap_or(Budget::TargetResidual(1e-9));
            let t = vi_run(&a, args.lambda, budget);
            let trace = json!({
                "vi_iters": t.iters,
                "tp_count": t.tp_count,
                "wall_time": t.wall_time,
                "residual": if t.residual.is_finite() { t.residual } else { -1.0 },
            });
            (t.d, trace)
        }
        _ => unreachable!("clap restricts the method"),
    };

    let n = a.num_states();
    let content = match args.out.as_str() {
        "json" => {
            let matrix: Vec<Vec<f64>> =
                (0..n).map(|s| (0..n).map(|t| d.get(s, t)).collect()).collect();
            let doc = json!({
                "states": a.state_names(),
                "lambda": args.lambda,
                "method": args.method,
                "matrix": matrix,
                "trace": trace,
            });
            serde_json::to_string_pretty(&doc).expect("matrix serialization")
        }
        "csv" => {
            eprintln!("trace: {trace}");
            let mut out = String::from("state");
            for t in 0..n {
                write!(out, ",{}", a.state_name(t)).unwrap();
            }
            out.push('\n');
            for s in 0..n {
                write!(out, "{}", a.state_name(s)).unwrap();
                for t in 0..n {
                    write!(out, ",{:.9}", d.get(s, t)).unwrap();
                }
                out.push('\n');
            }
            out.pop();
            out
        }
        _ => unreachable!("clap restricts the format"),
    };
    write_output(&args.out_file, &content)
}

fn cmd_gen(args: GenArgs) -> Result<(), AppError> {
    let params = GenParams {
        n: args.states,
        nd_degree: parse_range(&args.nd_degree)?,
        prob_degree: parse_range(&args.prob_degree)?,
        label_count: args.labels,
        seed: args.seed,
    };
    let a = bisimdist::generate(&params).map_err(|e| AppError::Input(e.to_string()))?;
    fs::write(&args.out, serialize(&a) + "\n")
        .map_err(|e| AppError::Input(format!("cannot write {}: {e}", args.out.display())))?;
    Ok(())
}

fn bench_workers() -> Result<usize, AppError> {
    match std::env::var("BISIMDIST_THREADS") {
        Ok(raw) => raw
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| AppError::Input(format!("BISIMDIST_THREADS must be a positive integer, got {raw:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), AppError> {
    check_lambda(args.lambda)?;
    let nd = parse_range(&args.nd_degree)?;
    let pd = parse_range(&args.prob_degree)?;
    let mut sizes = Vec::new();
    for part in args.states.split(',') {
        let n: usize = part
            .trim()
            .parse()
            .map_err(|_| AppError::Input(format!("bad state count {part:?}")))?;
        sizes.push(n);
    }

    let mut instances = Vec::new();
    for &n in &sizes {
        for _ in 0..args.count {
            let offset = instances.len() as u64;
            instances.push(GenParams {
                n,
                nd_degree: nd,
                prob_degree: pd,
                label_count: args.labels,
                seed: args.seed + offset,
            });
        }
    }

    let workers = bench_workers()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| AppError::Internal(e.to_string()))?;
    let results: Vec<Result<bisimdist::bench::BenchRecord, BenchError>> = pool.install(|| {
        use rayon::prelude::*;
        instances
            .par_iter()
            .map(|params| run_comparison(params, args.lambda, args.eps))
            .collect()
    });

    let mut out = String::new();
    out.push_str("# generator: supports drawn uniformly without replacement; weights normalized i.i.d. uniform(0,1]; labels uniform\n");
    out.push_str(&format!(
        "# instances: base seed {}, consecutive offsets; nd-degree {}..{}, prob-degree {}..{}, labels {}\n",
        args.seed, nd.0, nd.1, pd.0, pd.1, args.labels
    ));
    out.push_str(CSV_HEADER);
    for (params, result) in instances.iter().zip(results) {
        match result {
            Ok(rec) => {
                out.push('\n');
                out.push_str(&rec.to_csv_row());
            }
            Err(e) => {
                eprintln!("instance n={} seed={} failed: {e}", params.n, params.seed);
            }
        }
    }
    write_output(&args.out, &out)
}

fn format_report(a: &Automaton, label: &str, report: &BoundReport) -> String {
    let mut text = format!("{label}: {} violations", report.violations.len());
    if let Some(t) = &report.tightest {
        write!(
            text,
            "; tightest pair ({},{}): gap {:.6} vs bound {:.6}",
            a.state_name(t.s),
            a.state_name(t.t),
            t.gap,
            t.bound
        )
        .unwrap();
    }
    for v in &report.violations {
        write!(
            text,
            "\n  violated at ({},{}): gap {:.6} > bound {:.6}",
            a.state_name(v.s),
            a.state_name(v.t),
            v.gap,
            v.bound
        )
        .unwrap();
    }
    text
}

fn cmd_check(args: CheckArgs) -> Result<(), AppError> {
    if args.eps <= 0.0 {
        return Err(AppError::Input("eps must be positive".into()));
    }
    let a = load_automaton(&args.file)?;
    let max_query = ReachQuery::from_names(&a, &args.target, Mode::Max)
        .map_err(|e| AppError::Input(e.to_string()))?;
    let min_query = ReachQuery::from_names(&a, &args.target, Mode::Min)
        .map_err(|e| AppError::Input(e.to_string()))?;
    let d1 = spi_undiscounted(&a, args.eps.min(1e-6), true)?.final_d;
    let max_report = check_bound(&a, &d1, &max_query, args.eps)?;
    let min_report = check_bound(&a, &d1, &min_query, args.eps)?;
    println!("{}", format_report(&a, "max", &max_report));
    println!("{}", format_report(&a, "min", &min_report));
    Ok(())
}

fn game_to_json(g: &Game) -> Value {
    let mut by_kind: Map<String, Value> = Map::new();
    for kind in [
        (VertexKind::Sink0, "v0"),
        (VertexKind::Sink1, "v1"),
        (VertexKind::Max, "vmax"),
        (VertexKind::Min, "vmin"),
        (VertexKind::Rnd, "vrnd"),
    ] {
        let ids: Vec<usize> = g
            .vertices()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == kind.0)
            .map(|(id, _)| id)
            .collect();
        by_kind.insert(kind.1.to_string(), json!(ids));
    }
    let desc: Vec<String> = g.vertices().iter().map(|v| v.desc.clone()).collect();
    let edges: Vec<Value> = g
        .edges()
        .iter()
        .enumerate()
        .flat_map(|(from, succ)| succ.iter().map(move |&to| json!([from, to])))
        .collect();
    let probs: Vec<Value> = (0..g.vertices().len())
        .flat_map(|v| {
            g.probs_of(v)
                .iter()
                .map(move |&(w, p)| json!({"from": v, "to": w, "prob": p}))
        })
        .collect();
    let mut doc = Map::new();
    doc.insert("lambda".into(), json!(g.lambda()));
    for (k, v) in by_kind {
        doc.insert(k, v);
    }
    doc.insert("desc".into(), json!(desc));
    doc.insert("edges".into(), json!(edges));
    doc.insert("p".into(), json!(probs));
    Value::Object(doc)
}

fn cmd_game(args: GameArgs) -> Result<(), AppError> {
    check_lambda(args.lambda)?;
    let a = load_automaton(&args.file)?;
    let g = build_game(&a, args.lambda).map_err(|e| AppError::Input(e.to_string()))?;
    let content = serde_json::to_string_pretty(&game_to_json(&g)).expect("game serialization");
    write_output(&args.out, &content)
}
