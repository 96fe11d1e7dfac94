//! Command-line front end: train weights with any of the five methods, score
//! predictions, audit model invariants, and generate synthetic models and
//! datasets.
//!
//! Exit codes: 0 success, 1 usage or file errors, 2 flagged non-convergence
//! or failed checks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use camel::cccp::{cccp_train, CccpConfig, LinearizationInit, LinearizationStyle};
use camel::check::{run_battery, CheckOutcome, CheckStatus};
use camel::dual::{
    camel0_train, piecewise_train, DualParams, Linearization, Marginals, SolverConfig,
    TrainProblem,
};
use camel::error::Error as LibError;
use camel::eval::{evaluate, EvalConfig, EvalMetrics, InferenceKind};
use camel::exact::{self, exact_ml_train, MlConfig, DEFAULT_JOINT_CAP};
use camel::format::{self, ParamsFile};
use camel::lbfgs::IterRecord;
use camel::lbp::{lbp_infer, lbp_ml_train, LbpConfig, LbpMlConfig};
use camel::model::{Dataset, Model};
use camel::synth;

#[derive(Parser)]
#[command(name = "camel", version, about = "Train and evaluate log-linear cluster-graph models")]
struct Cli {
    /// Worker threads for the parallel kernels (0 keeps the pool default;
    /// ignored in sequential builds).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit weights to a dataset and write a parameter file plus a run report.
    Train(TrainArgs),
    /// Score max-belief predictions of saved parameters against a dataset.
    Eval(EvalArgs),
    /// Run the invariant battery on a model/data pair.
    Check(CheckArgs),
    /// Write a synthetic model file.
    GenModel(GenModelArgs),
    /// Sample instances from a model and write a data file.
    GenData(GenDataArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Piecewise,
    Camel0,
    Cccp,
    LbpMl,
    ExactMl,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Piecewise => "piecewise",
            Method::Camel0 => "camel0",
            Method::Cccp => "cccp",
            Method::LbpMl => "lbp-ml",
            Method::ExactMl => "exact-ml",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Zero,
    Empirical,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinArg {
    Source,
    Split,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportStyle {
    Tsv,
    Pretty,
}

#[derive(Clone, Copy, ValueEnum)]
enum InferenceArg {
    Lbp,
    Exact,
}

#[derive(Args)]
struct TrainArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Training data file.
    #[arg(long)]
    data: PathBuf,
    /// Destination of the trained parameter file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Linearization start for cccp.
    #[arg(long, value_enum, default_value_t = InitArg::Zero)]
    init: InitArg,
    /// Offset update rule for cccp.
    #[arg(long, value_enum, default_value_t = LinArg::Source)]
    linearization: LinArg,
    /// Gaussian prior variance; trains unregularized when absent.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Gradient tolerance of the weight solver.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Relinearization budget for cccp.
    #[arg(long, default_value_t = 50)]
    max_outer: usize,
    /// Iteration budget per weight solve.
    #[arg(long, default_value_t = 1000)]
    max_inner: usize,
    /// Reserved for randomized initialization; every current method is
    /// deterministic, so the value only lands in the report.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ReportStyle::Pretty)]
    report: ReportStyle,
    /// Per-iteration solver trace, written as TSV.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Trained parameter file; only the weights are used.
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = InferenceArg::Lbp)]
    inference: InferenceArg,
    #[arg(long, value_enum, default_value_t = ReportStyle::Pretty)]
    report: ReportStyle,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Variables on the chain/loop/star, or the grid side length.
    #[arg(long)]
    size: usize,
    /// States per variable.
    #[arg(long, default_value_t = 2)]
    card: usize,
    #[arg(long, value_enum, default_value_t = TyingArg::FullTableUntied)]
    tying: TyingArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Chain,
    Star,
    Loop,
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum TyingArg {
    FullTableUntied,
    PairwiseTied,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of instances to sample.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample from the weights of this parameter file instead of random ones.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Range of the random weights drawn when --params is absent.
    #[arg(long, default_value_t = 1.0)]
    weight_scale: f64,
    /// Comma-separated names of observed variables; makes the file conditional.
    #[arg(long, value_delimiter = ',')]
    observed: Vec<String>,
}

/// Usage exits 1, Run exits 2. Run failures have already printed their
/// partial output.
enum Failure {
    Usage(String),
    Run(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    init_threads(cli.threads);
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Check(a) => cmd_check(a),
        Command::GenModel(a) => cmd_gen_model(a),
        Command::GenData(a) => cmd_gen_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

#[cfg(feature = "parallel")]
fn init_threads(n: usize) {
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_n: usize) {}

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {what} `{}`: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    format::parse_model(&read(path, "model file")?)
        .map_err(|e| Failure::Usage(format!("model file `{}`: {e}", path.display())))
}

fn load_data(path: &Path, model: &Model) -> Result<Dataset, Failure> {
    format::parse_data(&read(path, "data file")?, model.space())
        .map_err(|e| Failure::Usage(format!("data file `{}`: {e}", path.display())))
}

fn load_params(path: &Path) -> Result<ParamsFile, Failure> {
    format::parse_params(&read(path, "parameter file")?)
        .map_err(|e| Failure::Usage(format!("parameter file `{}`: {e}", path.display())))
}

fn write_file(path: &Path, text: &str, what: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .map_err(|e| Failure::Usage(format!("cannot write {what} `{}`: {e}", path.display())))
}

/// Optimizer blow-ups keep exit code 2; anything else is a setup problem.
fn train_failure(e: LibError) -> Failure {
    match e {
        LibError::NotConverged { .. } | LibError::NonFinite { .. } => {
            Failure::Run(format!("training failed: {e}"))
        }
        e => Failure::Usage(format!("training: {e}")),
    }
}

struct Trained {
    params: DualParams,
    lin: Option<Linearization>,
    outer_loops: usize,
    inner_iterations: Vec<usize>,
    objective: f64,
    converged: bool,
    /// (loop index, per-iteration trace); 0 is the piecewise bootstrap.
    traces: Vec<(usize, Vec<IterRecord>)>,
    note: Option<String>,
}

struct RunReport {
    method: &'static str,
    outer_loops: usize,
    inner_iterations: Vec<usize>,
    wall_seconds: f64,
    objective: f64,
    max_moment_residual: f64,
    max_consistency_residual: f64,
    metrics: EvalMetrics,
    converged: bool,
    seed: u64,
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    if let Some(s2) = args.sigma2 {
        if !(s2 > 0.0) {
            return Err(Failure::Usage(format!("--sigma2 must be positive, got {s2}")));
        }
    }
    if !(args.tol > 0.0) {
        return Err(Failure::Usage(format!("--tol must be positive, got {}", args.tol)));
    }

    let model = load_model(&args.model)?;
    let data = load_data(&args.data, &model)?;
    let problem = TrainProblem::new(&model, &data)
        .map_err(|e| Failure::Usage(format!("training: {e}")))?;

    let solver = SolverConfig {
        tol: args.tol,
        max_iters: args.max_inner,
        sigma2: args.sigma2,
        ..Default::default()
    };

    let start = Instant::now();
    let trained = match args.method {
        Method::Piecewise => {
            let out = piecewise_train(&problem, &solver).map_err(train_failure)?;
            Trained {
                params: out.params,
                lin: None,
                outer_loops: 1,
                inner_iterations: vec![out.diagnostics.iterations],
                objective: out.diagnostics.value,
                converged: out.diagnostics.converged,
                traces: vec![(1, out.diagnostics.records)],
                note: None,
            }
        }
        Method::Camel0 => {
            let out = camel0_train(&problem, &solver).map_err(train_failure)?;
            Trained {
                params: out.solution.params,
                lin: None,
                outer_loops: 1,
                inner_iterations: vec![
                    out.bootstrap.iterations,
                    out.solution.diagnostics.iterations,
                ],
                objective: out.solution.diagnostics.value,
                converged: out.bootstrap.converged && out.solution.diagnostics.converged,
                traces: vec![
                    (0, out.bootstrap.records),
                    (1, out.solution.diagnostics.records),
                ],
                note: None,
            }
        }
        Method::Cccp => {
            let cfg = CccpConfig {
                max_outer: args.max_outer,
                style: match args.linearization {
                    LinArg::Source => LinearizationStyle::SourceOnly,
                    LinArg::Split => LinearizationStyle::SplitHalf,
                },
                init: match args.init {
                    InitArg::Zero => LinearizationInit::Zero,
                    InitArg::Empirical => LinearizationInit::Empirical,
                },
                inner: solver,
                ..Default::default()
            };
            let out = cccp_train(&problem, &data, &cfg).map_err(train_failure)?;
            let mut inner = vec![out.bootstrap.iterations];
            let mut traces = vec![(0, out.bootstrap.records)];
            for rec in &out.outer {
                inner.push(rec.inner.iterations);
                traces.push((rec.outer, rec.inner.records.clone()));
            }
            Trained {
                objective: problem.objective(&out.marginals),
                params: out.params,
                lin: Some(out.lin),
                outer_loops: out.outer.len(),
                inner_iterations: inner,
                converged: out.converged,
                traces,
                note: None,
            }
        }
        Method::ExactMl => {
            let cfg = MlConfig {
                tol: args.tol,
                max_iters: args.max_inner,
                sigma2: args.sigma2,
                ..Default::default()
            };
            let out = exact_ml_train(&model, &data, &cfg).map_err(train_failure)?;
            Trained {
                params: DualParams { weights: out.weights, multipliers: None },
                lin: None,
                outer_loops: 1,
                inner_iterations: vec![out.iterations],
                objective: out.log_likelihood,
                converged: true,
                traces: vec![(1, out.records)],
                note: None,
            }
        }
        Method::LbpMl => {
            let cfg = LbpMlConfig {
                tol: args.tol,
                max_iters: args.max_inner,
                sigma2: args.sigma2,
                ..Default::default()
            };
            let out = lbp_ml_train(&problem, &cfg).map_err(train_failure)?;
            Trained {
                params: DualParams { weights: out.weights, multipliers: None },
                lin: None,
                outer_loops: 1,
                inner_iterations: vec![out.iterations],
                objective: out.value,
                converged: out.converged,
                traces: vec![(1, out.records)],
                note: (out.bp_unconverged > 0).then(|| {
                    format!(
                        "propagation missed its threshold in {} context evaluation(s)",
                        out.bp_unconverged
                    )
                }),
            }
        }
    };
    let wall_seconds = start.elapsed().as_secs_f64();

    let file = ParamsFile::from_training(
        &model,
        args.method.name(),
        data.mode(),
        &trained.params,
        trained.lin.as_ref(),
    );
    let text = format::serialize_params(&file)
        .map_err(|e| Failure::Usage(format!("serializing parameters: {e}")))?;
    write_file(&args.out, &text, "parameter file")?;

    if let Some(path) = &args.diagnostics {
        write_diagnostics(path, &trained.traces)?;
    }

    // residuals come from the saved file, so the report vouches for the
    // artifact rather than for in-memory state
    let saved = load_params(&args.out)?;
    let (tables, weights) = tables_from_saved(&saved, args.method, &problem)?;
    let metrics = evaluate(&model, &weights, &data, &EvalConfig::default())
        .map_err(|e| Failure::Usage(format!("evaluating: {e}")))?;

    let report = RunReport {
        method: args.method.name(),
        outer_loops: trained.outer_loops,
        inner_iterations: trained.inner_iterations,
        wall_seconds,
        objective: trained.objective,
        max_moment_residual: problem.max_moment_residual(&tables),
        max_consistency_residual: problem.max_consistency_residual(&tables),
        metrics,
        converged: trained.converged,
        seed: args.seed,
    };
    print_report(&report, args.report);
    if let Some(note) = &trained.note {
        eprintln!("note: {note}");
    }

    if trained.converged {
        Ok(())
    } else {
        Err(Failure::Run("training stopped before reaching tolerance; parameters written anyway".into()))
    }
}

/// Rebuilds the cluster tables that the saved parameters stand for: analytic
/// dual tables for the entropy methods, per-context inference for the
/// likelihood methods.
fn tables_from_saved(
    saved: &ParamsFile,
    method: Method,
    problem: &TrainProblem,
) -> Result<(Marginals, Vec<f64>), Failure> {
    let model = problem.model();
    match method {
        Method::Piecewise | Method::Camel0 | Method::Cccp => {
            let (params, lin) = saved
                .resolve(problem)
                .map_err(|e| Failure::Usage(format!("re-reading parameters: {e}")))?;
            Ok((problem.marginals(&params, &lin), params.weights))
        }
        Method::ExactMl => {
            let weights = saved
                .resolve_weights(model)
                .map_err(|e| Failure::Usage(format!("re-reading parameters: {e}")))?;
            let per_context = (0..problem.num_contexts())
                .map(|c| exact::marginals_capped(problem.context_view(c), &weights, DEFAULT_JOINT_CAP))
                .collect::<Result<_, _>>()
                .map_err(|e| Failure::Usage(format!("recomputing marginals: {e}")))?;
            Ok((Marginals { per_context }, weights))
        }
        Method::LbpMl => {
            let weights = saved
                .resolve_weights(model)
                .map_err(|e| Failure::Usage(format!("re-reading parameters: {e}")))?;
            let per_context = (0..problem.num_contexts())
                .map(|c| {
                    lbp_infer(problem.context_view(c), &weights, &LbpConfig::default())
                        .map(|o| o.beliefs)
                })
                .collect::<Result<_, _>>()
                .map_err(|e| Failure::Usage(format!("recomputing beliefs: {e}")))?;
            Ok((Marginals { per_context }, weights))
        }
    }
}

fn write_diagnostics(path: &Path, traces: &[(usize, Vec<IterRecord>)]) -> Result<(), Failure> {
    let mut s = String::from("loop\titer\tvalue\tgrad_norm\tstep\n");
    for (li, records) in traces {
        for r in records {
            let _ = writeln!(s, "{li}\t{}\t{}\t{}\t{}", r.iter, r.value, r.grad_norm, r.step);
        }
    }
    write_file(path, &s, "diagnostics file")
}

fn print_report(r: &RunReport, style: ReportStyle) {
    let inner: Vec<String> = r.inner_iterations.iter().map(ToString::to_string).collect();
    match style {
        ReportStyle::Tsv => {
            println!(
                "method\touter_loops\tinner_iterations\twall_seconds\tobjective\t\
                 max_moment_residual\tmax_consistency_residual\tmacro_accuracy\t\
                 micro_accuracy\tconverged\tseed"
            );
            println!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.method,
                r.outer_loops,
                inner.join(","),
                r.wall_seconds,
                r.objective,
                r.max_moment_residual,
                r.max_consistency_residual,
                r.metrics.macro_accuracy,
                r.metrics.micro_accuracy,
                r.converged,
                r.seed,
            );
        }
        ReportStyle::Pretty => {
            println!("method                    {}", r.method);
            println!("outer loops               {}", r.outer_loops);
            println!("inner iterations          {}", inner.join(", "));
            println!("wall seconds              {:.3}", r.wall_seconds);
            println!("objective                 {:.6}", r.objective);
            println!("max moment residual       {:.3e}", r.max_moment_residual);
            println!("max consistency residual  {:.3e}", r.max_consistency_residual);
            println!("converged                 {}", if r.converged { "yes" } else { "no" });
            println!("seed                      {}", r.seed);
            print_metrics_pretty(&r.metrics);
        }
    }
}

fn print_metrics_pretty(m: &EvalMetrics) {
    println!("accuracy macro / micro    {:.4} / {:.4}", m.macro_accuracy, m.micro_accuracy);
    if !m.inference_converged {
        println!("inference                 did not reach its threshold");
    }
    println!("per-variable accuracy");
    for v in &m.per_variable {
        println!("  {:<16} {:.4}  ({}/{})", v.name, v.accuracy(), v.correct, v.total);
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let data = load_data(&args.data, &model)?;
    let params = load_params(&args.params)?;
    let weights = params
        .resolve_weights(&model)
        .map_err(|e| Failure::Usage(format!("parameter file `{}`: {e}", args.params.display())))?;
    let cfg = EvalConfig {
        inference: match args.inference {
            InferenceArg::Lbp => InferenceKind::Lbp,
            InferenceArg::Exact => InferenceKind::Exact,
        },
        ..Default::default()
    };
    let metrics =
        evaluate(&model, &weights, &data, &cfg).map_err(|e| Failure::Usage(format!("evaluating: {e}")))?;
    match args.report {
        ReportStyle::Tsv => {
            println!("name\tcorrect\ttotal\taccuracy");
            for v in &metrics.per_variable {
                println!("{}\t{}\t{}\t{}", v.name, v.correct, v.total, v.accuracy());
            }
            let correct: usize = metrics.per_variable.iter().map(|v| v.correct).sum();
            let total: usize = metrics.per_variable.iter().map(|v| v.total).sum();
            println!("macro\t-\t-\t{}", metrics.macro_accuracy);
            println!("micro\t{}\t{}\t{}", correct, total, metrics.micro_accuracy);
        }
        ReportStyle::Pretty => print_metrics_pretty(&metrics),
    }
    Ok(())
}

fn cmd_check(args: CheckArgs) -> Result<(), Failure> {
    let text = read(&args.model, "model file")?;
    let model = match format::parse_model(&text) {
        Ok(m) => m,
        // a non-finite table is a property finding, not a usage error
        Err(LibError::Invalid { what: "feature value", detail }) => {
            print_check_line(&CheckOutcome {
                name: "model-finite",
                status: CheckStatus::Fail,
                detail,
            });
            return Err(Failure::Run("1 check failed".into()));
        }
        Err(e) => return Err(Failure::Usage(format!("model file `{}`: {e}", args.model.display()))),
    };
    let data = load_data(&args.data, &model)?;
    let outcomes = run_battery(&model, &data);
    for o in &outcomes {
        print_check_line(o);
    }
    let failed = outcomes.iter().filter(|o| o.status == CheckStatus::Fail).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Run(format!("{failed} check(s) failed")))
    }
}

fn print_check_line(o: &CheckOutcome) {
    let status = match o.status {
        CheckStatus::Pass => "PASS",
        CheckStatus::Fail => "FAIL",
        CheckStatus::Skip => "SKIP",
    };
    if o.detail.is_empty() {
        println!("{:<20} {status}", o.name);
    } else {
        println!("{:<20} {status}  {}", o.name, o.detail);
    }
}

fn cmd_gen_model(args: GenModelArgs) -> Result<(), Failure> {
    let kind = match args.kind {
        KindArg::Chain => synth::GenKind::Chain,
        KindArg::Star => synth::GenKind::Star,
        KindArg::Loop => synth::GenKind::Loop,
        KindArg::Grid => synth::GenKind::Grid,
    };
    let tying = match args.tying {
        TyingArg::FullTableUntied => synth::Tying::FullTableUntied,
        TyingArg::PairwiseTied => synth::Tying::PairwiseTied,
    };
    let model = synth::gen_model(kind, args.size, args.card, tying, args.seed)
        .map_err(|e| Failure::Usage(format!("generating model: {e}")))?;
    let text = format::serialize_model(&model)
        .map_err(|e| Failure::Usage(format!("serializing model: {e}")))?;
    write_file(&args.out, &text, "model file")
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let weights = match &args.params {
        Some(path) => load_params(path)?
            .resolve_weights(&model)
            .map_err(|e| Failure::Usage(format!("parameter file `{}`: {e}", path.display())))?,
        None => synth::random_weights(model.num_features(), args.weight_scale, args.seed),
    };
    let mut data = synth::gen_data(&model, &weights, args.count, args.seed)
        .map_err(|e| Failure::Usage(format!("sampling: {e}")))?;
    if !args.observed.is_empty() {
        let mut observed = Vec::with_capacity(args.observed.len());
        for name in &args.observed {
            let idx = model.space().index_of(name).ok_or_else(|| {
                Failure::Usage(format!("--observed names unknown variable `{name}`"))
            })?;
            observed.push(idx);
        }
        observed.sort_unstable();
        data = data
            .with_observed(model.space(), &observed)
            .map_err(|e| Failure::Usage(format!("--observed: {e}")))?;
    }
    let text = format::serialize_data(model.space(), &data)
        .map_err(|e| Failure::Usage(format!("serializing data: {e}")))?;
    write_file(&args.out, &text, "data file")
}
