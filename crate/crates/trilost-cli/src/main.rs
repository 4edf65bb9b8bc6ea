use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use trilost::dynamic::{dynamic_dlt, observability_report, DynamicOptions};
use trilost::error::{Error, ErrorClass};
use trilost::geometry::{LeastSquaresBackend, SolverOptions};
use trilost::io::{
    parse_bundler, retriangulate, write_histogram_csv, EstimateJson, ObservationFile, ParseOptions, ReconstructionOptions,
};
use trilost::montecarlo::{analytic_map, run_monte_carlo_with, write_csv, write_map_csv, McOptions};
use trilost::scenarios::{
    build_relnav, build_trn_scenario, parse_methods, restrict_to_visible, uranus_config, Method, ScenarioConfig, TrnVariant,
};

#[derive(Parser)]
#[command(name = "trilost", version, about = "Line-of-sight triangulation toolkit")]
struct Cli {
    /// Report failures as one JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    /// Worker threads (overrides TRILOST_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Triangulate one point from a JSON observation file.
    Triangulate(TriangulateArgs),
    /// Build or run declarative scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Analytic DLT/HS/LOST precision over the Uranian-moon grid.
    UranusMap(UranusArgs),
    /// Precision loss along a descent trajectory.
    TrnSweep(TrnSweepArgs),
    /// Relative-navigation demonstrations.
    #[command(subcommand)]
    Relnav(RelnavCmd),
    /// Re-triangulate a Bundler reconstruction.
    Reconstruct(ReconstructArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args)]
struct TriangulateArgs {
    /// Observation JSON (`-` for stdin).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "lost")]
    method: String,
    /// Least-squares backend: qr, normal or tls.
    #[arg(long, default_value = "qr")]
    backend: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Run a scenario config through the Monte Carlo engine.
    Run(ScenarioRunArgs),
    /// Print a descent scenario config.
    Trn {
        #[arg(long, default_value = "canted45")]
        variant: String,
        #[arg(long, default_value_t = 1000.0)]
        altitude: f64,
    },
}

#[derive(Args)]
struct ScenarioRunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat per-method table.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Report JSON (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UranusArgs {
    #[arg(long, default_value_t = 3.0e6)]
    extent_km: f64,
    #[arg(long, default_value_t = 101)]
    resolution: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrnSweepArgs {
    #[arg(long, default_value = "canted45")]
    variant: String,
    #[arg(long, default_value_t = 200.0)]
    from: f64,
    #[arg(long, default_value_t = 2000.0)]
    to: f64,
    #[arg(long, default_value_t = 100.0)]
    step: f64,
    /// Monte Carlo draws per altitude; 0 gives analytic values only.
    #[arg(long, default_value_t = 0)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RelnavCmd {
    /// Chief-centered and offset-feature observability, side by side.
    Demo {
        /// Offset of the imaged feature from the chief center, meters.
        #[arg(long, default_value_t = 10.0)]
        offset: f64,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
    },
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "dlt,lost")]
    methods: String,
    #[arg(long, default_value_t = 0.5)]
    sigma_px: f64,
    /// Reject radial distortion instead of warning.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    allow_large_explicit_range: bool,
    /// Full per-point report.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Histogram CSV (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    /// Selftest checks that did not hold.
    Checks(usize),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CliResult = Result<(), Failure>;

fn read_input(path: &Path) -> Result<String, Error> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        Ok(fs::read_to_string(path)?)
    }
}

/// Stdout that treats a closed pipe (`trilost ... | head`) as end of output.
struct Stdout;

impl Write for Stdout {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match io::stdout().lock().write(buf) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(buf.len()),
            r => r,
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match io::stdout().lock().flush() {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            r => r,
        }
    }
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::BufWriter::new(Stdout)),
    })
}

fn emit_json(path: &Option<PathBuf>, value: &impl serde::Serialize) -> Result<(), Error> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn usage<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn triangulate(args: &TriangulateArgs) -> CliResult {
    let method: Method = usage(args.method.parse())?;
    let backend: LeastSquaresBackend = usage(args.backend.parse())?;
    let file = ObservationFile::from_json(&read_input(&args.input)?)?;
    let obs = file.observations()?;
    let est = method.solve(&obs, SolverOptions::from(backend))?;
    emit_json(&args.out, &EstimateJson::new(method, &est))?;
    Ok(())
}

fn scenario_run(args: &ScenarioRunArgs) -> CliResult {
    let mut cfg = ScenarioConfig::from_json(&read_input(&args.config)?)?;
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let cfg = restrict_to_visible(&cfg)?;
    let report = run_monte_carlo_with(&cfg, &McOptions::default())?;
    if let Some(p) = &args.csv {
        write_csv(&report, io::BufWriter::new(fs::File::create(p)?))?;
    }
    emit_json(&args.out, &report)?;
    Ok(())
}

fn uranus(args: &UranusArgs) -> CliResult {
    let cfg = restrict_to_visible(&uranus_config(args.extent_km, args.resolution)?)?;
    let rows = analytic_map(&cfg)?;
    write_map_csv(&rows, sink(&args.out)?)?;
    Ok(())
}

fn trn_sweep(args: &TrnSweepArgs) -> CliResult {
    let variant: TrnVariant = usage(args.variant.parse())?;
    if args.step.is_nan() || args.step <= 0.0 || args.to < args.from {
        return Err(Failure::Usage("need step > 0 and to ≥ from".into()));
    }
    let mut w = sink(&args.out)?;
    writeln!(w, "altitude,method,sigma_analytic,sigma_sample,loss_pct")?;
    let mut alt = args.from;
    while alt <= args.to + 1e-9 {
        let mut cfg = build_trn_scenario(variant, alt)?;
        cfg.seed = args.seed;
        if args.samples > 0 {
            cfg.samples = args.samples;
            let rep = run_monte_carlo_with(&cfg, &McOptions::default())?;
            let point = &rep.points[0];
            let reference = point.method(Method::Lost)?.total_std;
            for m in &point.methods {
                let sa = m.analytic_std.map(|s| s.to_string()).unwrap_or_default();
                writeln!(w, "{alt},{},{sa},{},{}", m.method, m.total_std, 100.0 * (m.total_std / reference - 1.0))?;
            }
        } else {
            let obs = cfg.observations(0)?;
            let reference = Method::Lost.analytic_covariance(&obs)?.trace().sqrt();
            for m in &cfg.methods {
                let s = m.analytic_covariance(&obs)?.trace().sqrt();
                writeln!(w, "{alt},{m},{s},,{}", 100.0 * (s / reference - 1.0))?;
            }
        }
        alt += args.step;
    }
    w.flush()?;
    Ok(())
}

fn relnav(offset: f64, epochs: usize) -> CliResult {
    let mut cases = vec![];
    for (label, p) in [("chief-center", [0.0; 3]), ("offset-feature", [offset, 0.0, 0.0])] {
        let s = build_relnav(p.into(), epochs, 0.1)?;
        let rep = observability_report(&s.observations, &s.stm, DynamicOptions::default().unobservable_tol);
        let solve = dynamic_dlt(&s.observations, &s.stm, DynamicOptions::default());
        let (state, error) = match &solve {
            Ok(est) => (Some(est.state.as_slice().to_vec()), Some(((est.state - s.truth).norm() / s.truth.norm()).to_string())),
            Err(e) => (None, Some(e.to_string())),
        };
        cases.push(json!({
            "case": label,
            "feature_offset_m": p,
            "truth": s.truth.as_slice(),
            "singular_values": rep.singular_values,
            "null_directions": rep.null_directions,
            "homothety": rep.homothety,
            "estimate": state,
            "result": error,
        }));
    }
    emit_json(&None, &json!({ "schema": 1, "mean_motion_rad_s": trilost::scenarios::RELNAV_MEAN_MOTION, "cases": cases }))?;
    Ok(())
}

fn reconstruct(args: &ReconstructArgs) -> CliResult {
    let methods = usage(parse_methods(&args.methods))?;
    if methods.is_empty() {
        return Err(Failure::Usage("no methods given".into()));
    }
    let ds = parse_bundler(&args.input, ParseOptions { strict: args.strict })?;
    let opts = ReconstructionOptions {
        sigma_px: args.sigma_px,
        allow_large_explicit_range: args.allow_large_explicit_range,
        ..ReconstructionOptions::default()
    };
    let report = retriangulate(&ds, &methods, &opts)?;
    if args.json.is_some() {
        emit_json(&args.json, &report)?;
    }
    write_histogram_csv(&report, sink(&args.out)?)?;
    for s in &report.summaries {
        eprintln!(
            "{}: {} solved, {} failed, median residual {}",
            s.method,
            s.solved,
            s.failed,
            s.median_residual.map(|m| format!("{m:e}")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn selftest() -> CliResult {
    let checks = trilost::selftest::run();
    let mut out = Stdout;
    for c in &checks {
        writeln!(out, "{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(Failure::Checks(checks.iter().filter(|c| !c.passed).count()))
    }
}

fn run(cli: &Cli) -> CliResult {
    let threads = cli.threads.or_else(trilost::montecarlo::env_threads);
    if let Some(n) = threads {
        usage(rayon::ThreadPoolBuilder::new().num_threads(n).build_global())?;
    }
    match &cli.command {
        Command::Triangulate(a) => triangulate(a),
        Command::Scenario(ScenarioCmd::Run(a)) => scenario_run(a),
        Command::Scenario(ScenarioCmd::Trn { variant, altitude }) => {
            let v: TrnVariant = usage(variant.parse())?;
            let mut w = sink(&None)?;
            writeln!(w, "{}", build_trn_scenario(v, *altitude)?.to_json())?;
            w.flush()?;
            Ok(())
        }
        Command::UranusMap(a) => uranus(a),
        Command::TrnSweep(a) => trn_sweep(a),
        Command::Relnav(RelnavCmd::Demo { offset, epochs }) => relnav(*offset, *epochs),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Selftest => selftest(),
    }
}

fn report(json_errors: bool, class: &str, kind: &str, msg: &str) {
    if json_errors {
        eprintln!("{}", json!({ "error": kind, "class": class, "message": msg }));
    } else {
        eprintln!("error: {msg}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if json_errors {
                report(true, "usage", "usage", e.to_string().trim());
            } else {
                let _ = e.print();
            }
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            report(json_errors, "usage", "usage", &msg);
            ExitCode::from(1)
        }
        Err(Failure::Checks(n)) => {
            report(json_errors, "numerical", "selftest", &format!("{n} selftest checks failed"));
            ExitCode::from(3)
        }
        Err(Failure::Lib(e)) => {
            let (class, code) = match e.class() {
                ErrorClass::Data => ("data", 2),
                ErrorClass::Numerical => ("numerical", 3),
            };
            report(json_errors, class, e.kind(), &e.to_string());
            ExitCode::from(code)
        }
    }
}
