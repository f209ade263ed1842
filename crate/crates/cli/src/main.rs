use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dprocess::experiments::{
    analyze, exact_enumeration, read_results, run_experiment_with_progress, write_ecdf_csv, write_scaled_csv,
    AnalyzeOptions, CheckpointPolicy, ExperimentConfig,
};
use dprocess::process::{run, CheckpointSchedule, ProcessParams, TrajectoryRecord};
use dprocess::stats::{IndependenceConfig, Sample};
use dprocess::theory::{eval_theory, eval_theory_at_step, i_of_r, phase_bounds, Phase, Tolerances};
use dprocess::Error;

/// Environment variable naming the directory for outputs without an explicit path.
const OUT_DIR_VAR: &str = "DPROCESS_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "dprocess",
    version,
    about = "Random d-process simulator and hitting-time checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and print its record.
    Simulate(SimulateArgs),
    /// Evaluate the deterministic approximation at t, or at step i of an n-vertex run.
    Theory(TheoryArgs),
    /// Run many trials and append rows to a JSON-lines file.
    Experiment(ExperimentArgs),
    /// Summarize a JSON-lines result file.
    Analyze(AnalyzeArgs),
    /// Print the exact law of a tiny instance.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of log-spaced checkpoints.
    #[arg(long, conflicts_with = "steps")]
    checkpoints: Option<usize>,
    /// Explicit checkpoint steps, comma separated.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<u64>>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Defaults to json.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long)]
    d: usize,
    #[arg(long, allow_negative_numbers = true, conflicts_with_all = ["n", "i"])]
    t: Option<f64>,
    #[arg(long, requires = "i")]
    n: Option<u64>,
    #[arg(long, requires = "n")]
    i: Option<u64>,
    /// Also report i(r, l) (needs --n).
    #[arg(long, requires = "n")]
    r: Option<f64>,
    #[arg(long = "l", default_value_t = 0)]
    ell: usize,
    /// Bound on the residual of sum (d-j) y_j = d - 2t, per unit of d.
    #[arg(long, default_value_t = Tolerances::default().eq8_per_d)]
    eq8_tol: f64,
    /// Bound on the residual of sum s_j = d - 2t.
    #[arg(long, default_value_t = Tolerances::default().eq7)]
    eq7_tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    r_grid: Option<Vec<f64>>,
    /// Number of log-spaced checkpoints instead of the default policy.
    #[arg(long)]
    checkpoints: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Keep stuck runs in downstream statistics.
    #[arg(long)]
    include_stuck: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// With csv: the empirical CDF of V_l instead of the per-run table.
    #[arg(long)]
    ecdf: Option<usize>,
    #[arg(long, conflicts_with = "exclude_stuck")]
    include_stuck: bool,
    #[arg(long)]
    exclude_stuck: bool,
    #[arg(long, default_value_t = 0.15)]
    ks_max: f64,
    #[arg(long, default_value_t = 0.01)]
    level: f64,
    #[arg(long, default_value_t = 500)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug)]
enum CliError {
    Lib(Error),
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(Error::Json(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => match e {
                Error::InvalidParams(_) | Error::ConfigMismatch(_) | Error::Toml(_) => 2,
                Error::Io(_) | Error::Json(_) | Error::Schema(_) | Error::EmptyInput(_) => 3,
                Error::Domain(_) | Error::Guard(_) | Error::Degenerate(_) | Error::Numerical(_) => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Stdout, or a file when a path is given.
fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_VAR).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn write_trajectory_text(rec: &TrajectoryRecord, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "n = {}, d = {}, seed = {}", rec.n, rec.d, rec.seed)?;
    writeln!(
        out,
        "final edges {}{}",
        rec.final_edges,
        if rec.stuck { " (stuck)" } else { "" }
    )?;
    for (l, t) in rec.hitting_times.iter().enumerate() {
        match t {
            Some(t) => writeln!(out, "T_{l} = {t}")?,
            None => writeln!(out, "T_{l} never reached")?,
        }
    }
    for cp in &rec.checkpoints {
        writeln!(out, "step {}: S = {:?}", cp.step, cp.s)?;
    }
    Ok(())
}

fn write_trajectory_csv(rec: &TrajectoryRecord, out: &mut dyn Write) -> io::Result<()> {
    let header: Vec<String> = std::iter::once("step".to_string())
        .chain((0..rec.d).map(|j| format!("S_{j}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for cp in &rec.checkpoints {
        let fields: Vec<String> = std::iter::once(cp.step.to_string())
            .chain(cp.s.iter().map(u64::to_string))
            .collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    let params = ProcessParams::new(args.n, args.d, args.seed)?;
    let schedule = match (args.checkpoints, args.steps) {
        (Some(k), _) => CheckpointSchedule::LogSpaced(k),
        (None, Some(steps)) => CheckpointSchedule::Explicit(steps),
        (None, None) => CheckpointSchedule::Explicit(Vec::new()),
    }
    .resolve(&params)?;
    let record = run(params, &schedule)?;
    let mut out = sink(args.output.as_deref())?;
    match args.format.unwrap_or(Format::Json) {
        Format::Json => writeln!(out, "{}", record.to_json()?)?,
        Format::Text => write_trajectory_text(&record, &mut out)?,
        Format::Csv => write_trajectory_csv(&record, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ")
}

fn cmd_theory(args: TheoryArgs) -> CliResult {
    let tol = Tolerances {
        eq8_per_d: args.eq8_tol,
        eq7: args.eq7_tol,
    };
    let mut out = sink(None)?;
    match (args.t, args.n, args.i) {
        (Some(t), None, None) => {
            let eval = eval_theory(args.d, t)?;
            eval.check(&tol)?;
            match args.format {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&eval)?)?,
                Format::Csv => {
                    writeln!(out, "j,y,s")?;
                    for j in 0..args.d {
                        writeln!(out, "{j},{},{}", eval.y[j], eval.s[j])?;
                    }
                }
                Format::Text => {
                    writeln!(
                        out,
                        "d = {}, t = {}, d - 2t = {:e}, u = -ln y_0 = {}",
                        eval.d, eval.t, eval.gap, eval.u
                    )?;
                    writeln!(out, "y = [{}]", fmt_vec(&eval.y))?;
                    writeln!(out, "s = [{}]", fmt_vec(&eval.s))?;
                    writeln!(
                        out,
                        "residuals: eq8 {:e}, eq7 {:e}",
                        eval.residual_eq8, eval.residual_eq7
                    )?;
                }
            }
        }
        (None, Some(n), Some(i)) => {
            let step = eval_theory_at_step(n, args.d, i)?;
            step.theory.check(&tol)?;
            let bounds = phase_bounds(n, args.d)?;
            let phase = bounds.phase_of(i);
            let envelope = match phase {
                Some(Phase::First) => Some(vec![bounds.envelope_first(i)?; args.d]),
                Some(Phase::Second(k)) => Some(
                    (0..args.d)
                        .map(|j| {
                            if j < k {
                                f64::NAN
                            } else {
                                4.0 * bounds.envelope_second_from_ns(k, step.ns[j])
                            }
                        })
                        .collect(),
                ),
                None => None,
            };
            let probe = args.r.map(|r| i_of_r(n, args.d, r, args.ell)).transpose()?;
            match args.format {
                Format::Json => {
                    let value = serde_json::json!({
                        "step": step,
                        "phase_bounds": bounds,
                        "phase": phase,
                        "envelope": envelope,
                        "i_of_r": probe.map(|p| serde_json::json!({"r": args.r, "l": args.ell, "i": p})),
                    });
                    writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
                }
                Format::Csv => {
                    writeln!(out, "j,ns,envelope")?;
                    for j in 0..args.d {
                        let e = envelope.as_ref().map_or(String::new(), |e| e[j].to_string());
                        writeln!(out, "{j},{},{e}", step.ns[j])?;
                    }
                }
                Format::Text => {
                    writeln!(
                        out,
                        "n = {n}, d = {}, i = {i}, d - 2i/n = {:e}",
                        args.d, step.theory.gap
                    )?;
                    writeln!(out, "n s = [{}]", fmt_vec(&step.ns))?;
                    writeln!(out, "i_trans = {}", bounds.i_trans)?;
                    writeln!(out, "i_after = {:?}", bounds.i_after)?;
                    writeln!(out, "i_before = {:?}", bounds.i_before)?;
                    match (&phase, &envelope) {
                        (Some(p), Some(e)) => writeln!(out, "phase {p:?}, envelope [{}]", fmt_vec(e))?,
                        _ => writeln!(out, "step is past the monitored phases")?,
                    }
                    if let Some(p) = probe {
                        writeln!(out, "i(r = {}, l = {}) = {p}", args.r.unwrap_or_default(), args.ell)?;
                    }
                }
            }
        }
        _ => return Err(CliError::Usage("theory needs --t, or both --n and --i".into())),
    }
    out.flush()?;
    Ok(())
}

fn experiment_config(args: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_toml(&fs::read_to_string(path)?)?,
        None => {
            let (Some(n), Some(d), Some(trials)) = (args.n, args.d, args.trials) else {
                return Err(CliError::Usage(
                    "experiment needs --config or all of --n, --d and --trials".into(),
                ));
            };
            ExperimentConfig::new(n, d, trials, 0)
        }
    };
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(d) = args.d {
        config.d = d;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(grid) = &args.r_grid {
        config.r_grid = grid.clone();
    }
    if let Some(k) = args.checkpoints {
        config.checkpoints = CheckpointPolicy::LogSpaced { count: k };
    }
    if args.include_stuck {
        config.exclude_stuck = false;
    }
    if let Some(out) = &args.output {
        config.output = Some(out.clone());
    }
    if config.output.is_none() {
        let name = format!("results-n{}-d{}-seed{}.jsonl", config.n, config.d, config.master_seed);
        config.output = Some(default_out_dir().join(name));
    }
    config.validate()?;
    Ok(config)
}

fn cmd_experiment(args: ExperimentArgs) -> CliResult {
    let config = experiment_config(&args)?;
    let quiet = args.quiet;
    let summary = run_experiment_with_progress(&config, |done, total| {
        if !quiet {
            eprintln!("trials {done}/{total}");
        }
    })?;
    println!(
        "{}: {} trials ({} new, {} already present), config {}",
        summary.path.display(),
        summary.total,
        summary.written,
        summary.resumed,
        summary.config_hash
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> CliResult {
    let options = AnalyzeOptions {
        exclude_stuck: if args.include_stuck {
            Some(false)
        } else if args.exclude_stuck {
            Some(true)
        } else {
            None
        },
        ks_max_distance: args.ks_max,
        independence: IndependenceConfig {
            permutations: args.permutations,
            level: args.level,
            seed: args.seed,
        },
    };
    let mut out = sink(args.output.as_deref())?;
    match args.format {
        Format::Csv => {
            let (header, rows) = read_results(&args.input)?;
            if rows.is_empty() {
                return Err(Error::EmptyInput(format!("{} has no rows", args.input.display())).into());
            }
            let exclude = options.exclude_stuck.unwrap_or(header.exclude_stuck);
            let used: Vec<_> = rows.into_iter().filter(|r| !(exclude && r.stuck)).collect();
            match args.ecdf {
                Some(l) => {
                    if l + 1 >= header.identity.d {
                        return Err(Error::InvalidParams(format!("level {l} must be below d - 1")).into());
                    }
                    let values: Vec<f64> = used.iter().filter_map(|r| r.scaled[l]).collect();
                    write_ecdf_csv(&Sample::new(values)?, &mut out)?;
                }
                None => write_scaled_csv(&used, header.identity.d, &mut out)?,
            }
        }
        Format::Json => {
            let report = analyze(&args.input, &options)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Format::Text => {
            let report = analyze(&args.input, &options)?;
            write!(out, "{report}")?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> CliResult {
    let exact = exact_enumeration(args.n, args.d)?;
    let mut out = sink(None)?;
    match args.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&exact.to_json()?)?)?,
        Format::Text => writeln!(out, "{exact}")?,
        Format::Csv => {
            writeln!(out, "quantity,value,probability")?;
            for (l, dist) in exact.hitting_times.iter().enumerate() {
                for (t, p) in dist {
                    let value = t.map_or("never".to_string(), |t| t.to_string());
                    writeln!(out, "T_{l},{value},{p}")?;
                }
            }
            for (e, p) in &exact.final_edges {
                writeln!(out, "final_edges,{e},{p}")?;
            }
            writeln!(out, "stuck,,{}", exact.stuck)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Theory(a) => cmd_theory(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
