use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mspa::memory::MemoryConfig;
use mspa::metrics::Space;
use mspa::pipeline::{encode, predict, predict_barycentric, train, MspaModel};
use mspa::spa::SpaIIConfig;
use mspa::systems::{ChuaForm, ChuaParams};
use mspa_cli::eval::{evaluate, EvalSettings, Forecasts, Metric};
use mspa_cli::generate::{generate, Sampling, System};
use mspa_cli::sweep::{run_sweep, SweepConfig};
use mspa_cli::{ensemble, eval, sweep, table, CliError, Result};

/// Barycentric-coordinate models of dynamical systems.
#[derive(Debug, Parser)]
#[command(name = "mspa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a reference system and write the sampled trajectory.
    Generate(GenerateArgs),
    /// Train a model on a trajectory.
    Fit(FitArgs),
    /// Forecast from the last states of a warmup trajectory.
    Predict(PredictArgs),
    /// Compare predictions with the truth.
    Eval(EvalArgs),
    /// Run a parameter grid described by a TOML file.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(subcommand)]
    system: SystemArgs,
}

#[derive(Debug, Args)]
struct SamplingArgs {
    /// Integrator step size [default: 0.01 for lorenz96, 0.001 otherwise]
    #[arg(long)]
    step: Option<f64>,
    /// Number of integrator steps
    #[arg(long)]
    steps: usize,
    /// Keep every n-th step
    #[arg(long, default_value_t = 1)]
    every: usize,
    /// Integrator steps to drop at the start
    #[arg(long, default_value_t = 0)]
    skip: usize,
    /// Comma-separated coordinates to keep (1-based)
    #[arg(long, value_delimiter = ',')]
    observe: Vec<usize>,
    /// Output CSV (a directory with --count)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormArg {
    Plain,
    Bracketed,
}

#[derive(Debug, Subcommand)]
enum SystemArgs {
    Lorenz96 {
        #[arg(long, default_value_t = 5)]
        dim: usize,
        #[arg(long, default_value_t = 3.8)]
        forcing: f64,
        /// Offset of the last coordinate from the equilibrium
        #[arg(long, default_value_t = 0.01)]
        perturb: f64,
        /// Write this many realisations started near the sampled trajectory
        #[arg(long)]
        count: Option<usize>,
        /// Uniform start noise in normalized units
        #[arg(long, default_value_t = 0.01, requires = "count")]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Integrator steps per realisation
        #[arg(long, requires = "count")]
        length: Option<usize>,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    Chua {
        #[arg(long, value_enum, default_value = "plain")]
        form: FormArg,
        #[arg(long, default_value_t = 18.0)]
        alpha: f64,
        #[arg(long, default_value_t = 33.0)]
        beta: f64,
        #[arg(long, default_value_t = -0.2, allow_negative_numbers = true)]
        mu0: f64,
        #[arg(long, default_value_t = 0.01)]
        mu1: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,0,0", allow_negative_numbers = true)]
        initial: Vec<f64>,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    Ks {
        #[arg(long, default_value_t = 100)]
        grid_points: usize,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Trajectory CSV
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    k_lift: usize,
    /// Memory depth M
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// Memory lag in rows
    #[arg(long, default_value_t = 1)]
    lag: usize,
    /// Forecast step in rows
    #[arg(long, default_value_t = 1)]
    forward: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SpaIIConfig::default().max_iter)]
    max_iter: usize,
    #[arg(long, default_value_t = SpaIIConfig::default().restarts)]
    restarts: usize,
    #[arg(long, default_value_t = SpaIIConfig::default().tol)]
    tol: f64,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpaceArg {
    True,
    Barycentric,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV of states; the forecast follows its last row
    #[arg(long)]
    warmup: PathBuf,
    #[arg(long)]
    horizon: usize,
    /// Write states or learning-polytope coordinates
    #[arg(long, value_enum, default_value = "true")]
    space: SpaceArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// CSV file, or a directory of realisations
    #[arg(long)]
    truth: PathBuf,
    /// CSV file, or a directory of forecasts named by their start row
    #[arg(long)]
    pred: PathBuf,
    /// Comma-separated: error, kstep, hausdorff, autocorrelation, amplitude
    #[arg(long, value_delimiter = ',', required = true)]
    metrics: Vec<String>,
    /// Check that k-step inputs are barycentric coordinates
    #[arg(long, value_enum, default_value = "true")]
    space: SpaceArg,
    #[arg(long)]
    max_k: Option<usize>,
    /// Largest autocorrelation lag [default: half the shortest series]
    #[arg(long)]
    max_lag: Option<usize>,
    /// Smallest lag entering the autocorrelation error
    #[arg(long, default_value_t = 0)]
    min_lag: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving sweep.csv
    #[arg(long)]
    out_dir: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn sampling(args: &SamplingArgs, system: &System) -> Result<Sampling> {
    let observe = args
        .observe
        .iter()
        .map(|&c| c.checked_sub(1).ok_or_else(|| CliError::Usage("coordinates are 1-based".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sampling {
        step: args.step.unwrap_or(system.default_step()),
        steps: args.steps,
        every: args.every,
        skip: args.skip,
        observe,
    })
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    match args.system {
        SystemArgs::Lorenz96 { dim, forcing, perturb, count, noise, seed, length, sampling: s } => {
            let system = System::Lorenz96 { dim, forcing, perturb };
            let plan = sampling(&s, &system)?;
            let data = generate(&system, &plan)?;
            match count {
                None => table::write_matrix(&s.out, &data),
                Some(count) => {
                    if !plan.observe.is_empty() {
                        return Err(CliError::Usage("--observe cannot be combined with --count".into()));
                    }
                    let steps = length.unwrap_or(plan.steps - plan.skip);
                    let norm = mspa::pipeline::Normalization::fit(&data)?;
                    let starts = ensemble::perturbed_starts(&data, &norm, count, noise, seed)?;
                    std::fs::create_dir_all(&s.out).map_err(|e| CliError::io(&s.out, e))?;
                    for (r, start) in starts.into_iter().enumerate() {
                        let run = mspa::systems::integrate_rk4(&mspa::systems::OdeSpec {
                            rhs: mspa::systems::Rhs::Lorenz96 { forcing },
                            initial: start.iter().copied().collect(),
                            step: plan.step,
                            steps,
                            observe: None,
                        })?;
                        let kept: Vec<usize> = (0..=steps).step_by(plan.every).collect();
                        table::write_matrix(&s.out.join(format!("{r:04}.csv")), &run.select_columns(&kept))?;
                    }
                    Ok(())
                }
            }
        }
        SystemArgs::Chua { form, alpha, beta, mu0, mu1, initial, sampling: s } => {
            let initial: [f64; 3] = initial
                .try_into()
                .map_err(|v: Vec<f64>| CliError::Usage(format!("Chua needs 3 initial values, got {}", v.len())))?;
            let form = match form {
                FormArg::Plain => ChuaForm::Plain,
                FormArg::Bracketed => ChuaForm::Bracketed,
            };
            let system = System::Chua { params: ChuaParams { alpha, beta, mu0, mu1, form }, initial };
            table::write_matrix(&s.out, &generate(&system, &sampling(&s, &system)?)?)
        }
        SystemArgs::Ks { grid_points, sampling: s } => {
            let system = System::Ks { grid_points };
            table::write_matrix(&s.out, &generate(&system, &sampling(&s, &system)?)?)
        }
    }
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let data = table::read_matrix(&args.data)?;
    let mem = MemoryConfig::new(args.depth, args.lag, args.forward)?;
    let cfg = SpaIIConfig { tol: args.tol, max_iter: args.max_iter, seed: args.seed, restarts: args.restarts };
    let t = train(&data, args.k, args.k_lift, &mem, &cfg)?;
    write_text(&args.out, &t.model.to_text())?;
    let r = t.report;
    println!("learning polytope residual {}", table::format_value(r.learn_objective));
    println!("lifting polytope residual {}", table::format_value(r.lift_objective));
    println!("memoryless propagator residual {}", table::format_value(r.spa2_residual));
    println!("memory propagator residual {}", table::format_value(r.mspa_residual));
    println!("lifting map residual {}", table::format_value(r.lift_residual));
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model = MspaModel::from_text(&read_text(&args.model)?).map_err(|e| CliError::parse(&args.model, e))?;
    let warmup = table::read_matrix(&args.warmup)?;
    let out = match args.space {
        SpaceArg::True => predict(&model, &warmup, args.horizon)?,
        SpaceArg::Barycentric => {
            let need = model.mem.history_span() + 1;
            if warmup.ncols() < need {
                let msg = format!("warmup has {} states, the memory needs {need}", warmup.ncols());
                return Err(mspa::Error::InsufficientData(msg).into());
            }
            let tail = warmup.columns(warmup.ncols() - need, need).clone_owned();
            predict_barycentric(&model, &encode(&model, &tail)?, args.horizon)?
        }
    };
    table::write_matrix(&args.out, &out)
}

fn start_row(path: &Path) -> Result<usize> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Usage(format!("{}: forecast files must be named <start row>.csv", path.display())))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let metrics = args.metrics.iter().map(|m| m.parse()).collect::<Result<Vec<Metric>>>()?;
    let truth = table::read_series(&args.truth)?;
    let pred = if args.pred.is_dir() {
        let files = table::csv_files(&args.pred)?;
        let starts = files.iter().map(|f| start_row(f)).collect::<Result<Vec<_>>>()?;
        let series = files.iter().map(|f| table::read_matrix(f)).collect::<Result<Vec<_>>>()?;
        Forecasts { series, starts }
    } else {
        Forecasts { series: vec![table::read_matrix(&args.pred)?], starts: vec![0] }
    };
    let settings = EvalSettings {
        space: match args.space {
            SpaceArg::True => Space::True,
            SpaceArg::Barycentric => Space::Barycentric,
        },
        max_k: args.max_k,
        lags: args.max_lag.map(|l| 0..=l),
        min_error_lag: args.min_lag,
    };
    let rows = evaluate(&truth, &pred, &metrics, &settings)?;
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.cells()).collect();
    table::write_rows(&args.out, &eval::HEADER, &cells)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = SweepConfig::from_toml(&read_text(&args.config)?, &args.config)?;
    let data = table::read_matrix(&cfg.data)?;
    let rows = run_sweep(&cfg, &data)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.cells()).collect();
    table::write_rows(&args.out_dir.join("sweep.csv"), &sweep::HEADER, &cells)
}

fn threads() -> Result<usize> {
    match std::env::var("MSPA_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("MSPA_THREADS must be a positive integer, got {v:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads()?)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
