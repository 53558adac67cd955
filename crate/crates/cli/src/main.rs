mod commands;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Sensor placement and observer design for box-bounded nonlinear systems.
#[derive(Parser, Debug)]
#[command(name = "sensorplace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the constants of a nonlinearity class for a model file.
    Parameterize(ParameterizeArgs),
    /// Solve the minimal sensor placement problem by branch-and-bound.
    Place(PlaceArgs),
    /// Simulate plant, observer and error dynamics for a placement.
    Simulate(SimulateArgs),
    /// Build the highway model and run parameterize, place and simulate.
    TrafficDemo(TrafficDemoArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ClassArg {
    Lipschitz,
    BoundedJacobian,
    OneSidedLipschitz,
    Qib,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    Interval,
    Lds,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SequenceArg {
    Sobol,
    Halton,
    Uniform,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    Lipschitz,
    BoundedJacobian,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScaleArg {
    Full,
    Small,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ReadingArg {
    /// Any state may carry a sensor, at most 8 active.
    Cap,
    /// Only the first 8 states carry candidate sensors.
    FirstEight,
}

#[derive(Args, Debug, Clone, Serialize)]
struct EstimationFlags {
    /// Estimation method.
    #[arg(long, value_enum, default_value = "interval")]
    method: MethodArg,
    /// LDS sample count.
    #[arg(long, default_value_t = 1 << 14)]
    samples: usize,
    #[arg(long, value_enum, default_value = "sobol")]
    sequence: SequenceArg,
    /// Seed for scrambling and validation samples.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Interval BnB gap tolerance ε_h.
    #[arg(long, default_value_t = 1e-6)]
    eps_h: f64,
    /// Interval BnB iteration budget.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct ParameterizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "lipschitz")]
    class: ClassArg,
    #[command(flatten)]
    est: EstimationFlags,
    /// Output params JSON; a manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SolverFlags {
    /// Symmetric bound on every entry of Y.
    #[arg(long, default_value_t = 100.0)]
    ybound: f64,
    /// Lower eigenvalue bound on P.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1e-7)]
    feas_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    gap_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    infeas_margin: f64,
    /// Newton step budget per SDP phase.
    #[arg(long, default_value_t = 200)]
    max_newton: usize,
    #[arg(long, default_value_t = 10_000)]
    max_nodes: usize,
    /// Disable pruning by the all-free-sensors-on completion.
    #[arg(long)]
    no_superset_pruning: bool,
}

#[derive(Args, Debug, Serialize)]
struct PlaceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Observer LMI; defaults to the class recorded in the params file.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// W for the bounded-Jacobian LMI as a JSON array of rows (n × n²).
    #[arg(long)]
    w: Option<PathBuf>,
    /// Use W = I ⊗ 1ᵀ for the bounded-Jacobian LMI.
    #[arg(long, conflicts_with = "w")]
    w_default: bool,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Sensors (0-based) forced on, comma separated.
    #[arg(long, value_delimiter = ',')]
    force_on: Vec<usize>,
    /// Sensors (0-based) forced off, comma separated.
    #[arg(long, value_delimiter = ',')]
    force_off: Vec<usize>,
    #[command(flatten)]
    solver: SolverFlags,
    /// Also write the root relaxation SDP as JSON.
    #[arg(long)]
    dump_sdp: Option<PathBuf>,
    /// Output placement JSON; a manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SimFlags {
    /// Horizon T (s).
    #[arg(long, default_value_t = 200.0)]
    t_end: f64,
    /// RK4 step; defaults to 0.01 / |λ|max of A and A - LΓC, capped to [1e-4, 0.5].
    #[arg(long)]
    h: Option<f64>,
    /// Seed for the plant initial state, uniform in the model box.
    #[arg(long, default_value_t = 1)]
    x0_seed: u64,
    /// Seed for the observer initial state; defaults to x0-seed + 1.
    #[arg(long)]
    xhat0_seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    placement: PathBuf,
    #[command(flatten)]
    sim: SimFlags,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrafficDemoArgs {
    #[arg(long, value_enum, default_value = "full")]
    scale: ScaleArg,
    #[arg(long, value_enum, default_value = "cap")]
    reading: ReadingArg,
    #[command(flatten)]
    est: EstimationFlags,
    #[command(flatten)]
    solver: SolverFlags,
    #[command(flatten)]
    sim: SimFlags,
    /// On an infeasible verdict, also solve with the cardinality cap lifted.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    uncapped_diagnostic: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn io(m: impl std::fmt::Display) -> Self {
        CliError { code: 1, message: m.to_string() }
    }
    pub fn numerical(m: impl std::fmt::Display) -> Self {
        CliError { code: 3, message: m.to_string() }
    }
    pub fn estimation(m: impl std::fmt::Display) -> Self {
        CliError { code: 4, message: m.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out = match &cli.command {
        Command::Parameterize(a) => commands::parameterize(a),
        Command::Place(a) => commands::place(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::TrafficDemo(a) => commands::traffic_demo(a),
    };
    match out {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
