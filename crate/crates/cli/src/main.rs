mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "hygame", version, about = "Zero-sum games on hybrid systems: simulate, solve, certify")]
pub struct Cli {
    /// Directory for every output file.
    #[arg(long, global = true, env = "HYGAME_OUT", default_value = ".")]
    pub out_dir: PathBuf,
    /// Seed for grid-sample jitter and sampled checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance override for the command's pass/fail test.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate the saddle-point closed loop and evaluate its cost.
    Simulate(SimulateArgs),
    /// Solve a Riccati equation for a linear-quadratic scenario.
    Solve {
        #[command(subcommand)]
        which: SolveCmd,
    },
    /// Certificate checks.
    Check {
        #[command(subcommand)]
        which: CheckCmd,
    },
    /// Cost sweeps over scaled strategies.
    Sweep {
        #[command(subcommand)]
        which: SweepCmd,
    },
    /// Re-evaluate the cost of a trajectory CSV.
    EvaluateCost(EvalArgs),
}

#[derive(Args, Debug)]
pub struct ScenarioArg {
    /// Builtin scenario name or path to a scenario JSON file.
    #[arg(long)]
    pub scenario: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Policy {
    Jump,
    Flow,
    Both,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    /// Initial state, comma separated; defaults to the scenario's.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long, value_enum, default_value = "jump")]
    pub policy: Policy,
    /// Flow-time budget.
    #[arg(long)]
    pub tmax: Option<f64>,
    /// Jump budget.
    #[arg(long)]
    pub jmax: Option<usize>,
    /// Largest integration step.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Branch cap for `--policy both`.
    #[arg(long, default_value_t = 64)]
    pub max_branches: usize,
    #[arg(long, default_value = "traj.csv")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum SolveCmd {
    /// Periodic timer equations, or the constant-P equations without a timer.
    Riccati(SolveArgs),
    /// Jump-only equation plus the flow orthogonality check.
    Security(SolveArgs),
    /// Constant-P equations.
    Robust(SolveArgs),
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    #[arg(long, default_value = "gains.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// State grid `lo,hi,n;lo,hi,n;...`; defaults to the scenario's.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Uniform jitter of interior grid points, as a fraction of the cell.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
}

#[derive(Subcommand, Debug)]
pub enum CheckCmd {
    /// HJBI residuals and the Isaacs gap on a grid.
    Hjbi {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "residuals.json")]
        out: PathBuf,
    },
    /// Lyapunov decrease and trajectory convergence.
    Stability {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        grid: GridArgs,
        /// Target set: `origin` or `scenario`.
        #[arg(long, default_value = "scenario")]
        set: String,
        /// CSV of initial states, one per row.
        #[arg(long)]
        x0_batch: Option<PathBuf>,
        #[arg(long, default_value = "stability.json")]
        out: PathBuf,
    },
    /// The six unilateral-deviation inequalities for a feedback law.
    Equivalent {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        grid: GridArgs,
        /// Law under test: the synthesized one, or with player 1's signs flipped.
        #[arg(long, value_enum, default_value = "synthesized")]
        law: LawChoice,
        /// Deviation samples per input coordinate.
        #[arg(long, default_value_t = 21)]
        per_dim: usize,
        #[arg(long, default_value = "equivalent.json")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LawChoice {
    Synthesized,
    Saddle,
    Flipped,
}

#[derive(Subcommand, Debug)]
pub enum SweepCmd {
    /// Costs of `(ε_u κ_1, ε_w κ_2)` over an ε grid.
    Saddle {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// `lo:hi:n` for ε_u (and ε_w unless `--eps-w` is given).
        #[arg(long, default_value = "0.5:1.5:11")]
        eps: String,
        #[arg(long)]
        eps_w: Option<String>,
        #[arg(long, default_value = "saddle.csv")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    /// Trajectory CSV written by `simulate`.
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long, default_value = "cost.json")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("hygame: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
