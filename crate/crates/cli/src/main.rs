mod commands;
mod resolve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "wipsim", version, about = "Wheel-legged biped balance suite")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Linearize a pose, solve the Riccati equation and print the gain.
    Design(DesignArgs),
    /// Run a scenario and write its trajectory and metrics.
    Simulate(SimulateArgs),
    /// Train a balance policy with PPO.
    Train(TrainArgs),
    /// Evaluate a policy file on the balance task.
    Eval(EvalArgs),
    /// Compare DOF-lock masks over a shared scenario.
    Sweep(SweepArgs),
    /// Serve a live session over WebSocket.
    Teleop(TeleopArgs),
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// `nominal` or a robot TOML file.
    #[arg(long, default_value = "nominal")]
    links: String,
    /// Pose preset.
    #[arg(long, default_value = "straight")]
    pose: String,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Diagonal state weights `x,xdot,theta,thetadot`.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    q: Option<Vec<f64>>,
    /// Input weight.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Built-in scenario name or a scenario TOML file.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Policy file for policy-controlled or switching scenarios.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// `nominal` or a robot TOML file replacing the scenario's links and limits.
    #[arg(long)]
    links: Option<String>,
    /// Feed the controller the true state.
    #[arg(long)]
    truth_feed: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML file with optional `[env]` and `[hyper]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Episodes for the baseline and final evaluations.
    #[arg(long, default_value_t = 50)]
    eval_episodes: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample actions instead of using the mean.
    #[arg(long)]
    stochastic: bool,
    /// TOML file with an optional `[env]` table.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value = "pose_playback")]
    scenario: String,
    /// Masks separated by `;`, e.g. `none;hip_yaw;hip_roll,hip_yaw;all`.
    #[arg(long, default_value = "none;hip_yaw;hip_roll,hip_yaw;all")]
    masks: String,
    #[arg(long, default_value_t = wipsim::harness::DEFAULT_SWEEP_SEEDS)]
    seeds: usize,
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TeleopArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "equilibrium")]
    scenario: String,
    #[arg(long)]
    policy: Option<PathBuf>,
}

/// Exit status classes: 1 for bad input, 2 for failures while running.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<wipsim::Error> for Failure {
    fn from(e: wipsim::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Design(a) => commands::design(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Teleop(a) => commands::teleop(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
