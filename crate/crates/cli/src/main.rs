use chbc_cli::commands::{
    cmd_grad_check, cmd_optimize, cmd_quench, cmd_solve_adjoint, cmd_solve_state, cmd_validate,
    CmdError,
};
use chbc_cli::config::parse_config;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Boundary control of a phase-separation system with dynamic boundary
/// conditions and double-obstacle constraints.
#[derive(Parser)]
#[command(name = "chbc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config, writing the resolved copy.
    Validate(CommonArgs),
    /// Forward solve with the configured initial control.
    SolveState(CommonArgs),
    /// Forward solve followed by the backward adjoint sweep.
    SolveAdjoint(CommonArgs),
    /// Compare adjoint directional derivatives against finite differences.
    GradCheck(CommonArgs),
    /// Projected-gradient minimization of the tracking cost.
    Optimize(CommonArgs),
    /// Deep-quench continuation over the configured schedule.
    Quench(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Regularization strength; 0 selects the obstacle solver where
    /// supported. Defaults to the schedule's largest member.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory; overrides io.run_dir from the config.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<(), CmdError> {
    let (args, run): (&CommonArgs, _) = match &cli.command {
        Command::Validate(a) => (a, 0),
        Command::SolveState(a) => (a, 1),
        Command::SolveAdjoint(a) => (a, 2),
        Command::GradCheck(a) => (a, 3),
        Command::Optimize(a) => (a, 4),
        Command::Quench(a) => (a, 5),
    };
    let cfg = parse_config(&args.config)?;
    let alpha = args.alpha.unwrap_or(cfg.alpha0);
    let run_dir = args.run_dir.as_deref();
    match run {
        0 => cmd_validate(&cfg, run_dir),
        1 => cmd_solve_state(&cfg, alpha, run_dir),
        2 => cmd_solve_adjoint(&cfg, alpha, run_dir),
        3 => cmd_grad_check(&cfg, alpha, run_dir),
        4 => cmd_optimize(&cfg, alpha, run_dir),
        _ => cmd_quench(&cfg, run_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
