//! One function per subcommand. Each writes its artifacts into the run
//! directory and maps failures onto the documented exit classes.

use crate::config::{ConfigError, RunConfig};
use crate::output::{fmt_real, write_bulk_field, write_surface_field, CsvWriter};
use chbc_core::adjoint::complementarity_products;
use chbc_core::control::{gradient_check, optimize};
use chbc_core::quench::run_quench;
use chbc_core::state::energy_ledger;
use chbc_core::{
    solve_adjoint, solve_state, StateTrajectory, StripGrid,
};
use chbc_core::grid::{inner_bulk, inner_surface, BulkField, SurfaceField};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Tolerance the grad-check subcommand enforces before exiting 0.
pub const GRAD_CHECK_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum CmdError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("solver: {0}")]
    Solver(String),
    #[error("grad-check: {failures} of {total} directions exceed relative error {tol}")]
    GradCheckFailed { failures: usize, total: usize, tol: f64 },
}

impl CmdError {
    /// Documented exit classes: 2 config/validation, 3 solver failure,
    /// 4 acceptance-check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Io(_) => 2,
            CmdError::Solver(_) => 3,
            CmdError::GradCheckFailed { .. } => 4,
        }
    }
}

fn solver_err(e: impl std::fmt::Display) -> CmdError {
    CmdError::Solver(e.to_string())
}

/// Resolve the run directory (flag overrides config), create it, drop the
/// resolved config copy, and surface the terminal-compatibility warning.
fn prepare_run_dir(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<PathBuf, CmdError> {
    let dir = run_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.run_dir.clone());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.resolved"), cfg.resolved_text())?;
    if let Ok(grid) = cfg.grid() {
        if let Some(msg) = cfg.terminal_compatibility_warning(&grid)? {
            eprintln!("warning: {msg}");
        }
    }
    Ok(dir)
}

fn fields_dir(dir: &Path) -> Result<PathBuf, CmdError> {
    let f = dir.join("fields");
    std::fs::create_dir_all(&f)?;
    Ok(f)
}

/// Instantaneous squared tracking misfits of one snapshot.
fn misfits(
    traj: &StateTrajectory,
    w: &chbc_core::CostWeights,
    grid: &StripGrid,
    k: usize,
) -> (f64, f64, f64) {
    let dmu = BulkField::from_values(
        grid,
        traj.mu[k]
            .as_slice()
            .iter()
            .zip(w.targets.mu_q[k].as_slice())
            .map(|(a, b)| a - b)
            .collect(),
    );
    let drho = BulkField::from_values(
        grid,
        traj.rho[k]
            .as_slice()
            .iter()
            .zip(w.targets.rho_q[k].as_slice())
            .map(|(a, b)| a - b)
            .collect(),
    );
    let rg = traj.rho_gamma(k);
    let dsig = SurfaceField::from_values(
        grid,
        rg.as_slice()
            .iter()
            .zip(w.targets.rho_sigma[k].as_slice())
            .map(|(a, b)| a - b)
            .collect(),
    );
    (
        inner_bulk(&dmu, &dmu, grid),
        inner_bulk(&drho, &drho, grid),
        inner_surface(&dsig, &dsig, grid),
    )
}

pub fn cmd_validate(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<(), CmdError> {
    let grid = cfg.grid().map_err(|e| ConfigError::Validation(e.to_string()))?;
    cfg.weights(&grid)?;
    cfg.admissible_set(&grid)?;
    cfg.initial_data(&grid)?;
    cfg.initial_control(&grid)?;
    let dir = prepare_run_dir(cfg, run_dir)?;
    println!("config valid; resolved copy at {}", dir.join("config.resolved").display());
    Ok(())
}

pub fn cmd_solve_state(cfg: &RunConfig, alpha: f64, run_dir: Option<&Path>) -> Result<(), CmdError> {
    let grid = cfg.grid().map_err(|e| ConfigError::Validation(e.to_string()))?;
    let scfg = cfg.solver_config()?;
    let w = cfg.weights(&grid)?;
    let init = cfg.initial_data(&grid)?;
    let u = cfg.initial_control(&grid)?;
    let dir = prepare_run_dir(cfg, run_dir)?;

    let traj = solve_state(&u, alpha, &init, &grid, &scfg).map_err(solver_err)?;
    let ledger = energy_ledger(&traj, &grid, &scfg.pot);

    let mut csv = CsvWriter::create(
        &dir.join("diagnostics.csv"),
        &[
            "step",
            "time",
            "min_mu",
            "max_abs_rho",
            "e_mu",
            "d_mu",
            "drift",
            "f_tot",
            "err_mu_Q",
            "err_rho_Q",
            "err_rho_Sigma",
            "newton_iters",
            "damping_events",
            "pdas_iters",
            "guard_events",
            "halvings",
        ],
    )?;
    for k in 0..=grid.nt {
        let (m1, m2, m3) = misfits(&traj, &w, &grid, k);
        let s = if k == 0 { Default::default() } else { traj.stats[k - 1] };
        csv.row(&[
            k.to_string(),
            fmt_real(grid.time(k)),
            fmt_real(traj.mu[k].min()),
            fmt_real(traj.rho[k].max_abs()),
            fmt_real(ledger.e_mu[k]),
            fmt_real(ledger.d_mu[k]),
            fmt_real(ledger.drift[k]),
            fmt_real(ledger.f_tot[k]),
            fmt_real(m1),
            fmt_real(m2),
            fmt_real(m3),
            s.newton_iters.to_string(),
            s.damping_events.to_string(),
            s.pdas_iters.to_string(),
            s.guard_events.to_string(),
            s.halvings.to_string(),
        ])?;
    }
    csv.finish()?;

    if cfg.emit_fields {
        let fdir = fields_dir(&dir)?;
        for k in 0..=grid.nt {
            write_bulk_field(&fdir, "mu", k, &traj.mu[k], &grid)?;
            write_bulk_field(&fdir, "rho", k, &traj.rho[k], &grid)?;
            write_bulk_field(&fdir, "xi", k, &traj.xi[k], &grid)?;
        }
    }
    println!(
        "solve-state alpha={alpha}: min mu = {}, max |rho| = {}, guard events = {}",
        traj.min_mu(),
        traj.max_abs_rho(),
        traj.guard_events()
    );
    Ok(())
}

pub fn cmd_solve_adjoint(cfg: &RunConfig, alpha: f64, run_dir: Option<&Path>) -> Result<(), CmdError> {
    let grid = cfg.grid().map_err(|e| ConfigError::Validation(e.to_string()))?;
    let scfg = cfg.solver_config()?;
    let w = cfg.weights(&grid)?;
    let init = cfg.initial_data(&grid)?;
    let u = cfg.initial_control(&grid)?;
    let dir = prepare_run_dir(cfg, run_dir)?;

    let traj = solve_state(&u, alpha, &init, &grid, &scfg).map_err(solver_err)?;
    let adj = solve_adjoint(&traj, &w, &grid, &scfg).map_err(solver_err)?;
    let slack = complementarity_products(&adj, &traj, &grid, &scfg);

    let mut csv = CsvWriter::create(
        &dir.join("diagnostics.csv"),
        &["level", "time", "max_abs_p", "max_abs_q", "max_abs_lambda", "s_bulk", "s_surf", "id_residual"],
    )?;
    for k in 0..=grid.nt {
        csv.row(&[
            k.to_string(),
            fmt_real(grid.time(k)),
            fmt_real(adj.p[k].max_abs()),
            fmt_real(adj.q[k].max_abs()),
            fmt_real(adj.lambda[k].max_abs()),
            fmt_real(slack.s_bulk),
            fmt_real(slack.s_surf),
            fmt_real(slack.id_residual),
        ])?;
    }
    csv.finish()?;

    if cfg.emit_fields {
        let fdir = fields_dir(&dir)?;
        for k in 0..=grid.nt {
            write_bulk_field(&fdir, "p", k, &adj.p[k], &grid)?;
            write_bulk_field(&fdir, "q", k, &adj.q[k], &grid)?;
            write_bulk_field(&fdir, "lambda", k, &adj.lambda[k], &grid)?;
        }
    }
    println!(
        "solve-adjoint alpha={alpha}: s_bulk = {}, s_surf = {}, id_residual = {}",
        slack.s_bulk, slack.s_surf, slack.id_residual
    );
    Ok(())
}

pub fn cmd_grad_check(cfg: &RunConfig, alpha: f64, run_dir: Option<&Path>) -> Result<(), CmdError> {
    let grid = cfg.grid().map_err(|e| ConfigError::Validation(e.to_string()))?;
    let scfg = cfg.solver_config()?;
    let w = cfg.weights(&grid)?;
    let init = cfg.initial_data(&grid)?;
    let u = cfg.initial_control(&grid)?;
    let dir = prepare_run_dir(cfg, run_dir)?;

    let rows = gradient_check(alpha, &u, &w, None, &init, &grid, &scfg, 10, cfg.seed)
        .map_err(solver_err)?;
    let mut csv = CsvWriter::create(
        &dir.join("grad_check.csv"),
        &["direction", "adjoint_value", "fd_value", "rel_error"],
    )?;
    let mut failures = 0;
    for r in &rows {
        if r.rel_error > GRAD_CHECK_TOL {
            failures += 1;
        }
        csv.row(&[
            r.direction.to_string(),
            fmt_real(r.adjoint_value),
            fmt_real(r.fd_value),
            fmt_real(r.rel_error),
        ])?;
    }
    csv.finish()?;
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0f64, f64::max);
    println!("grad-check alpha={alpha}: {} directions, worst relative error {worst}", rows.len());
    if failures > 0 {
        return Err(CmdError::GradCheckFailed { failures, total: rows.len(), tol: GRAD_CHECK_TOL });
    }
    Ok(())
}

pub fn cmd_optimize(cfg: &RunConfig, alpha: f64, run_dir: Option<&Path>) -> Result<(), CmdError> {
    let grid = cfg.grid().map_err(|e| ConfigError::Validation(e.to_string()))?;
    let scfg = cfg.solver_config()?;
    let w = cfg.weights(&grid)?;
    let aset = cfg.admissible_set(&grid)?;
    let init = cfg.initial_data(&grid)?;
    let u0 = cfg.initial_control(&grid)?;
    let dir = prepare_run_dir(cfg, run_dir)?;

    let out = optimize(alpha, &u0, &aset, &w, None, &init, &grid, &scfg, &cfg.optimize_config())
        .map_err(solver_err)?;

    let mut csv = CsvWriter::create(
        &dir.join("diagnostics.csv"),
        &["iter", "cost", "residual", "tau", "rejections", "r0_exceeded"],
    )?;
    for h in &out.history {
        csv.row(&[
            h.iter.to_string(),
            fmt_real(h.cost),
            fmt_real(h.residual),
            fmt_real(h.tau),
            h.rejections.to_string(),
            (h.r0_exceeded as u8).to_string(),
        ])?;
    }
    csv.finish()?;

    if cfg.emit_fields {
        let fdir = fields_dir(&dir)?;
        for k in 0..=grid.nt {
            write_surface_field(&fdir, "u", k, &out.u.u[k], &grid)?;
            write_bulk_field(&fdir, "rho", k, &out.state.rho[k], &grid)?;
            write_bulk_field(&fdir, "mu", k, &out.state.mu[k], &grid)?;
        }
    }
    println!(
        "optimize alpha={alpha}: cost = {}, residual = {}, stationary = {}",
        out.cost, out.residual, out.stationary
    );
    Ok(())
}

pub fn cmd_quench(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<(), CmdError> {
    let grid = cfg.grid().map_err(|e| ConfigError::Validation(e.to_string()))?;
    let scfg = cfg.solver_config()?;
    let w = cfg.weights(&grid)?;
    let aset = cfg.admissible_set(&grid)?;
    let init = cfg.initial_data(&grid)?;
    let u0 = cfg.initial_control(&grid)?;
    let dir = prepare_run_dir(cfg, run_dir)?;
    let schedule = cfg.schedule();

    let report = run_quench(&schedule, &aset, &w, &u0, &init, &grid, &scfg, &cfg.optimize_config())
        .map_err(solver_err)?;

    let mut csv = CsvWriter::create(
        &dir.join("summary.csv"),
        &[
            "n",
            "alpha",
            "phi_alpha",
            "cost",
            "adapted_cost",
            "residual",
            "iterations",
            "stationary",
            "control_gap",
            "state_gap",
            "s_bulk",
            "s_surf",
            "id_residual",
            "concentration",
            "concentration_ratio",
            "max_abs_rho",
            "min_mu",
            "xnorm",
        ],
    )?;
    for m in &report.members {
        csv.row(&[
            m.n.to_string(),
            fmt_real(m.alpha),
            fmt_real(m.phi_alpha),
            fmt_real(m.cost),
            fmt_real(m.adapted_cost),
            fmt_real(m.residual),
            m.iterations.to_string(),
            (m.stationary as u8).to_string(),
            m.control_gap.map(fmt_real).unwrap_or_default(),
            m.state_gap.map(fmt_real).unwrap_or_default(),
            fmt_real(m.s_bulk),
            fmt_real(m.s_surf),
            fmt_real(m.id_residual),
            fmt_real(m.concentration),
            fmt_real(m.concentration_ratio),
            fmt_real(m.max_abs_rho),
            fmt_real(m.min_mu),
            fmt_real(m.xnorm),
        ])?;
    }
    csv.finish()?;

    let mut limit = CsvWriter::create(
        &dir.join("limit.csv"),
        &[
            "final_state_gap",
            "obstacle_cost",
            "incumbent_cost",
            "xi_violation",
            "xi_weak_gap_1",
            "xi_weak_gap_2",
            "xi_weak_gap_3",
            "xi_weak_gap_4",
            "xi_weak_gap_5",
            "control_gap_inversions",
            "state_gap_inversions",
            "max_abs_rho_across",
            "max_abs_xi_across",
            "max_abs_q_across",
        ],
    )?;
    limit.row(&[
        fmt_real(report.final_state_gap),
        fmt_real(report.obstacle_cost),
        fmt_real(report.incumbent_cost),
        fmt_real(report.xi_limit.max_violation),
        fmt_real(report.xi_limit.weak_gaps[0]),
        fmt_real(report.xi_limit.weak_gaps[1]),
        fmt_real(report.xi_limit.weak_gaps[2]),
        fmt_real(report.xi_limit.weak_gaps[3]),
        fmt_real(report.xi_limit.weak_gaps[4]),
        report.control_gap_inversions.to_string(),
        report.state_gap_inversions.to_string(),
        fmt_real(report.max_abs_rho_across),
        fmt_real(report.max_abs_xi_across),
        fmt_real(report.max_abs_q_across),
    ])?;
    limit.finish()?;

    if cfg.emit_fields {
        let fdir = fields_dir(&dir)?;
        for k in 0..=grid.nt {
            write_surface_field(&fdir, "u", k, &report.final_control.u[k], &grid)?;
            write_bulk_field(&fdir, "rho", k, &report.final_state.rho[k], &grid)?;
            write_bulk_field(&fdir, "rho0", k, &report.obstacle_state.rho[k], &grid)?;
            write_bulk_field(&fdir, "xi0", k, &report.obstacle_state.xi[k], &grid)?;
        }
    }
    println!(
        "quench: {} members, final state gap = {}, xi violation = {}",
        report.members.len(),
        report.final_state_gap,
        report.xi_limit.max_violation
    );
    Ok(())
}
