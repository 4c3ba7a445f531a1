//! Forward-in-time solution of the coupled bulk/surface system.
//!
//! Each time step splits into two substeps:
//!
//! 1. an implicit order-parameter step. For `alpha > 0` the increasing
//!    nonlinearity `phi(alpha) h'` is solved by a safeguarded Newton
//!    iteration whose damping keeps every node strictly inside
//!    `[-1 + EPS_SAFE, 1 - EPS_SAFE]`. For `alpha = 0` the inclusion is
//!    solved exactly by a primal-dual active-set iteration that pins nodes
//!    to the obstacle and extracts the multiplier.
//! 2. a linear chemical-potential step. The reaction coefficient
//!    `(1 + 2 g(rho)) / dt + g'(rho) drho / dt` is checked for positivity
//!    before the solve; when it holds the system matrix is an M-matrix and
//!    the new potential inherits nonnegativity from the old one.
//!
//! The smooth couplings `pi`, `pi_Gamma` and the source `mu g'(rho)` are
//! explicit, which keeps the implicit nonlinearity monotone. A failed
//! substep (Newton stall, active-set cycling, positivity guard) retries the
//! whole step with a locally halved time step, up to a budget.

use crate::band::{BandMatrix, SingularMatrix};
use crate::control::ControlTrajectory;
use crate::grid::{
    inner_bulk, laplacian_bulk_neumann, BulkField, StripGrid, SurfaceField,
};
use crate::physics::{
    free_energy, h_double_prime, h_prime, PhysicsError, PotentialSet, Regime, EPS_SAFE,
};
use thiserror::Error;

/// Tolerances and iteration budgets for the forward (and adjoint) solves.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub pot: PotentialSet,
    pub tol_newton: f64,
    pub max_newton: usize,
    pub max_pdas: usize,
    pub dt_halving_budget: usize,
}

impl SolverConfig {
    pub fn new(pot: PotentialSet) -> Self {
        Self { pot, tol_newton: 1e-11, max_newton: 50, max_pdas: 60, dt_halving_budget: 8 }
    }
}

/// Per-step solver effort and guard bookkeeping, accumulated over substeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub newton_iters: usize,
    pub damping_events: usize,
    pub pdas_iters: usize,
    pub guard_events: usize,
    pub halvings: usize,
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("Newton stalled after {iters} iterations, residual history {history:?}")]
    NewtonStall { iters: usize, history: Vec<f64> },
    #[error("active-set iteration cycled for {iters} iterations, set sizes {history:?}")]
    PdasCycle { iters: usize, history: Vec<(usize, usize)> },
    #[error("positivity guard fired: reaction coefficient {value} at node {node}")]
    GuardFired { node: usize, value: f64 },
    #[error(transparent)]
    Singular(#[from] SingularMatrix),
    #[error(transparent)]
    Domain(#[from] PhysicsError),
    #[error("bad step input: {0}")]
    BadInput(String),
}

#[derive(Debug, Error)]
#[error("state solve failed at step {step} after {halvings} dt-halvings: {source}")]
pub struct StateError {
    pub step: usize,
    pub halvings: usize,
    #[source]
    pub source: StepError,
}

/// Full space-time solution of one forward run, multipliers included.
///
/// The boundary rows of `rho[k]` *are* the surface unknowns; `rho_gamma`
/// reads them out rather than deriving them, so the trace identity is
/// structural. For `alpha > 0` the multiplier snapshots satisfy
/// `xi[k] = phi(alpha) h'(rho[k])` identically; for `alpha = 0` they come
/// out of the active-set solver (ring rows hold the surface multiplier).
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub alpha: f64,
    pub mu: Vec<BulkField>,
    pub rho: Vec<BulkField>,
    pub xi: Vec<BulkField>,
    pub control: ControlTrajectory,
    pub stats: Vec<StepStats>,
}

impl StateTrajectory {
    pub fn rho_gamma(&self, k: usize) -> SurfaceField {
        self.rho[k].boundary_rings()
    }

    pub fn xi_gamma(&self, k: usize) -> SurfaceField {
        self.xi[k].boundary_rings()
    }

    pub fn min_mu(&self) -> f64 {
        self.mu.iter().map(BulkField::min).fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_rho(&self) -> f64 {
        self.rho.iter().map(BulkField::max_abs).fold(0.0, f64::max)
    }

    pub fn guard_events(&self) -> usize {
        self.stats.iter().map(|s| s.guard_events).sum()
    }

    pub fn damping_events(&self) -> usize {
        self.stats.iter().map(|s| s.damping_events).sum()
    }

    /// True when no step needed a local dt halving, i.e. the stored levels
    /// are the plain fixed-dt scheme (required by the discrete adjoint).
    pub fn uniform_dt(&self) -> bool {
        self.stats.iter().all(|s| s.halvings == 0)
    }
}

/// Apply the spatial part of the order-parameter operator: `-Laplacian` on
/// interior rows (reading the rings as coupled unknowns), outward normal
/// derivative minus Laplace-Beltrami on the ring rows.
pub fn apply_rho_operator(f: &BulkField, grid: &StripGrid) -> BulkField {
    let (nx, ny) = (grid.nx, grid.ny);
    let (idx2, idy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let c = 1.0 / (2.0 * grid.dy());
    let mut out = BulkField::zeros(grid);
    for j in 1..ny {
        for i in 0..nx {
            let (il, ir) = ((i + nx - 1) % nx, (i + 1) % nx);
            let v = -((f.get(ir, j) - 2.0 * f.get(i, j) + f.get(il, j)) * idx2
                + (f.get(i, j + 1) - 2.0 * f.get(i, j) + f.get(i, j - 1)) * idy2);
            out.set(i, j, v);
        }
    }
    for i in 0..nx {
        let (il, ir) = ((i + nx - 1) % nx, (i + 1) % nx);
        let bot = (3.0 * f.get(i, 0) - 4.0 * f.get(i, 1) + f.get(i, 2)) * c
            - (f.get(ir, 0) - 2.0 * f.get(i, 0) + f.get(il, 0)) * idx2;
        out.set(i, 0, bot);
        let top = (3.0 * f.get(i, ny) - 4.0 * f.get(i, ny - 1) + f.get(i, ny - 2)) * c
            - (f.get(ir, ny) - 2.0 * f.get(i, ny) + f.get(il, ny)) * idx2;
        out.set(i, ny, top);
    }
    out
}

/// Band bounds: every coupling stays within two rows, periodic wrap included.
pub(crate) fn bandwidth(grid: &StripGrid) -> usize {
    2 * grid.nx
}

/// Assemble `inv_dt * I + L_rho + diag(extra)` where `L_rho` matches
/// [`apply_rho_operator`]. Rows listed as active are replaced by identity.
pub(crate) fn rho_system_matrix(
    grid: &StripGrid,
    inv_dt: f64,
    extra_diag: &[f64],
    active: Option<&[Regime]>,
) -> BandMatrix {
    let (nx, ny) = (grid.nx, grid.ny);
    let n = grid.n_bulk();
    let (idx2, idy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let c = 1.0 / (2.0 * grid.dy());
    let kb = bandwidth(grid);
    let mut m = BandMatrix::new(n, kb, kb);
    let is_active = |r: usize| active.is_some_and(|a| a[r] != Regime::Inactive);
    for j in 0..=ny {
        for i in 0..nx {
            let r = grid.idx(i, j);
            if is_active(r) {
                m.set(r, r, 1.0);
                continue;
            }
            let (il, ir) = ((i + nx - 1) % nx, (i + 1) % nx);
            if j > 0 && j < ny {
                m.add(r, r, inv_dt + extra_diag[r] + 2.0 * idx2 + 2.0 * idy2);
                m.add(r, grid.idx(il, j), -idx2);
                m.add(r, grid.idx(ir, j), -idx2);
                m.add(r, grid.idx(i, j - 1), -idy2);
                m.add(r, grid.idx(i, j + 1), -idy2);
            } else {
                m.add(r, r, inv_dt + extra_diag[r] + 2.0 * idx2 + 3.0 * c);
                m.add(r, grid.idx(il, j), -idx2);
                m.add(r, grid.idx(ir, j), -idx2);
                if j == 0 {
                    m.add(r, grid.idx(i, 1), -4.0 * c);
                    m.add(r, grid.idx(i, 2), c);
                } else {
                    m.add(r, grid.idx(i, ny - 1), -4.0 * c);
                    m.add(r, grid.idx(i, ny - 2), c);
                }
            }
        }
    }
    m
}

/// Assemble `diag(reaction) - Laplacian_Neumann`.
pub(crate) fn mu_system_matrix(grid: &StripGrid, reaction: &[f64]) -> BandMatrix {
    let (nx, ny) = (grid.nx, grid.ny);
    let n = grid.n_bulk();
    let (idx2, idy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let kb = bandwidth(grid);
    let mut m = BandMatrix::new(n, kb, kb);
    for j in 0..=ny {
        for i in 0..nx {
            let r = grid.idx(i, j);
            let (il, ir) = ((i + nx - 1) % nx, (i + 1) % nx);
            m.add(r, r, reaction[r] + 2.0 * idx2 + 2.0 * idy2);
            m.add(r, grid.idx(il, j), -idx2);
            m.add(r, grid.idx(ir, j), -idx2);
            if j > 0 && j < ny {
                m.add(r, grid.idx(i, j - 1), -idy2);
                m.add(r, grid.idx(i, j + 1), -idy2);
            } else if j == 0 {
                m.add(r, grid.idx(i, 1), -2.0 * idy2);
            } else {
                m.add(r, grid.idx(i, ny - 1), -2.0 * idy2);
            }
        }
    }
    m
}

/// Explicit right-hand side of the order-parameter step: previous value over
/// dt plus the frozen sources (`mu g'(rho) - pi(rho)` in the bulk, the
/// control minus `pi_Gamma` on the rings).
fn rho_step_rhs(
    rho_prev: &BulkField,
    mu_prev: &BulkField,
    u_next: &SurfaceField,
    grid: &StripGrid,
    pot: &PotentialSet,
    inv_dt: f64,
) -> Vec<f64> {
    let n = grid.n_bulk();
    let nx = grid.nx;
    let top_start = grid.ny * nx;
    let mut b = vec![0.0; n];
    for r in 0..n {
        let rp = rho_prev.as_slice()[r];
        b[r] = rp * inv_dt;
        if grid.is_ring(r) {
            let (ring, i) = if r < nx { (0, r) } else { (1, r - top_start) };
            b[r] += u_next.get(ring, i) - pot.pi_gamma(rp);
        } else {
            b[r] += mu_prev.as_slice()[r] * pot.g_prime(rp) - pot.pi(rp);
        }
    }
    b
}

/// One implicit order-parameter step with the logarithmic regularization,
/// `alpha > 0`. Damped Newton: the largest step fraction that keeps every
/// node inside the safe interval, scaled by 0.99 and capped at a full step.
///
/// Convergence demands the residual sup-norm below `tol_newton`, relaxed
/// nodewise to the floating-point resolution of the residual evaluation: at
/// nodes pinned against the safe interval the curvature `phi h''` reaches
/// `1e11` and one ulp of the iterate moves the residual by `J_nn * eps`, so
/// no smaller residual is representable there.
pub fn step_rho_regularized(
    rho_prev: &BulkField,
    mu_prev: &BulkField,
    u_next: &SurfaceField,
    alpha: f64,
    grid: &StripGrid,
    cfg: &SolverConfig,
    dt: f64,
) -> Result<(BulkField, StepStats), StepError> {
    let hi = 1.0 - EPS_SAFE;
    if rho_prev.max_abs() > hi {
        return Err(StepError::BadInput(format!(
            "regularized step needs strict interior data, max |rho| = {}",
            rho_prev.max_abs()
        )));
    }
    let phi = cfg.pot.phi(alpha)?;
    let inv_dt = 1.0 / dt;
    let n = grid.n_bulk();
    let b = rho_step_rhs(rho_prev, mu_prev, u_next, grid, &cfg.pot, inv_dt);

    let (idx2, idy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let ring_diag = 2.0 * idx2 + 3.0 / (2.0 * grid.dy());
    let bulk_diag = 2.0 * idx2 + 2.0 * idy2;
    let row_diag =
        |r: usize| inv_dt + if grid.is_ring(r) { ring_diag } else { bulk_diag };

    let mut rho = rho_prev.clone();
    let mut stats = StepStats::default();
    let mut history = Vec::new();
    for _ in 0..cfg.max_newton {
        let lrho = apply_rho_operator(&rho, grid);
        let mut hdd = vec![0.0; n];
        let mut f = vec![0.0; n];
        let mut fnorm = 0.0f64;
        let mut converged = true;
        for r in 0..n {
            let y = rho.as_slice()[r];
            hdd[r] = phi * h_double_prime(y)?;
            f[r] = y * inv_dt + lrho.as_slice()[r] + phi * h_prime(y)? - b[r];
            fnorm = fnorm.max(f[r].abs());
            let floor = 64.0 * f64::EPSILON * (row_diag(r) + hdd[r]);
            if f[r].abs() > cfg.tol_newton.max(floor) {
                converged = false;
            }
        }
        history.push(fnorm);
        if converged {
            stats.newton_iters = history.len() - 1;
            return Ok((rho, stats));
        }
        let jac = rho_system_matrix(grid, inv_dt, &hdd, None);
        let mut delta = f;
        for d in &mut delta {
            *d = -*d;
        }
        jac.lu()?.solve_in_place(&mut delta);

        // fraction-to-the-boundary damping against the safe interval
        let mut s_max = f64::INFINITY;
        for r in 0..n {
            let d = delta[r];
            if d > 0.0 {
                s_max = s_max.min((hi - rho.as_slice()[r]) / d);
            } else if d < 0.0 {
                s_max = s_max.min((-hi - rho.as_slice()[r]) / d);
            }
        }
        let s = (0.99 * s_max).min(1.0);
        if s < 1.0 {
            stats.damping_events += 1;
        }
        for r in 0..n {
            rho.as_mut_slice()[r] += s * delta[r];
        }
    }
    Err(StepError::NewtonStall { iters: cfg.max_newton, history })
}

/// One implicit obstacle step, `alpha = 0`: primal-dual active-set iteration
/// with constant `c = 1`, warm-started from the given regimes. Returns the
/// new field, the multiplier (ring rows hold the surface multiplier), the
/// final regimes, and stats.
pub fn step_rho_obstacle(
    rho_prev: &BulkField,
    mu_prev: &BulkField,
    u_next: &SurfaceField,
    grid: &StripGrid,
    cfg: &SolverConfig,
    dt: f64,
    warm: &[Regime],
) -> Result<(BulkField, BulkField, Vec<Regime>, StepStats), StepError> {
    if rho_prev.max_abs() > 1.0 {
        return Err(StepError::BadInput(format!(
            "obstacle step needs |rho| <= 1, max |rho| = {}",
            rho_prev.max_abs()
        )));
    }
    let inv_dt = 1.0 / dt;
    let n = grid.n_bulk();
    let b = rho_step_rhs(rho_prev, mu_prev, u_next, grid, &cfg.pot, inv_dt);

    let mut active = warm.to_vec();
    let mut stats = StepStats::default();
    let mut history = Vec::new();
    for iter in 0..cfg.max_pdas {
        let zeros = vec![0.0; n];
        let m = rho_system_matrix(grid, inv_dt, &zeros, Some(&active));
        let mut rhs = b.clone();
        for r in 0..n {
            match active[r] {
                Regime::UpperActive => rhs[r] = 1.0,
                Regime::LowerActive => rhs[r] = -1.0,
                Regime::Inactive => {}
            }
        }
        m.lu()?.solve_in_place(&mut rhs);
        let rho = BulkField::from_values(grid, rhs);

        let lrho = apply_rho_operator(&rho, grid);
        let mut xi = vec![0.0; n];
        for r in 0..n {
            if active[r] != Regime::Inactive {
                xi[r] = b[r] - rho.as_slice()[r] * inv_dt - lrho.as_slice()[r];
            }
        }

        let mut next = vec![Regime::Inactive; n];
        for r in 0..n {
            if xi[r] + (rho.as_slice()[r] - 1.0) > 0.0 {
                next[r] = Regime::UpperActive;
            } else if xi[r] + (rho.as_slice()[r] + 1.0) < 0.0 {
                next[r] = Regime::LowerActive;
            }
        }
        let n_upper = next.iter().filter(|r| **r == Regime::UpperActive).count();
        let n_lower = next.iter().filter(|r| **r == Regime::LowerActive).count();
        history.push((n_upper, n_lower));

        if next == active {
            stats.pdas_iters = iter + 1;
            // pin the actives exactly; inactive multipliers are exactly zero
            let mut rho = rho;
            for r in 0..n {
                match active[r] {
                    Regime::UpperActive => rho.as_mut_slice()[r] = 1.0,
                    Regime::LowerActive => rho.as_mut_slice()[r] = -1.0,
                    Regime::Inactive => {}
                }
            }
            return Ok((rho, BulkField::from_values(grid, xi), active, stats));
        }
        active = next;
    }
    Err(StepError::PdasCycle { iters: cfg.max_pdas, history })
}

/// One linear chemical-potential step with the positivity guard.
pub fn step_mu(
    mu_prev: &BulkField,
    rho_prev: &BulkField,
    rho_next: &BulkField,
    grid: &StripGrid,
    cfg: &SolverConfig,
    dt: f64,
) -> Result<BulkField, StepError> {
    let inv_dt = 1.0 / dt;
    let n = grid.n_bulk();
    let mut reaction = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for r in 0..n {
        let rn = rho_next.as_slice()[r];
        let drho = rn - rho_prev.as_slice()[r];
        let mass = (1.0 + 2.0 * cfg.pot.g(rn)) * inv_dt;
        reaction[r] = mass + cfg.pot.g_prime(rn) * drho * inv_dt;
        if reaction[r] <= 0.0 {
            return Err(StepError::GuardFired { node: r, value: reaction[r] });
        }
        rhs[r] = mass * mu_prev.as_slice()[r];
    }
    let m = mu_system_matrix(grid, &reaction);
    m.lu()?.solve_in_place(&mut rhs);
    Ok(BulkField::from_values(grid, rhs))
}

/// Active regimes implied by a field: nodes sitting exactly on an obstacle.
fn regimes_from_field(rho: &BulkField) -> Vec<Regime> {
    rho.as_slice()
        .iter()
        .map(|&v| {
            if v >= 1.0 {
                Regime::UpperActive
            } else if v <= -1.0 {
                Regime::LowerActive
            } else {
                Regime::Inactive
            }
        })
        .collect()
}

/// Solve the full forward system for a given boundary control.
///
/// `alpha > 0` selects the regularized solver, `alpha = 0` the obstacle
/// solver. Initial data must satisfy `mu0 >= 0` and (strictly, when
/// `alpha > 0`) `|rho0| <= 1`. On a substep failure the step is retried at
/// halved dt, up to `dt_halving_budget` halvings; the control is held at its
/// end-of-interval value across substeps.
pub fn solve_state(
    u: &ControlTrajectory,
    alpha: f64,
    init: &(BulkField, BulkField),
    grid: &StripGrid,
    cfg: &SolverConfig,
) -> Result<StateTrajectory, StateError> {
    let (mu0, rho0) = init;
    let bad = |msg: String| StateError { step: 0, halvings: 0, source: StepError::BadInput(msg) };
    if u.len() != grid.nt + 1 {
        return Err(bad(format!("control has {} levels, grid wants {}", u.len(), grid.nt + 1)));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(bad(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if mu0.min() < 0.0 {
        return Err(bad(format!("(A1): mu0 must be nonnegative, min = {}", mu0.min())));
    }
    if alpha > 0.0 {
        if rho0.max_abs() > 1.0 - EPS_SAFE {
            return Err(bad(format!(
                "(A1): rho0 must be strictly interior for alpha > 0, max |rho0| = {}",
                rho0.max_abs()
            )));
        }
    } else if rho0.max_abs() > 1.0 {
        return Err(bad(format!("rho0 must satisfy |rho0| <= 1, max = {}", rho0.max_abs())));
    }

    let nt = grid.nt;
    let dt = grid.dt();
    let phi = if alpha > 0.0 {
        Some(cfg.pot.phi(alpha).map_err(|e| StateError {
            step: 0,
            halvings: 0,
            source: StepError::Domain(e),
        })?)
    } else {
        None
    };
    let xi_of = |rho: &BulkField| -> Result<BulkField, PhysicsError> {
        match phi {
            Some(p) => {
                let mut xi = rho.clone();
                for v in xi.as_mut_slice() {
                    *v = p * h_prime(*v)?;
                }
                Ok(xi)
            }
            None => Ok(BulkField::zeros(grid)),
        }
    };

    let mut mu = Vec::with_capacity(nt + 1);
    let mut rho = Vec::with_capacity(nt + 1);
    let mut xi = Vec::with_capacity(nt + 1);
    mu.push(mu0.clone());
    rho.push(rho0.clone());
    xi.push(xi_of(rho0).map_err(|e| StateError {
        step: 0,
        halvings: 0,
        source: StepError::Domain(e),
    })?);
    let mut stats = Vec::with_capacity(nt);
    let mut warm = regimes_from_field(rho0);

    for k in 0..nt {
        let mut last_err: Option<StepError> = None;
        let mut stepped = false;
        for m in 0..=cfg.dt_halving_budget {
            let sub = 1usize << m;
            let sub_dt = dt / sub as f64;
            let mut cur_rho = rho[k].clone();
            let mut cur_mu = mu[k].clone();
            let mut cur_xi: Option<BulkField> = None;
            let mut cur_warm = warm.clone();
            let mut acc = StepStats { halvings: m, ..Default::default() };
            let mut failed = None;
            for _ in 0..sub {
                let rho_next = if alpha > 0.0 {
                    match step_rho_regularized(
                        &cur_rho, &cur_mu, &u.u[k + 1], alpha, grid, cfg, sub_dt,
                    ) {
                        Ok((r, s)) => {
                            acc.newton_iters += s.newton_iters;
                            acc.damping_events += s.damping_events;
                            r
                        }
                        Err(e) => {
                            failed = Some(e);
                            break;
                        }
                    }
                } else {
                    match step_rho_obstacle(
                        &cur_rho, &cur_mu, &u.u[k + 1], grid, cfg, sub_dt, &cur_warm,
                    ) {
                        Ok((r, x, sets, s)) => {
                            acc.pdas_iters += s.pdas_iters;
                            cur_warm = sets;
                            cur_xi = Some(x);
                            r
                        }
                        Err(e) => {
                            failed = Some(e);
                            break;
                        }
                    }
                };
                match step_mu(&cur_mu, &cur_rho, &rho_next, grid, cfg, sub_dt) {
                    Ok(m_next) => {
                        cur_mu = m_next;
                        cur_rho = rho_next;
                    }
                    Err(e) => {
                        if matches!(e, StepError::GuardFired { .. }) {
                            acc.guard_events += 1;
                        }
                        failed = Some(e);
                        break;
                    }
                }
            }
            match failed {
                None => {
                    let xi_next = match cur_xi {
                        Some(x) => x,
                        None => xi_of(&cur_rho).map_err(|e| StateError {
                            step: k,
                            halvings: m,
                            source: StepError::Domain(e),
                        })?,
                    };
                    rho.push(cur_rho);
                    mu.push(cur_mu);
                    xi.push(xi_next);
                    stats.push(acc);
                    warm = cur_warm;
                    stepped = true;
                    break;
                }
                Some(e) => {
                    // carry guard counts from the failed attempt into the next one
                    last_err = Some(e);
                }
            }
        }
        if !stepped {
            return Err(StateError {
                step: k,
                halvings: cfg.dt_halving_budget,
                source: last_err.unwrap_or(StepError::BadInput("no attempt ran".into())),
            });
        }
        // a step that needed halving records the guard that caused it
        if stats[k].halvings > 0
            && stats[k].guard_events == 0
            && matches!(last_err, Some(StepError::GuardFired { .. }))
        {
            stats[k].guard_events += 1;
        }
    }

    Ok(StateTrajectory { alpha, mu, rho, xi, control: u.clone(), stats })
}

/// Time series of the quadratic potential energy, the accumulated Dirichlet
/// dissipation, their drift against the initial energy, and the total free
/// energy.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    pub e_mu: Vec<f64>,
    pub d_mu: Vec<f64>,
    pub drift: Vec<f64>,
    pub f_tot: Vec<f64>,
}

impl EnergyLedger {
    pub fn max_abs_drift(&self) -> f64 {
        self.drift.iter().fold(0.0f64, |m, d| m.max(d.abs()))
    }
}

/// Evaluate the energy identity bookkeeping along a trajectory:
/// `E[k] = int (1/2 + g(rho_k)) mu_k^2`, and the dissipation increment of
/// step k tested against the time midpoint `(mu_k + mu_{k-1}) / 2`, which
/// makes the identity telescope exactly when `rho` is frozen.
pub fn energy_ledger(traj: &StateTrajectory, grid: &StripGrid, pot: &PotentialSet) -> EnergyLedger {
    let nt = traj.mu.len() - 1;
    let mut e_mu = Vec::with_capacity(nt + 1);
    let mut d_mu = Vec::with_capacity(nt + 1);
    let mut drift = Vec::with_capacity(nt + 1);
    let mut f_tot = Vec::with_capacity(nt + 1);
    let mut diss = 0.0;
    for k in 0..=nt {
        let weight = BulkField::from_values(
            grid,
            traj.rho[k].as_slice().iter().zip(traj.mu[k].as_slice()).map(|(&r, &m)| (0.5 + pot.g(r)) * m).collect(),
        );
        e_mu.push(inner_bulk(&weight, &traj.mu[k], grid));
        if k > 0 {
            let lap = laplacian_bulk_neumann(&traj.mu[k], grid);
            let mid = BulkField::from_values(
                grid,
                traj.mu[k]
                    .as_slice()
                    .iter()
                    .zip(traj.mu[k - 1].as_slice())
                    .map(|(&a, &b)| 0.5 * (a + b))
                    .collect(),
            );
            diss += -grid.dt() * inner_bulk(&lap, &mid, grid);
        }
        d_mu.push(diss);
        drift.push(e_mu[k] + d_mu[k] - e_mu[0]);
        f_tot.push(free_energy(
            &traj.rho[k],
            &traj.rho[k].boundary_rings(),
            &traj.mu[k],
            &traj.control.u[k],
            pot,
            grid,
        ));
    }
    EnergyLedger { e_mu, d_mu, drift, f_tot }
}
