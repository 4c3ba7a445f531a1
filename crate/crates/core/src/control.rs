//! Cost functionals, the admissible box, the reduced gradient, and the
//! projected-gradient optimizer.
//!
//! The optimizer needs only what the adjoint provides: the surface
//! multiplier `q_Gamma` is the Riesz representative of the tracking part of
//! the reduced derivative, so the gradient is `q_Gamma + beta6 u`
//! (plus `u - u_ref` for the adapted functional) and the stationarity
//! measure `||u - P(u - g)||` is literally the discrete variational
//! inequality gap on the box.

use crate::adjoint::{solve_adjoint, AdjointError, AdjointTrajectory};
use crate::grid::{
    inner_spacetime_bulk, inner_spacetime_surface, inner_surface, BulkField,
    StripGrid, SurfaceField,
};
use crate::state::{solve_state, SolverConfig, StateError, StateTrajectory};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Boundary control snapshots `u[k]`, `k = 0..Nt`. The dynamics consume
/// levels `1..Nt` (each step sees its end-of-interval value); level 0 only
/// enters the cost quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    pub u: Vec<SurfaceField>,
}

impl ControlTrajectory {
    pub fn zeros(grid: &StripGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &StripGrid, c: f64) -> Self {
        Self { u: (0..=grid.nt).map(|_| SurfaceField::constant(grid, c)).collect() }
    }

    /// Evaluate `f(x, ring, t)` at every surface node and time level.
    pub fn from_fn(grid: &StripGrid, f: impl Fn(f64, usize, f64) -> f64) -> Self {
        Self {
            u: (0..=grid.nt)
                .map(|k| SurfaceField::from_fn(grid, |x, ring| f(x, ring, grid.time(k))))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.u.iter().map(SurfaceField::max_abs).fold(0.0, f64::max)
    }

    /// Space-time `L^2(Sigma)` norm.
    pub fn norm_l2(&self, grid: &StripGrid) -> f64 {
        inner_spacetime_surface(&self.u, &self.u, grid).sqrt()
    }

    pub fn axpy(&mut self, a: f64, v: &ControlTrajectory) {
        assert_eq!(self.len(), v.len(), "control trajectory length mismatch");
        for (uk, vk) in self.u.iter_mut().zip(&v.u) {
            for (x, y) in uk.as_mut_slice().iter_mut().zip(vk.as_slice()) {
                *x += a * y;
            }
        }
    }
}

/// Space-time `L^2(Sigma)` distance of two controls.
pub fn control_distance(a: &ControlTrajectory, b: &ControlTrajectory, grid: &StripGrid) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.u.len() {
        let tw = grid.time_weight(k);
        let mut d = a.u[k].clone();
        for (x, y) in d.as_mut_slice().iter_mut().zip(b.u[k].as_slice()) {
            *x -= y;
        }
        acc += tw * inner_surface(&d, &d, grid);
    }
    acc.sqrt()
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("admissible set is empty: lower bound exceeds upper bound at node {node}")]
    EmptyBox { node: usize },
    #[error("cost weights violate (A5): all six betas are zero")]
    AllBetasZero,
    #[error("negative or non-finite beta{index}: {value}")]
    BadBeta { index: usize, value: f64 },
}

/// Box constraints on the control plus the monitored norm-ball radius.
/// Bounds are per-node; constant-in-time by default, optionally tabulated
/// per time level.
#[derive(Debug, Clone)]
pub struct AdmissibleSet {
    lower: Vec<SurfaceField>,
    upper: Vec<SurfaceField>,
    pub r0: f64,
}

impl AdmissibleSet {
    /// Constant-in-time bounds.
    pub fn constant(grid: &StripGrid, lower: f64, upper: f64, r0: f64) -> Result<Self, ControlError> {
        Self::new(
            vec![SurfaceField::constant(grid, lower)],
            vec![SurfaceField::constant(grid, upper)],
            r0,
        )
    }

    /// Either one field (held for all times) or `Nt + 1` tabulated fields
    /// per bound.
    pub fn new(
        lower: Vec<SurfaceField>,
        upper: Vec<SurfaceField>,
        r0: f64,
    ) -> Result<Self, ControlError> {
        assert!(!lower.is_empty() && !upper.is_empty());
        assert!(r0 > 0.0, "R0 must be positive");
        for k in 0..lower.len().max(upper.len()) {
            let lo = &lower[k.min(lower.len() - 1)];
            let hi = &upper[k.min(upper.len() - 1)];
            for (node, (l, u)) in lo.as_slice().iter().zip(hi.as_slice()).enumerate() {
                if l > u {
                    return Err(ControlError::EmptyBox { node });
                }
            }
        }
        Ok(Self { lower, upper, r0 })
    }

    pub fn lower_at(&self, k: usize) -> &SurfaceField {
        &self.lower[k.min(self.lower.len() - 1)]
    }

    pub fn upper_at(&self, k: usize) -> &SurfaceField {
        &self.upper[k.min(self.upper.len() - 1)]
    }

    pub fn contains(&self, u: &ControlTrajectory) -> bool {
        u.u.iter().enumerate().all(|(k, uk)| {
            uk.as_slice()
                .iter()
                .zip(self.lower_at(k).as_slice())
                .zip(self.upper_at(k).as_slice())
                .all(|((v, lo), hi)| v >= lo && v <= hi)
        })
    }
}

/// All six tracking targets, materialized on the grid.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub mu_q: Vec<BulkField>,
    pub rho_q: Vec<BulkField>,
    pub rho_sigma: Vec<SurfaceField>,
    pub rho_omega: BulkField,
    pub rho_gamma: SurfaceField,
}

impl TargetSet {
    pub fn zeros(grid: &StripGrid) -> Self {
        Self {
            mu_q: vec![BulkField::zeros(grid); grid.nt + 1],
            rho_q: vec![BulkField::zeros(grid); grid.nt + 1],
            rho_sigma: vec![SurfaceField::zeros(grid); grid.nt + 1],
            rho_omega: BulkField::zeros(grid),
            rho_gamma: SurfaceField::zeros(grid),
        }
    }
}

/// Weights `beta1..beta6` plus their target functions; at least one weight
/// must be positive.
#[derive(Debug, Clone)]
pub struct CostWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub beta6: f64,
    pub targets: TargetSet,
}

impl CostWeights {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        beta1: f64,
        beta2: f64,
        beta3: f64,
        beta4: f64,
        beta5: f64,
        beta6: f64,
        targets: TargetSet,
    ) -> Result<Self, ControlError> {
        for (i, b) in [beta1, beta2, beta3, beta4, beta5, beta6].iter().enumerate() {
            if !(b.is_finite() && *b >= 0.0) {
                return Err(ControlError::BadBeta { index: i + 1, value: *b });
            }
        }
        if beta1 + beta2 + beta3 + beta4 + beta5 + beta6 == 0.0 {
            return Err(ControlError::AllBetasZero);
        }
        Ok(Self { beta1, beta2, beta3, beta4, beta5, beta6, targets })
    }

    /// Pure control-cost functional (only `beta6`).
    pub fn control_only(beta6: f64, targets: TargetSet) -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0, beta6, targets).expect("beta6 > 0")
    }
}

fn diff_bulk(a: &[BulkField], b: &[BulkField]) -> Vec<BulkField> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut d = x.clone();
            for (u, v) in d.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *u -= v;
            }
            d
        })
        .collect()
}

fn diff_surface(a: &[SurfaceField], b: &[SurfaceField]) -> Vec<SurfaceField> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut d = x.clone();
            for (u, v) in d.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *u -= v;
            }
            d
        })
        .collect()
}

/// The tracking cost: six quadratic misfit terms over `Q`, `Sigma`, `Omega`,
/// `Gamma` and the control, evaluated with the grid's quadratures.
pub fn cost(traj: &StateTrajectory, u: &ControlTrajectory, w: &CostWeights, grid: &StripGrid) -> f64 {
    let mut j = 0.0;
    if w.beta1 > 0.0 {
        let d = diff_bulk(&traj.mu, &w.targets.mu_q);
        j += 0.5 * w.beta1 * inner_spacetime_bulk(&d, &d, grid);
    }
    if w.beta2 > 0.0 {
        let d = diff_bulk(&traj.rho, &w.targets.rho_q);
        j += 0.5 * w.beta2 * inner_spacetime_bulk(&d, &d, grid);
    }
    if w.beta3 > 0.0 {
        let rg: Vec<SurfaceField> = (0..=grid.nt).map(|k| traj.rho_gamma(k)).collect();
        let d = diff_surface(&rg, &w.targets.rho_sigma);
        j += 0.5 * w.beta3 * inner_spacetime_surface(&d, &d, grid);
    }
    if w.beta4 > 0.0 {
        let d = diff_bulk(
            std::slice::from_ref(&traj.rho[grid.nt]),
            std::slice::from_ref(&w.targets.rho_omega),
        );
        j += 0.5 * w.beta4 * crate::grid::inner_bulk(&d[0], &d[0], grid);
    }
    if w.beta5 > 0.0 {
        let rg = traj.rho_gamma(grid.nt);
        let d = diff_surface(
            std::slice::from_ref(&rg),
            std::slice::from_ref(&w.targets.rho_gamma),
        );
        j += 0.5 * w.beta5 * inner_surface(&d[0], &d[0], grid);
    }
    if w.beta6 > 0.0 {
        j += 0.5 * w.beta6 * inner_spacetime_surface(&u.u, &u.u, grid);
    }
    j
}

/// The adapted functional: the cost plus `1/2 ||u - u_ref||^2` over `Sigma`,
/// centered at a fixed reference control.
pub fn adapted_cost(
    traj: &StateTrajectory,
    u: &ControlTrajectory,
    w: &CostWeights,
    u_ref: &ControlTrajectory,
    grid: &StripGrid,
) -> f64 {
    let d = control_distance(u, u_ref, grid);
    cost(traj, u, w, grid) + 0.5 * d * d
}

/// Riesz representative of the reduced derivative on `Sigma`:
/// `g[k] = q_Gamma[k-1] + beta6 u[k]` (plus `u[k] - u_ref[k]` when adapting).
/// Level 0 carries no multiplier because it never enters the dynamics.
pub fn reduced_gradient(
    adj: &AdjointTrajectory,
    u: &ControlTrajectory,
    w: &CostWeights,
    adaptation: Option<&ControlTrajectory>,
    grid: &StripGrid,
) -> ControlTrajectory {
    let mut g = Vec::with_capacity(u.len());
    for k in 0..u.len() {
        let mut gk = if k == 0 { SurfaceField::zeros(grid) } else { adj.q_gamma(k - 1) };
        for (node, (gv, uv)) in gk.as_mut_slice().iter_mut().zip(u.u[k].as_slice()).enumerate() {
            *gv += w.beta6 * uv;
            if let Some(r) = adaptation {
                *gv += uv - r.u[k].as_slice()[node];
            }
        }
        g.push(gk);
    }
    ControlTrajectory { u: g }
}

/// Nodewise clamp onto the admissible box; the `L^2(Sigma)` projection.
pub fn project(u: &ControlTrajectory, aset: &AdmissibleSet) -> ControlTrajectory {
    let mut out = u.clone();
    for (k, uk) in out.u.iter_mut().enumerate() {
        let lo = aset.lower_at(k);
        let hi = aset.upper_at(k);
        for (node, v) in uk.as_mut_slice().iter_mut().enumerate() {
            *v = v.max(lo.as_slice()[node]).min(hi.as_slice()[node]);
        }
    }
    out
}

/// Fixed-point gap of the projected-gradient map,
/// `||u - P(u - tau g)|| / tau`; zero exactly when the discrete variational
/// inequality holds for every admissible comparison control.
pub fn stationarity_residual(
    u: &ControlTrajectory,
    g: &ControlTrajectory,
    aset: &AdmissibleSet,
    tau_probe: f64,
    grid: &StripGrid,
) -> f64 {
    let mut trial = u.clone();
    trial.axpy(-tau_probe, g);
    let proj = project(&trial, aset);
    control_distance(u, &proj, grid) / tau_probe
}

/// Monitored surrogate of the control-space norm: the discrete
/// `H^1(0,T; L^2(Gamma))` norm plus the sup norm. Exceeding `R0` is reported,
/// never enforced.
pub fn xnorm_proxy(u: &ControlTrajectory, grid: &StripGrid) -> f64 {
    let l2 = inner_spacetime_surface(&u.u, &u.u, grid);
    let mut dt_part = 0.0;
    let dt = grid.dt();
    for k in 1..u.len() {
        let mut d = u.u[k].clone();
        for (x, y) in d.as_mut_slice().iter_mut().zip(u.u[k - 1].as_slice()) {
            *x = (*x - y) / dt;
        }
        dt_part += dt * inner_surface(&d, &d, grid);
    }
    (l2 + dt_part).sqrt() + u.max_abs()
}

/// One optimizer iteration record.
#[derive(Debug, Clone, Copy)]
pub struct OptimizeIter {
    pub iter: usize,
    pub cost: f64,
    pub residual: f64,
    pub tau: f64,
    pub rejections: usize,
    pub r0_exceeded: bool,
}

/// Optimizer outcome; `stationary` is false when the iteration or
/// line-search budget ran out first.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub u: ControlTrajectory,
    pub state: StateTrajectory,
    pub cost: f64,
    pub residual: f64,
    pub history: Vec<OptimizeIter>,
    pub stationary: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeConfig {
    pub tol_stat: f64,
    pub max_iters: usize,
    pub sigma: f64,
    pub tau_init: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { tol_stat: 1e-6, max_iters: 500, sigma: 1e-4, tau_init: 1.0, tau_min: 1e-8, tau_max: 1e4 }
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("forward solve failed during optimization: {0}")]
    State(#[from] StateError),
    #[error("adjoint solve failed during optimization: {0}")]
    Adjoint(#[from] AdjointError),
}

/// Projected gradient with Armijo backtracking on the (optionally adapted)
/// reduced cost. Accepts `u+ = P(u - tau g)` when
/// `J(u+) <= J(u) - sigma/tau ||u+ - u||^2`; `tau` doubles on acceptance and
/// halves on rejection.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    alpha: f64,
    u0: &ControlTrajectory,
    aset: &AdmissibleSet,
    w: &CostWeights,
    adaptation: Option<&ControlTrajectory>,
    init: &(BulkField, BulkField),
    grid: &StripGrid,
    cfg: &SolverConfig,
    opt: &OptimizeConfig,
) -> Result<OptimizeOutcome, OptimizeError> {
    let eval = |u: &ControlTrajectory| -> Result<(StateTrajectory, f64), OptimizeError> {
        let traj = solve_state(u, alpha, init, grid, cfg)?;
        let j = match adaptation {
            Some(r) => adapted_cost(&traj, u, w, r, grid),
            None => cost(&traj, u, w, grid),
        };
        Ok((traj, j))
    };

    let mut u = project(u0, aset);
    let (mut traj, mut j) = eval(&u)?;
    let mut tau = opt.tau_init;
    let mut history = Vec::new();

    for iter in 0..opt.max_iters {
        let adj = solve_adjoint(&traj, w, grid, cfg)?;
        let g = reduced_gradient(&adj, &u, w, adaptation, grid);
        let residual = stationarity_residual(&u, &g, aset, 1.0, grid);
        let r0_exceeded = xnorm_proxy(&u, grid) > aset.r0;
        history.push(OptimizeIter { iter, cost: j, residual, tau, rejections: 0, r0_exceeded });
        if residual <= opt.tol_stat {
            return Ok(OptimizeOutcome { u, state: traj, cost: j, residual, history, stationary: true });
        }

        let mut rejections = 0;
        loop {
            let mut trial = u.clone();
            trial.axpy(-tau, &g);
            let u_try = project(&trial, aset);
            let step = control_distance(&u_try, &u, grid);
            if step > 0.0 {
                let (traj_try, j_try) = eval(&u_try)?;
                if j_try <= j - opt.sigma / tau * step * step {
                    u = u_try;
                    traj = traj_try;
                    j = j_try;
                    tau = (2.0 * tau).min(opt.tau_max);
                    break;
                }
            }
            tau *= 0.5;
            rejections += 1;
            if tau < opt.tau_min {
                history.last_mut().unwrap().rejections = rejections;
                return Ok(OptimizeOutcome {
                    u,
                    state: traj,
                    cost: j,
                    residual,
                    history,
                    stationary: false,
                });
            }
        }
        history.last_mut().unwrap().rejections = rejections;
    }

    let adj = solve_adjoint(&traj, w, grid, cfg)?;
    let g = reduced_gradient(&adj, &u, w, adaptation, grid);
    let residual = stationarity_residual(&u, &g, aset, 1.0, grid);
    let stationary = residual <= opt.tol_stat;
    Ok(OptimizeOutcome { u, state: traj, cost: j, residual, history, stationary })
}

/// One row of a gradient verification run.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckRow {
    pub direction: usize,
    pub adjoint_value: f64,
    pub fd_value: f64,
    pub rel_error: f64,
}

/// Compare the adjoint-based directional derivative against central finite
/// differences of the reduced cost for seeded random directions.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    alpha: f64,
    u: &ControlTrajectory,
    w: &CostWeights,
    adaptation: Option<&ControlTrajectory>,
    init: &(BulkField, BulkField),
    grid: &StripGrid,
    cfg: &SolverConfig,
    n_directions: usize,
    seed: u64,
) -> Result<Vec<GradCheckRow>, OptimizeError> {
    let eval = |u: &ControlTrajectory| -> Result<f64, OptimizeError> {
        let traj = solve_state(u, alpha, init, grid, cfg)?;
        Ok(match adaptation {
            Some(r) => adapted_cost(&traj, u, w, r, grid),
            None => cost(&traj, u, w, grid),
        })
    };
    let traj = solve_state(u, alpha, init, grid, cfg)?;
    let adj = solve_adjoint(&traj, w, grid, cfg)?;
    let g = reduced_gradient(&adj, u, w, adaptation, grid);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-5 * u.max_abs().max(1.0);
    let mut rows = Vec::with_capacity(n_directions);
    for direction in 0..n_directions {
        let mut v = ControlTrajectory::zeros(grid);
        for vk in &mut v.u {
            for x in vk.as_mut_slice() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        let scale = v.norm_l2(grid);
        for vk in &mut v.u {
            for x in vk.as_mut_slice() {
                *x /= scale;
            }
        }

        let adjoint_value = inner_spacetime_surface(&g.u, &v.u, grid);
        let mut up = u.clone();
        up.axpy(eps, &v);
        let mut um = u.clone();
        um.axpy(-eps, &v);
        let fd_value = (eval(&up)? - eval(&um)?) / (2.0 * eps);
        let rel_error = (adjoint_value - fd_value).abs() / fd_value.abs().max(1e-14);
        rows.push(GradCheckRow { direction, adjoint_value, fd_value, rel_error });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::default_potentials;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid() -> StripGrid {
        StripGrid::new(8, 4, 1.0, 1.0, 8, 0.1).unwrap()
    }

    fn solver() -> SolverConfig {
        SolverConfig::new(default_potentials())
    }

    fn zero_init(g: &StripGrid) -> (BulkField, BulkField) {
        (BulkField::zeros(g), BulkField::zeros(g))
    }

    #[test]
    fn cost_vanishes_on_perfect_tracking() {
        let g = grid();
        let u = ControlTrajectory::zeros(&g);
        let traj = solve_state(&u, 0.5, &zero_init(&g), &g, &solver()).unwrap();
        let w = CostWeights::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, TargetSet::zeros(&g)).unwrap();
        assert_eq!(cost(&traj, &u, &w, &g), 0.0);
    }

    #[test]
    fn control_term_measures_sigma() {
        let g = grid();
        let u = ControlTrajectory::constant(&g, 1.0);
        let traj = solve_state(&ControlTrajectory::zeros(&g), 0.5, &zero_init(&g), &g, &solver())
            .unwrap();
        let beta6 = 0.7;
        let w = CostWeights::control_only(beta6, TargetSet::zeros(&g));
        // |Sigma| = 2 Lx T
        assert_relative_eq!(
            cost(&traj, &u, &w, &g),
            0.5 * beta6 * 2.0 * g.lx * g.t_final,
            max_relative = 1e-13
        );
    }

    #[test]
    fn unit_targets_give_closed_form_constants() {
        let g = grid();
        let u = ControlTrajectory::zeros(&g);
        let traj = solve_state(&u, 0.5, &zero_init(&g), &g, &solver()).unwrap();
        let mut t = TargetSet::zeros(&g);
        for f in &mut t.mu_q {
            *f = BulkField::constant(&g, 1.0);
        }
        for f in &mut t.rho_q {
            *f = BulkField::constant(&g, 1.0);
        }
        for f in &mut t.rho_sigma {
            *f = SurfaceField::constant(&g, 1.0);
        }
        t.rho_omega = BulkField::constant(&g, 1.0);
        t.rho_gamma = SurfaceField::constant(&g, 1.0);
        let w = CostWeights::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, t).unwrap();
        let q = g.lx * g.ly * g.t_final;
        let sigma = 2.0 * g.lx * g.t_final;
        let omega = g.lx * g.ly;
        let gamma = 2.0 * g.lx;
        assert_relative_eq!(
            cost(&traj, &u, &w, &g),
            0.5 * (q + q + sigma + omega + gamma),
            max_relative = 1e-12
        );
    }

    #[test]
    fn adapted_cost_reduces_and_adds_measures() {
        let g = grid();
        let u = ControlTrajectory::constant(&g, 0.25);
        let traj = solve_state(&u, 0.5, &zero_init(&g), &g, &solver()).unwrap();
        let w = CostWeights::control_only(1.0, TargetSet::zeros(&g));
        let j = cost(&traj, &u, &w, &g);
        assert_eq!(adapted_cost(&traj, &u, &w, &u, &g), j, "u = u_ref adds nothing");
        let mut shifted = u.clone();
        shifted.axpy(1.0, &ControlTrajectory::constant(&g, 1.0));
        // ||shift||^2 = |Sigma| = 2 Lx T
        assert_relative_eq!(
            adapted_cost(&traj, &shifted, &w, &u, &g),
            cost(&traj, &shifted, &w, &g) + 0.5 * 2.0 * g.lx * g.t_final,
            max_relative = 1e-12
        );
    }

    #[test]
    fn weights_validation() {
        let g = grid();
        assert!(matches!(
            CostWeights::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, TargetSet::zeros(&g)),
            Err(ControlError::AllBetasZero)
        ));
        assert!(CostWeights::new(-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, TargetSet::zeros(&g)).is_err());
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let g = grid();
        let aset = AdmissibleSet::constant(&g, -1.0, 1.0, 10.0).unwrap();
        let inside = ControlTrajectory::constant(&g, 0.5);
        assert_eq!(project(&inside, &aset), inside);
        let above = ControlTrajectory::constant(&g, 2.0);
        let p = project(&above, &aset);
        assert_eq!(p, ControlTrajectory::constant(&g, 1.0));
        assert_eq!(project(&p, &aset), p);
    }

    #[test]
    fn projection_matches_nodewise_clamp_oracle() {
        let g = grid();
        let aset = AdmissibleSet::constant(&g, -0.3, 0.8, 10.0).unwrap();
        let u = ControlTrajectory::from_fn(&g, |x, ring, t| {
            2.0 * (2.0 * PI * x).sin() + ring as f64 - 3.0 * t
        });
        let p = project(&u, &aset);
        for k in 0..u.len() {
            for (node, v) in u.u[k].as_slice().iter().enumerate() {
                assert_eq!(p.u[k].as_slice()[node], v.clamp(-0.3, 0.8));
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_nonexpansive(seed in 0u64..200) {
            use rand::prelude::*;
            let g = grid();
            let aset = AdmissibleSet::constant(&g, -0.5, 0.7, 10.0).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut a = ControlTrajectory::zeros(&g);
            let mut b = ControlTrajectory::zeros(&g);
            for k in 0..a.len() {
                for x in a.u[k].as_mut_slice() { *x = rng.random_range(-2.0..2.0); }
                for x in b.u[k].as_mut_slice() { *x = rng.random_range(-2.0..2.0); }
            }
            let d_before = control_distance(&a, &b, &g);
            let d_after = control_distance(&project(&a, &aset), &project(&b, &aset), &g);
            prop_assert!(d_after <= d_before + 1e-14);
        }
    }

    #[test]
    fn stationarity_residual_cases() {
        let g = grid();
        let aset = AdmissibleSet::constant(&g, -1.0, 1.0, 10.0).unwrap();
        let u = ControlTrajectory::constant(&g, 0.2);
        let zero_g = ControlTrajectory::zeros(&g);
        assert_eq!(stationarity_residual(&u, &zero_g, &aset, 1.0, &g), 0.0);
        // at the lower bound with positive gradient the VI holds
        let at_lower = ControlTrajectory::constant(&g, -1.0);
        let pos_g = ControlTrajectory::constant(&g, 0.7);
        assert_eq!(stationarity_residual(&at_lower, &pos_g, &aset, 1.0, &g), 0.0);
        // interior with nonzero gradient violates it
        assert!(stationarity_residual(&u, &pos_g, &aset, 1.0, &g) > 0.0);
    }

    #[test]
    fn zero_residual_implies_nodewise_vi() {
        use rand::prelude::*;
        let g = grid();
        let aset = AdmissibleSet::constant(&g, -0.6, 0.9, 10.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        // build a (u, g) pair that is exactly stationary: g points outward
        // only where u sits on the matching bound
        let mut u = ControlTrajectory::zeros(&g);
        let mut gvec = ControlTrajectory::zeros(&g);
        for k in 0..u.len() {
            for node in 0..u.u[k].as_slice().len() {
                match rng.random_range(0..3) {
                    0 => {
                        u.u[k].as_mut_slice()[node] = -0.6;
                        gvec.u[k].as_mut_slice()[node] = rng.random_range(0.0..1.0);
                    }
                    1 => {
                        u.u[k].as_mut_slice()[node] = 0.9;
                        gvec.u[k].as_mut_slice()[node] = rng.random_range(-1.0..0.0);
                    }
                    _ => {
                        u.u[k].as_mut_slice()[node] = rng.random_range(-0.59..0.89);
                        gvec.u[k].as_mut_slice()[node] = 0.0;
                    }
                }
            }
        }
        assert_eq!(stationarity_residual(&u, &gvec, &aset, 1.0, &g), 0.0);
        // and the VI holds against random admissible comparisons
        for _ in 0..20 {
            let mut v = ControlTrajectory::zeros(&g);
            for k in 0..v.len() {
                for x in v.u[k].as_mut_slice() {
                    *x = rng.random_range(-0.6..0.9);
                }
            }
            let mut vmu = v.clone();
            vmu.axpy(-1.0, &u);
            assert!(inner_spacetime_surface(&gvec.u, &vmu.u, &g) >= -1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_everywhere() {
        // componentwise check on a small tracking problem: perturb every
        // control degree of freedom separately
        let g = StripGrid::new(4, 2, 1.0, 1.0, 3, 0.06).unwrap();
        let cfg = solver();
        let alpha = 0.3;
        let mut targets = TargetSet::zeros(&g);
        for t in &mut targets.rho_q {
            *t = BulkField::constant(&g, 0.2);
        }
        for t in &mut targets.mu_q {
            *t = BulkField::constant(&g, 0.5);
        }
        let w = CostWeights::new(0.8, 1.0, 0.6, 0.4, 0.3, 0.05, targets).unwrap();
        let init = (
            BulkField::from_fn(&g, |x, _| 0.5 + 0.1 * (2.0 * PI * x).cos()),
            BulkField::from_fn(&g, |x, _| 0.2 * (2.0 * PI * x).sin()),
        );
        let u = ControlTrajectory::from_fn(&g, |x, ring, t| {
            0.3 * (2.0 * PI * x).cos() + 0.1 * ring as f64 - 0.2 * t
        });
        let traj = solve_state(&u, alpha, &init, &g, &cfg).unwrap();
        let adj = solve_adjoint(&traj, &w, &g, &cfg).unwrap();
        let grad = reduced_gradient(&adj, &u, &w, None, &g);
        let eps = 1e-6;
        for k in 0..=g.nt {
            for node in 0..g.n_surface() {
                let mut up = u.clone();
                up.u[k].as_mut_slice()[node] += eps;
                let mut um = u.clone();
                um.u[k].as_mut_slice()[node] -= eps;
                let jp = cost(&solve_state(&up, alpha, &init, &g, &cfg).unwrap(), &up, &w, &g);
                let jm = cost(&solve_state(&um, alpha, &init, &g, &cfg).unwrap(), &um, &w, &g);
                let fd = (jp - jm) / (2.0 * eps);
                // raw partial = time weight * dx * riesz gradient
                let adj_val = g.time_weight(k) * g.dx() * grad.u[k].as_slice()[node];
                assert!(
                    (adj_val - fd).abs() <= 2e-7 * (1.0 + fd.abs()),
                    "k={k} node={node}: adjoint {adj_val} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn random_direction_gradient_check_is_tight() {
        let g = grid();
        let cfg = solver();
        let mut targets = TargetSet::zeros(&g);
        for t in &mut targets.rho_sigma {
            *t = SurfaceField::from_fn(&g, |x, _| 0.3 * (2.0 * PI * x).cos());
        }
        let w = CostWeights::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.02, targets).unwrap();
        let init = (BulkField::constant(&g, 0.4), BulkField::zeros(&g));
        let u = ControlTrajectory::constant(&g, 0.1);
        let rows =
            gradient_check(0.2, &u, &w, None, &init, &g, &cfg, 6, 1234).unwrap();
        for row in rows {
            assert!(row.rel_error <= 1e-5, "{row:?}");
        }
    }

    #[test]
    fn adapted_gradient_check_is_tight() {
        let g = grid();
        let cfg = solver();
        let w = CostWeights::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.01, TargetSet::zeros(&g)).unwrap();
        let init = (BulkField::constant(&g, 0.3), BulkField::zeros(&g));
        let u = ControlTrajectory::from_fn(&g, |x, _, _| 0.2 * (2.0 * PI * x).sin());
        let u_ref = ControlTrajectory::constant(&g, 0.05);
        let rows =
            gradient_check(0.1, &u, &w, Some(&u_ref), &init, &g, &cfg, 5, 99).unwrap();
        for row in rows {
            assert!(row.rel_error <= 1e-5, "{row:?}");
        }
    }

    #[test]
    fn adapted_reduces_to_plain_at_reference() {
        let g = grid();
        let cfg = solver();
        let w = CostWeights::control_only(0.5, TargetSet::zeros(&g));
        let init = (BulkField::constant(&g, 0.2), BulkField::zeros(&g));
        let u = ControlTrajectory::constant(&g, 0.1);
        let traj = solve_state(&u, 0.5, &init, &g, &cfg).unwrap();
        let adj = solve_adjoint(&traj, &w, &g, &cfg).unwrap();
        let plain = reduced_gradient(&adj, &u, &w, None, &g);
        let adapted = reduced_gradient(&adj, &u, &w, Some(&u), &g);
        for k in 0..=g.nt {
            assert_eq!(plain.u[k].as_slice(), adapted.u[k].as_slice());
            // control-only cost has a vanishing adjoint: g = beta6 u
            for (gv, uv) in plain.u[k].as_slice().iter().zip(u.u[k].as_slice()) {
                assert_eq!(*gv, 0.5 * uv);
            }
        }
    }

    #[test]
    fn residual_zero_iff_nodewise_vi_enumeration_holds() {
        use rand::prelude::*;
        let g = grid();
        let (lo, hi) = (-0.6, 0.9);
        let aset = AdmissibleSet::constant(&g, lo, hi, 10.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let mut u = ControlTrajectory::zeros(&g);
            let mut gvec = ControlTrajectory::zeros(&g);
            for k in 0..u.len() {
                for node in 0..u.u[k].as_slice().len() {
                    u.u[k].as_mut_slice()[node] = rng.random_range(lo..hi);
                    gvec.u[k].as_mut_slice()[node] = if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    };
                }
            }
            let residual = stationarity_residual(&u, &gvec, &aset, 1.0, &g);
            // brute force: per node the inequality g (v - u) >= 0 for the
            // candidates v in {lo, hi, u}
            let mut all_hold = true;
            for k in 0..u.len() {
                for node in 0..u.u[k].as_slice().len() {
                    let (uv, gv) = (u.u[k].as_slice()[node], gvec.u[k].as_slice()[node]);
                    for v in [lo, hi, uv] {
                        if gv * (v - uv) < 0.0 {
                            all_hold = false;
                        }
                    }
                }
            }
            assert_eq!(residual == 0.0, all_hold);
        }
    }

    #[test]
    fn optimizer_returns_stationary_start_immediately() {
        let g = grid();
        let cfg = solver();
        let aset = AdmissibleSet::constant(&g, -1.0, 1.0, 10.0).unwrap();
        let w = CostWeights::control_only(1.0, TargetSet::zeros(&g));
        let u0 = ControlTrajectory::zeros(&g);
        let out = optimize(
            0.5,
            &u0,
            &aset,
            &w,
            None,
            &zero_init(&g),
            &g,
            &cfg,
            &OptimizeConfig::default(),
        )
        .unwrap();
        assert!(out.stationary);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.u, u0);
    }

    #[test]
    fn pure_control_cost_drives_control_to_zero() {
        let g = grid();
        let cfg = solver();
        let aset = AdmissibleSet::constant(&g, -1.0, 1.0, 10.0).unwrap();
        let w = CostWeights::control_only(0.5, TargetSet::zeros(&g));
        let u0 = ControlTrajectory::from_fn(&g, |x, ring, _| {
            0.6 * (2.0 * PI * x).cos() + 0.2 * ring as f64
        });
        let out = optimize(
            0.25,
            &u0,
            &aset,
            &w,
            None,
            &zero_init(&g),
            &g,
            &cfg,
            &OptimizeConfig { tol_stat: 1e-10, ..Default::default() },
        )
        .unwrap();
        assert!(out.stationary);
        assert!(out.u.norm_l2(&g) <= 1e-8, "norm {}", out.u.norm_l2(&g));
        // Armijo guarantees a nonincreasing cost history
        for w in out.history.windows(2) {
            assert!(w[1].cost <= w[0].cost + 1e-15);
        }
    }
}
