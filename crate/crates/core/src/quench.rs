//! Deep-quench continuation: solve the (adapted) control problems along a
//! geometric schedule of regularization strengths with warm starts, then
//! certify the limit structure against the obstacle solve.
//!
//! The reference control is not known a priori, so the driver runs two
//! passes: pass one minimizes the plain cost at the largest member to
//! produce an incumbent, pass two re-solves every member for the adapted
//! functional centered at that incumbent, warm-starting each optimization
//! from its predecessor. After the schedule, the obstacle problem is solved
//! with the final control and the member-to-member gaps, multiplier
//! convergence functionals, complementarity slackness, and concentration
//! values are reported.

use crate::adjoint::{complementarity_products, solve_adjoint, AdjointError, AdjointTrajectory};
use crate::control::{
    adapted_cost, control_distance, cost, optimize, AdmissibleSet, ControlTrajectory, CostWeights,
    OptimizeConfig, OptimizeError,
};
use crate::grid::{inner_bulk, BulkField, StripGrid};
use crate::state::{solve_state, SolverConfig, StateError, StateTrajectory};
use thiserror::Error;

/// Geometric regularization schedule `alpha_n = alpha0 * ratio^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuenchSchedule {
    pub alpha0: f64,
    pub ratio: f64,
    pub count: usize,
}

#[derive(Debug, Error)]
pub enum QuenchError {
    #[error("schedule needs alpha0 in (0,1], ratio in (0,1) and count >= 2 (got alpha0={alpha0}, ratio={ratio}, count={count})")]
    BadSchedule { alpha0: f64, ratio: f64, count: usize },
    #[error("member {n} (alpha = {alpha}): {source}")]
    Member {
        n: usize,
        alpha: f64,
        #[source]
        source: OptimizeError,
    },
    #[error("obstacle reference solve: {0}")]
    Obstacle(#[from] StateError),
    #[error("member adjoint: {0}")]
    Adjoint(#[from] AdjointError),
}

impl QuenchSchedule {
    pub fn new(alpha0: f64, ratio: f64, count: usize) -> Result<Self, QuenchError> {
        if !(alpha0 > 0.0 && alpha0 <= 1.0 && ratio > 0.0 && ratio < 1.0 && count >= 2) {
            return Err(QuenchError::BadSchedule { alpha0, ratio, count });
        }
        Ok(Self { alpha0, ratio, count })
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.count).map(|n| self.alpha0 * self.ratio.powi(n as i32)).collect()
    }
}

/// Per-member scalars of a continuation run.
#[derive(Debug, Clone)]
pub struct MemberRecord {
    pub n: usize,
    pub alpha: f64,
    pub phi_alpha: f64,
    /// Plain cost of the member optimum.
    pub cost: f64,
    /// Adapted cost (centered at the incumbent) of the member optimum.
    pub adapted_cost: f64,
    pub residual: f64,
    pub iterations: usize,
    pub stationary: bool,
    /// `||u_n - u_{n-1}||` over Sigma; absent for the first member.
    pub control_gap: Option<f64>,
    /// `||rho_n - rho_{n-1}||` over Q; absent for the first member.
    pub state_gap: Option<f64>,
    pub s_bulk: f64,
    pub s_surf: f64,
    pub id_residual: f64,
    /// Concentration functional of the member's adjoint pair.
    pub concentration: f64,
    /// `concentration / phi(alpha_n)`; bounded along the schedule when the
    /// adjoint family stays bounded.
    pub concentration_ratio: f64,
    pub max_abs_rho: f64,
    pub min_mu: f64,
    /// Monitored control-space norm surrogate.
    pub xnorm: f64,
    /// Retained control, for downstream diagnostics.
    pub control: ControlTrajectory,
}

/// Weak-limit diagnostics of the multiplier family against the obstacle
/// multiplier.
#[derive(Debug, Clone)]
pub struct XiLimitCheck {
    /// Largest violation of `int_Q xi (rho - z) >= 0` over the probe values
    /// `z in {-1, -1/2, 0, 1/2, 1}` (0 when none).
    pub max_violation: f64,
    /// `|int_Q (xi_N - xi_0) w|` for the five fixed smooth test fields.
    pub weak_gaps: [f64; 5],
}

/// Outcome of the continuation plus the obstacle reference solve.
#[derive(Debug, Clone)]
pub struct QuenchReport {
    pub members: Vec<MemberRecord>,
    /// Incumbent produced by the plain-cost pass.
    pub incumbent_cost: f64,
    /// `||rho^{alpha_N} - rho^0||` over Q between the last member and the
    /// obstacle solve under the same control.
    pub final_state_gap: f64,
    /// Plain cost of the obstacle state under the final control.
    pub obstacle_cost: f64,
    pub xi_limit: XiLimitCheck,
    /// Inversions of the control-gap and state-gap sequences (soft check:
    /// at most one expected each).
    pub control_gap_inversions: usize,
    pub state_gap_inversions: usize,
    /// Uniform-bound monitoring across members: max over n of max|rho|,
    /// max|xi|, and the largest adjoint sup-norm.
    pub max_abs_rho_across: f64,
    pub max_abs_xi_across: f64,
    pub max_abs_q_across: f64,
    pub final_control: ControlTrajectory,
    pub final_state: StateTrajectory,
    pub final_adjoint: AdjointTrajectory,
    pub obstacle_state: StateTrajectory,
}

/// Fixed space-time test pair for the concentration functional; vanishes at
/// `t = 0` and is trace-compatible by construction.
pub fn standard_concentration_field(grid: &StripGrid) -> Vec<BulkField> {
    use std::f64::consts::PI;
    (0..=grid.nt)
        .map(|k| {
            let t = grid.time(k);
            BulkField::from_fn(grid, |x, y| {
                (PI * t / grid.t_final).sin()
                    * (1.0 + 0.5 * (2.0 * PI * x / grid.lx).cos())
                    * (0.5 + y * (grid.ly - y) / (grid.ly * grid.ly))
            })
        })
        .collect()
}

/// Concentration functional computed two ways: directly through `lambda`,
/// and through the identity `lambda (1 - rho^2) = 2 phi(alpha) q`.
#[derive(Debug, Clone, Copy)]
pub struct ConcentrationCheck {
    pub via_lambda: f64,
    pub via_identity: f64,
}

/// `|int_Q lambda (1-rho^2) phi_test| + |int_Sigma lambda_G (1-rho_G^2) phi_test|`
/// for a test field vanishing at `t = 0`.
pub fn concentration_check(
    adj: &AdjointTrajectory,
    traj: &StateTrajectory,
    test_field: &[BulkField],
    grid: &StripGrid,
    cfg: &SolverConfig,
) -> ConcentrationCheck {
    assert_eq!(test_field.len(), grid.nt + 1, "test field trajectory length mismatch");
    assert_eq!(
        test_field[0].max_abs(),
        0.0,
        "concentration test field must vanish at t = 0"
    );
    let phi = cfg.pot.phi(adj.alpha).expect("adjoint stores a valid alpha");
    let n = grid.n_bulk();
    let dx = grid.dx();
    let (mut bulk_l, mut surf_l) = (0.0, 0.0);
    let (mut bulk_q, mut surf_q) = (0.0, 0.0);
    for k in 0..=grid.nt {
        let tw = grid.time_weight(k);
        let lam = adj.lambda[k].as_slice();
        let q = adj.q[k].as_slice();
        let rho = traj.rho[k].as_slice();
        let tf = test_field[k].as_slice();
        for r in 0..n {
            let omr2 = 1.0 - rho[r] * rho[r];
            if grid.is_ring(r) {
                surf_l += tw * dx * lam[r] * omr2 * tf[r];
                surf_q += tw * dx * 2.0 * phi * q[r] * tf[r];
            } else {
                bulk_l += tw * grid.bulk_weight(r) * lam[r] * omr2 * tf[r];
                bulk_q += tw * grid.bulk_weight(r) * 2.0 * phi * q[r] * tf[r];
            }
        }
    }
    ConcentrationCheck {
        via_lambda: bulk_l.abs() + surf_l.abs(),
        via_identity: bulk_q.abs() + surf_q.abs(),
    }
}

/// Fixed smooth test fields for the weak multiplier gaps.
fn weak_test_fields(grid: &StripGrid) -> Vec<Vec<BulkField>> {
    use std::f64::consts::PI;
    let make = |f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<BulkField> {
        (0..=grid.nt)
            .map(|k| {
                let t = grid.time(k) / grid.t_final;
                BulkField::from_fn(grid, |x, y| f(x / grid.lx, y / grid.ly, t))
            })
            .collect()
    };
    vec![
        make(&|_, _, _| 1.0),
        make(&|x, _, _| (2.0 * PI * x).cos()),
        make(&|x, _, t| (2.0 * PI * x).sin() * t),
        make(&|_, y, _| y),
        make(&|x, _, t| (4.0 * PI * x).cos() * (1.0 - t)),
    ]
}

/// Obstacle-limit functionals for a smallest-member/obstacle pair: the
/// variational-inequality probes `int_Q xi (rho - z) >= 0` and the weak
/// gaps between the scaled logarithmic multiplier and the extracted one.
pub fn xi_limit_check(
    member: &StateTrajectory,
    obstacle: &StateTrajectory,
    grid: &StripGrid,
) -> XiLimitCheck {
    let mut max_violation = 0.0f64;
    for z in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let mut pairing = 0.0;
        for k in 0..=grid.nt {
            let tw = grid.time_weight(k);
            let shifted = BulkField::from_values(
                grid,
                member.rho[k].as_slice().iter().map(|r| r - z).collect(),
            );
            pairing += tw * inner_bulk(&member.xi[k], &shifted, grid);
        }
        max_violation = max_violation.max(-pairing);
    }
    let mut weak_gaps = [0.0f64; 5];
    for (slot, w) in weak_test_fields(grid).iter().enumerate() {
        let mut gap = 0.0;
        for k in 0..=grid.nt {
            let tw = grid.time_weight(k);
            let d = BulkField::from_values(
                grid,
                member.xi[k]
                    .as_slice()
                    .iter()
                    .zip(obstacle.xi[k].as_slice())
                    .map(|(a, b)| a - b)
                    .collect(),
            );
            gap += tw * inner_bulk(&d, &w[k], grid);
        }
        weak_gaps[slot] = gap.abs();
    }
    XiLimitCheck { max_violation, weak_gaps }
}

fn count_inversions(gaps: &[f64]) -> usize {
    gaps.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Run the two-pass continuation.
#[allow(clippy::too_many_arguments)]
pub fn run_quench(
    schedule: &QuenchSchedule,
    aset: &AdmissibleSet,
    w: &CostWeights,
    u0: &ControlTrajectory,
    init: &(BulkField, BulkField),
    grid: &StripGrid,
    cfg: &SolverConfig,
    opt: &OptimizeConfig,
) -> Result<QuenchReport, QuenchError> {
    let alphas = schedule.alphas();

    // pass 1: incumbent from the plain cost at the largest member
    let incumbent = optimize(alphas[0], u0, aset, w, None, init, grid, cfg, opt)
        .map_err(|source| QuenchError::Member { n: 0, alpha: alphas[0], source })?;
    let u_ref = incumbent.u.clone();

    // pass 2: adapted continuation around the incumbent
    let test_field = standard_concentration_field(grid);
    let mut members: Vec<MemberRecord> = Vec::with_capacity(alphas.len());
    let mut u_prev = u_ref.clone();
    let mut rho_prev: Option<Vec<BulkField>> = None;
    let mut max_abs_rho_across = 0.0f64;
    let mut max_abs_xi_across = 0.0f64;
    let mut max_abs_q_across = 0.0f64;
    let mut final_state: Option<StateTrajectory> = None;
    let mut final_adjoint: Option<AdjointTrajectory> = None;

    for (n, &alpha) in alphas.iter().enumerate() {
        let out = optimize(alpha, &u_prev, aset, w, Some(&u_ref), init, grid, cfg, opt)
            .map_err(|source| QuenchError::Member { n, alpha, source })?;
        let adj = solve_adjoint(&out.state, w, grid, cfg)?;
        let slack = complementarity_products(&adj, &out.state, grid, cfg);
        let conc = concentration_check(&adj, &out.state, &test_field, grid, cfg);
        let phi = cfg.pot.phi(alpha).expect("schedule alphas are valid");

        let control_gap = if n == 0 { None } else { Some(control_distance(&out.u, &u_prev, grid)) };
        let state_gap = rho_prev.as_ref().map(|prev| {
            let mut acc = 0.0;
            for k in 0..=grid.nt {
                let tw = grid.time_weight(k);
                let d = BulkField::from_values(
                    grid,
                    out.state.rho[k]
                        .as_slice()
                        .iter()
                        .zip(prev[k].as_slice())
                        .map(|(a, b)| a - b)
                        .collect(),
                );
                acc += tw * inner_bulk(&d, &d, grid);
            }
            acc.sqrt()
        });

        let max_xi = out.state.xi.iter().map(BulkField::max_abs).fold(0.0f64, f64::max);
        max_abs_rho_across = max_abs_rho_across.max(out.state.max_abs_rho());
        max_abs_xi_across = max_abs_xi_across.max(max_xi);
        max_abs_q_across = max_abs_q_across.max(adj.max_abs_q());

        members.push(MemberRecord {
            n,
            alpha,
            phi_alpha: phi,
            cost: cost(&out.state, &out.u, w, grid),
            adapted_cost: adapted_cost(&out.state, &out.u, w, &u_ref, grid),
            residual: out.residual,
            iterations: out.history.len(),
            stationary: out.stationary,
            control_gap,
            state_gap,
            s_bulk: slack.s_bulk,
            s_surf: slack.s_surf,
            id_residual: slack.id_residual,
            concentration: conc.via_lambda,
            concentration_ratio: conc.via_lambda / phi,
            max_abs_rho: out.state.max_abs_rho(),
            min_mu: out.state.min_mu(),
            xnorm: crate::control::xnorm_proxy(&out.u, grid),
            control: out.u.clone(),
        });
        u_prev = out.u.clone();
        rho_prev = Some(out.state.rho.clone());
        final_state = Some(out.state);
        final_adjoint = Some(adj);
    }

    let final_state = final_state.expect("count >= 2");
    let final_adjoint = final_adjoint.expect("count >= 2");
    let final_control = u_prev;

    // obstacle reference under the final control
    let obstacle_state = solve_state(&final_control, 0.0, init, grid, cfg)?;
    let mut gap = 0.0;
    for k in 0..=grid.nt {
        let tw = grid.time_weight(k);
        let d = BulkField::from_values(
            grid,
            final_state.rho[k]
                .as_slice()
                .iter()
                .zip(obstacle_state.rho[k].as_slice())
                .map(|(a, b)| a - b)
                .collect(),
        );
        gap += tw * inner_bulk(&d, &d, grid);
    }
    let final_state_gap = gap.sqrt();
    let xi_limit = xi_limit_check(&final_state, &obstacle_state, grid);
    let obstacle_cost = cost(&obstacle_state, &final_control, w, grid);

    let control_gaps: Vec<f64> = members.iter().filter_map(|m| m.control_gap).collect();
    let state_gaps: Vec<f64> = members.iter().filter_map(|m| m.state_gap).collect();

    Ok(QuenchReport {
        incumbent_cost: incumbent.cost,
        final_state_gap,
        obstacle_cost,
        xi_limit,
        control_gap_inversions: count_inversions(&control_gaps),
        state_gap_inversions: count_inversions(&state_gaps),
        max_abs_rho_across,
        max_abs_xi_across,
        max_abs_q_across,
        final_control,
        final_state,
        final_adjoint,
        obstacle_state,
        members,
    })
}
