//! Exact discrete adjoint of the time-discretized forward scheme.
//!
//! The backward sweep applies the transpose of each forward substep's
//! linearization in reverse order: at every level the chemical-potential
//! step is transposed first (feeding `p`), then the order-parameter step is
//! differentiated at its converged Newton point and transposed (feeding `q`
//! and its surface trace). Tracking terms are injected with the same
//! space-time quadrature the cost uses, so the resulting surface multiplier
//! is the exact Riesz representative of the reduced derivative: the
//! directional derivative of the reduced cost equals the surface inner
//! product of `q_Gamma[k-1] + beta6 u[k]` with the direction. That exactness
//! is the module's defining property and is enforced by finite-difference
//! checks.
//!
//! Stored fields follow the backward-Euler convention: the multiplier
//! produced by the transpose solve at level `k` is stored at index `k - 1`,
//! while index `Nt` holds the terminal data (`p` zero, `q` the weighted
//! terminal tracking misfits). The companion multiplier is
//! `lambda[k] = phi(alpha) h''(rho[k]) q[k]` nodewise; as the
//! regularization is driven to zero it plays the role of the obstacle
//! multiplier's adjoint counterpart, and its pairing with `q` is a sum of
//! squares, hence nonnegative by construction.

use crate::control::CostWeights;
use crate::grid::{BulkField, StripGrid, SurfaceField};
use crate::physics::{h_double_prime, PhysicsError};
use crate::state::{mu_system_matrix, rho_system_matrix, SolverConfig, StateTrajectory};
use crate::band::SingularMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdjointError {
    #[error("adjoint requires a regularized trajectory (alpha > 0); the obstacle limit is handled by the continuation driver")]
    AlphaZero,
    #[error("adjoint requires a uniform-dt trajectory, but step {step} used {halvings} halvings")]
    NonUniformDt { step: usize, halvings: usize },
    #[error(transparent)]
    Singular(#[from] SingularMatrix),
    #[error(transparent)]
    Domain(#[from] PhysicsError),
}

/// Backward multipliers for one forward trajectory.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub alpha: f64,
    /// Multiplier of the chemical-potential equation; `p[Nt] = 0`.
    pub p: Vec<BulkField>,
    /// Multiplier of the order-parameter equation; ring rows are the surface
    /// component. `q[Nt]` holds the terminal injections.
    pub q: Vec<BulkField>,
    /// `phi(alpha) h''(rho) q`, same layout as `q`.
    pub lambda: Vec<BulkField>,
}

impl AdjointTrajectory {
    pub fn q_gamma(&self, k: usize) -> SurfaceField {
        self.q[k].boundary_rings()
    }

    pub fn lambda_gamma(&self, k: usize) -> SurfaceField {
        self.lambda[k].boundary_rings()
    }

    pub fn max_abs_q(&self) -> f64 {
        self.q.iter().map(BulkField::max_abs).fold(0.0, f64::max)
    }
}

/// Solve the adjoint system backward along a regularized trajectory.
pub fn solve_adjoint(
    traj: &StateTrajectory,
    w: &CostWeights,
    grid: &StripGrid,
    cfg: &SolverConfig,
) -> Result<AdjointTrajectory, AdjointError> {
    if traj.alpha <= 0.0 {
        return Err(AdjointError::AlphaZero);
    }
    if let Some((step, s)) =
        traj.stats.iter().enumerate().find(|(_, s)| s.halvings > 0)
    {
        return Err(AdjointError::NonUniformDt { step, halvings: s.halvings });
    }
    let pot = &cfg.pot;
    let phi = pot.phi(traj.alpha)?;
    let nt = grid.nt;
    let n = grid.n_bulk();
    let nx = grid.nx;
    let inv_dt = 1.0 / grid.dt();
    let dx = grid.dx();
    let top_start = grid.ny * nx;
    let ring_index = |r: usize| -> Option<(usize, usize)> {
        if r < nx {
            Some((0, r))
        } else if r >= top_start {
            Some((1, r - top_start))
        } else {
            None
        }
    };

    // raw partial of the cost with respect to the mu snapshot at level k
    let mu_bar_direct = |k: usize| -> Vec<f64> {
        let mut v = vec![0.0; n];
        if w.beta1 > 0.0 {
            let tw = grid.time_weight(k);
            let target = &w.targets.mu_q[k];
            for r in 0..n {
                v[r] = tw
                    * w.beta1
                    * grid.bulk_weight(r)
                    * (traj.mu[k].as_slice()[r] - target.as_slice()[r]);
            }
        }
        v
    };
    // raw partial with respect to the rho snapshot, terminal terms included
    let rho_bar_direct = |k: usize| -> Vec<f64> {
        let mut v = vec![0.0; n];
        let tw = grid.time_weight(k);
        for r in 0..n {
            let mut acc = 0.0;
            if w.beta2 > 0.0 {
                acc += tw
                    * w.beta2
                    * grid.bulk_weight(r)
                    * (traj.rho[k].as_slice()[r] - w.targets.rho_q[k].as_slice()[r]);
            }
            if let Some((ring, i)) = ring_index(r) {
                if w.beta3 > 0.0 {
                    acc += tw
                        * w.beta3
                        * dx
                        * (traj.rho[k].as_slice()[r] - w.targets.rho_sigma[k].get(ring, i));
                }
                if k == nt && w.beta5 > 0.0 {
                    acc += w.beta5
                        * dx
                        * (traj.rho[k].as_slice()[r] - w.targets.rho_gamma.get(ring, i));
                }
            }
            // the discrete Omega quadrature covers the ring rows at half
            // weight, so the terminal bulk misfit is injected on all rows
            if k == nt && w.beta4 > 0.0 {
                acc += w.beta4
                    * grid.bulk_weight(r)
                    * (traj.rho[k].as_slice()[r] - w.targets.rho_omega.as_slice()[r]);
            }
            v[r] = acc;
        }
        v
    };

    let mut p_store = vec![BulkField::zeros(grid); nt + 1];
    let mut q_store = vec![BulkField::zeros(grid); nt + 1];

    // terminal data: q[Nt] carries the endpoint tracking misfits as fields
    {
        let q_t = q_store[nt].as_mut_slice();
        for r in 0..n {
            match ring_index(r) {
                Some((ring, i)) => {
                    q_t[r] = w.beta5 * (traj.rho[nt].as_slice()[r] - w.targets.rho_gamma.get(ring, i));
                }
                None => {
                    q_t[r] = w.beta4 * (traj.rho[nt].as_slice()[r] - w.targets.rho_omega.as_slice()[r]);
                }
            }
        }
    }

    let mut mu_bar = mu_bar_direct(nt);
    let mut rho_bar = rho_bar_direct(nt);

    for k in (1..=nt).rev() {
        let tw = grid.time_weight(k);
        let rho_k = traj.rho[k].as_slice();
        let rho_prev = traj.rho[k - 1].as_slice();
        let mu_k = traj.mu[k].as_slice();
        let mu_prev = traj.mu[k - 1].as_slice();

        // transpose of the mu step at level k
        let mut reaction = vec![0.0; n];
        for r in 0..n {
            reaction[r] = (1.0 + 2.0 * pot.g(rho_k[r])) * inv_dt
                + pot.g_prime(rho_k[r]) * (rho_k[r] - rho_prev[r]) * inv_dt;
        }
        let p_raw = {
            let bt = mu_system_matrix(grid, &reaction).transpose();
            bt.lu()?.solve(&mu_bar)
        };
        {
            let dst = p_store[k - 1].as_mut_slice();
            for r in 0..n {
                dst[r] = p_raw[r] / (tw * grid.bulk_weight(r));
            }
        }

        let mut mu_bar_next = mu_bar_direct(k - 1);
        for r in 0..n {
            // mass matrix acting on the previous potential
            mu_bar_next[r] += (1.0 + 2.0 * pot.g(rho_k[r])) * inv_dt * p_raw[r];
            // coefficient sensitivities of the mu step feed the rho multiplier
            let gp = pot.g_prime(rho_k[r]);
            let gpp = pot.g_double_prime(rho_k[r]);
            rho_bar[r] -= p_raw[r]
                * ((2.0 * gp * inv_dt) * (mu_k[r] - mu_prev[r])
                    + (gpp * (rho_k[r] - rho_prev[r]) + gp) * inv_dt * mu_k[r]);
        }

        // transpose of the rho step at level k, linearized at the converged point
        let mut hdd = vec![0.0; n];
        for r in 0..n {
            hdd[r] = phi * h_double_prime(rho_k[r])?;
        }
        let q_raw = {
            let jt = rho_system_matrix(grid, inv_dt, &hdd, None).transpose();
            jt.lu()?.solve(&rho_bar)
        };
        {
            let dst = q_store[k - 1].as_mut_slice();
            for r in 0..n {
                let w_node = if ring_index(r).is_some() { dx } else { grid.bulk_weight(r) };
                dst[r] = q_raw[r] / (tw * w_node);
            }
        }

        // hand the accumulators to level k - 1
        rho_bar = rho_bar_direct(k - 1);
        for r in 0..n {
            rho_bar[r] += p_raw[r] * pot.g_prime(rho_k[r]) * mu_k[r] * inv_dt;
            match ring_index(r) {
                Some(_) => {
                    rho_bar[r] += q_raw[r] * (inv_dt - pot.pi_gamma_prime(rho_prev[r]));
                }
                None => {
                    rho_bar[r] += q_raw[r]
                        * (inv_dt + mu_prev[r] * pot.g_double_prime(rho_prev[r])
                            - pot.pi_prime(rho_prev[r]));
                    mu_bar_next[r] += q_raw[r] * pot.g_prime(rho_prev[r]);
                }
            }
        }
        mu_bar = mu_bar_next;
    }

    let mut lambda = Vec::with_capacity(nt + 1);
    for k in 0..=nt {
        let mut l = BulkField::zeros(grid);
        for r in 0..n {
            l.as_mut_slice()[r] =
                phi * h_double_prime(traj.rho[k].as_slice()[r])? * q_store[k].as_slice()[r];
        }
        lambda.push(l);
    }

    Ok(AdjointTrajectory { alpha: traj.alpha, p: p_store, q: q_store, lambda })
}

/// Complementarity and identity diagnostics of an adjoint/state pair.
#[derive(Debug, Clone, Copy)]
pub struct Slackness {
    /// `int_Q lambda q`, a weighted sum of squares, nonnegative exactly.
    pub s_bulk: f64,
    /// `int_Sigma lambda_Gamma q_Gamma`, likewise nonnegative.
    pub s_surf: f64,
    /// `max |lambda (1 - rho^2) - 2 phi(alpha) q|` over all nodes and levels;
    /// zero up to round-off because `h''(y) (1 - y^2) = 2`.
    pub id_residual: f64,
}

pub fn complementarity_products(
    adj: &AdjointTrajectory,
    traj: &StateTrajectory,
    grid: &StripGrid,
    cfg: &SolverConfig,
) -> Slackness {
    let phi = cfg.pot.phi(adj.alpha).expect("adjoint stores a valid alpha");
    let n = grid.n_bulk();
    let dx = grid.dx();
    let mut s_bulk = 0.0;
    let mut s_surf = 0.0;
    let mut id_residual = 0.0f64;
    for k in 0..adj.q.len() {
        let tw = grid.time_weight(k);
        let q = adj.q[k].as_slice();
        let l = adj.lambda[k].as_slice();
        let rho = traj.rho[k].as_slice();
        for r in 0..n {
            let prod = l[r] * q[r];
            if grid.is_ring(r) {
                s_surf += tw * dx * prod;
            } else {
                s_bulk += tw * grid.bulk_weight(r) * prod;
            }
            id_residual = id_residual.max((l[r] * (1.0 - rho[r] * rho[r]) - 2.0 * phi * q[r]).abs());
        }
    }
    Slackness { s_bulk, s_surf, id_residual }
}
