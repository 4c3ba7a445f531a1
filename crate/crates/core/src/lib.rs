// stencil and assembly code reads better with explicit index loops
#![allow(clippy::needless_range_loop)]

//! Solvers for a boundary-controlled phase-separation system on a periodic
//! strip: a nonstandard Cahn-Hilliard model with a dynamic boundary
//! condition, double-obstacle constraints on the order parameter, and an
//! adjoint-based projected-gradient method for the boundary control. The
//! obstacle inclusion is reached through a deep-quench continuation of
//! logarithmic regularizations; the continuation driver certifies bounds,
//! energy dissipation, complementarity, and variational-inequality
//! stationarity along the way.

pub mod adjoint;
pub mod band;
pub mod control;
pub mod grid;
pub mod physics;
pub mod quench;
pub mod state;

pub use adjoint::{solve_adjoint, AdjointTrajectory, Slackness};
pub use control::{
    adapted_cost, cost, gradient_check, optimize, project, reduced_gradient,
    stationarity_residual, AdmissibleSet, ControlTrajectory, CostWeights, OptimizeConfig,
    OptimizeOutcome, TargetSet,
};
pub use grid::{BulkField, StripGrid, SurfaceField};
pub use physics::{default_potentials, subdifferential_check, PotentialSet, Regime};
pub use quench::{run_quench, QuenchReport, QuenchSchedule};
pub use state::{energy_ledger, solve_state, SolverConfig, StateTrajectory};
