//! Shared problem builders for the criterion benches.

use chbc_core::{
    default_potentials, BulkField, ControlTrajectory, CostWeights, SolverConfig, StripGrid,
    SurfaceField, TargetSet,
};
use std::f64::consts::PI;

/// Desk-scale tracking setup exercised by every bench.
pub struct BenchProblem {
    pub grid: StripGrid,
    pub cfg: SolverConfig,
    pub weights: CostWeights,
    pub control: ControlTrajectory,
    pub init: (BulkField, BulkField),
}

pub fn bench_problem(nx: usize, ny: usize, nt: usize) -> BenchProblem {
    let grid = StripGrid::new(nx, ny, 1.0, 1.0, nt, 0.2).unwrap();
    let cfg = SolverConfig::new(default_potentials());
    let mut targets = TargetSet::zeros(&grid);
    for t in &mut targets.rho_sigma {
        *t = SurfaceField::from_fn(&grid, |x, _| 0.3 * (2.0 * PI * x / grid.lx).cos());
    }
    let weights = CostWeights::new(0.0, 0.5, 1.0, 0.0, 0.0, 0.05, targets).unwrap();
    let control =
        ControlTrajectory::from_fn(&grid, |x, _, t| 0.4 * (2.0 * PI * x).cos() * (0.2 + t));
    let init = (
        BulkField::from_fn(&grid, |x, y| 0.5 + 0.1 * (2.0 * PI * x).cos() * (PI * y).cos()),
        BulkField::from_fn(&grid, |x, _| 0.2 * (2.0 * PI * x).sin()),
    );
    BenchProblem { grid, cfg, weights, control, init }
}
