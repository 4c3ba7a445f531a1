//! Discrete domain: a 2D strip, periodic in x, with two flat boundary rings.
//!
//! The bulk is the rectangle `[0, Lx) x [0, Ly]` discretized into `Nx`
//! periodic columns and `Ny + 1` rows. Rows `j = 0` and `j = Ny` are the two
//! components of the boundary; fields that carry a surface trace share those
//! rows with the bulk storage, so the trace identity holds by construction
//! rather than by a penalty.
//!
//! All differential operators are fixed finite-difference stencils: a 5-point
//! bulk Laplacian (optionally with a mirror ghost row for homogeneous Neumann
//! data), a periodic 3-point second difference along each ring, and a
//! one-sided second-order outward normal derivative. Quadrature is trapezoid
//! in y, uniform in x, trapezoid in time.

use thiserror::Error;

/// Errors raised when constructing a [`StripGrid`].
#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid requires Nx >= 4 (got {0})")]
    TooFewColumns(usize),
    #[error("grid requires Ny >= 2 (got {0})")]
    TooFewRows(usize),
    #[error("grid requires Nt >= 1 (got {0})")]
    TooFewSteps(usize),
    #[error("grid extent {name} must be finite and positive (got {value})")]
    BadExtent { name: &'static str, value: f64 },
}

/// The discrete strip: `Nx` periodic columns, `Ny + 1` rows, `Nt` time steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripGrid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub nt: usize,
    pub t_final: f64,
}

impl StripGrid {
    pub fn new(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        nt: usize,
        t_final: f64,
    ) -> Result<Self, GridError> {
        if nx < 4 {
            return Err(GridError::TooFewColumns(nx));
        }
        if ny < 2 {
            return Err(GridError::TooFewRows(ny));
        }
        if nt < 1 {
            return Err(GridError::TooFewSteps(nt));
        }
        for (name, value) in [("Lx", lx), ("Ly", ly), ("T", t_final)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GridError::BadExtent { name, value });
            }
        }
        Ok(Self { nx, ny, lx, ly, nt, t_final })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    /// Number of bulk nodes, `Nx * (Ny + 1)`, boundary rows included.
    #[inline]
    pub fn n_bulk(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    /// Number of surface nodes over both rings.
    #[inline]
    pub fn n_surface(&self) -> usize {
        2 * self.nx
    }

    /// Flat index of bulk node `(i, j)`, row-major with `i` fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j <= self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy()
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Is flat bulk index `n` on one of the two boundary rings?
    #[inline]
    pub fn is_ring(&self, n: usize) -> bool {
        n < self.nx || n >= self.ny * self.nx
    }

    /// Bulk quadrature weight of node `n`: `dx*dy`, halved on the rings
    /// (trapezoid in y).
    #[inline]
    pub fn bulk_weight(&self, n: usize) -> f64 {
        let w = self.dx() * self.dy();
        if self.is_ring(n) {
            0.5 * w
        } else {
            w
        }
    }

    /// Trapezoid weight of time level `k` in `[0, T]`.
    #[inline]
    pub fn time_weight(&self, k: usize) -> f64 {
        debug_assert!(k <= self.nt);
        if k == 0 || k == self.nt {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }
}

/// Nodal scalar field on the strip, boundary rows included.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkField {
    nx: usize,
    rows: usize,
    values: Vec<f64>,
}

impl BulkField {
    pub fn zeros(grid: &StripGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &StripGrid, c: f64) -> Self {
        Self { nx: grid.nx, rows: grid.ny + 1, values: vec![c; grid.n_bulk()] }
    }

    /// Evaluate `f(x, y)` at every node.
    pub fn from_fn(grid: &StripGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                out.values[grid.idx(i, j)] = f(grid.x(i), grid.y(j));
            }
        }
        out
    }

    pub fn from_values(grid: &StripGrid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.n_bulk(), "bulk field shape mismatch");
        Self { nx: grid.nx, rows: grid.ny + 1, values }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[j * self.nx + i] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Copy of the two boundary rows as a surface field. The rows themselves
    /// are the surface degrees of freedom; this is a read-out, not a
    /// projection.
    pub fn boundary_rings(&self) -> SurfaceField {
        let nx = self.nx;
        let top = (self.rows - 1) * nx;
        let mut values = Vec::with_capacity(2 * nx);
        values.extend_from_slice(&self.values[..nx]);
        values.extend_from_slice(&self.values[top..top + nx]);
        SurfaceField { nx, values }
    }

    /// Write a surface field into the two boundary rows.
    pub fn set_boundary_rings(&mut self, rings: &SurfaceField) {
        assert_eq!(rings.nx, self.nx, "surface field shape mismatch");
        let nx = self.nx;
        let top = (self.rows - 1) * nx;
        self.values[..nx].copy_from_slice(&rings.values[..nx]);
        self.values[top..top + nx].copy_from_slice(&rings.values[nx..]);
    }
}

/// Scalar field on the two boundary rings; ring 0 is the bottom row `j = 0`,
/// ring 1 the top row `j = Ny`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceField {
    nx: usize,
    values: Vec<f64>,
}

impl SurfaceField {
    pub fn zeros(grid: &StripGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &StripGrid, c: f64) -> Self {
        Self { nx: grid.nx, values: vec![c; grid.n_surface()] }
    }

    /// Evaluate `f(x, ring)` on both rings (`ring` is 0 or 1).
    pub fn from_fn(grid: &StripGrid, f: impl Fn(f64, usize) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for ring in 0..2 {
            for i in 0..grid.nx {
                out.values[ring * grid.nx + i] = f(grid.x(i), ring);
            }
        }
        out
    }

    pub fn from_values(grid: &StripGrid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.n_surface(), "surface field shape mismatch");
        Self { nx: grid.nx, values }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn get(&self, ring: usize, i: usize) -> f64 {
        self.values[ring * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, ring: usize, i: usize, v: f64) {
        self.values[ring * self.nx + i] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// 5-point Laplacian on interior rows, periodic in x; boundary rows are
/// returned as zero (their dynamics live in the surface equations).
pub fn laplacian_bulk(f: &BulkField, grid: &StripGrid) -> BulkField {
    assert_eq!(f.nx, grid.nx, "bulk field shape mismatch");
    let (nx, ny) = (grid.nx, grid.ny);
    let (idx2, idy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let mut out = BulkField::zeros(grid);
    for j in 1..ny {
        for i in 0..nx {
            let (il, ir) = ((i + nx - 1) % nx, (i + 1) % nx);
            let c = f.get(i, j);
            let lap = (f.get(ir, j) - 2.0 * c + f.get(il, j)) * idx2
                + (f.get(i, j + 1) - 2.0 * c + f.get(i, j - 1)) * idy2;
            out.set(i, j, lap);
        }
    }
    out
}

/// 5-point Laplacian with homogeneous-Neumann closure: a mirror ghost row at
/// `j = 0` and `j = Ny` makes the operator defined on all rows. Used for
/// fields with no-flux data (the chemical potential and its adjoint).
pub fn laplacian_bulk_neumann(f: &BulkField, grid: &StripGrid) -> BulkField {
    assert_eq!(f.nx, grid.nx, "bulk field shape mismatch");
    let (nx, ny) = (grid.nx, grid.ny);
    let (idx2, idy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let mut out = laplacian_bulk(f, grid);
    for i in 0..nx {
        let (il, ir) = ((i + nx - 1) % nx, (i + 1) % nx);
        // mirror ghost: f(-1) = f(1), f(Ny+1) = f(Ny-1)
        let c0 = f.get(i, 0);
        let lap0 = (f.get(ir, 0) - 2.0 * c0 + f.get(il, 0)) * idx2
            + 2.0 * (f.get(i, 1) - c0) * idy2;
        out.set(i, 0, lap0);
        let cn = f.get(i, ny);
        let lapn = (f.get(ir, ny) - 2.0 * cn + f.get(il, ny)) * idx2
            + 2.0 * (f.get(i, ny - 1) - cn) * idy2;
        out.set(i, ny, lapn);
    }
    out
}

/// Laplace-Beltrami operator on the rings: periodic 3-point second
/// difference in x, coefficient `1/dx^2`.
pub fn laplace_beltrami(f: &SurfaceField, grid: &StripGrid) -> SurfaceField {
    assert_eq!(f.nx, grid.nx, "surface field shape mismatch");
    let nx = grid.nx;
    let idx2 = 1.0 / (grid.dx() * grid.dx());
    let mut out = SurfaceField::zeros(grid);
    for ring in 0..2 {
        for i in 0..nx {
            let (il, ir) = ((i + nx - 1) % nx, (i + 1) % nx);
            let v = (f.get(ring, ir) - 2.0 * f.get(ring, i) + f.get(ring, il)) * idx2;
            out.set(ring, i, v);
        }
    }
    out
}

/// Outward normal derivative on both rings by a one-sided second-order
/// difference: `(3 f_ring - 4 f_1 + f_2) / (2 dy)` where `f_1`, `f_2` are the
/// first and second rows inward. Exact on fields affine in y, and exact at
/// the ring for quadratics in y.
pub fn normal_derivative(f: &BulkField, grid: &StripGrid) -> SurfaceField {
    assert_eq!(f.nx, grid.nx, "bulk field shape mismatch");
    assert!(grid.ny >= 2, "normal derivative requires Ny >= 2");
    let (nx, ny) = (grid.nx, grid.ny);
    let c = 1.0 / (2.0 * grid.dy());
    let mut out = SurfaceField::zeros(grid);
    for i in 0..nx {
        let bot = (3.0 * f.get(i, 0) - 4.0 * f.get(i, 1) + f.get(i, 2)) * c;
        out.set(0, i, bot);
        let top = (3.0 * f.get(i, ny) - 4.0 * f.get(i, ny - 1) + f.get(i, ny - 2)) * c;
        out.set(1, i, top);
    }
    out
}

/// Discrete `L^2(Omega)` inner product: trapezoid in y, uniform in x.
pub fn inner_bulk(f: &BulkField, g: &BulkField, grid: &StripGrid) -> f64 {
    assert_eq!(f.nx, g.nx, "bulk field shape mismatch");
    assert_eq!(f.nx, grid.nx, "bulk field shape mismatch");
    let mut acc = 0.0;
    for (n, (a, b)) in f.values.iter().zip(&g.values).enumerate() {
        acc += grid.bulk_weight(n) * a * b;
    }
    acc
}

/// Discrete `L^2(Gamma)` inner product over both rings, weight `dx` per node.
pub fn inner_surface(f: &SurfaceField, g: &SurfaceField, grid: &StripGrid) -> f64 {
    assert_eq!(f.nx, g.nx, "surface field shape mismatch");
    assert_eq!(f.nx, grid.nx, "surface field shape mismatch");
    let dx = grid.dx();
    f.values.iter().zip(&g.values).map(|(a, b)| dx * a * b).sum()
}

pub fn norm_bulk(f: &BulkField, grid: &StripGrid) -> f64 {
    inner_bulk(f, f, grid).sqrt()
}

pub fn norm_surface(f: &SurfaceField, grid: &StripGrid) -> f64 {
    inner_surface(f, f, grid).sqrt()
}

/// Discrete `L^2(Q)` inner product of two snapshot sequences `k = 0..Nt`,
/// composite trapezoid in time.
pub fn inner_spacetime_bulk(f: &[BulkField], g: &[BulkField], grid: &StripGrid) -> f64 {
    assert_eq!(f.len(), grid.nt + 1, "trajectory length mismatch");
    assert_eq!(g.len(), grid.nt + 1, "trajectory length mismatch");
    (0..=grid.nt)
        .map(|k| grid.time_weight(k) * inner_bulk(&f[k], &g[k], grid))
        .sum()
}

/// Discrete `L^2(Sigma)` inner product of two snapshot sequences.
pub fn inner_spacetime_surface(f: &[SurfaceField], g: &[SurfaceField], grid: &StripGrid) -> f64 {
    assert_eq!(f.len(), grid.nt + 1, "trajectory length mismatch");
    assert_eq!(g.len(), grid.nt + 1, "trajectory length mismatch");
    (0..=grid.nt)
        .map(|k| grid.time_weight(k) * inner_surface(&f[k], &g[k], grid))
        .sum()
}
