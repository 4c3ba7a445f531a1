//! Nonlinearities of the phase-separation model: the concave weight `g`, the
//! smooth perturbations `pi`, `pi_Gamma`, the logarithmic toolkit
//! `h, h', h''` with the scaling `phi(alpha) = alpha^p`, and the interval
//! indicator's subdifferential.
//!
//! The graph `phi(alpha) * h'` approximates the subdifferential of the
//! indicator of `[-1, 1]` as `alpha` tends to zero: it vanishes pointwise on
//! the open interval and blows up at the endpoints. Multipliers extracted
//! from the obstacle solver live on the subdifferential itself and are
//! classified per node by [`subdifferential_check`].

use crate::grid::{inner_bulk, inner_surface, BulkField, StripGrid, SurfaceField};
use thiserror::Error;

/// Half-width of the safety margin around the interval endpoints. `h'` and
/// `h''` are total on `[-1 + EPS_SAFE, 1 - EPS_SAFE]` and refuse evaluation
/// outside; the Newton safeguard in the state solver keeps iterates inside.
pub const EPS_SAFE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("{what} evaluated outside its domain at y = {value}")]
    DomainViolation { what: &'static str, value: f64 },
    #[error("phi requires alpha in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("potential validation failed: {0}")]
    InvalidPotential(String),
}

/// `h(y) = (1-y) ln(1-y) + (1+y) ln(1+y)` on `(-1, 1)`, continued by
/// `2 ln 2` at the endpoints.
pub fn h(y: f64) -> Result<f64, PhysicsError> {
    if !(-1.0..=1.0).contains(&y) {
        return Err(PhysicsError::DomainViolation { what: "h", value: y });
    }
    if y == 1.0 || y == -1.0 {
        return Ok(2.0 * std::f64::consts::LN_2);
    }
    // (1 -+ y) ln(1 -+ y) -> 0 as y -> +-1, so the clamp is only against 0*inf
    let a = 1.0 - y;
    let b = 1.0 + y;
    Ok(a * a.ln() + b * b.ln())
}

/// `h'(y) = ln((1+y)/(1-y))`, defined on `[-1 + EPS_SAFE, 1 - EPS_SAFE]`.
pub fn h_prime(y: f64) -> Result<f64, PhysicsError> {
    if y.abs() > 1.0 - EPS_SAFE {
        return Err(PhysicsError::DomainViolation { what: "h'", value: y });
    }
    Ok(((1.0 + y) / (1.0 - y)).ln())
}

/// `h''(y) = 2 / (1 - y^2)`, defined on `[-1 + EPS_SAFE, 1 - EPS_SAFE]`.
pub fn h_double_prime(y: f64) -> Result<f64, PhysicsError> {
    if y.abs() > 1.0 - EPS_SAFE {
        return Err(PhysicsError::DomainViolation { what: "h''", value: y });
    }
    Ok(2.0 / (1.0 - y * y))
}

/// Polynomial in one variable, dense coefficients `c[0] + c[1] y + ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "polynomial needs at least one coefficient");
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() == 1 {
            return Polynomial::new(vec![0.0]);
        }
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }

    /// Antiderivative vanishing at 0; exact, so energy diagnostics are not
    /// limited by quadrature of the primitive.
    pub fn antiderivative(&self) -> Polynomial {
        let mut c = vec![0.0];
        c.extend(self.coeffs.iter().enumerate().map(|(k, v)| v / (k + 1) as f64));
        Polynomial::new(c)
    }
}

/// The model's smooth nonlinearities and the exponent of `phi(alpha) = alpha^p`.
///
/// Construction validates the admissibility requirements on `[-1, 1]` by
/// dense sampling (1001 points): `g` nonnegative and concave, everything
/// finite.
#[derive(Debug, Clone)]
pub struct PotentialSet {
    g: Polynomial,
    g_d1: Polynomial,
    g_d2: Polynomial,
    g_d3: Polynomial,
    pi: Polynomial,
    pi_d1: Polynomial,
    pi_hat: Polynomial,
    pi_gamma: Polynomial,
    pi_gamma_d1: Polynomial,
    pi_gamma_hat: Polynomial,
    p_exponent: f64,
}

impl PotentialSet {
    pub fn new(
        g: Polynomial,
        pi: Polynomial,
        pi_gamma: Polynomial,
        p_exponent: f64,
    ) -> Result<Self, PhysicsError> {
        if !(p_exponent.is_finite() && p_exponent > 0.0) {
            return Err(PhysicsError::InvalidPotential(format!(
                "p_exponent must be positive, got {p_exponent}"
            )));
        }
        let g_d1 = g.derivative();
        let g_d2 = g_d1.derivative();
        for k in 0..=1000 {
            let y = -1.0 + 2.0 * k as f64 / 1000.0;
            let gv = g.eval(y);
            if !gv.is_finite() || gv < 0.0 {
                return Err(PhysicsError::InvalidPotential(format!(
                    "(A2): g must be nonnegative on [-1,1], g({y}) = {gv}"
                )));
            }
            if g_d2.eval(y) > 0.0 {
                return Err(PhysicsError::InvalidPotential(format!(
                    "(A2): g must be concave on [-1,1], g''({y}) = {}",
                    g_d2.eval(y)
                )));
            }
            for (name, p) in [("pi", &pi), ("pi_Gamma", &pi_gamma)] {
                if !p.eval(y).is_finite() {
                    return Err(PhysicsError::InvalidPotential(format!(
                        "(A2): {name}({y}) is not finite"
                    )));
                }
            }
        }
        Ok(Self {
            g_d3: g_d2.derivative(),
            g_d2,
            g_d1,
            g,
            pi_d1: pi.derivative(),
            pi_hat: pi.antiderivative(),
            pi,
            pi_gamma_d1: pi_gamma.derivative(),
            pi_gamma_hat: pi_gamma.antiderivative(),
            pi_gamma,
            p_exponent,
        })
    }

    pub fn g(&self, y: f64) -> f64 {
        self.g.eval(y)
    }

    pub fn g_prime(&self, y: f64) -> f64 {
        self.g_d1.eval(y)
    }

    pub fn g_double_prime(&self, y: f64) -> f64 {
        self.g_d2.eval(y)
    }

    pub fn g_triple_prime(&self, y: f64) -> f64 {
        self.g_d3.eval(y)
    }

    pub fn pi(&self, y: f64) -> f64 {
        self.pi.eval(y)
    }

    pub fn pi_prime(&self, y: f64) -> f64 {
        self.pi_d1.eval(y)
    }

    /// `int_0^y pi`, exact.
    pub fn pi_hat(&self, y: f64) -> f64 {
        self.pi_hat.eval(y)
    }

    pub fn pi_gamma(&self, y: f64) -> f64 {
        self.pi_gamma.eval(y)
    }

    pub fn pi_gamma_prime(&self, y: f64) -> f64 {
        self.pi_gamma_d1.eval(y)
    }

    pub fn pi_gamma_hat(&self, y: f64) -> f64 {
        self.pi_gamma_hat.eval(y)
    }

    pub fn p_exponent(&self) -> f64 {
        self.p_exponent
    }

    /// `phi(alpha) = alpha^p`; strictly positive, increasing, rejects
    /// `alpha <= 0` (the obstacle solver never calls it).
    pub fn phi(&self, alpha: f64) -> Result<f64, PhysicsError> {
        if !(alpha.is_finite() && alpha > 0.0 && alpha <= 1.0) {
            return Err(PhysicsError::BadAlpha(alpha));
        }
        Ok(alpha.powf(self.p_exponent))
    }
}

/// Defaults: `g = 1 - y^2/2`, `pi = pi_Gamma = -y`, `p = 1`. Nonnegative
/// (minimum 1/2), concave (`g'' = -1`), and the resulting well is the
/// classical double obstacle.
pub fn default_potentials() -> PotentialSet {
    PotentialSet::new(
        Polynomial::new(vec![1.0, 0.0, -0.5]),
        Polynomial::new(vec![0.0, -1.0]),
        Polynomial::new(vec![0.0, -1.0]),
        1.0,
    )
    .expect("default potentials are admissible")
}

/// Constraint regime of one node of an obstacle problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    LowerActive,
    Inactive,
    UpperActive,
}

/// A multiplier value together with its classified regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleMultiplier {
    pub value: f64,
    pub regime: Regime,
}

/// Structured report of a failed pointwise subdifferential test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubdifferentialViolation {
    pub rho: f64,
    pub xi: f64,
    pub reason: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    OutOfInterval,
    NonzeroInside,
    WrongSignAtBound,
}

/// Classify `(rho, xi)` against the subdifferential of the indicator of
/// `[-1, 1]`: zero strictly inside, one-signed rays at the endpoints.
pub fn subdifferential_check(
    rho: f64,
    xi: f64,
    tol: f64,
) -> Result<ObstacleMultiplier, SubdifferentialViolation> {
    debug_assert!(tol >= 0.0);
    if rho.abs() > 1.0 + tol {
        return Err(SubdifferentialViolation { rho, xi, reason: ViolationKind::OutOfInterval });
    }
    if rho >= 1.0 - tol {
        if xi >= -tol {
            Ok(ObstacleMultiplier { value: xi, regime: Regime::UpperActive })
        } else {
            Err(SubdifferentialViolation { rho, xi, reason: ViolationKind::WrongSignAtBound })
        }
    } else if rho <= -1.0 + tol {
        if xi <= tol {
            Ok(ObstacleMultiplier { value: xi, regime: Regime::LowerActive })
        } else {
            Err(SubdifferentialViolation { rho, xi, reason: ViolationKind::WrongSignAtBound })
        }
    } else if xi.abs() <= tol {
        Ok(ObstacleMultiplier { value: xi, regime: Regime::Inactive })
    } else {
        Err(SubdifferentialViolation { rho, xi, reason: ViolationKind::NonzeroInside })
    }
}

/// Total free energy of a state snapshot: indicator + smooth well
/// `- mu g(rho)` plus gradient energy in the bulk, and the surface analogue
/// with the control work term `- u_Gamma rho_Gamma`. Returns `+inf` when the
/// order parameter leaves `[-1, 1]` anywhere.
pub fn free_energy(
    rho: &BulkField,
    rho_gamma: &SurfaceField,
    mu: &BulkField,
    u_gamma: &SurfaceField,
    pot: &PotentialSet,
    grid: &StripGrid,
) -> f64 {
    if rho.max_abs() > 1.0 || rho_gamma.max_abs() > 1.0 {
        return f64::INFINITY;
    }
    let bulk_density = BulkField::from_values(
        grid,
        rho.as_slice()
            .iter()
            .zip(mu.as_slice())
            .map(|(&r, &m)| pot.pi_hat(r) - m * pot.g(r))
            .collect(),
    );
    let one = BulkField::constant(grid, 1.0);
    let mut total = inner_bulk(&bulk_density, &one, grid);

    // gradient energy by forward differences; x periodic, y one-sided with
    // trapezoid row weights on the x-part
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx(), grid.dy());
    for j in 0..=ny {
        let wy = if j == 0 || j == ny { 0.5 } else { 1.0 };
        for i in 0..nx {
            let gx = (rho.get((i + 1) % nx, j) - rho.get(i, j)) / dx;
            total += 0.5 * gx * gx * dx * dy * wy;
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            let gy = (rho.get(i, j + 1) - rho.get(i, j)) / dy;
            total += 0.5 * gy * gy * dx * dy;
        }
    }

    let surf_density = SurfaceField::from_values(
        grid,
        rho_gamma
            .as_slice()
            .iter()
            .zip(u_gamma.as_slice())
            .map(|(&r, &u)| pot.pi_gamma_hat(r) - u * r)
            .collect(),
    );
    let ones = SurfaceField::constant(grid, 1.0);
    total += inner_surface(&surf_density, &ones, grid);
    for ring in 0..2 {
        for i in 0..nx {
            let gt = (rho_gamma.get(ring, (i + 1) % nx) - rho_gamma.get(ring, i)) / dx;
            total += 0.5 * gt * gt * dx;
        }
    }
    total
}
