//! Plain-text run configuration: dotted section keys, `#` comments, strict
//! key checking (no silent defaults for misspellings), and a resolved copy
//! with every default materialized that parses back to the same config.

use crate::output::read_field_file;
use chbc_core::control::{AdmissibleSet, ControlTrajectory, CostWeights, TargetSet};
use chbc_core::physics::{PhysicsError, Polynomial, PotentialSet, EPS_SAFE};
use chbc_core::{
    BulkField, OptimizeConfig, QuenchSchedule, SolverConfig, StripGrid, SurfaceField,
};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key '{key}' at line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("duplicate key '{key}' at line {line}")]
    DuplicateKey { key: String, line: usize },
    #[error("missing required keys: {0}")]
    MissingKeys(String),
    #[error("invalid value for '{key}': {msg}")]
    BadValue { key: String, msg: String },
    #[error("validation failed: {0}")]
    Validation(String),
}

/// Analytic or tabulated scalar-field specification.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Constant(f64),
    /// `base + amp * cos(2 pi kx x / Lx)`, uniform in y and t.
    Mode { base: f64, amp: f64, kx: usize },
    /// Flat binary field file in the emitter's format.
    File(PathBuf),
}

impl FieldSpec {
    fn parse(key: &str, s: &str) -> Result<Self, ConfigError> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let bad = |msg: &str| ConfigError::BadValue { key: key.into(), msg: msg.into() };
        match toks.as_slice() {
            ["constant", v] => Ok(FieldSpec::Constant(
                v.parse().map_err(|_| bad("constant wants one real"))?,
            )),
            ["mode", b, a, k] => Ok(FieldSpec::Mode {
                base: b.parse().map_err(|_| bad("mode wants 'mode <base> <amp> <kx>'"))?,
                amp: a.parse().map_err(|_| bad("mode wants 'mode <base> <amp> <kx>'"))?,
                kx: k.parse().map_err(|_| bad("mode wants 'mode <base> <amp> <kx>'"))?,
            }),
            ["file", p] => Ok(FieldSpec::File(PathBuf::from(p))),
            _ => Err(bad("expected 'constant <v>', 'mode <base> <amp> <kx>' or 'file <path>'")),
        }
    }

    pub fn eval_bulk(&self, grid: &StripGrid) -> Result<BulkField, ConfigError> {
        use std::f64::consts::PI;
        match self {
            FieldSpec::Constant(c) => Ok(BulkField::constant(grid, *c)),
            FieldSpec::Mode { base, amp, kx } => Ok(BulkField::from_fn(grid, |x, _| {
                base + amp * (2.0 * PI * *kx as f64 * x / grid.lx).cos()
            })),
            FieldSpec::File(path) => {
                let (rows, cols, values) = read_field_file(path).map_err(|e| ConfigError::Io {
                    path: path.clone(),
                    source: e,
                })?;
                if rows != grid.ny + 1 || cols != grid.nx {
                    return Err(ConfigError::Validation(format!(
                        "field file {} has shape {rows}x{cols}, grid wants {}x{}",
                        path.display(),
                        grid.ny + 1,
                        grid.nx
                    )));
                }
                Ok(BulkField::from_values(grid, values))
            }
        }
    }

    pub fn eval_surface(&self, grid: &StripGrid) -> Result<SurfaceField, ConfigError> {
        use std::f64::consts::PI;
        match self {
            FieldSpec::Constant(c) => Ok(SurfaceField::constant(grid, *c)),
            FieldSpec::Mode { base, amp, kx } => Ok(SurfaceField::from_fn(grid, |x, _| {
                base + amp * (2.0 * PI * *kx as f64 * x / grid.lx).cos()
            })),
            FieldSpec::File(path) => {
                let (rows, cols, values) = read_field_file(path).map_err(|e| ConfigError::Io {
                    path: path.clone(),
                    source: e,
                })?;
                if rows != 2 || cols != grid.nx {
                    return Err(ConfigError::Validation(format!(
                        "field file {} has shape {rows}x{cols}, surface wants 2x{}",
                        path.display(),
                        grid.nx
                    )));
                }
                Ok(SurfaceField::from_values(grid, values))
            }
        }
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSpec::Constant(c) => write!(f, "constant {c}"),
            FieldSpec::Mode { base, amp, kx } => write!(f, "mode {base} {amp} {kx}"),
            FieldSpec::File(p) => write!(f, "file {}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialChoice {
    Default,
    Custom { g: Vec<f64>, pi: Vec<f64>, pi_gamma: Vec<f64> },
}

/// Fully parsed and validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub nt: usize,
    pub t_final: f64,
    pub potentials: PotentialChoice,
    pub p_exponent: f64,
    pub betas: [f64; 6],
    pub target_mu_q: FieldSpec,
    pub target_rho_q: FieldSpec,
    pub target_rho_sigma: FieldSpec,
    pub target_rho_omega: FieldSpec,
    pub target_rho_gamma: FieldSpec,
    pub init_mu0: FieldSpec,
    pub init_rho0: FieldSpec,
    pub u_lower: f64,
    pub u_upper: f64,
    pub r0: f64,
    pub u0: FieldSpec,
    pub tol_newton: f64,
    pub tol_stat: f64,
    pub max_newton: usize,
    pub max_pdas: usize,
    pub dt_halving_budget: usize,
    pub max_opt_iters: usize,
    pub alpha0: f64,
    pub ratio: f64,
    pub count: usize,
    pub run_dir: PathBuf,
    pub emit_fields: bool,
    pub seed: u64,
}

const REQUIRED_KEYS: &[&str] = &["grid.Nx", "grid.Ny", "grid.Lx", "grid.Ly", "grid.Nt", "grid.T"];

const KNOWN_KEYS: &[&str] = &[
    "grid.Nx",
    "grid.Ny",
    "grid.Lx",
    "grid.Ly",
    "grid.Nt",
    "grid.T",
    "potentials.preset",
    "potentials.p_exponent",
    "potentials.g_coeffs",
    "potentials.pi_coeffs",
    "potentials.pi_gamma_coeffs",
    "weights.beta1",
    "weights.beta2",
    "weights.beta3",
    "weights.beta4",
    "weights.beta5",
    "weights.beta6",
    "targets.mu_Q",
    "targets.rho_Q",
    "targets.rho_Sigma",
    "targets.rho_Omega",
    "targets.rho_Gamma",
    "init.mu0",
    "init.rho0",
    "control.u_lower",
    "control.u_upper",
    "control.R0",
    "control.u0",
    "solver.tol_newton",
    "solver.tol_stat",
    "solver.max_newton",
    "solver.max_pdas",
    "solver.dt_halving_budget",
    "solver.max_opt_iters",
    "quench.alpha0",
    "quench.ratio",
    "quench.count",
    "io.run_dir",
    "io.emit_fields",
    "io.seed",
];

struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    fn parse_as<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                msg: format!("cannot parse '{v}'"),
            }),
        }
    }
}

fn parse_lines(text: &str) -> Result<RawConfig, ConfigError> {
    let mut entries = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError::Parse {
            line,
            msg: format!("expected 'key = value', got '{content}'"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Parse { line, msg: "empty key or value".into() });
        }
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { key, line });
        }
        if entries.insert(key.clone(), (value, line)).is_some() {
            return Err(ConfigError::DuplicateKey { key, line });
        }
    }
    Ok(RawConfig { entries })
}

fn parse_coeffs(key: &str, s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                msg: format!("cannot parse coefficient '{}'", t.trim()),
            })
        })
        .collect()
}

fn fmt_coeffs(c: &[f64]) -> String {
    c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut raw = parse_lines(text)?;

    let missing: Vec<&str> = REQUIRED_KEYS
        .iter()
        .filter(|k| !raw.entries.contains_key(**k))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::MissingKeys(missing.join(", ")));
    }

    let nx: usize = raw.parse_as("grid.Nx", 0)?;
    let ny: usize = raw.parse_as("grid.Ny", 0)?;
    let lx: f64 = raw.parse_as("grid.Lx", 0.0)?;
    let ly: f64 = raw.parse_as("grid.Ly", 0.0)?;
    let nt: usize = raw.parse_as("grid.Nt", 0)?;
    let t_final: f64 = raw.parse_as("grid.T", 0.0)?;

    let preset = raw.take("potentials.preset").unwrap_or_else(|| "default".into());
    let g_coeffs = raw.take("potentials.g_coeffs");
    let pi_coeffs = raw.take("potentials.pi_coeffs");
    let pi_gamma_coeffs = raw.take("potentials.pi_gamma_coeffs");
    let potentials = match preset.as_str() {
        "default" => {
            if g_coeffs.is_some() || pi_coeffs.is_some() || pi_gamma_coeffs.is_some() {
                return Err(ConfigError::Validation(
                    "potentials.*_coeffs require potentials.preset = custom".into(),
                ));
            }
            PotentialChoice::Default
        }
        "custom" => PotentialChoice::Custom {
            g: parse_coeffs(
                "potentials.g_coeffs",
                &g_coeffs.ok_or(ConfigError::MissingKeys("potentials.g_coeffs".into()))?,
            )?,
            pi: parse_coeffs(
                "potentials.pi_coeffs",
                &pi_coeffs.ok_or(ConfigError::MissingKeys("potentials.pi_coeffs".into()))?,
            )?,
            pi_gamma: parse_coeffs(
                "potentials.pi_gamma_coeffs",
                &pi_gamma_coeffs
                    .ok_or(ConfigError::MissingKeys("potentials.pi_gamma_coeffs".into()))?,
            )?,
        },
        other => {
            return Err(ConfigError::BadValue {
                key: "potentials.preset".into(),
                msg: format!("expected 'default' or 'custom', got '{other}'"),
            })
        }
    };

    let field = |raw: &mut RawConfig, key: &str, default: FieldSpec| -> Result<FieldSpec, ConfigError> {
        match raw.take(key) {
            None => Ok(default),
            Some(v) => FieldSpec::parse(key, &v),
        }
    };

    let cfg = RunConfig {
        nx,
        ny,
        lx,
        ly,
        nt,
        t_final,
        potentials,
        p_exponent: raw.parse_as("potentials.p_exponent", 1.0)?,
        betas: [
            raw.parse_as("weights.beta1", 0.0)?,
            raw.parse_as("weights.beta2", 0.0)?,
            raw.parse_as("weights.beta3", 0.0)?,
            raw.parse_as("weights.beta4", 0.0)?,
            raw.parse_as("weights.beta5", 0.0)?,
            raw.parse_as("weights.beta6", 1.0)?,
        ],
        target_mu_q: field(&mut raw, "targets.mu_Q", FieldSpec::Constant(0.0))?,
        target_rho_q: field(&mut raw, "targets.rho_Q", FieldSpec::Constant(0.0))?,
        target_rho_sigma: field(&mut raw, "targets.rho_Sigma", FieldSpec::Constant(0.0))?,
        target_rho_omega: field(&mut raw, "targets.rho_Omega", FieldSpec::Constant(0.0))?,
        target_rho_gamma: field(&mut raw, "targets.rho_Gamma", FieldSpec::Constant(0.0))?,
        init_mu0: field(&mut raw, "init.mu0", FieldSpec::Constant(0.0))?,
        init_rho0: field(&mut raw, "init.rho0", FieldSpec::Constant(0.0))?,
        u_lower: raw.parse_as("control.u_lower", -1.0)?,
        u_upper: raw.parse_as("control.u_upper", 1.0)?,
        r0: raw.parse_as("control.R0", 10.0)?,
        u0: field(&mut raw, "control.u0", FieldSpec::Constant(0.0))?,
        tol_newton: raw.parse_as("solver.tol_newton", 1e-11)?,
        tol_stat: raw.parse_as("solver.tol_stat", 1e-6)?,
        max_newton: raw.parse_as("solver.max_newton", 50)?,
        max_pdas: raw.parse_as("solver.max_pdas", 60)?,
        dt_halving_budget: raw.parse_as("solver.dt_halving_budget", 8)?,
        max_opt_iters: raw.parse_as("solver.max_opt_iters", 500)?,
        alpha0: raw.parse_as("quench.alpha0", 0.1)?,
        ratio: raw.parse_as("quench.ratio", 0.25)?,
        count: raw.parse_as("quench.count", 7)?,
        run_dir: PathBuf::from(raw.take("io.run_dir").unwrap_or_else(|| "runs/out".into())),
        emit_fields: raw.parse_as("io.emit_fields", false)?,
        seed: raw.parse_as("io.seed", 42)?,
    };
    debug_assert!(raw.entries.is_empty(), "all known keys consumed");

    // structural validation that needs no field evaluation
    cfg.grid().map_err(|e| ConfigError::Validation(e.to_string()))?;
    cfg.potential_set().map_err(|e| ConfigError::Validation(e.to_string()))?;
    if cfg.betas.iter().sum::<f64>() == 0.0 || cfg.betas.iter().any(|b| *b < 0.0 || !b.is_finite())
    {
        return Err(ConfigError::Validation(
            "(A5): beta1..beta6 must be nonnegative and not all equal to zero".into(),
        ));
    }
    if cfg.u_lower > cfg.u_upper {
        return Err(ConfigError::Validation(format!(
            "(A3): control box is empty, u_lower = {} > u_upper = {}",
            cfg.u_lower, cfg.u_upper
        )));
    }
    if cfg.r0 <= 0.0 || !cfg.r0.is_finite() {
        return Err(ConfigError::Validation("(A3): R0 must be positive".into()));
    }
    if !(cfg.alpha0 > 0.0 && cfg.alpha0 <= 1.0 && cfg.ratio > 0.0 && cfg.ratio < 1.0 && cfg.count >= 2)
    {
        return Err(ConfigError::Validation(
            "quench schedule wants alpha0 in (0,1], ratio in (0,1), count >= 2".into(),
        ));
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn grid(&self) -> Result<StripGrid, chbc_core::grid::GridError> {
        StripGrid::new(self.nx, self.ny, self.lx, self.ly, self.nt, self.t_final)
    }

    pub fn potential_set(&self) -> Result<PotentialSet, PhysicsError> {
        match &self.potentials {
            PotentialChoice::Default => PotentialSet::new(
                Polynomial::new(vec![1.0, 0.0, -0.5]),
                Polynomial::new(vec![0.0, -1.0]),
                Polynomial::new(vec![0.0, -1.0]),
                self.p_exponent,
            ),
            PotentialChoice::Custom { g, pi, pi_gamma } => PotentialSet::new(
                Polynomial::new(g.clone()),
                Polynomial::new(pi.clone()),
                Polynomial::new(pi_gamma.clone()),
                self.p_exponent,
            ),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig, ConfigError> {
        let pot = self.potential_set().map_err(|e| ConfigError::Validation(e.to_string()))?;
        Ok(SolverConfig {
            pot,
            tol_newton: self.tol_newton,
            max_newton: self.max_newton,
            max_pdas: self.max_pdas,
            dt_halving_budget: self.dt_halving_budget,
        })
    }

    pub fn optimize_config(&self) -> OptimizeConfig {
        OptimizeConfig {
            tol_stat: self.tol_stat,
            max_iters: self.max_opt_iters,
            ..OptimizeConfig::default()
        }
    }

    pub fn schedule(&self) -> QuenchSchedule {
        QuenchSchedule { alpha0: self.alpha0, ratio: self.ratio, count: self.count }
    }

    pub fn weights(&self, grid: &StripGrid) -> Result<CostWeights, ConfigError> {
        let mu_q = self.target_mu_q.eval_bulk(grid)?;
        let rho_q = self.target_rho_q.eval_bulk(grid)?;
        let rho_sigma = self.target_rho_sigma.eval_surface(grid)?;
        let targets = TargetSet {
            mu_q: vec![mu_q; grid.nt + 1],
            rho_q: vec![rho_q; grid.nt + 1],
            rho_sigma: vec![rho_sigma; grid.nt + 1],
            rho_omega: self.target_rho_omega.eval_bulk(grid)?,
            rho_gamma: self.target_rho_gamma.eval_surface(grid)?,
        };
        let [b1, b2, b3, b4, b5, b6] = self.betas;
        CostWeights::new(b1, b2, b3, b4, b5, b6, targets)
            .map_err(|e| ConfigError::Validation(e.to_string()))
    }

    pub fn admissible_set(&self, grid: &StripGrid) -> Result<AdmissibleSet, ConfigError> {
        AdmissibleSet::constant(grid, self.u_lower, self.u_upper, self.r0)
            .map_err(|e| ConfigError::Validation(e.to_string()))
    }

    pub fn initial_control(&self, grid: &StripGrid) -> Result<ControlTrajectory, ConfigError> {
        let u0 = self.u0.eval_surface(grid)?;
        Ok(ControlTrajectory { u: vec![u0; grid.nt + 1] })
    }

    /// Evaluate and validate the initial data per (A1): nonnegative
    /// potential, strictly interior order parameter.
    pub fn initial_data(&self, grid: &StripGrid) -> Result<(BulkField, BulkField), ConfigError> {
        let mu0 = self.init_mu0.eval_bulk(grid)?;
        let rho0 = self.init_rho0.eval_bulk(grid)?;
        if mu0.min() < 0.0 {
            return Err(ConfigError::Validation(format!(
                "(A1): mu0 >= 0 violated, min mu0 = {}",
                mu0.min()
            )));
        }
        if rho0.max_abs() > 1.0 - EPS_SAFE {
            return Err(ConfigError::Validation(format!(
                "(A1): rho0 must be strictly inside (-1, 1), max |rho0| = {}",
                rho0.max_abs()
            )));
        }
        Ok((mu0, rho0))
    }

    /// Terminal-tracking compatibility check: the endpoint misfit pair must
    /// form an admissible trace pair for the limit adjoint to make sense.
    /// The checkable sufficient condition is equal endpoint weights and a
    /// trace-compatible target pair; anything else is worth a warning, not
    /// an error.
    pub fn terminal_compatibility_warning(
        &self,
        grid: &StripGrid,
    ) -> Result<Option<String>, ConfigError> {
        let [_, _, _, b4, b5, _] = self.betas;
        if b4 == 0.0 && b5 == 0.0 {
            return Ok(None);
        }
        if b4 != b5 {
            return Ok(Some(format!(
                "terminal weights differ (beta4 = {b4}, beta5 = {b5}); the endpoint misfit pair need not be trace-compatible"
            )));
        }
        let omega = self.target_rho_omega.eval_bulk(grid)?;
        let gamma = self.target_rho_gamma.eval_surface(grid)?;
        if omega.boundary_rings() != gamma {
            return Ok(Some(
                "terminal targets rho_Omega and rho_Gamma do not agree on the boundary rings"
                    .into(),
            ));
        }
        Ok(None)
    }

    /// Canonical text with all defaults materialized; parses back to `self`.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("grid.Nx", self.nx.to_string());
        kv("grid.Ny", self.ny.to_string());
        kv("grid.Lx", self.lx.to_string());
        kv("grid.Ly", self.ly.to_string());
        kv("grid.Nt", self.nt.to_string());
        kv("grid.T", self.t_final.to_string());
        match &self.potentials {
            PotentialChoice::Default => kv("potentials.preset", "default".into()),
            PotentialChoice::Custom { g, pi, pi_gamma } => {
                kv("potentials.preset", "custom".into());
                kv("potentials.g_coeffs", fmt_coeffs(g));
                kv("potentials.pi_coeffs", fmt_coeffs(pi));
                kv("potentials.pi_gamma_coeffs", fmt_coeffs(pi_gamma));
            }
        }
        kv("potentials.p_exponent", self.p_exponent.to_string());
        for (i, b) in self.betas.iter().enumerate() {
            kv(&format!("weights.beta{}", i + 1), b.to_string());
        }
        kv("targets.mu_Q", self.target_mu_q.to_string());
        kv("targets.rho_Q", self.target_rho_q.to_string());
        kv("targets.rho_Sigma", self.target_rho_sigma.to_string());
        kv("targets.rho_Omega", self.target_rho_omega.to_string());
        kv("targets.rho_Gamma", self.target_rho_gamma.to_string());
        kv("init.mu0", self.init_mu0.to_string());
        kv("init.rho0", self.init_rho0.to_string());
        kv("control.u_lower", self.u_lower.to_string());
        kv("control.u_upper", self.u_upper.to_string());
        kv("control.R0", self.r0.to_string());
        kv("control.u0", self.u0.to_string());
        kv("solver.tol_newton", self.tol_newton.to_string());
        kv("solver.tol_stat", self.tol_stat.to_string());
        kv("solver.max_newton", self.max_newton.to_string());
        kv("solver.max_pdas", self.max_pdas.to_string());
        kv("solver.dt_halving_budget", self.dt_halving_budget.to_string());
        kv("solver.max_opt_iters", self.max_opt_iters.to_string());
        kv("quench.alpha0", self.alpha0.to_string());
        kv("quench.ratio", self.ratio.to_string());
        kv("quench.count", self.count.to_string());
        kv("io.run_dir", self.run_dir.display().to_string());
        kv("io.emit_fields", self.emit_fields.to_string());
        kv("io.seed", self.seed.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
# regression setup
grid.Nx = 16
grid.Ny = 8
grid.Lx = 1.0
grid.Ly = 1.0
grid.Nt = 20
grid.T = 0.25

weights.beta2 = 1.0
weights.beta3 = 0.5
weights.beta6 = 0.05
targets.rho_Q = mode 0 0.3 1
targets.rho_Sigma = mode 0.1 0.25 1
init.mu0 = constant 0.5
init.rho0 = mode 0 0.2 1
control.u0 = constant 0
io.run_dir = runs/regression
io.seed = 7
"#;

    #[test]
    fn full_config_round_trips_through_resolved_text() {
        let cfg = parse_config_str(FULL).unwrap();
        let resolved = cfg.resolved_text();
        let cfg2 = parse_config_str(&resolved).unwrap();
        assert_eq!(cfg, cfg2);
        // and the resolved text is a fixed point
        assert_eq!(cfg2.resolved_text(), resolved);
    }

    #[test]
    fn minimal_file_lists_every_missing_required_key() {
        let err = parse_config_str("grid.Nx = 32\n").unwrap_err();
        match err {
            ConfigError::MissingKeys(keys) => {
                for k in ["grid.Ny", "grid.Lx", "grid.Ly", "grid.Nt", "grid.T"] {
                    assert!(keys.contains(k), "{keys} should list {k}");
                }
            }
            other => panic!("expected MissingKeys, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = format!("{FULL}\ngrid.NX = 4\n");
        assert!(matches!(
            parse_config_str(&text),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn duplicate_keys_are_errors() {
        let text = format!("{FULL}\ngrid.Nx = 8\n");
        assert!(matches!(parse_config_str(&text), Err(ConfigError::DuplicateKey { .. })));
    }

    #[test]
    fn all_zero_betas_rejected_citing_a5() {
        let text = FULL
            .replace("weights.beta2 = 1.0", "weights.beta2 = 0")
            .replace("weights.beta3 = 0.5", "weights.beta3 = 0")
            .replace("weights.beta6 = 0.05", "weights.beta6 = 0");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("(A5)"), "{err}");
    }

    #[test]
    fn negative_mu0_rejected_citing_a1() {
        let text = FULL.replace("init.mu0 = constant 0.5", "init.mu0 = constant -0.5");
        let cfg = parse_config_str(&text).unwrap();
        let grid = cfg.grid().unwrap();
        let err = cfg.initial_data(&grid).unwrap_err();
        assert!(err.to_string().contains("(A1)"), "{err}");
    }

    #[test]
    fn custom_potentials_validated_against_a2() {
        let text = format!(
            "{FULL}\npotentials.preset = custom\npotentials.g_coeffs = 0, 1\npotentials.pi_coeffs = 0, -1\npotentials.pi_gamma_coeffs = 0, -1\n"
        );
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("(A2)"), "{err}");
    }

    #[test]
    fn coeffs_without_custom_preset_rejected() {
        let text = format!("{FULL}\npotentials.g_coeffs = 1, 0, -0.5\n");
        assert!(parse_config_str(&text).is_err());
    }

    #[test]
    fn terminal_compatibility_warnings() {
        let base = parse_config_str(FULL).unwrap();
        let grid = base.grid().unwrap();
        // no terminal tracking: silent
        assert!(base.terminal_compatibility_warning(&grid).unwrap().is_none());
        // unequal endpoint weights: warned
        let text = format!("{FULL}\nweights.beta4 = 1.0\n");
        let cfg = parse_config_str(&text).unwrap();
        assert!(cfg.terminal_compatibility_warning(&grid).unwrap().is_some());
        // equal weights with trace-compatible constants: silent
        let text = format!(
            "{FULL}\nweights.beta4 = 1.0\nweights.beta5 = 1.0\ntargets.rho_Omega = constant 0.3\ntargets.rho_Gamma = constant 0.3\n"
        );
        let cfg = parse_config_str(&text).unwrap();
        assert!(cfg.terminal_compatibility_warning(&grid).unwrap().is_none());
        // equal weights but incompatible targets: warned
        let text = format!(
            "{FULL}\nweights.beta4 = 1.0\nweights.beta5 = 1.0\ntargets.rho_Gamma = constant 0.7\n"
        );
        let cfg = parse_config_str(&text).unwrap();
        assert!(cfg.terminal_compatibility_warning(&grid).unwrap().is_some());
    }
}
