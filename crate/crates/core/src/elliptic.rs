//! Resolvent problem `w - Δt ℒʰ[φ(w)] = ρ` solved by a Jacobi fixed point
//! with a per-node scalar Newton-bisection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GpmeError, Result};
use crate::grid::{GridFunction, PAR_MIN_LEN};
use crate::levy::{DiscreteOperator, WeightedStencil};

/// Monotone nonlinearity with `φ(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiSpec {
    /// `|u|^{m-1} u`.
    Power { m: f64 },
    /// `max(0, u - L)`.
    Stefan { latent: f64 },
    /// `slope · u`.
    Linear { slope: f64 },
    /// Piecewise-linear through `(u, φ)` points, constant beyond the ends.
    Table { points: Vec<(f64, f64)> },
}

impl PhiSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PhiSpec::Power { m } if !(*m > 0.0 && m.is_finite()) => {
                Err(GpmeError::config("problem.phi.m", format!("exponent must be positive, got {m}")))
            }
            PhiSpec::Stefan { latent } if !(*latent > 0.0 && latent.is_finite()) => {
                Err(GpmeError::config("problem.phi.latent", format!("latent heat must be positive, got {latent}")))
            }
            PhiSpec::Linear { slope } if !(*slope >= 0.0 && slope.is_finite()) => {
                Err(GpmeError::config("problem.phi.slope", format!("slope must be nonnegative, got {slope}")))
            }
            PhiSpec::Table { points } => {
                if points.len() < 2 {
                    return Err(GpmeError::config("problem.phi.points", "table needs at least two points"));
                }
                if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
                    return Err(GpmeError::config("problem.phi.points", "table entries must be finite"));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(GpmeError::config("problem.phi.points", "abscissae must be strictly increasing"));
                    }
                    if w[1].1 < w[0].1 {
                        return Err(GpmeError::config("problem.phi.points", "table must be nondecreasing"));
                    }
                }
                if self.eval(0.0) != 0.0 {
                    return Err(GpmeError::config("problem.phi.points", "table must pass through the origin"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            PhiSpec::Power { m } => {
                if *m == 1.0 {
                    u
                } else {
                    u.signum() * u.abs().powf(*m)
                }
            }
            PhiSpec::Stefan { latent } => (u - latent).max(0.0),
            PhiSpec::Linear { slope } => slope * u,
            PhiSpec::Table { points } => {
                let n = points.len();
                if u <= points[0].0 {
                    points[0].1
                } else if u >= points[n - 1].0 {
                    points[n - 1].1
                } else {
                    let k = points.partition_point(|p| p.0 <= u);
                    let (a, fa) = points[k - 1];
                    let (b, fb) = points[k];
                    fa + (fb - fa) * (u - a) / (b - a)
                }
            }
        }
    }

    /// Right derivative where it exists; `∞` at the origin for `m < 1`.
    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            PhiSpec::Power { m } => {
                if *m == 1.0 {
                    1.0
                } else {
                    m * u.abs().powf(m - 1.0)
                }
            }
            PhiSpec::Stefan { latent } => {
                if u >= *latent {
                    1.0
                } else {
                    0.0
                }
            }
            PhiSpec::Linear { slope } => *slope,
            PhiSpec::Table { points } => {
                let n = points.len();
                if u < points[0].0 || u >= points[n - 1].0 {
                    0.0
                } else {
                    let k = points.partition_point(|p| p.0 <= u);
                    let (a, fa) = points[k - 1];
                    let (b, fb) = points[k];
                    (fb - fa) / (b - a)
                }
            }
        }
    }

    /// Hölder exponent `ℓ ∈ (0, 1]`.
    pub fn holder_exponent(&self) -> f64 {
        match self {
            PhiSpec::Power { m } if *m < 1.0 => *m,
            _ => 1.0,
        }
    }

    /// `|φ|_{C^{0,ℓ}}` over `[-M, M]`.
    pub fn seminorm(&self, range: f64) -> f64 {
        match self {
            PhiSpec::Power { m } if *m < 1.0 => 2f64.powf(1.0 - m),
            PhiSpec::Power { m } => m * range.max(0.0).powf(m - 1.0),
            PhiSpec::Stefan { .. } => 1.0,
            PhiSpec::Linear { slope } => *slope,
            PhiSpec::Table { points } => points
                .windows(2)
                .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                .fold(0.0, f64::max),
        }
    }

    /// `φ ≡ 0`: the diffusion drops out of the scheme.
    pub fn is_zero(&self) -> bool {
        match self {
            PhiSpec::Linear { slope } => *slope == 0.0,
            PhiSpec::Table { points } => points.iter().all(|p| p.1 == 0.0),
            _ => false,
        }
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        out.par_iter_mut()
            .with_min_len(PAR_MIN_LEN)
            .zip(u.par_iter())
            .for_each(|(o, &v)| *o = self.eval(v));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpSolveConfig {
    /// Absolute residual tolerance; `None` means `1e-10·max(1, ‖ρ‖_∞)`.
    #[serde(default)]
    pub residual_tol: Option<f64>,
    /// `None` means ten sweeps per node.
    #[serde(default)]
    pub max_sweeps: Option<usize>,
    #[serde(default = "default_scalar_tol")]
    pub scalar_tol: f64,
}

fn default_scalar_tol() -> f64 {
    1e-13
}

impl Default for EpSolveConfig {
    fn default() -> Self {
        Self {
            residual_tol: None,
            max_sweeps: None,
            scalar_tol: default_scalar_tol(),
        }
    }
}

impl EpSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.residual_tol {
            if !(t > 0.0) {
                return Err(GpmeError::config("solver.residual_tol", "tolerance must be positive"));
            }
        }
        if !(self.scalar_tol > 0.0) {
            return Err(GpmeError::config("solver.scalar_tol", "tolerance must be positive"));
        }
        if self.max_sweeps == Some(0) {
            return Err(GpmeError::config("solver.max_sweeps", "at least one sweep is required"));
        }
        Ok(())
    }

    pub fn tolerance_for(&self, rho_sup: f64) -> f64 {
        self.residual_tol.unwrap_or(1e-10 * rho_sup.max(1.0))
    }
}

#[derive(Debug, Clone)]
pub struct EpSolution {
    pub w: Vec<f64>,
    /// `‖w - Δt ℒʰ[φ(w)] - ρ‖_∞` of the returned iterate.
    pub residual: f64,
    pub sweeps: usize,
    pub tolerance: f64,
}

/// Solves `s + κ φ(s) = target` for `κ ≥ 0`. The root lies between 0 and
/// `target`; Newton steps leaving the bracket are replaced by bisection.
pub fn scalar_resolvent(kappa: f64, phi: &PhiSpec, target: f64, tol: f64) -> f64 {
    scalar_resolvent_from(kappa, phi, target, tol, target)
}

/// As [`scalar_resolvent`], starting Newton from `guess`.
pub fn scalar_resolvent_from(kappa: f64, phi: &PhiSpec, target: f64, tol: f64, guess: f64) -> f64 {
    if kappa == 0.0 || target == 0.0 {
        return target;
    }
    let f = |s: f64| s + kappa * phi.eval(s) - target;
    let (mut lo, mut hi) = if target > 0.0 { (0.0, target) } else { (target, 0.0) };
    let mut s = guess.clamp(lo, hi);
    let mut fs = f(s);
    for _ in 0..400 {
        if fs.abs() <= tol {
            return s;
        }
        if fs < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            // Bracket collapsed to adjacent floats.
            let (flo, fhi) = (f(lo), f(hi));
            return if flo.abs() <= fhi.abs() { lo } else { hi };
        }
        let d = 1.0 + kappa * phi.derivative(s);
        let newton = s - fs / d;
        s = if d.is_finite() && kappa * phi.derivative(s) >= 1e-14 && newton > lo && newton < hi {
            newton
        } else {
            mid
        };
        fs = f(s);
    }
    s
}

/// `‖w - Δt ℒʰ[φ(w)] - ρ‖_∞`.
pub fn ep_residual(op: &DiscreteOperator, phi: &PhiSpec, dt: f64, w: &[f64], rho: &[f64]) -> f64 {
    let mut phiw = vec![0.0; w.len()];
    let mut lphi = vec![0.0; w.len()];
    residual_into(op, phi, dt, w, rho, &mut phiw, &mut lphi)
}

fn residual_into(
    op: &DiscreteOperator,
    phi: &PhiSpec,
    dt: f64,
    w: &[f64],
    rho: &[f64],
    phiw: &mut [f64],
    lphi: &mut [f64],
) -> f64 {
    phi.apply(w, phiw);
    op.apply(phiw, lphi);
    w.iter()
        .zip(lphi.iter())
        .zip(rho)
        .map(|((w, l), r)| (w - dt * l - r).abs())
        .fold(0.0, f64::max)
}

/// Jacobi iteration for the resolvent problem on a prepared operator.
pub fn solve_ep_with(op: &DiscreteOperator, phi: &PhiSpec, dt: f64, rho: &[f64], cfg: &EpSolveConfig) -> Result<EpSolution> {
    if !(dt >= 0.0) {
        return Err(GpmeError::InvalidInput(format!("time step must be nonnegative, got {dt}")));
    }
    if rho.iter().any(|v| !v.is_finite()) {
        return Err(GpmeError::InvalidInput("right-hand side has non-finite entries".into()));
    }
    let n = rho.len();
    let rho_sup = rho.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tolerance = cfg.tolerance_for(rho_sup);
    let max_sweeps = cfg.max_sweeps.unwrap_or(10 * n.max(1));
    let mut w = rho.to_vec();
    if dt == 0.0 || phi.is_zero() {
        return Ok(EpSolution {
            w,
            residual: 0.0,
            sweeps: 0,
            tolerance,
        });
    }
    let mut phiw = vec![0.0; n];
    let mut lphi = vec![0.0; n];
    let mut sweeps = 0;
    loop {
        let residual = residual_into(op, phi, dt, &w, rho, &mut phiw, &mut lphi);
        if !residual.is_finite() {
            return Err(GpmeError::NonConvergence {
                sweeps,
                residual,
                tolerance,
            });
        }
        if residual <= tolerance {
            return Ok(EpSolution {
                w,
                residual,
                sweeps,
                tolerance,
            });
        }
        if sweeps >= max_sweeps {
            return Err(GpmeError::NonConvergence {
                sweeps,
                residual,
                tolerance,
            });
        }
        // Σ_γ ω φ(w_{β+γ}) over inside neighbours = ℒʰφ(w) + W φ(w).
        jacobi_sweep(op, phi, dt, rho, cfg, &mut w, &phiw, &lphi);
        sweeps += 1;
    }
}

/// Iteration used for the resolvent problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpMethod {
    /// Nonlinear Jacobi with per-node scalar solves.
    #[default]
    Jacobi,
    /// Damped Newton with a tridiagonal Jacobian; one-dimensional local
    /// operators only. Falls back to a Jacobi sweep when damping fails.
    Newton,
}

/// Dispatches on `method`.
pub fn solve_ep_method(
    op: &DiscreteOperator,
    phi: &PhiSpec,
    dt: f64,
    rho: &[f64],
    cfg: &EpSolveConfig,
    method: EpMethod,
) -> Result<EpSolution> {
    match method {
        EpMethod::Jacobi => solve_ep_with(op, phi, dt, rho, cfg),
        EpMethod::Newton => solve_ep_newton(op, phi, dt, rho, cfg),
    }
}

/// Nearest-neighbour weight when `op` is a one-dimensional three-point
/// operator without tail.
pub fn tridiagonal_weight(op: &DiscreteOperator) -> Option<f64> {
    let s = op.stencil();
    if s.dim() != 1 || s.len() != 2 || s.tail_mass() != 0.0 {
        return None;
    }
    (s.offset(0) == [-1] && s.offset(1) == [1]).then(|| s.weights()[0])
}

fn jacobi_sweep(op: &DiscreteOperator, phi: &PhiSpec, dt: f64, rho: &[f64], cfg: &EpSolveConfig, w: &mut [f64], phiw: &[f64], lphi: &[f64]) {
    let diag = op.diagonal_weight();
    let kappa = dt * diag;
    // Scalar solves must resolve below the global tolerance, otherwise the
    // warm start stalls the sweep.
    let scalar_tol = cfg.scalar_tol.min(0.1 * cfg.tolerance_for(rho.iter().fold(0.0f64, |a, v| a.max(v.abs()))));
    w.par_iter_mut()
        .with_min_len(PAR_MIN_LEN)
        .enumerate()
        .for_each(|(i, wi)| {
            let target = rho[i] + dt * (lphi[i] + diag * phiw[i]);
            *wi = scalar_resolvent_from(kappa, phi, target, scalar_tol, *wi);
        });
}

/// Damped Newton for three-point operators in one dimension.
pub fn solve_ep_newton(op: &DiscreteOperator, phi: &PhiSpec, dt: f64, rho: &[f64], cfg: &EpSolveConfig) -> Result<EpSolution> {
    let Some(omega) = tridiagonal_weight(op) else {
        return Err(GpmeError::config(
            "solver.method",
            "newton requires a one-dimensional local operator",
        ));
    };
    if !(dt >= 0.0) {
        return Err(GpmeError::InvalidInput(format!("time step must be nonnegative, got {dt}")));
    }
    if rho.iter().any(|v| !v.is_finite()) {
        return Err(GpmeError::InvalidInput("right-hand side has non-finite entries".into()));
    }
    let n = rho.len();
    let rho_sup = rho.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tolerance = cfg.tolerance_for(rho_sup);
    let max_sweeps = cfg.max_sweeps.unwrap_or(10 * n.max(1));
    let mut w = rho.to_vec();
    if dt == 0.0 || phi.is_zero() {
        return Ok(EpSolution {
            w,
            residual: 0.0,
            sweeps: 0,
            tolerance,
        });
    }
    let big_w = op.diagonal_weight();
    let mut phiw = vec![0.0; n];
    let mut lphi = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let (mut sub, mut diag, mut sup) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut residual = residual_into(op, phi, dt, &w, rho, &mut phiw, &mut lphi);
    let mut sweeps = 0;
    loop {
        if !residual.is_finite() {
            return Err(GpmeError::NonConvergence { sweeps, residual, tolerance });
        }
        if residual <= tolerance {
            return Ok(EpSolution { w, residual, sweeps, tolerance });
        }
        if sweeps >= max_sweeps {
            return Err(GpmeError::NonConvergence { sweeps, residual, tolerance });
        }
        for i in 0..n {
            f[i] = w[i] - dt * lphi[i] - rho[i];
            let d = phi.derivative(w[i].abs().max(1e-30).copysign(w[i]));
            let d = if d.is_finite() { d } else { 1e300 };
            diag[i] = 1.0 + dt * big_w * d;
            // Column i of the Jacobian carries φ'(w_i).
            if i + 1 < n {
                sub[i + 1] = -dt * omega * d;
            }
            if i > 0 {
                sup[i - 1] = -dt * omega * d;
            }
        }
        thomas(&sub, &diag, &sup, &f, &mut delta);
        let mut accepted = false;
        let mut lambda = 1.0;
        let (mut tphi, mut tl) = (vec![0.0; n], vec![0.0; n]);
        for _ in 0..30 {
            for i in 0..n {
                trial[i] = w[i] - lambda * delta[i];
            }
            let r = residual_into(op, phi, dt, &trial, rho, &mut tphi, &mut tl);
            if r.is_finite() && r < residual {
                std::mem::swap(&mut w, &mut trial);
                std::mem::swap(&mut phiw, &mut tphi);
                std::mem::swap(&mut lphi, &mut tl);
                residual = r;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            jacobi_sweep(op, phi, dt, rho, cfg, &mut w, &phiw, &lphi);
            residual = residual_into(op, phi, dt, &w, rho, &mut phiw, &mut lphi);
        }
        sweeps += 1;
    }
}

/// Tridiagonal solve without pivoting (the Jacobian is column diagonally
/// dominant).
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64], x: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
}

/// Solves `w - Δt (cΔ_h + ℒ^{ν_h})[φ(w)] = ρ`.
pub fn solve_ep(
    stencil: &WeightedStencil,
    local: bool,
    phi: &PhiSpec,
    dt: f64,
    rho: &GridFunction,
    cfg: &EpSolveConfig,
) -> Result<(GridFunction, f64, usize)> {
    let op = DiscreteOperator::new(rho.grid(), local, Some(stencil))?;
    let sol = solve_ep_with(&op, phi, dt, rho.values(), cfg)?;
    Ok((GridFunction::from_values(rho.grid(), sol.w)?, sol.residual, sol.sweeps))
}
