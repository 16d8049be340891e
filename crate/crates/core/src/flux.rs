//! Monotone numerical fluxes for the explicit convection part.

use serde::{Deserialize, Serialize};

use crate::error::{GpmeError, Result};

/// Physical flux `f: ℝ → ℝ` of one coordinate direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FluxFunction {
    /// `u²/2`.
    Burgers,
    /// `a·u`.
    Linear { a: f64 },
    /// Piecewise-linear through `(u, f)` points, constant beyond the ends.
    Table { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericalFlux {
    EngquistOsher,
    LaxFriedrichs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSpec {
    /// One flux per axis.
    pub components: Vec<FluxFunction>,
    pub scheme: NumericalFlux,
    /// Declared range `[-M, M]` for Lipschitz constants and monotonicity.
    pub range: f64,
}

impl FluxFunction {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            FluxFunction::Burgers => 0.5 * u * u,
            FluxFunction::Linear { a } => a * u,
            FluxFunction::Table { points } => {
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

    /// Lipschitz constant on `[-M, M]`.
    pub fn lipschitz(&self, range: f64) -> f64 {
        match self {
            FluxFunction::Burgers => range,
            FluxFunction::Linear { a } => a.abs(),
            FluxFunction::Table { points } => points
                .windows(2)
                .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                .fold(0.0, f64::max),
        }
    }

    /// `∫_0^a max(f', 0)` (`positive = true`) or `∫_0^a min(f', 0)`.
    fn split_integral(&self, a: f64, positive: bool) -> f64 {
        let part = |slope: f64| if positive { slope.max(0.0) } else { slope.min(0.0) };
        match self {
            FluxFunction::Burgers => {
                // f' = u: the positive part integrates to max(a,0)²/2.
                if positive {
                    0.5 * a.max(0.0).powi(2)
                } else {
                    0.5 * a.min(0.0).powi(2)
                }
            }
            FluxFunction::Linear { a: c } => part(*c) * a,
            FluxFunction::Table { points } => {
                let (lo, hi, sign) = if a >= 0.0 { (0.0, a, 1.0) } else { (a, 0.0, -1.0) };
                let mut acc = 0.0;
                for w in points.windows(2) {
                    let s = lo.max(w[0].0);
                    let e = hi.min(w[1].0);
                    if e > s {
                        acc += part((w[1].1 - w[0].1) / (w[1].0 - w[0].0)) * (e - s);
                    }
                }
                sign * acc
            }
        }
    }
}

impl FluxSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.components.len() != dim {
            return Err(GpmeError::config(
                "problem.flux.components",
                format!("expected {dim} flux components, got {}", self.components.len()),
            ));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(GpmeError::config("problem.flux.range", "range must be positive"));
        }
        for (i, c) in self.components.iter().enumerate() {
            if let FluxFunction::Table { points } = c {
                if points.len() < 2
                    || points.windows(2).any(|w| !(w[1].0 > w[0].0))
                    || points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite())
                {
                    return Err(GpmeError::config(
                        format!("problem.flux.components[{i}].points"),
                        "table needs at least two finite points with increasing abscissae",
                    ));
                }
            }
        }
        self.check_monotone(33)
    }

    /// Numerical flux `F_i(a, b)` through the face between `a` (left) and `b`.
    pub fn numerical(&self, axis: usize, a: f64, b: f64) -> f64 {
        let f = &self.components[axis];
        match self.scheme {
            NumericalFlux::EngquistOsher => f.eval(0.0) + f.split_integral(a, true) + f.split_integral(b, false),
            NumericalFlux::LaxFriedrichs => {
                let l = f.lipschitz(self.range);
                0.5 * (f.eval(a) + f.eval(b)) - 0.5 * l * (b - a)
            }
        }
    }

    pub fn max_lipschitz(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.lipschitz(self.range))
            .fold(0.0, f64::max)
    }

    /// Largest admissible step `h / (2N max L_F)`; infinite for zero fluxes.
    pub fn cfl_limit(&self, h: f64) -> f64 {
        let l = self.max_lipschitz();
        if l == 0.0 {
            f64::INFINITY
        } else {
            h / (2.0 * self.components.len() as f64 * l)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| match c {
            FluxFunction::Linear { a } => *a == 0.0,
            FluxFunction::Table { points } => points.iter().all(|p| p.1 == points[0].1),
            FluxFunction::Burgers => false,
        })
    }

    /// Consistency and monotonicity on a sample lattice of the declared range.
    pub fn check_monotone(&self, samples: usize) -> Result<()> {
        let m = self.range;
        let pts: Vec<f64> = (0..samples)
            .map(|k| -m + 2.0 * m * k as f64 / (samples - 1) as f64)
            .collect();
        for axis in 0..self.components.len() {
            let f = &self.components[axis];
            for &a in &pts {
                let consistent = self.numerical(axis, a, a);
                if (consistent - f.eval(a)).abs() > 1e-12 * (1.0 + f.eval(a).abs()) {
                    return Err(GpmeError::config(
                        format!("problem.flux.components[{axis}]"),
                        format!("numerical flux inconsistent at u = {a}"),
                    ));
                }
                for w in pts.windows(2) {
                    let tol = 1e-12 * (1.0 + m * m);
                    if self.numerical(axis, w[1], a) < self.numerical(axis, w[0], a) - tol
                        || self.numerical(axis, a, w[1]) > self.numerical(axis, a, w[0]) + tol
                    {
                        return Err(GpmeError::config(
                            format!("problem.flux.components[{axis}]"),
                            format!("numerical flux not monotone near ({}, {a})", w[0]),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
