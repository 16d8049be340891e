//! Strict JSON run configuration and the shipped presets.

use serde::{Deserialize, Serialize};

use crate::diagnostics::ExactSolution;
use crate::elliptic::{EpMethod, EpSolveConfig, PhiSpec};
use crate::error::{GpmeError, Result};
use crate::evolution::{ProblemSpec, RunOptions};
use crate::flux::FluxSpec;
use crate::grid::{SpaceTimeField, SpatialField, TimeGrid, TimeProfile, UniformGrid};
use crate::levy::{fractional_laplacian_constant, MeasureKind, MeasureSpec, OperatorSpec, SingularShell, WeightRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dimension: usize,
    pub operator: OperatorConfig,
    pub phi: PhiSpec,
    #[serde(default)]
    pub flux: Option<FluxSpec>,
    pub initial: FieldConfig,
    #[serde(default)]
    pub source: SourceConfig,
    pub box_half_extent: f64,
    pub h: f64,
    pub final_time: f64,
    pub time_step: TimeStepPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    /// Coefficient of the local part, 0 or 1.
    pub c: u8,
    #[serde(default)]
    pub measure: Option<MeasureConfig>,
    #[serde(default)]
    pub support_radius: Option<f64>,
    #[serde(default)]
    pub weight_rule: WeightRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    Fractional {
        alpha: f64,
        /// Scale by the constant that makes `ℒ^μ = -(-Δ)^{α/2}`.
        #[serde(default)]
        normalized: bool,
        #[serde(default = "unit")]
        scale: f64,
        #[serde(default)]
        truncation: Option<f64>,
    },
    Split {
        beta: f64,
        alpha: f64,
        #[serde(default = "unit")]
        scale: f64,
        #[serde(default)]
        truncation: Option<f64>,
    },
    Custom {
        points: Vec<(f64, f64)>,
        #[serde(default)]
        shells: Vec<SingularShell>,
        #[serde(default = "unit")]
        scale: f64,
        #[serde(default)]
        truncation: Option<f64>,
    },
}

/// Spatial data descriptor for `u₀` and the spatial factor of `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Zero,
    Constant {
        value: f64,
    },
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        sigma: f64,
    },
    HeatKernel {
        t0: f64,
        #[serde(default = "unit")]
        diffusivity: f64,
    },
    Barenblatt {
        m: f64,
        t0: f64,
        constant: f64,
    },
    Indicator {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default = "unit")]
        value: f64,
    },
    Poisson {
        t0: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `space(x) · Σ_k time[k] t^k`.
    Separable {
        space: FieldConfig,
        time: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeStepPolicy {
    /// Uniform `Δt`; the last step is shortened to land on `T`.
    Fixed { dt: f64 },
    /// `Δt = factor · h²`.
    Parabolic { factor: f64 },
    /// `Δt = factor · h`.
    Hyperbolic { factor: f64 },
    /// `J` uniform steps.
    Steps { count: usize },
    /// Explicit knots `0 = t_0 < … < t_J = T`.
    Knots { times: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub residual_tol: Option<f64>,
    #[serde(default)]
    pub max_sweeps: Option<usize>,
    #[serde(default = "default_scalar_tol")]
    pub scalar_tol: f64,
    #[serde(default)]
    pub method: EpMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            residual_tol: None,
            max_sweeps: None,
            scalar_tol: default_scalar_tol(),
            method: EpMethod::Jacobi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Cutoff radii; defaults to `L/4, L/2, 3L/4`.
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    #[serde(default = "unit")]
    pub r: f64,
    #[serde(default = "one")]
    pub save_stride: usize,
    /// Number of uniform sample times for `C_t(L^r)` distances.
    #[serde(default = "default_samples")]
    pub sample_times: usize,
    #[serde(default)]
    pub exact: Option<ExactSolution>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            radii: None,
            r: 1.0,
            save_stride: 1,
            sample_times: default_samples(),
            exact: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub directory: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_dir(),
        }
    }
}

fn unit() -> f64 {
    1.0
}
fn one() -> usize {
    1
}
fn default_samples() -> usize {
    21
}
fn default_dir() -> String {
    "out".into()
}
fn default_scalar_tol() -> f64 {
    1e-13
}

/// Re-roots a configuration error under `prefix`.
fn under(prefix: &str, e: GpmeError) -> GpmeError {
    match e {
        GpmeError::Config { path, message } => GpmeError::config(format!("{prefix}.{path}"), message),
        other => other,
    }
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(GpmeError::config(path, format!("must be positive and finite, got {x}")))
    }
}

impl MeasureConfig {
    pub fn to_spec(&self, dim: usize) -> Result<MeasureSpec> {
        let (kind, scale, truncation) = match self {
            MeasureConfig::Fractional {
                alpha,
                normalized,
                scale,
                truncation,
            } => {
                let mut s = *scale;
                if *normalized {
                    if !(*alpha > 0.0 && *alpha < 2.0) {
                        return Err(GpmeError::config("alpha", format!("alpha must lie in (0, 2), got {alpha}")));
                    }
                    s *= fractional_laplacian_constant(dim, *alpha);
                }
                (MeasureKind::Fractional { alpha: *alpha }, s, *truncation)
            }
            MeasureConfig::Split {
                beta,
                alpha,
                scale,
                truncation,
            } => (MeasureKind::Split { beta: *beta, alpha: *alpha }, *scale, *truncation),
            MeasureConfig::Custom {
                points,
                shells,
                scale,
                truncation,
            } => (
                MeasureKind::Custom {
                    points: points.clone(),
                    shells: shells.clone(),
                },
                *scale,
                *truncation,
            ),
        };
        MeasureSpec::new(kind, dim, scale, truncation)
    }
}

impl FieldConfig {
    pub fn to_field(&self, dim: usize) -> Result<SpatialField> {
        let check_len = |name: &str, v: &[f64]| {
            if v.len() == dim {
                Ok(())
            } else {
                Err(GpmeError::config(name, format!("expected {dim} entries, got {}", v.len())))
            }
        };
        Ok(match self {
            FieldConfig::Zero => SpatialField::Zero,
            FieldConfig::Constant { value } => SpatialField::Constant(*value),
            FieldConfig::Gaussian {
                amplitude,
                center,
                sigma,
            } => {
                check_len("center", center)?;
                positive("sigma", *sigma)?;
                SpatialField::Gaussian {
                    amplitude: *amplitude,
                    center: center.clone(),
                    sigma: *sigma,
                }
            }
            FieldConfig::HeatKernel { t0, diffusivity } => {
                positive("t0", *t0)?;
                positive("diffusivity", *diffusivity)?;
                SpatialField::heat_kernel(dim, *t0, *diffusivity)
            }
            FieldConfig::Barenblatt { m, t0, constant } => {
                positive("t0", *t0)?;
                positive("constant", *constant)?;
                if !(*m > 1.0 && m.is_finite()) {
                    return Err(GpmeError::config("m", format!("Barenblatt data needs m > 1, got {m}")));
                }
                SpatialField::Barenblatt {
                    dim,
                    m: *m,
                    time: *t0,
                    constant: *constant,
                }
            }
            FieldConfig::Indicator { lower, upper, value } => {
                check_len("lower", lower)?;
                check_len("upper", upper)?;
                if lower.iter().zip(upper).any(|(a, b)| !(b > a)) {
                    return Err(GpmeError::config("upper", "upper corner must exceed lower corner"));
                }
                SpatialField::Indicator {
                    lower: lower.clone(),
                    upper: upper.clone(),
                    value: *value,
                }
            }
            FieldConfig::Poisson { t0 } => {
                positive("t0", *t0)?;
                SpatialField::PoissonKernel { dim, time: *t0 }
            }
        })
    }
}

impl SourceConfig {
    pub fn to_field(&self, dim: usize) -> Result<SpaceTimeField> {
        Ok(match self {
            SourceConfig::Zero => SpaceTimeField::Zero,
            SourceConfig::Constant { value } => SpaceTimeField::Constant(*value),
            SourceConfig::Separable { space, time } => SpaceTimeField::Separable {
                space: space.to_field(dim).map_err(|e| under("space", e))?,
                time: TimeProfile::Polynomial(time.clone()),
            },
        })
    }
}

impl TimeStepPolicy {
    pub fn time_grid(&self, h: f64, final_time: f64) -> Result<TimeGrid> {
        let from_dt = |dt: f64| -> Result<TimeGrid> {
            positive("dt", dt)?;
            let steps = (final_time / dt - 1e-9).ceil().max(1.0) as usize;
            let mut knots: Vec<f64> = (0..steps).map(|j| j as f64 * dt).collect();
            knots.push(final_time);
            TimeGrid::new(knots)
        };
        match self {
            TimeStepPolicy::Fixed { dt } => from_dt(*dt),
            TimeStepPolicy::Parabolic { factor } => {
                positive("factor", *factor)?;
                from_dt(factor * h * h)
            }
            TimeStepPolicy::Hyperbolic { factor } => {
                positive("factor", *factor)?;
                from_dt(factor * h)
            }
            TimeStepPolicy::Steps { count } => TimeGrid::uniform(final_time, *count),
            TimeStepPolicy::Knots { times } => {
                let tg = TimeGrid::new(times.clone())?;
                if (tg.final_time() - final_time).abs() > 1e-12 * final_time.max(1.0) {
                    return Err(GpmeError::config("times", "last knot must equal the final time"));
                }
                Ok(tg)
            }
        }
    }

    /// The policy for a grid refined `level` times by a factor 2.
    pub fn refined(&self, level: u32) -> Self {
        let k = 2usize.pow(level);
        match self {
            TimeStepPolicy::Fixed { dt } => TimeStepPolicy::Fixed { dt: dt / k as f64 },
            TimeStepPolicy::Steps { count } => TimeStepPolicy::Steps { count: count * k },
            TimeStepPolicy::Knots { times } => {
                let mut t = times.clone();
                for _ in 0..level {
                    let mut next = Vec::with_capacity(2 * t.len());
                    for w in t.windows(2) {
                        next.push(w[0]);
                        next.push(0.5 * (w[0] + w[1]));
                    }
                    next.push(*t.last().expect("non-empty"));
                    t = next;
                }
                TimeStepPolicy::Knots { times: t }
            }
            other => other.clone(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            let message = e.inner().to_string();
            // Name the missing key itself, e.g. `problem.phi`.
            if let Some(rest) = message.strip_prefix("missing field `") {
                if let Some(field) = rest.split('`').next() {
                    path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
                }
            }
            GpmeError::config(path, message)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Built-in preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                GpmeError::config("preset", format!("unknown preset `{name}`; available: {}", names.join(", ")))
            })?;
        Self::from_json(text)
    }

    pub fn grid(&self) -> Result<UniformGrid> {
        let p = &self.problem;
        if !(1..=3).contains(&p.dimension) {
            return Err(GpmeError::config("problem.dimension", format!("dimension must be 1, 2 or 3, got {}", p.dimension)));
        }
        positive("problem.h", p.h)?;
        positive("problem.box_half_extent", p.box_half_extent)?;
        if p.box_half_extent < p.h {
            return Err(GpmeError::config("problem.box_half_extent", "box must contain at least one spacing"));
        }
        UniformGrid::new(p.dimension, p.h, p.box_half_extent).map_err(|e| under("problem", e))
    }

    pub fn operator(&self) -> Result<OperatorSpec> {
        let p = &self.problem;
        let o = &p.operator;
        if o.c > 1 {
            return Err(GpmeError::config("problem.operator.c", format!("c must be 0 or 1, got {}", o.c)));
        }
        let measure = match &o.measure {
            Some(m) => Some(m.to_spec(p.dimension).map_err(|e| under("problem.operator.measure", e))?),
            None => None,
        };
        if let Some(r) = o.support_radius {
            if !(r >= p.h && r.is_finite()) {
                return Err(GpmeError::config("problem.operator.support_radius", "support radius must be at least h"));
            }
        }
        let spec = OperatorSpec {
            local: o.c == 1,
            measure,
            support_radius: o.support_radius,
            weight_rule: o.weight_rule,
        };
        spec.validate(p.dimension)?;
        Ok(spec)
    }

    /// Validates every block and assembles the solver inputs.
    pub fn build(&self) -> Result<(ProblemSpec, RunOptions)> {
        let p = &self.problem;
        let grid = self.grid()?;
        let operator = self.operator()?;
        positive("problem.final_time", p.final_time)?;
        let time = p
            .time_step
            .time_grid(p.h, p.final_time)
            .map_err(|e| under("problem.time_step", e))?;
        let initial = p.initial.to_field(p.dimension).map_err(|e| under("problem.initial", e))?;
        let source = p.source.to_field(p.dimension).map_err(|e| under("problem.source", e))?;
        let s = &self.solver;
        let solver = EpSolveConfig {
            residual_tol: s.residual_tol,
            max_sweeps: s.max_sweeps,
            scalar_tol: s.scalar_tol,
        };
        solver.validate()?;
        let d = &self.diagnostics;
        if d.save_stride == 0 {
            return Err(GpmeError::config("diagnostics.save_stride", "save stride must be at least 1"));
        }
        if !(d.r >= 1.0 && d.r.is_finite()) {
            return Err(GpmeError::config("diagnostics.r", format!("r must lie in [1, ∞), got {}", d.r)));
        }
        if d.sample_times == 0 {
            return Err(GpmeError::config("diagnostics.sample_times", "need at least one sample time"));
        }
        let inner = (0..grid.dim()).map(|a| grid.half_extent(a)).fold(f64::INFINITY, f64::min);
        for (i, &r) in self.radii().iter().enumerate() {
            if !(r > 0.0 && r <= inner) {
                return Err(GpmeError::config(
                    format!("diagnostics.radii[{i}]"),
                    format!("radius must lie in (0, {inner}], got {r}"),
                ));
            }
        }
        if s.method == EpMethod::Newton && (p.dimension != 1 || operator.measure.is_some()) {
            return Err(GpmeError::config(
                "solver.method",
                "the newton method supports only the one-dimensional local operator",
            ));
        }
        let problem = ProblemSpec {
            operator,
            phi: p.phi.clone(),
            flux: p.flux.clone(),
            initial,
            source,
            grid,
            time,
        };
        problem.validate()?;
        let opts = RunOptions {
            solver,
            method: s.method,
            save_stride: d.save_stride,
        };
        Ok((problem, opts))
    }

    pub fn radii(&self) -> Vec<f64> {
        let l = self.problem.box_half_extent;
        self.diagnostics
            .radii
            .clone()
            .unwrap_or_else(|| vec![0.25 * l, 0.5 * l, 0.75 * l])
    }

    /// Configuration for refinement level `level` (`h / 2^level`).
    pub fn refined(&self, level: u32) -> Self {
        let mut c = self.clone();
        c.problem.h = self.problem.h / 2f64.powi(level as i32);
        c.problem.time_step = self.problem.time_step.refined(level);
        c
    }
}

/// Shipped presets: `(name, JSON)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("heat_gaussian_1d", include_str!("../presets/heat_gaussian_1d.json")),
    ("pme_barenblatt_1d", include_str!("../presets/pme_barenblatt_1d.json")),
    ("fast_diffusion_1d", include_str!("../presets/fast_diffusion_1d.json")),
    ("stefan_1d", include_str!("../presets/stefan_1d.json")),
    ("frac_heat_poisson_1d", include_str!("../presets/frac_heat_poisson_1d.json")),
    ("burgers_riemann_1d", include_str!("../presets/burgers_riemann_1d.json")),
    ("cde_burgers_frac_1d", include_str!("../presets/cde_burgers_frac_1d.json")),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            c.build().unwrap_or_else(|e| panic!("{name}: {e}"));
            // Echo round-trips.
            assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }

    #[test]
    fn missing_phi_names_path() {
        let mut v: serde_json::Value = serde_json::from_str(PRESETS[0].1).unwrap();
        v["problem"].as_object_mut().unwrap().remove("phi");
        match RunConfig::from_json(&v.to_string()) {
            Err(GpmeError::Config { path, .. }) => assert_eq!(path, "problem.phi"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(PRESETS[0].1).unwrap();
        v["problem"]["colour"] = serde_json::json!(1);
        match RunConfig::from_json(&v.to_string()) {
            Err(GpmeError::Config { path, .. }) => assert!(path.starts_with("problem"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refinement_scales_steps() {
        let p = TimeStepPolicy::Knots {
            times: vec![0.0, 1.0],
        };
        assert_eq!(
            p.refined(2),
            TimeStepPolicy::Knots {
                times: vec![0.0, 0.25, 0.5, 0.75, 1.0]
            }
        );
        let g = TimeStepPolicy::Fixed { dt: 0.3 }.time_grid(0.1, 1.0).unwrap();
        assert_eq!(g.steps(), 4);
        assert_eq!(g.final_time(), 1.0);
    }
}
