//! Implicit time marching `U^j = T^imp[U^{j-1} + Δt_j G^j]`, optionally with
//! an explicit monotone convection step, and the discrete mass ledger.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{solve_ep_method, EpMethod, EpSolveConfig, PhiSpec};
use crate::error::{GpmeError, Result};
use crate::flux::FluxSpec;
use crate::grid::{
    project_cell_average, project_source_step, GridFunction, SourceSummary, SpaceTimeField, SpatialField, TimeGrid,
    Trajectory, UniformGrid, PAR_MIN_LEN,
};
use crate::levy::{DiscreteOperator, OperatorSpec};
use crate::quadrature::compensated_sum;

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub operator: OperatorSpec,
    pub phi: PhiSpec,
    pub flux: Option<FluxSpec>,
    pub initial: SpatialField,
    pub source: SpaceTimeField,
    pub grid: UniformGrid,
    pub time: TimeGrid,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.operator.validate(self.grid.dim())?;
        self.phi.validate()?;
        if let Some(f) = &self.flux {
            f.validate(self.grid.dim())?;
            let limit = f.cfl_limit(self.grid.h());
            for j in 1..=self.time.steps() {
                let dt = self.time.dt(j);
                if dt > limit * (1.0 + 1e-12) {
                    return Err(GpmeError::config(
                        "problem.time_step",
                        format!("dt_{j} = {dt} exceeds the convection limit {limit}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    #[serde(flatten)]
    pub solver: EpSolveConfig,
    #[serde(default)]
    pub method: EpMethod,
    /// Keep every `save_stride`-th knot (the last knot is always kept).
    #[serde(default = "one")]
    pub save_stride: usize,
}

fn one() -> usize {
    1
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            solver: EpSolveConfig::default(),
            method: EpMethod::Jacobi,
            save_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub sweeps: usize,
    /// `Δt h^N Σ G^j`.
    pub source_increment: f64,
    /// Mass leaving the box during the step.
    pub leakage_increment: f64,
}

/// Ledger arrays indexed by knot `j = 0..=J` (per-step arrays by `j = 1..=J`
/// stored at position `j - 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub times: Vec<f64>,
    pub interior_mass: Vec<f64>,
    pub source_mass: Vec<f64>,
    pub leakage: Vec<f64>,
    /// `interior_mass - (interior_mass[0] + source_mass - leakage)`.
    pub ledger_defect: Vec<f64>,
    pub l1: Vec<f64>,
    pub linf: Vec<f64>,
    pub residual: Vec<f64>,
    pub sweeps: Vec<usize>,
    pub tolerance: Vec<f64>,
    pub saved_steps: Vec<usize>,
}

impl RunReport {
    fn new() -> Self {
        Self {
            times: Vec::new(),
            interior_mass: Vec::new(),
            source_mass: Vec::new(),
            leakage: Vec::new(),
            ledger_defect: Vec::new(),
            l1: Vec::new(),
            linf: Vec::new(),
            residual: Vec::new(),
            sweeps: Vec::new(),
            tolerance: Vec::new(),
            saved_steps: Vec::new(),
        }
    }

    fn record_knot(&mut self, t: f64, u: &GridFunction, source: f64, leak: f64) {
        let mass = u.mass();
        let m0 = self.interior_mass.first().copied().unwrap_or(mass);
        self.times.push(t);
        self.interior_mass.push(mass);
        self.source_mass.push(source);
        self.leakage.push(leak);
        self.ledger_defect.push(mass - (m0 + source - leak));
        self.l1.push(u.lr_norm(1.0));
        self.linf.push(u.max_abs());
    }

    pub fn max_ledger_defect(&self) -> f64 {
        self.ledger_defect.iter().fold(0.0, |a, d| a.max(d.abs()))
    }

    pub fn total_sweeps(&self) -> usize {
        self.sweeps.iter().sum()
    }
}

/// Prepared operator and nonlinearities for repeated steps.
pub struct Stepper {
    op: DiscreteOperator,
    phi: PhiSpec,
    flux: Option<FluxSpec>,
    solver: EpSolveConfig,
    method: EpMethod,
}

impl Stepper {
    pub fn new(problem: &ProblemSpec, opts: &RunOptions) -> Result<Self> {
        opts.solver.validate()?;
        let op = problem.operator.build(&problem.grid)?;
        Ok(Self::from_operator(op, problem.phi.clone(), problem.flux.clone(), opts))
    }

    pub fn from_operator(op: DiscreteOperator, phi: PhiSpec, flux: Option<FluxSpec>, opts: &RunOptions) -> Self {
        Self {
            op,
            phi,
            flux: flux.filter(|f| !f.is_zero()),
            solver: opts.solver,
            method: opts.method,
        }
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    /// One step from `u_prev` with cell-time-averaged source `g` (`None` for
    /// zero). Returns the new values and the step diagnostics (step index
    /// and time left for the caller).
    pub fn step(&self, u_prev: &[f64], g: Option<&[f64]>, dt: f64) -> Result<(Vec<f64>, StepDiagnostics)> {
        let grid = self.op.grid();
        let n = grid.node_count();
        if u_prev.len() != n || g.is_some_and(|g| g.len() != n) {
            return Err(GpmeError::InvalidInput("grid function shapes do not match".into()));
        }
        let mut rho: Vec<f64> = match g {
            Some(g) => u_prev.iter().zip(g).map(|(u, g)| u + dt * g).collect(),
            None => u_prev.to_vec(),
        };
        let mut leakage = 0.0;
        if let Some(flux) = &self.flux {
            let limit = flux.cfl_limit(grid.h());
            if dt > limit * (1.0 + 1e-12) {
                return Err(GpmeError::config(
                    "problem.time_step",
                    format!("dt = {dt} exceeds the convection limit {limit}"),
                ));
            }
            let (div, boundary) = convective_divergence(flux, grid, u_prev);
            rho.par_iter_mut()
                .with_min_len(PAR_MIN_LEN)
                .zip(div.par_iter())
                .for_each(|(r, d)| *r -= dt * d);
            leakage += dt * boundary;
        }
        let sol = solve_ep_method(&self.op, &self.phi, dt, &rho, &self.solver, self.method)?;
        let phiw: Vec<f64> = sol.w.iter().map(|&w| self.phi.eval(w)).collect();
        let vol = grid.cell_volume();
        leakage += dt
            * vol
            * compensated_sum(phiw.iter().zip(self.op.outside_weight()).map(|(p, o)| p * o));
        let source_increment = g.map_or(0.0, |g| dt * vol * compensated_sum(g.iter().copied()));
        Ok((
            sol.w,
            StepDiagnostics {
                step: 0,
                time: 0.0,
                dt,
                residual: sol.residual,
                tolerance: sol.tolerance,
                sweeps: sol.sweeps,
                source_increment,
                leakage_increment: leakage,
            },
        ))
    }
}

/// `Σ_i D⁻_{h,i} F_i(U_β, U_{β+e_i})` with zero extension, and the net
/// outward face flux `h^{N-1} Σ (F(U_last, 0) - F(0, U_first))`.
fn convective_divergence(flux: &FluxSpec, grid: &UniformGrid, u: &[f64]) -> (Vec<f64>, f64) {
    let n = grid.node_count();
    let h = grid.h();
    let mut div = vec![0.0; n];
    let mut boundary = Vec::new();
    for axis in 0..grid.dim() {
        let stride = grid.strides()[axis] as isize;
        let k = grid.half_nodes()[axis] as i64;
        div.par_iter_mut()
            .with_min_len(PAR_MIN_LEN)
            .enumerate()
            .for_each(|(i, d)| {
                let b = grid.multi_index(i)[axis];
                let up = if b < k { u[(i as isize + stride) as usize] } else { 0.0 };
                let down = if b > -k { u[(i as isize - stride) as usize] } else { 0.0 };
                let plus = flux.numerical(axis, u[i], up);
                let minus = flux.numerical(axis, down, u[i]);
                *d += (plus - minus) / h;
            });
        for (i, &ui) in u.iter().enumerate() {
            let b = grid.multi_index(i)[axis];
            if b == k {
                boundary.push(flux.numerical(axis, ui, 0.0));
            }
            if b == -k {
                boundary.push(-flux.numerical(axis, 0.0, ui));
            }
        }
    }
    let face = h.powi(grid.dim() as i32 - 1);
    (div, face * compensated_sum(boundary))
}

/// One implicit step of the diffusion scheme.
pub fn step_gpme(
    u_prev: &GridFunction,
    g: &GridFunction,
    dt: f64,
    problem: &ProblemSpec,
    opts: &RunOptions,
) -> Result<(GridFunction, StepDiagnostics)> {
    let mut p = problem.clone();
    p.flux = None;
    step_with(u_prev, g, dt, &p, opts)
}

/// One step of the convection-diffusion scheme (explicit convection).
pub fn step_cde(
    u_prev: &GridFunction,
    g: &GridFunction,
    dt: f64,
    problem: &ProblemSpec,
    opts: &RunOptions,
) -> Result<(GridFunction, StepDiagnostics)> {
    if problem.flux.is_none() {
        return Err(GpmeError::config("problem.flux", "convection step needs a flux"));
    }
    step_with(u_prev, g, dt, problem, opts)
}

fn step_with(
    u_prev: &GridFunction,
    g: &GridFunction,
    dt: f64,
    problem: &ProblemSpec,
    opts: &RunOptions,
) -> Result<(GridFunction, StepDiagnostics)> {
    if !u_prev.grid().same_lattice(&problem.grid) || !g.grid().same_lattice(&problem.grid) {
        return Err(GpmeError::config("problem.grid", "grid functions live on a different lattice"));
    }
    let stepper = Stepper::new(problem, opts)?;
    let (w, diag) = stepper.step(u_prev.values(), Some(g.values()), dt)?;
    Ok((GridFunction::from_values(&problem.grid, w)?, diag))
}

/// `(U(x) - U(x - h e_i))/h` for `sign < 0`, `(U(x + h e_i) - U(x))/h`
/// otherwise, with zero extension.
pub fn one_sided_difference(u: &GridFunction, axis: usize, sign: i32) -> Result<GridFunction> {
    let grid = u.grid();
    if axis >= grid.dim() {
        return Err(GpmeError::InvalidInput(format!("axis {axis} out of range")));
    }
    let v = u.values();
    let k = grid.half_nodes()[axis] as i64;
    let stride = grid.strides()[axis] as isize;
    let h = grid.h();
    let out: Vec<f64> = (0..v.len())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| {
            let b = grid.multi_index(i)[axis];
            if sign < 0 {
                let prev = if b > -k { v[(i as isize - stride) as usize] } else { 0.0 };
                (v[i] - prev) / h
            } else {
                let next = if b < k { v[(i as isize + stride) as usize] } else { 0.0 };
                (next - v[i]) / h
            }
        })
        .collect();
    GridFunction::from_values(grid, out)
}

pub struct RunOutput {
    pub trajectory: Trajectory,
    pub report: RunReport,
    pub steps: Vec<StepDiagnostics>,
}

/// A failed run with whatever was computed before the failure.
pub struct RunAbort {
    pub error: GpmeError,
    pub partial: Option<RunOutput>,
}

impl std::fmt::Debug for RunAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunAbort")
            .field("error", &self.error)
            .field("completed_steps", &self.partial.as_ref().map(|p| p.steps.len()))
            .finish()
    }
}

impl From<Box<RunAbort>> for GpmeError {
    fn from(a: Box<RunAbort>) -> Self {
        a.error
    }
}

fn abort(error: GpmeError) -> Box<RunAbort> {
    Box::new(RunAbort { error, partial: None })
}

/// Projects the data and marches through every knot of the time grid.
pub fn run(problem: &ProblemSpec, opts: &RunOptions) -> std::result::Result<RunOutput, Box<RunAbort>> {
    problem.validate().map_err(abort)?;
    if opts.save_stride == 0 {
        return Err(abort(GpmeError::config("diagnostics.save_stride", "stride must be positive")));
    }
    let stepper = Stepper::new(problem, opts).map_err(abort)?;
    let u0 = project_cell_average(&problem.initial, &problem.grid).map_err(abort)?;
    march(&stepper, problem, u0, opts.save_stride)
}

/// Step loop on a prepared operator, starting from projected data `u0`.
pub fn march(
    stepper: &Stepper,
    problem: &ProblemSpec,
    u0: GridFunction,
    save_stride: usize,
) -> std::result::Result<RunOutput, Box<RunAbort>> {
    march_sampled(stepper, problem, u0, save_stride, &[]).map(|(out, _)| out)
}

/// Like [`march`], additionally evaluating the full-knot time interpolant at
/// the increasing `samples` (clamped to `[0, T]`) as the march passes them.
pub fn march_sampled(
    stepper: &Stepper,
    problem: &ProblemSpec,
    u0: GridFunction,
    save_stride: usize,
    samples: &[f64],
) -> std::result::Result<(RunOutput, Vec<GridFunction>), Box<RunAbort>> {
    if samples.windows(2).any(|w| w[1] < w[0]) {
        return Err(abort(GpmeError::InvalidInput("sample times must be nondecreasing".into())));
    }
    let grid = &problem.grid;
    let t_final = problem.time.final_time();
    let mut sampled = Vec::with_capacity(samples.len());
    let mut next_sample = 0;
    while next_sample < samples.len() && samples[next_sample] <= 0.0 {
        sampled.push(u0.clone());
        next_sample += 1;
    }
    let time = &problem.time;
    let steps_total = time.steps();
    let mut report = RunReport::new();
    let mut summary = SourceSummary::empty(grid);
    let mut steps = Vec::with_capacity(steps_total);
    report.record_knot(0.0, &u0, 0.0, 0.0);
    report.saved_steps.push(0);
    let mut saved_times = vec![0.0];
    let mut fields = vec![u0.clone()];
    let mut current = u0.into_values();
    let mut source_mass = 0.0;
    let mut leakage = 0.0;
    for j in 1..=steps_total {
        let (t0, t1) = (time.knots()[j - 1], time.knots()[j]);
        let dt = t1 - t0;
        let outcome = (|| -> Result<(Vec<f64>, StepDiagnostics)> {
            if problem.source.is_zero() {
                stepper.step(&current, None, dt)
            } else {
                let g = project_source_step(&problem.source, grid, t0, t1)?;
                summary.accumulate(&g, dt);
                stepper.step(&current, Some(g.values()), dt)
            }
        })();
        let (next, mut diag) = match outcome {
            Ok(v) => v,
            Err(error) => {
                let partial = TimeGrid::new(saved_times.clone())
                    .and_then(|tg| Trajectory::new(tg, fields.clone(), summary.clone()))
                    .ok()
                    .map(|trajectory| RunOutput {
                        trajectory,
                        report: report.clone(),
                        steps: steps.clone(),
                    });
                return Err(Box::new(RunAbort { error, partial }));
            }
        };
        diag.step = j;
        diag.time = t1;
        source_mass += diag.source_increment;
        leakage += diag.leakage_increment;
        let u = GridFunction::from_values(grid, next).map_err(abort)?;
        while next_sample < samples.len() && (samples[next_sample].min(t_final) <= t1 || j == steps_total) {
            let theta = ((samples[next_sample].min(t_final) - t0) / dt).clamp(0.0, 1.0);
            let vals: Vec<f64> = current
                .iter()
                .zip(u.values())
                .map(|(a, b)| a + theta * (b - a))
                .collect();
            sampled.push(GridFunction::from_values(grid, vals).map_err(abort)?);
            next_sample += 1;
        }
        report.record_knot(t1, &u, source_mass, leakage);
        report.residual.push(diag.residual);
        report.sweeps.push(diag.sweeps);
        report.tolerance.push(diag.tolerance);
        steps.push(diag);
        if j % save_stride == 0 || j == steps_total {
            saved_times.push(t1);
            fields.push(u.clone());
            report.saved_steps.push(j);
        }
        current = u.into_values();
    }
    let trajectory = TimeGrid::new(saved_times)
        .and_then(|tg| Trajectory::new(tg, fields, summary))
        .map_err(abort)?;
    while sampled.len() < samples.len() {
        sampled.push(trajectory.last().clone());
    }
    Ok((
        RunOutput {
            trajectory,
            report,
            steps,
        },
        sampled,
    ))
}

/// Position where a profile decreasing to the right crosses `level`,
/// linearly interpolated between the last node at or above it and the next.
pub fn front_location(u: &GridFunction, level: f64) -> Option<f64> {
    let grid = u.grid();
    if grid.dim() != 1 {
        return None;
    }
    let v = u.values();
    let i = v.iter().rposition(|&x| x >= level)?;
    let x0 = grid.coord(i, 0);
    if i + 1 >= v.len() {
        return Some(x0);
    }
    let (a, b) = (v[i], v[i + 1]);
    Some(x0 + grid.h() * (a - level) / (a - b))
}
