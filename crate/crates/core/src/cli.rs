//! Command implementations behind the `gpme` binary: run, study, stencil.
//! Everything written is a pure function of the configuration.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::diagnostics::{
    equitightness_check, sampled_exact_error, sampled_lr_distance, uniform_samples, EquitightnessReport,
};
use crate::error::{GpmeError, Result};
use crate::evolution::{front_location, march_sampled, run, RunOutput, RunReport, Stepper};
use crate::grid::{format_float, project_cell_average, GridFunction};
use crate::levy::{check_moments, MomentReport, MomentVariant};

/// Reads a configuration file or a named preset (exactly one of them).
pub fn load_config(path: Option<&Path>, preset: Option<&str>) -> Result<RunConfig> {
    match (path, preset) {
        (Some(p), None) => {
            let text = fs::read_to_string(p)
                .map_err(|e| GpmeError::config("config", format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_json(&text)
        }
        (None, Some(name)) => RunConfig::preset(name),
        (Some(_), Some(_)) => Err(GpmeError::config("config", "give either --config or --preset, not both")),
        (None, None) => Err(GpmeError::config("config", "one of --config or --preset is required")),
    }
}

/// Result of a run together with its tail diagnostics.
pub struct RunArtifacts {
    pub output: RunOutput,
    pub equitightness: Vec<EquitightnessReport>,
    /// `max_t ‖Ũ - P_h u‖_{L^r}` over the saved knots when an exact solution
    /// is configured.
    pub exact_error: Option<f64>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a RunConfig,
    steps: usize,
    max_ledger_defect: f64,
    total_sweeps: usize,
    exact_error: Option<f64>,
    equitightness: &'a [EquitightnessReport],
    report: &'a RunReport,
}

pub fn execute_run(cfg: &RunConfig) -> Result<RunArtifacts> {
    let (problem, opts) = cfg.build()?;
    let output = run(&problem, &opts)?;
    let r = cfg.diagnostics.r;
    let equitightness = cfg
        .radii()
        .iter()
        .map(|&radius| equitightness_check(&output.trajectory, &problem, &output.report, radius, r))
        .collect::<Result<Vec<_>>>()?;
    let exact_error = match &cfg.diagnostics.exact {
        Some(exact) => {
            let traj = &output.trajectory;
            let times = traj.time_grid().knots().to_vec();
            Some(sampled_exact_error(traj.fields(), exact, &times, r)?)
        }
        None => None,
    };
    Ok(RunArtifacts {
        output,
        equitightness,
        exact_error,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn write_run(cfg: &RunConfig, art: &RunArtifacts, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let report = &art.output.report;
    for (field, &j) in art.output.trajectory.fields().iter().zip(&report.saved_steps) {
        let mut w = create(&dir.join(format!("u_{j:06}.csv")))?;
        field.write_csv(&mut w)?;
        w.flush()?;
    }
    let record = RunRecord {
        config: cfg,
        steps: art.output.steps.len(),
        max_ledger_defect: report.max_ledger_defect(),
        total_sweeps: report.total_sweeps(),
        exact_error: art.exact_error,
        equitightness: &art.equitightness,
        report,
    };
    let mut w = create(&dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &record)?;
    writeln!(w)?;
    w.flush()?;
    let mut w = create(&dir.join("equitightness.csv"))?;
    writeln!(w, "R,lhs,rhs,pass,asserted")?;
    for e in &art.equitightness {
        writeln!(
            w,
            "{},{},{},{},{}",
            format_float(e.radius),
            format_float(e.lhs),
            format_float(e.rhs),
            e.pass,
            e.asserted
        )?;
    }
    w.flush()?;
    Ok(())
}

fn out_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory))
}

/// `run`: validates, computes and writes the artifacts. With `dry_run` only
/// the validated configuration is echoed to stdout.
pub fn cmd_run(cfg: &RunConfig, out: Option<&Path>, dry_run: bool) -> Result<()> {
    cfg.build()?;
    if dry_run {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let art = execute_run(cfg)?;
    let dir = out_dir(cfg, out);
    write_run(cfg, &art, &dir)?;
    let pass = art.equitightness.iter().filter(|e| e.asserted).all(|e| e.pass);
    println!(
        "run: {} steps, max ledger defect {:e}, equitightness {}, output {}",
        art.output.steps.len(),
        art.output.report.max_ledger_defect(),
        if pass { "pass" } else { "FAIL" },
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub level: u32,
    pub h: f64,
    /// `C_t(L^r)` distance to the exact solution or to the finest level.
    pub error: f64,
    /// `|front - shock|` at `T` for families with a shock.
    pub shock_error: Option<f64>,
    pub max_ledger_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    /// `exact` or `finest`.
    pub reference: String,
    pub r: f64,
    pub sample_times: Vec<f64>,
    pub rows: Vec<StudyRow>,
    /// `log₂(e_k / e_{k+1})` for consecutive rows.
    pub orders: Vec<f64>,
    /// Least-squares slope of `log₂ e` against `log₂ h`.
    pub fitted_order: Option<f64>,
}

fn fitted_order(rows: &[StudyRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.error > 0.0)
        .map(|r| (r.h.log2(), r.error.log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

/// Refinement study over `levels` spacings `h, h/2, …`.
pub fn run_study(cfg: &RunConfig, levels: u32) -> Result<StudyResult> {
    if levels < 2 {
        return Err(GpmeError::config("levels", format!("a study needs at least 2 levels, got {levels}")));
    }
    cfg.build()?;
    let r = cfg.diagnostics.r;
    let times = uniform_samples(cfg.problem.final_time, cfg.diagnostics.sample_times);
    let mut sampled: Vec<(f64, Vec<GridFunction>, f64, Option<f64>)> = Vec::new();
    for level in 0..levels {
        let c = cfg.refined(level);
        let (problem, mut opts) = c.build()?;
        opts.save_stride = usize::MAX;
        let stepper = Stepper::new(&problem, &opts)?;
        let u0 = project_cell_average(&problem.initial, &problem.grid)?;
        let (out, fields) = march_sampled(&stepper, &problem, u0, opts.save_stride, &times)?;
        let t = problem.time.final_time();
        let shock = cfg
            .diagnostics
            .exact
            .as_ref()
            .and_then(|e| e.shock_location(t))
            .and_then(|s| front_location(out.trajectory.last(), 0.5).map(|f| (f - s).abs()));
        sampled.push((problem.grid.h(), fields, out.report.max_ledger_defect(), shock));
    }
    let mut rows = Vec::new();
    let reference = match &cfg.diagnostics.exact {
        Some(exact) => {
            for (level, (h, fields, defect, shock)) in sampled.iter().enumerate() {
                rows.push(StudyRow {
                    level: level as u32,
                    h: *h,
                    error: sampled_exact_error(fields, exact, &times, r)?,
                    shock_error: *shock,
                    max_ledger_defect: *defect,
                });
            }
            "exact"
        }
        None => {
            let finest = &sampled.last().expect("levels ≥ 2").1;
            for (level, (h, fields, defect, shock)) in sampled.iter().enumerate().take(sampled.len() - 1) {
                rows.push(StudyRow {
                    level: level as u32,
                    h: *h,
                    error: sampled_lr_distance(fields, finest, r)?,
                    shock_error: *shock,
                    max_ledger_defect: *defect,
                });
            }
            "finest"
        }
    };
    let orders = rows.windows(2).map(|w| (w[0].error / w[1].error).log2()).collect();
    let fitted = fitted_order(&rows);
    Ok(StudyResult {
        reference: reference.to_string(),
        r,
        sample_times: times,
        rows,
        orders,
        fitted_order: fitted,
    })
}

pub fn cmd_study(cfg: &RunConfig, levels: u32, out: Option<&Path>) -> Result<()> {
    let result = run_study(cfg, levels)?;
    let dir = out_dir(cfg, out);
    fs::create_dir_all(&dir)?;
    let mut w = create(&dir.join("study.csv"))?;
    writeln!(w, "level,h,error")?;
    for row in &result.rows {
        writeln!(w, "{},{},{}", row.level, format_float(row.h), format_float(row.error))?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct Record<'a> {
        config: &'a RunConfig,
        levels: u32,
        #[serde(flatten)]
        result: &'a StudyResult,
    }
    let mut w = create(&dir.join("study.json"))?;
    serde_json::to_writer_pretty(
        &mut w,
        &Record {
            config: cfg,
            levels,
            result: &result,
        },
    )?;
    writeln!(w)?;
    w.flush()?;
    for row in &result.rows {
        println!("level {} h {} error {:e}", row.level, format_float(row.h), row.error);
    }
    match result.fitted_order {
        Some(p) => println!("fitted order {p:.3} (reference: {})", result.reference),
        None => println!("fitted order unavailable (reference: {})", result.reference),
    }
    Ok(())
}

#[derive(Serialize)]
struct StencilRecord<'a> {
    rows: usize,
    total_weight: f64,
    moments_a: &'a MomentReport,
    moments_a_double_prime: Option<&'a MomentReport>,
}

/// `stencil`: dumps the merged operator stencil and its moment sums.
pub fn cmd_stencil(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let grid = cfg.grid()?;
    let spec = cfg.operator()?;
    let op = spec.build(&grid)?;
    let stencil = op.stencil();
    let dir = out_dir(cfg, out);
    fs::create_dir_all(&dir)?;
    let mut w = create(&dir.join("stencil.csv"))?;
    stencil.write_csv(&mut w)?;
    w.flush()?;
    let radii = [2.0, 4.0, 8.0, 16.0];
    let a = check_moments(stencil, MomentVariant::A, &radii)?;
    let app = match spec.measure.as_ref().and_then(|m| m.tail_alpha()) {
        Some(alpha) => Some(check_moments(stencil, MomentVariant::ADoublePrime { alpha }, &radii)?),
        None => None,
    };
    let record = StencilRecord {
        rows: stencil.len(),
        total_weight: stencil.total_weight(),
        moments_a: &a,
        moments_a_double_prime: app.as_ref(),
    };
    let mut w = create(&dir.join("moments.json"))?;
    serde_json::to_writer_pretty(&mut w, &record)?;
    writeln!(w)?;
    w.flush()?;
    println!("stencil: {} offsets written to {}", stencil.len(), dir.display());
    Ok(())
}

/// Machine-readable error record for stderr.
pub fn error_record(e: &GpmeError) -> serde_json::Value {
    let (kind, path) = match e {
        GpmeError::Config { path, .. } => ("config", Some(path.clone())),
        GpmeError::InvalidInput(_) => ("invalid_input", None),
        GpmeError::Domain(_) => ("domain", None),
        GpmeError::NonIntegrable { .. } => ("non_integrable", None),
        GpmeError::NonConvergence { .. } => ("non_convergence", None),
        GpmeError::Quadrature(_) => ("quadrature", None),
        GpmeError::Io(_) => ("io", None),
        GpmeError::Json(_) => ("json", None),
    };
    let mut v = serde_json::json!({ "status": "error", "kind": kind, "message": e.to_string() });
    if let Some(p) = path {
        v["path"] = serde_json::Value::String(p);
    }
    if let GpmeError::NonIntegrable { cell, .. } = e {
        v["cell"] = serde_json::json!(cell);
    }
    v
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &GpmeError) -> i32 {
    match e {
        GpmeError::Config { .. } => 2,
        _ => 1,
    }
}
