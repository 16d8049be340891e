//! Built-in property suites run by `gpme check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, PRESETS};
use crate::diagnostics::{equitightness_check, tail_mass, Cutoff};
use crate::elliptic::{ep_residual, solve_ep_with, EpSolveConfig, PhiSpec};
use crate::error::{GpmeError, Result};
use crate::evolution::run;
use crate::grid::{GridFunction, UniformGrid};
use crate::levy::{
    check_moments, laplacian_stencil, measure_stencil, DiscreteOperator, MeasureSpec, MomentVariant, OperatorSpec,
};

pub const SUITES: &[&str] = &["moments", "resolvent", "evolution", "equitightness", "all"];

/// One property outcome: `slack` is the measured margin (negative on failure
/// for inequality checks, the observed error for equalities).
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub slack: f64,
}

impl CheckOutcome {
    fn within(name: &str, error: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            pass: error <= tol,
            slack: error,
        }
    }

    fn at_most(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.into(),
            pass: lhs <= rhs,
            slack: rhs - lhs,
        }
    }
}

pub fn run_suite(name: &str) -> Result<Vec<CheckOutcome>> {
    match name {
        "moments" => moments(),
        "resolvent" => resolvent(),
        "evolution" => evolution(),
        "equitightness" => equitightness(),
        "all" => {
            let mut all = moments()?;
            all.extend(resolvent()?);
            all.extend(evolution()?);
            all.extend(equitightness()?);
            Ok(all)
        }
        other => Err(GpmeError::config(
            "suite",
            format!("unknown suite `{other}`; expected one of {}", SUITES.join(", ")),
        )),
    }
}

fn moments() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let g = UniformGrid::new(1, 0.5, 4.0)?;
    let lap = laplacian_stencil(&g);
    let a = check_moments(&lap, MomentVariant::A, &[2.0])?;
    out.push(CheckOutcome::within("laplacian far mass is zero", a.far_mass, 0.0));
    out.push(CheckOutcome::within("laplacian near second moment 2N", (a.near_second_moment - 2.0).abs(), 1e-14));

    let g1 = UniformGrid::new(1, 1.0, 4.0)?;
    let frac = measure_stencil(&MeasureSpec::fractional(1, 1.0)?, &g1, 4.0)?;
    let w1 = frac.entries().find(|(o, _)| o == &[1]).map(|(_, w)| w).unwrap_or(f64::NAN);
    out.push(CheckOutcome::within("fractional weight at offset 1 equals 4/3", (w1 - 4.0 / 3.0).abs(), 1e-14));

    let mut values = Vec::new();
    let mut symmetric = true;
    for h in [0.125, 0.0625, 0.03125] {
        let g = UniformGrid::new(1, h, 20.0)?;
        let s = measure_stencil(&MeasureSpec::fractional(1, 1.0)?, &g, 20.0)?;
        symmetric &= s.weights().iter().all(|&w| w >= 0.0)
            && s.entries().all(|(o, w)| s.entries().any(|(p, v)| p[0] == -o[0] && v == w));
        let rep = check_moments(&s, MomentVariant::ADoublePrime { alpha: 1.0 }, &[2.0, 4.0, 8.0, 16.0])?;
        values.extend(rep.a_pp_values.iter().map(|v| v.value));
    }
    out.push(CheckOutcome::within("fractional stencil symmetric and nonnegative", if symmetric { 0.0 } else { 1.0 }, 0.0));
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    out.push(CheckOutcome::at_most("fractional A'' quantity uniformly bounded (max/min)", max / min, 10.0));
    Ok(out)
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = a.iter().map(|x| x + rng.gen_range(0.0..0.5)).collect();
    (a, b)
}

fn resolvent() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let g = UniformGrid::new(1, 1.0, 1.0)?;
    let op = DiscreteOperator::new(&g, true, None)?;
    let cfg = EpSolveConfig {
        residual_tol: Some(1e-13),
        max_sweeps: Some(1000),
        ..EpSolveConfig::default()
    };
    let id = PhiSpec::Linear { slope: 1.0 };
    let sol = solve_ep_with(&op, &id, 1.0, &[0.0, 1.0, 0.0], &cfg)?;
    let err = sol
        .w
        .iter()
        .zip([1.0 / 7.0, 3.0 / 7.0, 1.0 / 7.0])
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    out.push(CheckOutcome::within("three-node oracle (1/7, 3/7, 1/7)", err, 1e-10));
    out.push(CheckOutcome::within(
        "reported residual equals recomputation",
        (sol.residual - ep_residual(&op, &id, 1.0, &sol.w, &[0.0, 1.0, 0.0])).abs(),
        0.0,
    ));

    let grid = UniformGrid::new(1, 0.1, 2.0)?;
    let vol = grid.cell_volume();
    let spec = OperatorSpec {
        local: true,
        measure: Some(MeasureSpec::fractional_laplacian(1, 1.0)?),
        support_radius: None,
        weight_rule: Default::default(),
    };
    let op = spec.build(&grid)?;
    let n = grid.node_count();
    let cfg = EpSolveConfig {
        residual_tol: Some(1e-12),
        max_sweeps: Some(100_000),
        ..EpSolveConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut cmp, mut contr, mut bound) = (f64::MIN, f64::MIN, f64::MIN);
    for phi in [PhiSpec::Power { m: 2.0 }, PhiSpec::Power { m: 0.5 }, PhiSpec::Stefan { latent: 0.3 }] {
        for _ in 0..5 {
            let (rho, rho_hat) = random_pair(&mut rng, n);
            let w = solve_ep_with(&op, &phi, 0.01, &rho, &cfg)?;
            let wh = solve_ep_with(&op, &phi, 0.01, &rho_hat, &cfg)?;
            let tol = w.tolerance.max(wh.tolerance);
            cmp = cmp.max(w.w.iter().zip(&wh.w).map(|(a, b)| a - b - 2.0 * tol).fold(f64::MIN, f64::max));
            let lhs: f64 = vol * w.w.iter().zip(&wh.w).map(|(a, b)| (b - a).max(0.0)).sum::<f64>();
            let rhs: f64 = vol * rho.iter().zip(&rho_hat).map(|(a, b)| (b - a).max(0.0)).sum::<f64>();
            contr = contr.max(lhs - rhs - tol * n as f64 * vol);
            let sup = rho.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            bound = bound.max(w.w.iter().fold(0.0f64, |a, v| a.max(v.abs())) - sup - tol);
        }
    }
    out.push(CheckOutcome::at_most("comparison w <= w_hat", cmp, 0.0));
    out.push(CheckOutcome::at_most("L1 contraction", contr, 0.0));
    out.push(CheckOutcome::at_most("sup bound |w| <= |rho|", bound, 0.0));
    Ok(out)
}

fn coarse(name: &str) -> Result<RunConfig> {
    let mut c = RunConfig::preset(name)?;
    c.problem.h = 1.0 / 16.0;
    c.problem.final_time = 0.1;
    c.diagnostics.save_stride = 1;
    Ok(c)
}

fn evolution() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (name, _) in PRESETS {
        let c = coarse(name)?;
        let (problem, opts) = c.build()?;
        let o = run(&problem, &opts)?;
        let m0 = o.report.interior_mass[0];
        out.push(CheckOutcome::at_most(
            &format!("{name}: ledger identity"),
            o.report.max_ledger_defect(),
            1e-9 * (1.0 + m0.abs()),
        ));
        let u0 = o.trajectory.initial();
        let sup0 = u0.max_abs();
        let worst = o.trajectory.fields().iter().map(GridFunction::max_abs).fold(0.0, f64::max);
        out.push(CheckOutcome::at_most(&format!("{name}: sup stability"), worst, sup0 + 1e-9));
        let l1 = o.trajectory.fields().iter().map(|f| f.lr_norm(1.0)).fold(0.0, f64::max);
        out.push(CheckOutcome::at_most(&format!("{name}: L1 stability"), l1, u0.lr_norm(1.0) + 1e-9));
    }
    Ok(out)
}

fn equitightness() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let base = Cutoff::new(1.0)?;
    for (k, p) in [(1usize, f64::INFINITY), (2, f64::INFINITY), (1, 2.0), (2, 2.0)] {
        let b = base.derivative_norm(1, k, p)?;
        let mut err = 0.0f64;
        for r in [4.0, 8.0] {
            let ratio = Cutoff::new(r)?.derivative_norm(1, k, p)? / b;
            let expect = f64::powf(r, if p.is_infinite() { 0.0 } else { 1.0 / p } - k as f64);
            err = err.max((ratio / expect - 1.0).abs());
        }
        out.push(CheckOutcome::within(&format!("cutoff scaling k={k} p={p}"), err, 1e-6));
    }
    for name in ["pme_barenblatt_1d", "fast_diffusion_1d", "frac_heat_poisson_1d"] {
        let mut c = coarse(name)?;
        if name == "frac_heat_poisson_1d" {
            c.problem.box_half_extent = 8.0;
        }
        let (problem, opts) = c.build()?;
        let o = run(&problem, &opts)?;
        for radius in c.radii() {
            let rep = equitightness_check(&o.trajectory, &problem, &o.report, radius, 1.0)?;
            out.push(CheckOutcome::at_most(
                &format!("{name}: tail bound at R={radius}"),
                rep.lhs,
                rep.rhs * (1.0 + 1e-9) + rep.residual_allowance,
            ));
        }
        let last = o.trajectory.last();
        let masses: Vec<f64> = (0..=16).map(|i| tail_mass(last, i as f64 * 0.5, 1.0)).collect();
        let monotone = masses.windows(2).all(|w| w[1] <= w[0]);
        out.push(CheckOutcome::within(&format!("{name}: tail mass nonincreasing in R"), if monotone { 0.0 } else { 1.0 }, 0.0));
    }
    Ok(out)
}
