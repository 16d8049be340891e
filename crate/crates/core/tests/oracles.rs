//! Worked examples checked against oracles computed independently here.

use gpme::config::RunConfig;
use gpme::diagnostics::{
    ct_lr_distance, equitightness_check, time_equicontinuity_profile, uniform_samples,
};
use gpme::elliptic::PhiSpec;
use gpme::evolution::{front_location, one_sided_difference, run, ProblemSpec, RunOptions};
use gpme::grid::{
    project_cell_average, GridFunction, SourceSummary, SpaceTimeField, SpatialField, TimeGrid, Trajectory,
    UniformGrid,
};
use gpme::levy::{
    consistency_error, laplacian_stencil, measure_stencil, DiscreteOperator, MeasureSpec, OperatorSpec,
    ReferenceOperator,
};

fn gaussian() -> SpatialField {
    SpatialField::Gaussian {
        amplitude: 1.0,
        center: vec![0.0],
        sigma: 1.0,
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn slopes(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn lp(values: &[f64], vol: f64, p: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    } else {
        (vol * values.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }
}

/// Continuum `L^p(ℝ)` norm of `f`, integrated well past the Gaussian decay.
fn lp_continuum(f: impl Fn(f64) -> f64, p: f64) -> f64 {
    if p.is_infinite() {
        (0..=20000).map(|i| f(-10.0 + i as f64 * 1e-3).abs()).fold(0.0, f64::max)
    } else {
        simpson(|x| f(x).abs().powf(p), -12.0, 12.0, 24000).powf(1.0 / p)
    }
}

#[test]
fn laplacian_on_projected_gaussian_is_second_order() {
    let mut errors = Vec::new();
    for h in [0.2, 0.1, 0.05] {
        let g = UniformGrid::new(1, h, 8.0).unwrap();
        let u = project_cell_average(&gaussian(), &g).unwrap();
        let lu = DiscreteOperator::new(&g, true, None).unwrap().apply_to(&u).unwrap();
        let err = (0..g.node_count())
            .map(|i| {
                let x = g.coord(i, 0);
                (lu.values()[i] - (x * x - 1.0) * (-0.5 * x * x).exp()).abs()
            })
            .fold(0.0, f64::max);
        errors.push(err);
    }
    for s in slopes(&errors) {
        assert!((1.8..2.2).contains(&s), "slope {s} from {errors:?}");
    }
}

#[test]
fn laplacian_consistency_order_two() {
    let reference = ReferenceOperator {
        local: true,
        measure: None,
    };
    let errors: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| {
            let g = UniformGrid::new(1, h, 8.0).unwrap();
            let empty = gpme::levy::WeightedStencil::empty(1, h);
            consistency_error(&empty, true, &gaussian(), &reference, &g).unwrap()
        })
        .collect();
    for s in slopes(&errors) {
        assert!((1.8..2.2).contains(&s), "{errors:?}");
    }
}

/// `-(-Δ)^{1/2} e^{-x²/2}` from the Fourier side:
/// `-(2/π)^{1/2} ∫_0^∞ ξ e^{-ξ²/2} cos(xξ) dξ`.
fn half_laplacian_gaussian(x: f64) -> f64 {
    -(2.0 / std::f64::consts::PI).sqrt() * simpson(|k| k * (-0.5 * k * k).exp() * (x * k).cos(), 0.0, 40.0, 40000)
}

#[test]
fn fractional_reference_matches_fourier_oracle() {
    let reference = ReferenceOperator {
        local: false,
        measure: Some(MeasureSpec::fractional_laplacian(1, 1.0).unwrap()),
    };
    for x in [0.0, 0.5, 1.3, 3.0, 6.0] {
        let got = reference.eval(&gaussian(), &[x]).unwrap();
        let want = half_laplacian_gaussian(x);
        assert!((got - want).abs() < 1e-8 * (1.0 + want.abs()), "x={x}: {got} vs {want}");
    }
}

#[test]
fn fractional_consistency_decreases() {
    let measure = MeasureSpec::fractional_laplacian(1, 1.0).unwrap();
    let reference = ReferenceOperator {
        local: false,
        measure: Some(measure.clone()),
    };
    let errors: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| {
            let g = UniformGrid::new(1, h, 8.0).unwrap();
            let s = OperatorSpec::nonlocal(measure.clone()).nonlocal_stencil(&g).unwrap().unwrap();
            consistency_error(&s, false, &gaussian(), &reference, &g).unwrap()
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn discrete_laplacian_norm_estimate() {
    let g = UniformGrid::new(1, 0.1, 10.0).unwrap();
    let u = project_cell_average(&gaussian(), &g).unwrap();
    let lu = DiscreteOperator::new(&g, true, None).unwrap().apply_to(&u).unwrap();
    for p in [1.0, 2.0, f64::INFINITY] {
        let discrete = lp(lu.values(), g.h(), p);
        let continuum = lp_continuum(|x| (x * x - 1.0) * (-0.5 * x * x).exp(), p);
        assert!(discrete <= 2.0 * continuum * (1.0 + 1e-3), "p={p}: {discrete} vs {continuum}");
    }
}

#[test]
fn discrete_nonlocal_norm_estimate() {
    let h = 0.05;
    let g = UniformGrid::new(1, h, 10.0).unwrap();
    let measure = MeasureSpec::fractional_laplacian(1, 1.0).unwrap();
    let stencil = measure_stencil(&measure, &g, 20.0).unwrap();
    let u = project_cell_average(&gaussian(), &g).unwrap();
    let lu = DiscreteOperator::new(&g, false, Some(&stencil)).unwrap().apply_to(&u).unwrap();
    let entries: Vec<(f64, f64)> = stencil.entries().map(|(o, w)| ((o[0] as f64 * h).abs(), w)).collect();
    for big_r in [2.0, 4.0] {
        let near: f64 = entries.iter().filter(|e| e.0 <= big_r).map(|e| e.0 * e.0 * e.1).sum();
        let far: f64 = entries.iter().filter(|e| e.0 > big_r).map(|e| e.1).sum::<f64>() + stencil.tail_mass();
        for p in [1.0, 2.0, f64::INFINITY] {
            let bound = lp_continuum(|x| (x * x - 1.0) * (-0.5 * x * x).exp(), p) * near
                + 2.0 * lp_continuum(|x| (-0.5 * x * x).exp(), p) * far;
            let discrete = lp(lu.values(), h, p);
            assert!(discrete <= bound * (1.0 + 1e-3), "R={big_r} p={p}: {discrete} vs {bound}");
        }
    }
}

#[test]
fn forward_difference_norm_estimate() {
    let g = UniformGrid::new(1, 0.05, 10.0).unwrap();
    let u = project_cell_average(&gaussian(), &g).unwrap();
    let d = one_sided_difference(&u, 0, 1).unwrap();
    for p in [1.0, 2.0, f64::INFINITY] {
        let discrete = lp(d.values(), g.h(), p);
        let continuum = lp_continuum(|x| x * (-0.5 * x * x).exp(), p);
        assert!(discrete <= continuum * (1.0 + 1e-3), "p={p}: {discrete} vs {continuum}");
    }
}

#[test]
fn burgers_shock_moves_at_half_speed() {
    let mut c = RunConfig::preset("burgers_riemann_1d").unwrap();
    c.problem.final_time = 0.75;
    c.problem.time_step = gpme::config::TimeStepPolicy::Fixed { dt: 0.4 * c.problem.h };
    let (problem, opts) = c.build().unwrap();
    let out = run(&problem, &opts).unwrap();
    let traj = &out.trajectory;
    let x1 = front_location(&traj.field_at(0.25).unwrap(), 0.5).unwrap();
    let x2 = front_location(&traj.field_at(0.75).unwrap(), 0.5).unwrap();
    let speed = (x2 - x1) / 0.5;
    // Rankine–Hugoniot for states 1 and 0: (f(1) - f(0)) / (1 - 0).
    assert!((speed - 0.5).abs() <= 4.0 * c.problem.h / 0.5, "speed {speed}");
}

fn heat(h: f64, steps: usize, t: f64) -> ProblemSpec {
    ProblemSpec {
        operator: OperatorSpec::laplacian(),
        phi: PhiSpec::Linear { slope: 1.0 },
        flux: None,
        initial: SpatialField::heat_kernel(1, 0.25, 1.0),
        source: SpaceTimeField::Zero,
        grid: UniformGrid::new(1, h, 6.0).unwrap(),
        time: TimeGrid::uniform(t, steps).unwrap(),
    }
}

#[test]
fn heat_time_moduli_shrink_with_the_step() {
    let opts = RunOptions::default();
    let coarse = run(&heat(0.05, 8, 0.2), &opts).unwrap();
    let fine = run(&heat(0.05, 16, 0.2), &opts).unwrap();
    let a = time_equicontinuity_profile(&coarse.trajectory, 1.0).unwrap();
    let b = time_equicontinuity_profile(&fine.trajectory, 1.0).unwrap();
    for k in 0..8 {
        assert_eq!(a[k][k], 0.0);
        assert_eq!(a[k][k + 1], a[k + 1][k]);
        assert!(b[2 * k][2 * k + 1] < a[k][k + 1]);
    }
}

#[test]
fn pme_self_convergence_in_ct_l1() {
    let trajectories: Vec<Trajectory> = [0.125, 0.0625, 0.03125, 0.015625]
        .iter()
        .map(|&h| {
            let mut c = RunConfig::preset("pme_barenblatt_1d").unwrap();
            c.problem.h = h;
            c.problem.final_time = 0.1;
            c.diagnostics.save_stride = 1;
            let (p, o) = c.build().unwrap();
            run(&p, &o).unwrap().trajectory
        })
        .collect();
    let times = uniform_samples(0.1, 11);
    let finest = trajectories.last().unwrap();
    let d: Vec<f64> = trajectories[..3]
        .iter()
        .map(|t| ct_lr_distance(t, finest, 1.0, &times).unwrap())
        .collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
}

#[test]
fn shifted_trajectory_distance_equals_shift() {
    let g = UniformGrid::new(1, 0.125, 2.0).unwrap();
    let unit = SpatialField::Indicator {
        lower: vec![-0.5],
        upper: vec![0.5],
        value: 1.0,
    };
    let a = project_cell_average(&unit, &g).unwrap();
    let b = GridFunction::from_values(&g, a.values().iter().map(|v| v * 1.25).collect()).unwrap();
    let tg = TimeGrid::uniform(1.0, 2).unwrap();
    let ta = Trajectory::new(tg.clone(), vec![a.clone(); 3], SourceSummary::empty(&g)).unwrap();
    let tb = Trajectory::new(tg, vec![b; 3], SourceSummary::empty(&g)).unwrap();
    let d = ct_lr_distance(&ta, &tb, 1.0, &[0.0, 0.3, 1.0]).unwrap();
    assert!((d - 0.25).abs() < 1e-14);
}

#[test]
fn frozen_dynamics_has_zero_tail_bound() {
    let problem = ProblemSpec {
        operator: OperatorSpec::laplacian(),
        phi: PhiSpec::Table {
            points: vec![(-1.0, 0.0), (1.0, 0.0)],
        },
        flux: None,
        initial: SpatialField::Indicator {
            lower: vec![-0.5],
            upper: vec![0.5],
            value: 0.7,
        },
        source: SpaceTimeField::Zero,
        grid: UniformGrid::new(1, 0.0625, 4.0).unwrap(),
        time: TimeGrid::uniform(0.5, 10).unwrap(),
    };
    let out = run(&problem, &RunOptions::default()).unwrap();
    let rep = equitightness_check(&out.trajectory, &problem, &out.report, 2.5, 1.0).unwrap();
    assert_eq!(rep.lhs, 0.0);
    assert_eq!(rep.rhs, 0.0);
    // With g = 0 the sup constant is ‖u₀‖_∞.
    assert_eq!(rep.m_bound, 0.7);
    assert!(rep.pass);
    let profile = time_equicontinuity_profile(&out.trajectory, 2.0).unwrap();
    assert!(profile.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn laplacian_stencil_through_measure_free_operator() {
    let g = UniformGrid::new(1, 0.5, 2.0).unwrap();
    let s = laplacian_stencil(&g);
    let rows: Vec<(i64, f64)> = s.entries().map(|(o, w)| (o[0], w)).collect();
    assert_eq!(rows, vec![(-1, 4.0), (1, 4.0)]);
}
