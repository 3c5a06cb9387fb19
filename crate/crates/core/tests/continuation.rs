use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use hopfkit::continuation::*;
use hopfkit::spacetime::{functional_l, l1_embed, norm_x};
use hopfkit::{ex1_build, ex2_build, EvolutionProblem, Example1Config, Example2Config, HopfError, SpaceTimeField};

fn ex2() -> EvolutionProblem {
    ex2_build(&Example2Config::default(), 8).unwrap()
}

fn ex1(nx: usize) -> EvolutionProblem {
    ex1_build(&Example1Config { half_length: 30.0, nx }, 8).unwrap()
}

fn exact_point(p: &EvolutionProblem, alpha: f64) -> BranchPoint {
    let e = p.sys().exact_branch(alpha).unwrap();
    BranchPoint {
        alpha,
        lambda: e.lambda,
        sigma: e.sigma,
        u: l1_embed(&e.psi, p.nt, p.nx()).unwrap(),
        eta_norm: 0.0,
        g_residual: 0.0,
        newton_iters: 0,
    }
}

#[test]
fn example2_corrector_reproduces_closed_form() {
    let p = ex2();
    let opts = CorrectorOptions::default();
    let pt = corrector(&p, 0.1, &exact_point(&p, 0.1), &opts).unwrap();
    assert_abs_diff_eq!(pt.lambda, 0.01, epsilon = 1e-12);
    assert_abs_diff_eq!(pt.sigma, 0.0, epsilon = 1e-12);
    assert!(pt.eta_norm <= 1e-9);
    // also from the plain predictor
    let pt = corrector(&p, 0.1, &predict(&p, &BranchPoint::trivial(p.nt, p.nx()), 0.1), &opts).unwrap();
    assert_abs_diff_eq!(pt.lambda, 0.01, epsilon = 1e-10);
    assert!(pt.eta_norm <= 1e-9);
}

#[test]
fn example1_corrector_is_second_order_accurate() {
    let opts = CorrectorOptions::default();
    let solve = |nx: usize| {
        let p = ex1(nx);
        let pt = corrector(&p, 0.1, &predict(&p, &BranchPoint::trivial(p.nt, p.nx()), 0.1), &opts).unwrap();
        (pt.lambda, pt.sigma)
    };
    let (l1, s1) = solve(599);
    let (l2, s2) = solve(1199);
    let h = 60.0 / 600.0;
    assert!((l1 - 0.01).abs() <= h * h && s1.abs() <= h * h, "{l1} {s1}");
    // Richardson extrapolation lands much closer to the continuous branch
    let (le, se) = ((4.0 * l2 - l1) / 3.0, (4.0 * s2 - s1) / 3.0);
    assert!((le - 0.01).abs() < 0.1 * (l2 - 0.01).abs().max(1e-9), "{l1} {l2} {le}");
    assert!(se.abs() < 0.1 * s2.abs().max(1e-9), "{s1} {s2} {se}");
}

#[test]
fn zero_amplitude_is_trivial() {
    let p = ex2();
    let guess = exact_point(&p, 0.3);
    let pt = corrector(&p, 0.0, &guess, &CorrectorOptions::default()).unwrap();
    assert_eq!(pt.newton_iters, 0);
    assert_eq!((pt.lambda, pt.sigma), (0.0, 0.0));
    assert_eq!(pt.u.max_abs(), 0.0);
}

#[test]
fn example2_branch_matches_closed_form() {
    let p = ex2();
    let opts = CorrectorOptions::default();
    let b = trace_branch(&p, 0.5, 51, &opts).unwrap();
    assert_eq!(b.points.len(), 51);
    for w in b.points.windows(2) {
        assert!(w[1].alpha > w[0].alpha);
    }
    for pt in &b.points {
        assert!((pt.lambda - pt.alpha * pt.alpha).abs() <= 1e-8);
        assert!(pt.sigma.abs() <= 1e-8);
        assert!(pt.g_residual <= opts.tol * pt.alpha.max(1.0) * p.residual_scale());
    }
}

#[test]
fn example1_branch_within_discretization_error() {
    let p = ex1(600);
    let b = trace_branch(&p, 0.3, 11, &CorrectorOptions::default()).unwrap();
    let h = 60.0 / 601.0;
    for pt in &b.points {
        assert!((pt.lambda - pt.alpha * pt.alpha).abs() <= h * h);
        assert!(pt.sigma.abs() <= h * h);
    }
}

#[test]
fn two_steps_give_the_endpoints() {
    let p = ex2();
    let b = trace_branch(&p, 0.25, 2, &CorrectorOptions::default()).unwrap();
    let alphas: Vec<f64> = b.points.iter().map(|pt| pt.alpha).collect();
    assert_eq!(alphas, vec![0.0, 0.25]);
}

#[test]
fn bad_grids_are_rejected() {
    let p = ex2();
    for (a, s) in [(0.5, 1), (0.0, 10), (-0.5, 10)] {
        let e = trace_branch(&p, a, s, &CorrectorOptions::default()).unwrap_err();
        assert!(matches!(e.error, HopfError::Config(_)));
    }
}

#[test]
fn corrector_failure_returns_partial_branch() {
    let p = ex1(600);
    let opts = CorrectorOptions { max_iter: 1, tol: 1e-15, ..CorrectorOptions::default() };
    let e = trace_branch(&p, 0.2, 5, &opts).unwrap_err();
    assert!(matches!(e.error, HopfError::NoConvergence(_)), "{:?}", e.error);
    assert_eq!(e.branch.points.len(), 1);
    assert_eq!(e.failed_alpha, 0.05);
    let mut csv = Vec::new();
    write_csv(&mut csv, &e.branch.points, Some(&e.error.to_string())).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().last().unwrap().starts_with("# partial branch: "));
}

#[test]
fn amplitude_normalization_holds_along_branches() {
    for p in [ex2(), ex1(600)] {
        let b = trace_branch(&p, 0.3, 7, &CorrectorOptions::default()).unwrap();
        for pt in b.points.iter().skip(1) {
            let (l1, l2) = functional_l(&p, &pt.u);
            assert_abs_diff_eq!(l1 / pt.alpha, 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(l2, 0.0, epsilon = 1e-10);
            let (e1, e2) = functional_l(&p, &pt.eta(&p));
            assert!(e1.abs() <= 1e-10 && e2.abs() <= 1e-10);
        }
    }
}

#[test]
fn parameter_curve_is_flat_at_the_origin() {
    let p = ex2();
    let opts = CorrectorOptions::default();
    let b = trace_branch(&p, 0.5, 51, &opts).unwrap();
    assert_eq!((b.points[0].lambda, b.points[0].sigma), (0.0, 0.0));
    // |ζ(α)|/α shrinks with α
    let slope = |a: f64| {
        let pt = corrector(&p, a, &exact_point(&p, a), &opts).unwrap();
        pt.lambda.hypot(pt.sigma) / a
    };
    let (s1, s2, s3) = (slope(0.04), slope(0.02), slope(0.01));
    assert!(s2 < 0.6 * s1 && s3 < 0.6 * s2, "{s1} {s2} {s3}");
    assert!(s3 <= 0.011);
}

#[test]
fn restored_period_solves_the_original_equation() {
    let opts = CorrectorOptions::default();
    for p in [ex2(), ex1(600)] {
        let b = trace_branch(&p, 0.3, 4, &opts).unwrap();
        for pt in b.points.iter().skip(1) {
            let r = restored_period_residual(&p, pt, 37);
            assert!(r <= 10.0 * opts.tol * pt.alpha.max(1.0), "{} at alpha {}: {r:e}", p.system.name(), pt.alpha);
        }
    }
}

#[test]
fn symmetry_under_amplitude_reversal() {
    let opts = CorrectorOptions::default();
    let p = ex2();
    let b = trace_branch(&p, 0.3, 7, &opts).unwrap();
    assert!(check_symmetry(&p, &b, &opts).unwrap() <= 1e-8);

    let q = ex1(600);
    let b = trace_branch(&q, 0.3, 4, &opts).unwrap();
    let h = 60.0 / 601.0;
    assert!(check_symmetry(&q, &b, &opts).unwrap() <= h * h);

    let trivial = trace_branch(&p, 0.3, 2, &opts).unwrap();
    let only_zero = Branch { info: trivial.info.clone(), points: vec![trivial.points[0].clone()] };
    assert_eq!(check_symmetry(&p, &only_zero, &opts).unwrap(), 0.0);
}

#[test]
fn alignment_examples() {
    let p = ex2();
    let u = p.u_star();
    let (theta, aligned) = phase_align(&p, &u).unwrap();
    assert_eq!(theta, 0.0);
    assert_eq!(aligned, u);

    let alpha = 0.2;
    let v = u.scaled(alpha).translate(PI / 3.0);
    let (theta, aligned) = phase_align(&p, &v).unwrap();
    assert_abs_diff_eq!(theta, 2.0 * PI - PI / 3.0, epsilon = 1e-14);
    let (l1, l2) = functional_l(&p, &aligned);
    assert_abs_diff_eq!(l1, alpha, epsilon = 1e-14);
    assert_abs_diff_eq!(l2, 0.0, epsilon = 1e-14);
    assert!(aligned.sub(&u.scaled(alpha)).max_abs() < 1e-14);

    let v = u.translate(PI / 2.0);
    let (l1, l2) = functional_l(&p, &v);
    assert_abs_diff_eq!(l1, 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(l2, 1.0, epsilon = 1e-15);
    let (theta, aligned) = phase_align(&p, &v).unwrap();
    assert_abs_diff_eq!(theta, 1.5 * PI, epsilon = 1e-14);
    assert_abs_diff_eq!(functional_l(&p, &aligned).0, 1.0, epsilon = 1e-14);

    let zero = SpaceTimeField::zeros(p.nt, p.nx());
    assert!(matches!(phase_align(&p, &zero), Err(HopfError::Degenerate(_))));
}

#[test]
fn matching_recovers_amplitude_and_shift() {
    let p = ex2();
    let opts = CorrectorOptions::default();
    let window = MatchWindow::default();
    let b = trace_branch(&p, 0.3, 7, &opts).unwrap();
    let pt = &b.points[4];
    assert_abs_diff_eq!(pt.alpha, 0.2, epsilon = 1e-15);
    let v = pt.u.translate(1.0);
    let m = match_solution(&p, &b, pt.lambda, pt.sigma, &v, &window, &opts).unwrap();
    assert_abs_diff_eq!(m.alpha, 0.2, epsilon = 1e-8);
    assert_abs_diff_eq!(m.theta, 1.0, epsilon = 1e-8);
    assert!(m.distance <= window.tol);
}

#[test]
fn matching_over_amplitude_and_angle_grid() {
    let p = ex2_build(&Example2Config { nx: 32 }, 6).unwrap();
    let opts = CorrectorOptions::default();
    let window = MatchWindow::default();
    let b = trace_branch(&p, 0.3, 7, &opts).unwrap();
    for pt in b.points.iter().skip(1) {
        for k in 0..8 {
            let theta = k as f64 * PI / 4.0;
            let m = match_solution(&p, &b, pt.lambda, pt.sigma, &pt.u.translate(theta), &window, &opts).unwrap();
            assert_abs_diff_eq!(m.alpha, pt.alpha, epsilon = 1e-8);
            let d = (m.theta - theta).rem_euclid(2.0 * PI);
            assert!(d.min(2.0 * PI - d) < 1e-8, "alpha {} theta {theta}: {}", pt.alpha, m.theta);
        }
    }
}

#[test]
fn matching_failures() {
    let p = ex2();
    let opts = CorrectorOptions::default();
    let window = MatchWindow::default();
    let b = trace_branch(&p, 0.3, 7, &opts).unwrap();

    let zero = SpaceTimeField::zeros(p.nt, p.nx());
    assert!(matches!(match_solution(&p, &b, 0.0, 0.0, &zero, &window, &opts), Err(HopfError::Degenerate(_))));

    // perturb a direction the normalization functionals do not see
    let pt = &b.points[4];
    let mut v = pt.u.clone();
    let n = v.nx();
    v.cos_mut(2)[n + 1] += 1e-2;
    assert!(matches!(match_solution(&p, &b, pt.lambda, pt.sigma, &v, &window, &opts), Err(HopfError::NoMatch(_))));

    assert!(matches!(
        match_solution(&p, &b, 0.3, pt.sigma, &pt.u, &window, &opts),
        Err(HopfError::OutsideWindow(_))
    ));
    let big = pt.u.scaled(window.norm_x / norm_x(p.sys(), &pt.u) * 1.01);
    assert!(matches!(match_solution(&p, &b, pt.lambda, 0.0, &big, &window, &opts), Err(HopfError::OutsideWindow(_))));
}

#[test]
fn checkpoints_round_trip() {
    let p = ex2_build(&Example2Config { nx: 8 }, 3).unwrap();
    let pt = exact_point(&p, 0.2);
    let cp = Checkpoint::from(&pt);
    let text = serde_json::to_string(&cp).unwrap();
    let back: Checkpoint = serde_json::from_str(&text).unwrap();
    assert_eq!(back.field, pt.u);
    assert_eq!(back.alpha, Some(0.2));

    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["extra"] = serde_json::json!(1);
    assert!(serde_json::from_value::<Checkpoint>(value).is_err());
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["field"]["ncomp"] = serde_json::json!(3);
    assert!(serde_json::from_value::<Checkpoint>(value).is_err());
}

#[test]
fn csv_columns() {
    let p = ex2();
    let b = trace_branch(&p, 0.2, 3, &CorrectorOptions::default()).unwrap();
    let mut out = Vec::new();
    write_csv(&mut out, &b.points, None).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for (r, pt) in rows.iter().zip(&b.points) {
        assert_eq!(r[0], pt.alpha);
        assert_eq!(r[1], pt.lambda);
        assert_eq!(r[5] as usize, pt.newton_iters);
    }
}
