use approx::assert_abs_diff_eq;
use hopfkit::conditions::estimate_k1;
use hopfkit::extended::*;
use hopfkit::problems::{norm_v, LinearSystem};
use hopfkit::spacetime::{apply_t1, functional_l, norm_x, norm_y};
use hopfkit::{ex1_build, ex2_build, EvolutionProblem, Example1Config, Example2Config, HopfError, SpaceTimeField};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ex2() -> EvolutionProblem {
    ex2_build(&Example2Config { nx: 32 }, 6).unwrap()
}

fn ex1() -> EvolutionProblem {
    ex1_build(&Example1Config::default(), 4).unwrap()
}

fn state(lambda: f64, sigma: f64, u: SpaceTimeField) -> ExtendedState {
    ExtendedState { lambda, sigma, u }
}

/// Smooth-in-space random field: random multiples of the critical profile in every mode.
fn random_field(p: &EvolutionProblem, rng: &mut ChaCha8Rng, modes: &[usize]) -> SpaceTimeField {
    let re: Vec<f64> = p.psi_star.iter().map(|z| z.re).collect();
    let im: Vec<f64> = p.psi_star.iter().map(|z| z.im).collect();
    let mut u = SpaceTimeField::zeros(p.nt, p.nx());
    for &n in modes {
        let (a, b, c, d) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        for (j, o) in u.cos_mut(n).iter_mut().enumerate() {
            *o = a * re[j] + b * im[j];
        }
        if n > 0 {
            for (j, o) in u.sin_mut(n).iter_mut().enumerate() {
                *o = c * re[j] + d * im[j];
            }
        }
    }
    u
}

fn max_abs3(h: &(f64, f64, SpaceTimeField)) -> f64 {
    h.0.abs().max(h.1.abs()).max(h.2.max_abs())
}

#[test]
fn residual_of_zero_field_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for p in [ex2(), ex1()] {
        let zero = SpaceTimeField::zeros(p.nt, p.nx());
        for _ in 0..4 {
            let (l, s) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            assert_eq!(residual_g(p.sys(), l, s, &zero).max_abs(), 0.0);
        }
    }
}

#[test]
fn frozen_time_scale_leaves_the_derivative() {
    let p = ex2();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = random_field(&p, &mut rng, &[0, 1, 2, 3]).scaled(0.3);
    let g = residual_g(p.sys(), 0.05, -1.0, &u);
    assert_eq!(g, u.time_derivative());
}

#[test]
fn extended_system_at_the_bifurcation_point() {
    let p = ex2();
    let u = p.u_star();
    let h0 = assemble_h(&p, &state(0.0, 0.0, u.clone()));
    assert!(max_abs3(&h0) < 1e-14);
    let (a, b, f) = assemble_h(&p, &state(0.0, 0.0, u.scaled(2.0)));
    assert_abs_diff_eq!(a, 1.0, epsilon = 1e-14);
    assert_abs_diff_eq!(b, 0.0, epsilon = 1e-14);
    assert!(f.max_abs() < 1e-14);

    let q = ex1();
    let h = 60.0 / 601.0;
    let (a, b, f) = assemble_h(&q, &state(0.0, 0.0, q.u_star()));
    assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
    assert!(norm_y(q.sys(), &f) <= h * h * q.residual_scale());
}

#[test]
fn higher_modes_decouple_at_the_bifurcation_point() {
    let p = ex2();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = random_field(&p, &mut rng, &[2]);
    let (a, b, f) = assemble_h(&p, &state(0.0, 0.0, p.u_star().add(&w)));
    assert_abs_diff_eq!(a, 0.0, epsilon = 1e-14);
    assert_abs_diff_eq!(b, 0.0, epsilon = 1e-14);
    assert!(f.sub(&apply_t1(p.sys(), &w)).max_abs() < 1e-13);
}

#[test]
fn jacobian_on_unit_directions() {
    for p in [ex2(), ex1()] {
        let dh = jacobian_dh_star(&p);
        let u = p.u_star();
        let zero = SpaceTimeField::zeros(p.nt, p.nx());
        let tol = if p.system.name() == "example2" { 1e-13 } else { 1e-3 };

        let (a, b, f) = dh.apply(0.0, 0.0, &u);
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 0.0, epsilon = 1e-12);
        assert!(f.max_abs() <= tol * u.max_abs(), "{}", f.max_abs());

        let (a, b, f) = dh.apply(0.0, 1.0, &zero);
        assert_eq!((a, b), (0.0, 0.0));
        let au = u.map_states(|x| p.sys().apply_a(x));
        assert!(f.add(&au).max_abs() < 1e-14 * au.max_abs());
        let (l1, l2) = functional_l(&p, &f);
        assert_abs_diff_eq!(l1, 0.0, epsilon = tol);
        assert_abs_diff_eq!(l2, 1.0, epsilon = tol);
    }
}

#[test]
fn jacobian_matches_difference_quotient_of_h() {
    let p = ex1();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let du = random_field(&p, &mut rng, &[0, 1, 2]);
    let (dl, ds) = (0.3, -0.7);
    let base = state(0.0, 0.0, p.u_star());
    let eps = 1e-6;
    let mut plus = base.clone();
    plus.lambda += eps * dl;
    plus.sigma += eps * ds;
    plus.u.axpy(eps, &du);
    let mut minus = base.clone();
    minus.lambda -= eps * dl;
    minus.sigma -= eps * ds;
    minus.u.axpy(-eps, &du);
    let (hp, hm) = (assemble_h(&p, &plus), assemble_h(&p, &minus));
    let fd = (hp.2.sub(&hm.2)).scaled(0.5 / eps);
    let (a, b, f) = jacobian_dh_star(&p).apply(dl, ds, &du);
    assert_abs_diff_eq!((hp.0 - hm.0) / (2.0 * eps), a, epsilon = 1e-6 * a.abs().max(1.0));
    assert_abs_diff_eq!((hp.1 - hm.1) / (2.0 * eps), b, epsilon = 1e-6 * b.abs().max(1.0));
    assert!(norm_y(p.sys(), &fd.sub(&f)) <= 1e-6 * norm_y(p.sys(), &f));
}

#[test]
fn jacobian_preserves_temporal_modes() {
    let p = ex2();
    let dh = jacobian_dh_star(&p);
    let nx = p.nx();
    for n in 0..=p.nt {
        for j in [0, 3, nx + 1, 2 * nx - 1] {
            for sine in [false, true] {
                if sine && n == 0 {
                    continue;
                }
                let mut u = SpaceTimeField::zeros(p.nt, nx);
                if sine {
                    u.sin_mut(n)[j] = 1.0;
                } else {
                    u.cos_mut(n)[j] = 1.0;
                }
                let (_, _, f) = dh.apply(0.0, 0.0, &u);
                for m in (0..=p.nt).filter(|&m| m != n) {
                    assert!(f.cos(m).iter().all(|v| *v == 0.0));
                    if m > 0 {
                        assert!(f.sin(m).iter().all(|v| *v == 0.0));
                    }
                }
            }
        }
    }
}

#[test]
fn low_mode_block_identity() {
    let p = ex2();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = random_field(&p, &mut rng, &[0, 1]);
    let (lam, sig) = (0.4, -0.9);
    let (a, b, f) = jacobian_dh_star(&p).apply(lam, sig, &u);
    let (l1, l2) = functional_l(&p, &u);
    assert_abs_diff_eq!(a, l1, epsilon = 1e-14);
    assert_abs_diff_eq!(b, l2, epsilon = 1e-14);

    let sys = p.sys();
    let minus_au0: Vec<f64> = sys.apply_a(u.cos(0)).iter().map(|v| -v).collect();
    for (x, y) in f.cos(0).iter().zip(&minus_au0) {
        assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
    }
    let mut u1 = u.clone();
    u1.cos_mut(0).fill(0.0);
    let us = p.u_star();
    let mut want = apply_t1(sys, &u1);
    want.axpy(-lam, &us.map_states(|x| sys.h_lambda_u(x)));
    want.axpy(-sig, &us.map_states(|x| sys.apply_a(x)));
    let got_mode1 = f.mode_complex(1);
    for (x, y) in got_mode1.iter().zip(want.mode_complex(1)) {
        assert!((x - y).norm() < 1e-10);
    }
}

#[test]
fn example1_isolatedness_margin_is_positive() {
    let r = isolatedness_margin(&ex1()).unwrap();
    assert!(r.passed);
    assert!(r.margin > 0.1, "{}", r.margin);
    assert!(r.margin_euclidean > 0.0);
    assert_eq!(r.modes.len(), 5);
    let m1 = r.modes.iter().find(|m| m.n == 1).unwrap();
    assert_eq!(m1.weighted, r.margin);
}

#[test]
fn margin_collapses_without_parameter_coupling() {
    let margin = |nx: usize| {
        let base = ex2_build(&Example2Config { nx }, 4).unwrap();
        let mut stub = LinearSystem::shifted_copy(base.sys(), 0.0);
        stub.f.clear();
        let p = EvolutionProblem::prepare(Box::new(stub), 4).unwrap();
        isolatedness_margin(&p).unwrap()
    };
    let (a, b) = (margin(16), margin(32));
    assert!(!a.passed && !b.passed);
    assert!(a.margin < 1e-6 && b.margin < 1e-6, "{} {}", a.margin, b.margin);
}

#[test]
fn high_frequency_solve_inverts_the_derivative_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for p in [ex2(), ex1()] {
        let q = random_field(&p, &mut rng, &[2, 3, 4]);
        let z = apply_t1(p.sys(), &q);
        let back = solve_high_frequency(p.sys(), &z).unwrap();
        assert!(norm_x(p.sys(), &back.sub(&q)) <= 1e-9 * norm_x(p.sys(), &q));
        let residual = apply_t1(p.sys(), &back).sub(&z);
        assert!(norm_y(p.sys(), &residual) <= 1e-9 * norm_y(p.sys(), &z));
    }
}

#[test]
fn high_frequency_solve_obeys_resolvent_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for p in [ex2(), ex1()] {
        let sys = p.sys();
        let m = estimate_k1(sys, 2, p.nt as u32).unwrap().sup;
        for _ in 0..5 {
            let mut z = SpaceTimeField::zeros(p.nt, p.nx());
            for n in 2..=p.nt {
                z.cos_mut(n).iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                z.sin_mut(n).iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
            let u = solve_high_frequency(sys, &z).unwrap();
            for n in 2..=p.nt {
                let pn = norm_v(sys, &z.mode_complex(n));
                let qn = u.mode_complex(n);
                let aq = sys.apply_a_c(&qn);
                assert!(n as f64 * norm_v(sys, &qn) <= m * pn * (1.0 + 1e-8));
                assert!(norm_v(sys, &aq) <= (m + 1.0) * pn * (1.0 + 1e-8));
            }
        }
    }
}

#[test]
fn high_frequency_solve_rejects_low_modes() {
    let p = ex2();
    let mut z = SpaceTimeField::zeros(p.nt, p.nx());
    z.cos_mut(2)[0] = 1.0;
    z.sin_mut(1)[4] = 1e-3;
    assert!(matches!(solve_high_frequency(p.sys(), &z), Err(HopfError::Shape(_))));
    let mut z0 = SpaceTimeField::zeros(p.nt, p.nx());
    z0.cos_mut(0)[0] = 1.0;
    assert!(solve_high_frequency(p.sys(), &z0).is_err());
}

#[test]
fn newton_from_the_exact_point_takes_no_steps() {
    let p = ex2();
    let r = newton_refine_hstar(&p, &state(0.0, 0.0, p.u_star()), &HNewtonOptions::default()).unwrap();
    assert_eq!(r.iterations, 0);
    assert_eq!(r.state.u, p.u_star());
}

fn newton_from_perturbed_start(p: &EvolutionProblem, seed: u64) -> NewtonReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pert = random_field(p, &mut rng, &[0, 1, 2, 3]);
    let mut u = p.u_star();
    u.axpy(1e-3 / pert.max_abs() * p.u_star().max_abs(), &pert);
    newton_refine_hstar(p, &state(0.01, 0.01, u), &HNewtonOptions::default()).unwrap()
}

#[test]
fn newton_converges_quadratically_from_a_nearby_start() {
    let p = ex1();
    let r = newton_from_perturbed_start(&p, 14);
    let e: Vec<f64> = r.residuals.iter().map(|v| v / p.residual_scale()).collect();
    let mut checked = 0;
    for w in e.windows(2) {
        if w[0] < 1.0 && w[1] > 1e-12 {
            assert!(w[1].ln() / w[0].ln() >= 1.7, "{e:?}");
            checked += 1;
        }
    }
    assert!(checked >= 1, "{e:?}");
    assert!(r.state.lambda.abs() < 1e-4 && r.state.sigma.abs() < 1e-4);
}

#[test]
fn newton_on_example2_converges_only_linearly() {
    // the Jacobian is singular here (zero transversality), so the decay is geometric
    let p = ex2();
    let r = newton_from_perturbed_start(&p, 14);
    assert!(r.iterations <= 25);
    let e = &r.residuals;
    let last = e[e.len() - 1] / e[e.len() - 2];
    assert!((0.15..0.35).contains(&last), "{e:?}");
}

#[test]
fn newton_from_far_away_reports_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for p in [ex2(), ex1()] {
        let pert = random_field(&p, &mut rng, &[0, 1, 2, 3]);
        let mut u = p.u_star();
        u.axpy(norm_x(p.sys(), &p.u_star()) / norm_x(p.sys(), &pert), &pert);
        match newton_refine_hstar(&p, &state(0.01, 0.01, u), &HNewtonOptions::default()) {
            Err(HopfError::NoConvergence(msg)) => assert!(msg.contains("residuals")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}

#[test]
fn complex_pairing_of_critical_vectors() {
    // the realified core sees ψ and iψ as independent directions of the kernel
    let p = ex2();
    let i_psi: Vec<Complex64> = p.psi_star.iter().map(|z| Complex64::new(0.0, 1.0) * z).collect();
    let u = hopfkit::spacetime::l1_embed(&i_psi, p.nt, p.nx()).unwrap();
    assert!(apply_t1(p.sys(), &u).max_abs() < 1e-14);
    assert!(u.sub(&p.u_star().translate(-std::f64::consts::FRAC_PI_2)).max_abs() < 1e-15);
}
