//! Acceptance checks with pinned tolerances, shared by the command line and the test suite.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditions::{estimate_k1, lemma51_j, transversality, SPECTRAL_TOL};
use crate::continuation::{check_symmetry, match_solution, trace_branch, Branch, CorrectorOptions, MatchWindow};
use crate::error::{HopfError, Result};
use crate::extended::{isolatedness_margin, solve_high_frequency};
use crate::problems::{ex1_build, ex2_build, norm_v, EvolutionProblem, EvolutionSystem, Example1Config, Example2Config};
use crate::spacetime::{apply_t1, norm_y, SpaceTimeField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Example1,
    Example2,
}

impl FromStr for ProblemKind {
    type Err = HopfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(ProblemKind::Example1),
            "example2" => Ok(ProblemKind::Example2),
            other => Err(HopfError::Config(format!("unknown problem '{other}' (expected example1 or example2)"))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Example1 => "example1",
            ProblemKind::Example2 => "example2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Skips the refinement studies.
    Fast,
    Full,
}

impl FromStr for Suite {
    type Err = HopfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Suite::Fast),
            "full" => Ok(Suite::Full),
            other => Err(HopfError::Config(format!("unknown suite '{other}' (expected fast or full)"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub ex1: Example1Config,
    pub ex2: Example2Config,
    pub nt: usize,
    pub n_max: u32,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { ex1: Example1Config::default(), ex2: Example2Config::default(), nt: 8, n_max: 64, seed: 0x5eed }
    }
}

impl VerifyConfig {
    pub fn build(&self, kind: ProblemKind) -> Result<EvolutionProblem> {
        match kind {
            ProblemKind::Example1 => ex1_build(&self.ex1, self.nt),
            ProblemKind::Example2 => ex2_build(&self.ex2, self.nt),
        }
    }

    fn refined(&self) -> VerifyConfig {
        let mut c = self.clone();
        c.ex1.nx *= 2;
        c.ex2.nx *= 2;
        c.nt *= 2;
        c
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    pub details: Vec<String>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.details.join("; ")
        )
    }
}

struct Collect {
    passed: bool,
    details: Vec<String>,
}

impl Collect {
    fn new() -> Self {
        Collect { passed: true, details: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: String) {
        self.passed &= ok;
        self.details.push(detail);
    }

    fn fail(&mut self, e: &HopfError, what: &str) {
        self.passed = false;
        self.details.push(format!("{what}: error: {e}"));
    }

    fn finish(self, id: u8, title: &str) -> CriterionResult {
        CriterionResult { id, title: title.to_string(), passed: self.passed, details: self.details }
    }
}

fn within(elapsed: Duration, budget_s: f64) -> (bool, String) {
    let ok = elapsed.as_secs_f64() <= budget_s;
    (ok, if ok { format!("within {budget_s} s") } else { format!("over the {budget_s} s budget") })
}

const BRANCH_ALPHAS: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.5];

fn branch_to_half(p: &EvolutionProblem) -> Result<Branch> {
    trace_branch(p, 0.5, 11, &CorrectorOptions::default()).map_err(|e| e.error)
}

/// Largest `|λ - α²|`, `|σ|` and `‖η‖_X` over the checked amplitudes.
fn branch_errors(b: &Branch) -> (f64, f64, f64) {
    let mut out = (0.0f64, 0.0f64, 0.0f64);
    for a in BRANCH_ALPHAS {
        if let Some(pt) = b.points.iter().find(|q| (q.alpha - a).abs() < 1e-12) {
            out.0 = out.0.max((pt.lambda - a * a).abs());
            out.1 = out.1.max(pt.sigma.abs());
            out.2 = out.2.max(pt.eta_norm);
        } else {
            out = (f64::NAN, f64::NAN, f64::NAN);
        }
    }
    out
}

pub fn criterion_1(cfg: &VerifyConfig) -> CriterionResult {
    let mut c = Collect::new();
    let start = Instant::now();
    match cfg.build(ProblemKind::Example2).and_then(|p| branch_to_half(&p)) {
        Ok(b) => {
            let (el, es, ee) = branch_errors(&b);
            let (t_ok, t_msg) = within(start.elapsed(), 10.0);
            c.check(el <= 1e-8 && es <= 1e-8, format!("max|lambda - alpha^2| = {el:.2e}, max|sigma| = {es:.2e} (tol 1e-8)"));
            c.check(ee <= 1e-8, format!("max|eta|_X = {ee:.2e} (tol 1e-8)"));
            c.check(t_ok, t_msg);
        }
        Err(e) => c.fail(&e, "example2 branch"),
    }
    c.finish(1, "Example 2 branch")
}

pub fn criterion_2(cfg: &VerifyConfig, suite: Suite) -> CriterionResult {
    let mut c = Collect::new();
    let start = Instant::now();
    let err = |cfg: &VerifyConfig| -> Result<f64> {
        let b = branch_to_half(&cfg.build(ProblemKind::Example1)?)?;
        let (el, es, _) = branch_errors(&b);
        Ok(el.max(es))
    };
    match err(cfg) {
        Ok(e1) => {
            c.check(e1 <= 5e-3, format!("nx = {}: max error {e1:.3e} (tol 5e-3)", cfg.ex1.nx));
            if suite == Suite::Full {
                let mut fine = cfg.clone();
                fine.ex1.nx *= 2;
                match err(&fine) {
                    Ok(e2) => {
                        let ratio = e1 / e2;
                        c.check((3.0..=5.0).contains(&ratio), format!("nx = {}: {e2:.3e}, ratio {ratio:.3} (want [3, 5])", fine.ex1.nx));
                    }
                    Err(e) => c.fail(&e, "refined branch"),
                }
            } else {
                c.details.push("refinement skipped".into());
            }
            let (t_ok, t_msg) = within(start.elapsed(), 60.0);
            c.check(t_ok, t_msg);
        }
        Err(e) => c.fail(&e, "example1 branch"),
    }
    c.finish(2, "Example 1 branch")
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn criterion_3(cfg: &VerifyConfig, problems: &[ProblemKind]) -> CriterionResult {
    let mut c = Collect::new();
    for &kind in problems {
        let (target, tol) = match kind {
            ProblemKind::Example1 => {
                let sech4 = |x: f64| (1.0 / (x / 2.0).cosh()).powi(4);
                (2.0 * simpson(sech4, -60.0, 60.0, 24_000) / 8.0, 1e-2)
            }
            ProblemKind::Example2 => (simpson(|x| x.sin().powi(4), 0.0, PI, 2_000) / PI, 1e-10),
        };
        match cfg.build(kind).and_then(|p| transversality(&p)) {
            Ok(mp) => {
                let err = (mp - Complex64::new(target, 0.0)).norm();
                c.check(err <= tol, format!("{kind}: mu'(0) = {:.6}{:+.6}i vs {target:.6}, error {err:.2e} (tol {tol:.0e})", mp.re, mp.im));
            }
            Err(e) => c.fail(&e, &kind.to_string()),
        }
    }
    c.finish(3, "Transversality")
}

pub fn criterion_4() -> CriterionResult {
    let mut c = Collect::new();
    let start = Instant::now();
    let xis: Vec<f64> = (0..=10_000).map(|i| -50.0 + 0.01 * i as f64).collect();
    let mut v1 = 0;
    let mut v2 = 0;
    let mut worst1: f64 = 0.0;
    let mut worst2: f64 = 0.0;
    for k in (0..=12).filter(|&k| k != 1) {
        for &x in &xis {
            let j = lemma51_j(k as f64, x).unwrap_or(f64::INFINITY);
            worst1 = worst1.max(j);
            v1 += usize::from(j > 1.0);
        }
    }
    for k in 4..=12 {
        let bound = 2.0 / (k * k) as f64;
        for &x in &xis {
            let j = lemma51_j(k as f64, x).unwrap_or(f64::INFINITY);
            worst2 = worst2.max(j / bound);
            v2 += usize::from(j > bound);
        }
    }
    c.check(v1 == 0, format!("J <= 1: {v1} violations (max J = {worst1:.4})"));
    c.check(v2 == 0, format!("J <= 2/k^2: {v2} violations (max ratio {worst2:.4})"));
    let (t_ok, t_msg) = within(start.elapsed(), 5.0);
    c.check(t_ok, t_msg);
    c.finish(4, "bounds on J(k, xi)")
}

/// Plain `L²(0, π)` and `H¹₀` norms of a sine series from its coefficients.
fn sine_norms(coef: &[Complex64]) -> (f64, f64) {
    let l2: f64 = coef.iter().map(|z| z.norm_sqr()).sum();
    let h1: f64 = coef.iter().enumerate().map(|(j, z)| ((j + 1) * (j + 1)) as f64 * z.norm_sqr()).sum();
    ((PI / 2.0 * l2).sqrt(), (PI / 2.0 * h1).sqrt())
}

/// Mode-wise resolvent bounds for Example 2 on random data, `k = 2..=k_max`.
fn ex2_resolvent_components(sys: &dyn EvolutionSystem, k_max: u32, samples: usize, seed: u64) -> Result<(usize, usize, f64)> {
    let nx = sys.nx();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = 0;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for k in 2..=k_max {
        let kf = k as f64;
        for _ in 0..samples {
            let data: Vec<Complex64> =
                (0..2 * nx).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            // (A - ik) u = a  ⇔  (ik - A) u = -a
            let neg: Vec<Complex64> = data.iter().map(|z| -z).collect();
            let sol = sys.resolvent_solve(Complex64::new(0.0, kf), &neg)?;
            let (a, b) = data.split_at(nx);
            let (u, v) = sol.split_at(nx);
            let ik1 = Complex64::new(1.0, kf);
            let d: Vec<Complex64> = a.iter().zip(b).map(|(a, b)| b - 2.0 * a / ik1).collect();
            let mut record = |lhs: f64, rhs: f64| {
                checks += 1;
                worst = worst.max(lhs / rhs);
                if lhs > rhs * (1.0 + 1e-12) {
                    violations += 1;
                }
            };
            for (j, (vn, dn)) in v.iter().zip(&d).enumerate() {
                record((j + 1) as f64 * vn.norm(), dn.norm());
            }
            let (a_l2, a_h1) = sine_norms(a);
            let (b_l2, _) = sine_norms(b);
            let (_, u_h1) = sine_norms(u);
            let (v_l2, _) = sine_norms(v);
            let s = (1.0 + kf * kf).sqrt();
            record(u_h1, (2.0 * a_l2 / 5f64.sqrt() + b_l2 + a_h1) / s);
            record(v_l2, 5.0 / (3.0 * kf) * (2.0 * a_l2 / s + b_l2));
        }
    }
    Ok((checks, violations, worst))
}

pub fn criterion_5(cfg: &VerifyConfig, problems: &[ProblemKind]) -> CriterionResult {
    let mut c = Collect::new();
    for &kind in problems {
        let r = cfg.build(kind).and_then(|p| match kind {
            ProblemKind::Example1 => {
                let k1 = estimate_k1(p.sys(), 4, 64)?;
                let bound = 8.0 * 2f64.sqrt() / 7.0 + 0.05;
                Ok((k1.sup <= bound, format!("example1: sup n|R(in)| over [4, 64] = {:.5} at n = {} (bound {bound:.5})", k1.sup, k1.argmax)))
            }
            ProblemKind::Example2 => {
                let (n, v, w) = ex2_resolvent_components(p.sys(), cfg.n_max, 4, cfg.seed)?;
                Ok((v == 0, format!("example2: {v} of {n} mode-wise bounds violated (max lhs/rhs {w:.4})")))
            }
        });
        match r {
            Ok((ok, msg)) => c.check(ok, msg),
            Err(e) => c.fail(&e, &kind.to_string()),
        }
    }
    c.finish(5, "Resolvent decay sweep")
}

pub fn criterion_6(cfg: &VerifyConfig) -> CriterionResult {
    let mut c = Collect::new();
    let r = cfg.build(ProblemKind::Example2).and_then(|p| {
        let sys = p.sys();
        let nx = sys.nx();
        let z = Complex64::new(0.0, 0.0);
        let mut worst: f64 = 0.0;
        for n in 1..=nx {
            let nf = n as f64;
            let mut rhs = vec![Complex64::new(0.0, 0.0); 2 * nx];
            rhs[n - 1] = (z + 1.0) / nf;
            rhs[nx + n - 1] = Complex64::new(-2.0 / nf, 0.0);
            let q = sys.resolvent_solve(z, &rhs)?;
            let mut expect = vec![Complex64::new(0.0, 0.0); 2 * nx];
            expect[n - 1] = Complex64::new(1.0 / nf, 0.0);
            let diff: Vec<Complex64> = q.iter().zip(&expect).map(|(a, b)| a - b).collect();
            worst = worst.max(norm_v(sys, &diff) / norm_v(sys, &expect));
        }
        Ok(worst)
    });
    match r {
        Ok(w) => c.check(w <= 1e-10, format!("max relative mismatch over n = 1..={} is {w:.3e} (tol 1e-10)", cfg.ex2.nx)),
        Err(e) => c.fail(&e, "example2"),
    }
    c.finish(6, "Non-compactness identity")
}

fn random_high_field(rng: &mut ChaCha8Rng, nt: usize, nx: usize) -> SpaceTimeField {
    let mut z = SpaceTimeField::zeros(nt, nx);
    for n in 2..=nt {
        for v in z.cos_mut(n) {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in z.sin_mut(n) {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    z
}

/// Worst residual and bound ratios of the high-frequency solve over `count` random fields.
fn high_frequency_study(p: &EvolutionProblem, m: f64, count: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let sys = p.sys();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut res, mut r15, mut r16): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..count {
        let z = random_high_field(&mut rng, p.nt, p.nx());
        let u = solve_high_frequency(sys, &z)?;
        res = res.max(norm_y(sys, &apply_t1(sys, &u).sub(&z)) / norm_y(sys, &z));
        for n in 2..=p.nt {
            let pn = norm_v(sys, &z.mode_complex(n));
            let qn = u.mode_complex(n);
            let re: Vec<f64> = qn.iter().map(|v| v.re).collect();
            let im: Vec<f64> = qn.iter().map(|v| v.im).collect();
            let aq: Vec<Complex64> =
                sys.apply_a(&re).into_iter().zip(sys.apply_a(&im)).map(|(a, b)| Complex64::new(a, b)).collect();
            r15 = r15.max(n as f64 * norm_v(sys, &qn) / (m * pn));
            r16 = r16.max(norm_v(sys, &aq) / ((m + 1.0) * pn));
        }
    }
    Ok((res, r15, r16))
}

pub fn criterion_7(cfg: &VerifyConfig, problems: &[ProblemKind]) -> CriterionResult {
    let mut c = Collect::new();
    for &kind in problems {
        let r = cfg.build(kind).and_then(|p| {
            let m = estimate_k1(p.sys(), 2, cfg.n_max.max(p.nt as u32))?.sup;
            let (res, r15, r16) = high_frequency_study(&p, m, 100, cfg.seed)?;
            // the sweep value of M is a lower estimate of the supremum, allow its solver tolerance
            let slack = 1.0 + 1e-8;
            Ok((
                res <= 1e-9 && r15 <= slack && r16 <= slack,
                format!("{kind}: M = {m:.5}, residual {res:.2e}, max n|q|/(M|p|) = {r15:.4}, max |Aq|/((M+1)|p|) = {r16:.4}"),
            ))
        });
        match r {
            Ok((ok, msg)) => c.check(ok, msg),
            Err(e) => c.fail(&e, &kind.to_string()),
        }
    }
    c.finish(7, "High-frequency solver")
}

pub fn criterion_8(cfg: &VerifyConfig, problems: &[ProblemKind], suite: Suite) -> CriterionResult {
    let mut c = Collect::new();
    let fine = cfg.refined();
    for &kind in problems {
        let base = match cfg.build(kind).and_then(|p| isolatedness_margin(&p)) {
            Ok(r) => r.margin,
            Err(e) => {
                c.fail(&e, &kind.to_string());
                continue;
            }
        };
        c.check(base >= SPECTRAL_TOL, format!("{kind}: sigma_min = {base:.4e}"));
        if suite == Suite::Fast {
            continue;
        }
        match fine.build(kind).and_then(|p| isolatedness_margin(&p)) {
            Ok(r) => {
                let rel = (r.margin / base - 1.0).abs();
                c.check(
                    r.margin >= SPECTRAL_TOL && rel <= 0.15,
                    format!("{kind} refined: sigma_min = {:.4e}, relative change {rel:.3} (tol 0.15)", r.margin),
                );
            }
            Err(e) => c.fail(&e, &format!("{kind} refined")),
        }
    }
    c.finish(8, "Isolatedness")
}

pub fn criterion_9(cfg: &VerifyConfig, problems: &[ProblemKind]) -> CriterionResult {
    let mut c = Collect::new();
    for &kind in problems {
        let tol = match kind {
            ProblemKind::Example1 => 5e-3,
            ProblemKind::Example2 => 1e-8,
        };
        let r = cfg
            .build(kind)
            .and_then(|p| branch_to_half(&p).and_then(|b| check_symmetry(&p, &b, &CorrectorOptions::default())));
        match r {
            Ok(d) => c.check(d <= tol, format!("{kind}: discrepancy {d:.3e} (tol {tol:.0e})")),
            Err(e) => c.fail(&e, &kind.to_string()),
        }
    }
    c.finish(9, "Branch symmetry")
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

pub fn criterion_10(cfg: &VerifyConfig) -> CriterionResult {
    let mut c = Collect::new();
    let opts = CorrectorOptions::default();
    let r = cfg.build(ProblemKind::Example2).and_then(|p| {
        let b = trace_branch(&p, 0.3, 7, &opts).map_err(|e| e.error)?;
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        let mut cases = 0;
        for pt in b.points.iter().skip(1) {
            for j in 0..8 {
                let theta = j as f64 * PI / 4.0;
                let v = pt.u.translate(theta);
                cases += 1;
                match match_solution(&p, &b, pt.lambda, pt.sigma, &v, &MatchWindow::default(), &opts) {
                    Ok(m) => worst = worst.max((m.alpha - pt.alpha).abs().max(angle_gap(m.theta, theta))),
                    Err(_) => failures += 1,
                }
            }
        }
        Ok((cases, failures, worst))
    });
    match r {
        Ok((n, f, w)) => c.check(f == 0 && w <= 1e-6, format!("{n} shifted points, {f} unmatched, max error {w:.2e} (tol 1e-6)")),
        Err(e) => c.fail(&e, "example2"),
    }
    c.finish(10, "Matching shifted branch points")
}

/// Runs the criteria that involve any of `problems`, in order.
pub fn run_suite(cfg: &VerifyConfig, suite: Suite, problems: &[ProblemKind]) -> Vec<CriterionResult> {
    let has = |k| problems.contains(&k);
    let mut out = Vec::new();
    if has(ProblemKind::Example2) {
        out.push(criterion_1(cfg));
    }
    if has(ProblemKind::Example1) {
        out.push(criterion_2(cfg, suite));
    }
    out.push(criterion_3(cfg, problems));
    if has(ProblemKind::Example1) {
        out.push(criterion_4());
    }
    out.push(criterion_5(cfg, problems));
    if has(ProblemKind::Example2) {
        out.push(criterion_6(cfg));
    }
    out.push(criterion_7(cfg, problems));
    out.push(criterion_8(cfg, problems, suite));
    out.push(criterion_9(cfg, problems));
    if has(ProblemKind::Example2) {
        out.push(criterion_10(cfg));
    }
    out
}
