//! Branch of periodic orbits parameterized by the amplitude `α = l¹(u)`.
//!
//! Points are `u = α(u★ + η)` with `l(η) = 0`. The corrector solves
//! `(g(Λ, u)/α, l¹η, l²η) = 0` for `(η, λ, σ)` at fixed `α` with damped Newton, each step by
//! GMRES preconditioned with the mode-decoupled linearization at the zero state.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HopfError, Result};
use crate::extended::{l_rows, residual_g, ModalCore};
use crate::linalg::{gmres, Bordered, PivotPolicy};
use crate::problems::{EvolutionProblem, EvolutionSystem};
use crate::spacetime::{functional_l, norm_x, norm_y, SpaceTimeField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub alpha: f64,
    pub lambda: f64,
    pub sigma: f64,
    /// The full field `α u★ + α η`.
    pub u: SpaceTimeField,
    pub eta_norm: f64,
    pub g_residual: f64,
    pub newton_iters: usize,
}

impl BranchPoint {
    pub fn trivial(nt: usize, nx: usize) -> Self {
        BranchPoint {
            alpha: 0.0,
            lambda: 0.0,
            sigma: 0.0,
            u: SpaceTimeField::zeros(nt, nx),
            eta_norm: 0.0,
            g_residual: 0.0,
            newton_iters: 0,
        }
    }

    /// `η = u/α - u★`, zero at the trivial point.
    pub fn eta(&self, p: &EvolutionProblem) -> SpaceTimeField {
        if self.alpha == 0.0 {
            return SpaceTimeField::zeros(p.nt, p.nx());
        }
        self.u.scaled(1.0 / self.alpha).sub(&p.u_star())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchInfo {
    pub problem: String,
    pub nx: usize,
    pub nt: usize,
    pub tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Branch {
    pub info: BranchInfo,
    pub points: Vec<BranchPoint>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CorrectorOptions {
    /// Relative tolerance: `‖g‖_Y ≤ tol · max(|α|, 1) · ‖A u★‖_Y`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub gmres_rtol: f64,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        CorrectorOptions {
            tol: 1e-9,
            max_iter: 30,
            max_halvings: 8,
            gmres_rtol: 1e-11,
            gmres_restart: 40,
            gmres_max_iter: 400,
        }
    }
}

/// Residual of the corrector system and what its Jacobian needs.
struct Linearization<'a> {
    sys: &'a dyn EvolutionSystem,
    alpha: f64,
    lambda: f64,
    sigma: f64,
    nt: usize,
    nx: usize,
    samples: Vec<Vec<f64>>,
}

impl Linearization<'_> {
    fn field_jacobian(&self, d: &SpaceTimeField) -> SpaceTimeField {
        let m = self.samples.len();
        let ds = d.sample(m);
        let hu: Vec<Vec<f64>> = self.samples.iter().zip(&ds).map(|(u, v)| self.sys.h_u(self.lambda, u, v)).collect();
        let mut lin = d.map_states(|x| self.sys.apply_a(x));
        lin.axpy(1.0, &SpaceTimeField::from_samples(&hu, self.nt, self.nx));
        let mut out = d.time_derivative();
        out.axpy(-(self.sigma + 1.0), &lin);
        out
    }

    fn lambda_column(&self) -> SpaceTimeField {
        let hl: Vec<Vec<f64>> = self.samples.iter().map(|u| self.sys.h_lambda(self.lambda, u)).collect();
        SpaceTimeField::from_samples(&hl, self.nt, self.nx).scaled(-(self.sigma + 1.0) / self.alpha)
    }
}

fn corrector_residual(
    p: &EvolutionProblem,
    alpha: f64,
    lambda: f64,
    sigma: f64,
    eta: &SpaceTimeField,
) -> (SpaceTimeField, f64, f64) {
    let u = p.u_star().add(eta).scaled(alpha);
    let g = residual_g(p.sys(), lambda, sigma, &u).scaled(1.0 / alpha);
    let (l1, l2) = functional_l(p, eta);
    (g, l1, l2)
}

fn combined_norm(p: &EvolutionProblem, r: &(SpaceTimeField, f64, f64)) -> f64 {
    (norm_y(p.sys(), &r.0).powi(2) + r.1 * r.1 + r.2 * r.2).sqrt()
}

/// Solves for the branch point at amplitude `alpha`, starting from `guess`.
///
/// Negative amplitudes are accepted and solved the same way.
pub fn corrector(p: &EvolutionProblem, alpha: f64, guess: &BranchPoint, opts: &CorrectorOptions) -> Result<BranchPoint> {
    let (nt, nx) = (p.nt, p.nx());
    if alpha == 0.0 {
        return Ok(BranchPoint::trivial(nt, nx));
    }
    if !alpha.is_finite() {
        return Err(HopfError::Config(format!("amplitude {alpha} is not finite")));
    }
    let sys = p.sys();
    let us = p.u_star();
    let target = opts.tol * alpha.abs().max(1.0) * p.residual_scale();
    let mut eta = guess.eta(p);
    let (mut lambda, mut sigma) = (guess.lambda, guess.sigma);
    let mut res = corrector_residual(p, alpha, lambda, sigma, &eta);
    let mut rnorm = combined_norm(p, &res);
    let mut iters = 0;
    let rows = l_rows(p);
    let nf = eta.flat_len();
    while !(rnorm <= target) {
        if iters >= opts.max_iter || !rnorm.is_finite() {
            return Err(HopfError::NoConvergence(format!(
                "corrector at alpha = {alpha}: residual {rnorm:.3e} after {iters} iterations (target {target:.3e})"
            )));
        }
        let u = us.add(&eta).scaled(alpha);
        let lin = Linearization {
            sys,
            alpha,
            lambda,
            sigma,
            nt,
            nx,
            samples: u.sample(u.collocation_points()),
        };
        let col_l = lin.lambda_column().to_flat();
        // ∂σ (g/α) = -f(λ, u)/α = (g - u_t)/(α(σ+1))
        let col_s = res.0.sub(&u.time_derivative().scaled(1.0 / alpha)).scaled(1.0 / (sigma + 1.0)).to_flat();
        let core = ModalCore::new(sys, nt, sigma + 1.0, &sys.h_u_zero_entries(lambda), PivotPolicy::Floor { rel: 1e-14 })?;
        let mut pre = Bordered::new(core, vec![col_l.clone(), col_s.clone()], rows.clone(), DMatrix::zeros(2, 2))?;
        pre.max_refine = 1;
        let apply = |x: &[f64]| -> Vec<f64> {
            let d = SpaceTimeField::from_flat(nt, nx, &x[..nf]).expect("flat field length");
            let mut out = lin.field_jacobian(&d).to_flat();
            for (o, (a, b)) in out.iter_mut().zip(col_l.iter().zip(&col_s)) {
                *o += a * x[nf] + b * x[nf + 1];
            }
            out.extend(rows.iter().map(|r| r.iter().zip(&x[..nf]).map(|(a, b)| a * b).sum::<f64>()));
            out
        };
        let mut rhs: Vec<f64> = res.0.to_flat().iter().map(|v| -v).collect();
        rhs.push(-res.1);
        rhs.push(-res.2);
        let out = gmres(apply, |x| pre.solve(x), &rhs, opts.gmres_rtol, opts.gmres_restart, opts.gmres_max_iter);
        let step = SpaceTimeField::from_flat(nt, nx, &out.x[..nf])?;
        let (dl, ds) = (out.x[nf], out.x[nf + 1]);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let mut trial = eta.clone();
            trial.axpy(t, &step);
            let (tl, ts) = (lambda + t * dl, sigma + t * ds);
            let tr = corrector_residual(p, alpha, tl, ts, &trial);
            let tn = combined_norm(p, &tr);
            if tn < rnorm {
                eta = trial;
                lambda = tl;
                sigma = ts;
                res = tr;
                rnorm = tn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iters += 1;
        if !accepted {
            return Err(HopfError::NoConvergence(format!(
                "corrector at alpha = {alpha}: no decrease after {} halvings (residual {rnorm:.3e})",
                opts.max_halvings
            )));
        }
    }
    let u = us.add(&eta).scaled(alpha);
    Ok(BranchPoint {
        alpha,
        lambda,
        sigma,
        g_residual: norm_y(sys, &res.0) * alpha.abs(),
        eta_norm: norm_x(sys, &eta),
        u,
        newton_iters: iters,
    })
}

/// Predictor for amplitude `alpha` from a neighbouring point: same `η`, parameters scaled
/// quadratically in the amplitude.
pub fn predict(p: &EvolutionProblem, from: &BranchPoint, alpha: f64) -> BranchPoint {
    if from.alpha == 0.0 {
        let mut pt = BranchPoint::trivial(p.nt, p.nx());
        pt.alpha = alpha;
        pt.u = p.u_star().scaled(alpha);
        return pt;
    }
    let r = alpha / from.alpha;
    BranchPoint {
        alpha,
        lambda: from.lambda * r * r,
        sigma: from.sigma * r * r,
        u: from.u.scaled(r),
        ..from.clone()
    }
}

/// A branch that stopped early, with the points computed before the failure.
#[derive(Debug)]
pub struct PartialBranch {
    pub branch: Branch,
    pub failed_alpha: f64,
    pub error: HopfError,
}

/// Natural continuation on the equispaced grid `α_k = k·alpha_max/(steps-1)`.
pub fn trace_branch(
    p: &EvolutionProblem,
    alpha_max: f64,
    steps: usize,
    opts: &CorrectorOptions,
) -> std::result::Result<Branch, PartialBranch> {
    let info = BranchInfo { problem: p.sys().name().to_string(), nx: p.nx(), nt: p.nt, tol: opts.tol };
    let mut branch = Branch { info, points: vec![BranchPoint::trivial(p.nt, p.nx())] };
    let bad = |branch: Branch, a: f64, error: HopfError| PartialBranch { branch, failed_alpha: a, error };
    if !(alpha_max > 0.0) || steps < 2 {
        let e = HopfError::Config(format!("need alpha_max > 0 and steps >= 2, got {alpha_max} and {steps}"));
        return Err(bad(branch, alpha_max, e));
    }
    for k in 1..steps {
        let alpha = alpha_max * k as f64 / (steps - 1) as f64;
        let guess = predict(p, branch.points.last().unwrap(), alpha);
        match corrector(p, alpha, &guess, opts) {
            Ok(pt) => branch.points.push(pt),
            Err(e) => return Err(bad(branch, alpha, e)),
        }
    }
    Ok(branch)
}

/// `max_α |ζ(-α) - ζ(α)| + ‖η(-α) + τ_π η(α)‖_X` with the negative side corrected independently.
pub fn check_symmetry(p: &EvolutionProblem, branch: &Branch, opts: &CorrectorOptions) -> Result<f64> {
    let mut prev = BranchPoint::trivial(p.nt, p.nx());
    let mut worst: f64 = 0.0;
    for pt in &branch.points {
        if pt.alpha == 0.0 {
            continue;
        }
        let neg = corrector(p, -pt.alpha, &predict(p, &prev, -pt.alpha), opts)?;
        let dz = (neg.lambda - pt.lambda).hypot(neg.sigma - pt.sigma);
        let de = norm_x(p.sys(), &neg.eta(p).add(&pt.eta(p).translate(PI)));
        worst = worst.max(dz + de);
        prev = neg;
    }
    Ok(worst)
}

/// Reduces to `[0, 2π)`, rounding angles within 1e-14 of a full turn to 0.
fn snap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t < 1e-14 || 2.0 * PI - t < 1e-14 {
        0.0
    } else {
        t
    }
}

/// Returns `θ ∈ [0, 2π)` and `τ_θ v` with `l(τ_θ v) = (r, 0)`, `r > 0`.
pub fn phase_align(p: &EvolutionProblem, v: &SpaceTimeField) -> Result<(f64, SpaceTimeField)> {
    let (a, b) = functional_l(p, v);
    let r = a.hypot(b);
    if !(r > 1e-14 * (1.0 + v.max_abs())) {
        return Err(HopfError::Degenerate("l(v) vanishes, the phase is undefined".into()));
    }
    let theta = snap_angle((-b).atan2(a));
    Ok((theta, v.translate(theta)))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MatchWindow {
    pub lambda: f64,
    pub sigma: f64,
    pub norm_x: f64,
    /// Allowed `|Δλ| + |Δσ| + ‖Δu‖_X` between the aligned candidate and the branch point.
    pub tol: f64,
}

impl Default for MatchWindow {
    fn default() -> Self {
        MatchWindow { lambda: 0.25, sigma: 0.25, norm_x: 2.5, tol: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatchResult {
    pub alpha: f64,
    /// `v = τ_θ` applied to the branch point.
    pub theta: f64,
    pub distance: f64,
}

/// Identifies a periodic orbit `v` (already in rescaled time, `2π`-periodic) with parameters
/// `(lambda, sigma)` as a time shift of a branch point.
pub fn match_solution(
    p: &EvolutionProblem,
    branch: &Branch,
    lambda: f64,
    sigma: f64,
    v: &SpaceTimeField,
    window: &MatchWindow,
    opts: &CorrectorOptions,
) -> Result<MatchResult> {
    let vn = norm_x(p.sys(), v);
    if lambda.abs() >= window.lambda || sigma.abs() >= window.sigma || vn >= window.norm_x {
        return Err(HopfError::OutsideWindow(format!(
            "|lambda| = {:.3e}, |sigma| = {:.3e}, |v|_X = {vn:.3e}",
            lambda.abs(),
            sigma.abs()
        )));
    }
    let (shift, aligned) = phase_align(p, v)?;
    let alpha = functional_l(p, &aligned).0;
    let near = branch
        .points
        .iter()
        .min_by(|x, y| (x.alpha - alpha).abs().total_cmp(&(y.alpha - alpha).abs()))
        .ok_or_else(|| HopfError::NoMatch("empty branch".into()))?;
    let pt = corrector(p, alpha, &predict(p, near, alpha), opts)?;
    let distance = (pt.lambda - lambda).abs() + (pt.sigma - sigma).abs() + norm_x(p.sys(), &aligned.sub(&pt.u));
    if !(distance <= window.tol) {
        return Err(HopfError::NoMatch(format!(
            "distance {distance:.3e} to the branch point at alpha = {alpha:.6} exceeds {:.1e}",
            window.tol
        )));
    }
    let theta = snap_angle(2.0 * PI - shift);
    Ok(MatchResult { alpha, theta, distance })
}

/// Residual of `U' = f(λ, U)` for `U(s) = u(s/(σ+1))`, sampled at `samples` times in one
/// period `[0, 2π(σ+1))` offset from the collocation grid. Relative to `‖A u‖`.
pub fn restored_period_residual(p: &EvolutionProblem, pt: &BranchPoint, samples: usize) -> f64 {
    let sys = p.sys();
    let c = pt.sigma + 1.0;
    let du = pt.u.time_derivative();
    let w = sys.v_weights();
    let wn = |x: &[f64]| -> f64 { x.iter().zip(w).map(|(a, b)| a * a * b).sum::<f64>().sqrt() };
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..samples {
        let s = 2.0 * PI * c * (k as f64 + 0.5 / PI) / samples as f64;
        let t = s / c;
        let u = pt.u.evaluate(t);
        let lhs: Vec<f64> = du.evaluate(t).iter().map(|v| v / c).collect();
        let mut f = sys.apply_a(&u);
        scale = scale.max(wn(&f));
        for (a, b) in f.iter_mut().zip(sys.h(pt.lambda, &u)) {
            *a += b;
        }
        let r: Vec<f64> = lhs.iter().zip(&f).map(|(a, b)| a - b).collect();
        worst = worst.max(wn(&r));
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// A branch point or candidate orbit on disk: the field JSON plus its parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub sigma: f64,
    pub field: SpaceTimeField,
}

impl From<&BranchPoint> for Checkpoint {
    fn from(pt: &BranchPoint) -> Self {
        Checkpoint { alpha: Some(pt.alpha), lambda: pt.lambda, sigma: pt.sigma, field: pt.u.clone() }
    }
}

pub const CSV_HEADER: &str = "alpha,lambda,sigma,eta_norm,g_residual,newton_iters";

/// Writes the branch as CSV; a failed run is flagged by a trailing `#` comment line.
pub fn write_csv<W: Write>(out: &mut W, points: &[BranchPoint], failure: Option<&str>) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for pt in points {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            pt.alpha, pt.lambda, pt.sigma, pt.eta_norm, pt.g_residual, pt.newton_iters
        )?;
    }
    if let Some(msg) = failure {
        writeln!(out, "# partial branch: {}", msg.replace('\n', " "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Example2;
    use approx::assert_relative_eq;

    fn ex2(nx: usize, nt: usize) -> EvolutionProblem {
        EvolutionProblem::prepare(Box::new(Example2::unchecked(nx)), nt).unwrap()
    }

    #[test]
    fn zero_amplitude_is_trivial() {
        let p = ex2(10, 3);
        let g = predict(&p, &BranchPoint::trivial(3, 10), 0.3);
        let pt = corrector(&p, 0.0, &g, &CorrectorOptions::default()).unwrap();
        assert_eq!(pt, BranchPoint::trivial(3, 10));
    }

    #[test]
    fn exact_guess_needs_no_iterations() {
        let p = ex2(12, 4);
        let mut g = predict(&p, &BranchPoint::trivial(4, 12), 0.1);
        g.lambda = 0.01;
        let pt = corrector(&p, 0.1, &g, &CorrectorOptions::default()).unwrap();
        assert_eq!(pt.newton_iters, 0);
        assert!(pt.eta_norm < 1e-12);
    }

    #[test]
    fn two_step_branch_has_endpoints_only() {
        let p = ex2(12, 4);
        let b = trace_branch(&p, 0.2, 2, &CorrectorOptions::default()).unwrap();
        let alphas: Vec<f64> = b.points.iter().map(|q| q.alpha).collect();
        assert_eq!(alphas, vec![0.0, 0.2]);
        assert_relative_eq!(b.points[1].lambda, 0.04, epsilon = 1e-10);
    }

    #[test]
    fn bad_grid_is_rejected() {
        let p = ex2(10, 3);
        assert!(trace_branch(&p, 0.2, 1, &CorrectorOptions::default()).is_err());
        assert!(trace_branch(&p, -0.2, 5, &CorrectorOptions::default()).is_err());
    }

    #[test]
    fn alignment_of_special_cases() {
        let p = ex2(10, 3);
        let us = p.u_star();
        let (th, v) = phase_align(&p, &us).unwrap();
        assert_eq!(th, 0.0);
        assert!(v.sub(&us).max_abs() < 1e-15);
        // l(v) = (0, 1)
        let v = us.translate(PI / 2.0);
        let (l1, l2) = functional_l(&p, &v);
        assert!(l1.abs() < 1e-12 && (l2 - 1.0).abs() < 1e-12);
        let (th, al) = phase_align(&p, &v).unwrap();
        assert_relative_eq!(th, 1.5 * PI, epsilon = 1e-12);
        assert!(al.sub(&us).max_abs() < 1e-12);
        assert!(phase_align(&p, &SpaceTimeField::zeros(3, 10)).is_err());
    }

    #[test]
    fn negated_half_period_shift_keeps_odd_modes() {
        let mut w = SpaceTimeField::zeros(3, 4);
        for n in 0..=3 {
            w.cos_mut(n)[1] = 1.0 + n as f64;
            if n > 0 {
                w.sin_mut(n)[2] = -(n as f64);
            }
        }
        let s = w.translate(PI).scaled(-1.0);
        for n in 0..=3 {
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            assert_relative_eq!(s.cos(n)[1], sign * w.cos(n)[1], epsilon = 1e-14);
            if n > 0 {
                assert_relative_eq!(s.sin(n)[2], sign * w.sin(n)[2], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let mut pt = BranchPoint::trivial(1, 2);
        pt.alpha = 0.1;
        pt.lambda = 0.01;
        pt.newton_iters = 3;
        let mut buf = Vec::new();
        write_csv(&mut buf, &[pt], Some("stopped")).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "1.0000000000000001e-1,1.0000000000000000e-2,0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0,3");
        assert!(lines[2].starts_with('#'));
        let back: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
        assert_eq!(back, 0.1);
    }
}
