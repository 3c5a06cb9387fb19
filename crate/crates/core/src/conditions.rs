//! Checks of the spectral hypotheses at the critical parameter `λ = 0`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HopfError, Result};
use crate::linalg::{lanczos_max, norm, seeded_vector, Bordered, CoreSystem, LanczosOptions, PivotPolicy};
use crate::problems::{inner_v, norm_v, relabel_near_spectrum, EvolutionProblem, EvolutionSystem, ShiftedOperator};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Below this a singular value is treated as zero.
pub const SPECTRAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub mu: Complex64,
    pub psi: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
}

fn align_to(sys: &dyn EvolutionSystem, x: &mut [Complex64], reference: &[Complex64]) {
    let c = inner_v(sys, x, reference);
    let phase = if c.norm() > 0.0 { c.conj() / c.norm() } else { Complex64::new(1.0, 0.0) };
    let s = norm_v(sys, reference) / norm_v(sys, x);
    for v in x.iter_mut() {
        *v *= phase * s;
    }
}

/// Inverse iteration with shift `i`, started from the problem's analytic guess.
///
/// The eigenvector is rotated so that `(ψ★, guess)_V > 0` and scaled to the guess's `V`-norm.
pub fn find_critical_eigenpair(sys: &dyn EvolutionSystem) -> Result<Eigenpair> {
    let op = ShiftedOperator::new(sys, I, 1.0, &[], false, PivotPolicy::Floor { rel: 1e-15 })?;
    let guess = sys.critical_guess();
    let rayleigh = |y: &[Complex64]| {
        let ay = sys.apply_a_c(y);
        let mu = inner_v(sys, &ay, y);
        let r: Vec<Complex64> = ay.iter().zip(y).map(|(a, b)| a - mu * b).collect();
        (mu, norm_v(sys, &r), norm_v(sys, &ay))
    };
    let mut x = guess.clone();
    let n0 = norm_v(sys, &x);
    x.iter_mut().for_each(|v| *v /= n0);
    let (mut mu, mut residual, scale) = rayleigh(&x);
    let mut iterations = 0;
    // an exact guess is kept as is; a solve at the singular shift would only add rounding
    let mut converged = residual <= 1e-10 * scale.max(1.0);
    while !converged && iterations < 60 {
        iterations += 1;
        let mut y = op.solve(&x);
        let ny = norm_v(sys, &y);
        if !(ny.is_finite() && ny > 0.0) {
            return Err(HopfError::NoConvergence("inverse iteration produced a zero or non-finite vector".into()));
        }
        y.iter_mut().for_each(|v| *v /= ny);
        let (m, r, scale) = rayleigh(&y);
        (mu, residual, x) = (m, r, y);
        converged = residual <= 1e-10 * scale.max(1.0);
    }
    if (mu - I).norm() > 0.5 {
        return Err(HopfError::WrongEigenvalue { mu });
    }
    if residual > 1e-8 * norm_v(sys, &sys.apply_a_c(&x)).max(1.0) {
        return Err(HopfError::NoConvergence(format!("eigenvector residual {residual:.3e}")));
    }
    align_to(sys, &mut x, &guess);
    Ok(Eigenpair { mu, psi: x, residual, iterations })
}

/// `W⁻¹ Aᵀ W x`, the `V`-adjoint of `A`.
fn apply_a_star(sys: &dyn EvolutionSystem, x: &[Complex64]) -> Vec<Complex64> {
    let w = sys.v_weights();
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    for &(i, j, v) in sys.a_entries() {
        y[j] += v * w[i] * x[i];
    }
    y.iter().zip(w).map(|(a, w)| a / w).collect()
}

/// Null vector of `(μ - A)*` in `V`, aligned with the problem's analytic adjoint guess.
pub fn find_adjoint_vector(sys: &dyn EvolutionSystem, mu: Complex64) -> Result<Vec<Complex64>> {
    let op = ShiftedOperator::new(sys, mu, 1.0, &[], false, PivotPolicy::Floor { rel: 1e-15 })?;
    let w = sys.v_weights();
    let guess = sys.adjoint_guess();
    // y = W ψ# is a left null vector of μ - A
    let mut y: Vec<Complex64> = guess.iter().zip(w).map(|(g, w)| g * w).collect();
    let adjoint_residual = |psi: &[Complex64]| {
        let ap = apply_a_star(sys, psi);
        let r: Vec<Complex64> = ap.iter().zip(psi).map(|(a, p)| a - mu.conj() * p).collect();
        let np = norm_v(sys, psi);
        (norm_v(sys, &r) / np, (norm_v(sys, &ap) / np).max(1.0))
    };
    let mut psi = guess.clone();
    let (mut residual, mut scale) = adjoint_residual(&psi);
    let mut iterations = 0;
    while residual > 1e-10 * scale && iterations < 60 {
        iterations += 1;
        y = op.solve_adjoint(&y);
        let ny = norm(&y);
        if !(ny.is_finite() && ny > 0.0) {
            return Err(HopfError::NoConvergence("adjoint iteration produced a zero or non-finite vector".into()));
        }
        y.iter_mut().for_each(|v| *v /= ny);
        psi = y.iter().zip(w).map(|(v, w)| v / w).collect();
        (residual, scale) = adjoint_residual(&psi);
    }
    if residual > 1e-8 * scale {
        return Err(HopfError::NoConvergence(format!("adjoint residual {residual:.3e}")));
    }
    align_to(sys, &mut psi, &guess);
    Ok(psi)
}

/// `‖(z - A)⁻¹‖_{V→V}`.
pub fn resolvent_norm(sys: &dyn EvolutionSystem, z: Complex64) -> Result<f64> {
    let op = ShiftedOperator::new(sys, z, 1.0, &[], true, PivotPolicy::Strict { rel: 1e-13 })
        .map_err(|e| relabel_near_spectrum(e, z))?;
    let top = lanczos_max::<Complex64>(sys.dim(), |x| op.solve_adjoint(&op.solve(x)), LanczosOptions::default());
    Ok(top.sqrt())
}

/// `σ_min(z - A)` in `V`; zero when `z` is numerically an eigenvalue.
pub fn spectral_margin(sys: &dyn EvolutionSystem, z: Complex64) -> Result<f64> {
    match resolvent_norm(sys, z) {
        Ok(r) => Ok(1.0 / r),
        Err(HopfError::NearSpectrum { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimplicityReport {
    /// `|(ψ#, ψ★)_V|`.
    pub nondeg: f64,
    /// `nondeg / (‖ψ#‖_V ‖ψ★‖_V)`.
    pub nondeg_relative: f64,
    /// Second-smallest singular value of `i - A` in `V`.
    pub gap: f64,
    pub passed: bool,
}

/// Algebraic simplicity of `i`: a spectral gap above the kernel and a nonzero adjoint pairing.
pub fn check_simplicity(p: &EvolutionProblem) -> Result<SimplicityReport> {
    let sys = p.sys();
    let pair = inner_v(sys, &p.psi_sharp, &p.psi_star);
    let nondeg = pair.norm();
    let nondeg_relative = nondeg / (norm_v(sys, &p.psi_sharp) * norm_v(sys, &p.psi_star));
    let gap = second_singular_value(sys, I)?;
    let passed = gap >= SPECTRAL_TOL && nondeg_relative >= SPECTRAL_TOL;
    Ok(SimplicityReport { nondeg, nondeg_relative, gap, passed })
}

/// `σ₂(z - A)` in `V`, by deflating the smallest singular pair with a rank-one border.
pub fn second_singular_value(sys: &dyn EvolutionSystem, z: Complex64) -> Result<f64> {
    let n = sys.dim();
    let core = ShiftedOperator::new(sys, z, 1.0, &[], true, PivotPolicy::Floor { rel: 1e-12 })?;
    let mut v = seeded_vector::<Complex64>(n, 17);
    for _ in 0..6 {
        v = core.solve(&core.solve_adjoint(&v));
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
    }
    let mut u = core.solve_adjoint(&v);
    let nu = norm(&u);
    u.iter_mut().for_each(|x| *x /= nu);
    let top = lanczos_max::<Complex64>(n, |x| core.apply_adjoint(&core.apply(x)), LanczosOptions { max_iter: 40, tol: 1e-6, seed: 3 });
    let c = 2.0 * top.sqrt();
    let cols = vec![u.iter().map(|x| x * c).collect()];
    let rows = vec![v.iter().map(|x| x.conj() * c).collect()];
    let bordered = Bordered::new(core, cols, rows, DMatrix::zeros(1, 1))?;
    let inv = lanczos_max::<Complex64>(n + 1, |x| bordered.solve_adjoint(&bordered.solve(x)), LanczosOptions::default());
    Ok(1.0 / inv.sqrt())
}

/// `μ'(0) = (f_λu ψ★, ψ#)_V / (ψ★, ψ#)_V`, the derivative of the critical eigenvalue.
pub fn transversality(p: &EvolutionProblem) -> Result<Complex64> {
    let sys = p.sys();
    let mut fpsi = vec![Complex64::new(0.0, 0.0); sys.dim()];
    for (i, j, v) in sys.h_lambda_u_entries() {
        fpsi[i] += v * p.psi_star[j];
    }
    let den = inner_v(sys, &p.psi_star, &p.psi_sharp);
    if den.norm() < SPECTRAL_TOL * norm_v(sys, &p.psi_star) * norm_v(sys, &p.psi_sharp) {
        return Err(HopfError::Degenerate("ψ★ is orthogonal to ψ#".into()));
    }
    Ok(inner_v(sys, &fpsi, &p.psi_sharp) / den)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct B3Entry {
    pub k: i64,
    /// `σ_min(ik - A)` in `V`.
    pub margin: f64,
    /// Perturbation lower bound for the margin, when the problem supplies one.
    pub certified: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct B3Report {
    pub entries: Vec<B3Entry>,
    pub min_margin: f64,
    pub passed: bool,
    pub warnings: Vec<String>,
}

/// `ik` lies in the resolvent set for `k = 0, 2, 3, ..., k_max` (negative `k` follow by conjugation).
pub fn check_b3(p: &EvolutionProblem, k_max: u32) -> Result<B3Report> {
    let sys = p.sys();
    let ks: Vec<i64> = (0..=k_max as i64).filter(|&k| k != 1).collect();
    let entries = ks
        .par_iter()
        .map(|&k| {
            let margin = spectral_margin(sys, Complex64::new(0.0, k as f64))?;
            Ok(B3Entry { k, margin, certified: sys.perturbation_certificate(k) })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_margin = entries.iter().map(|e| e.margin).fold(f64::INFINITY, f64::min);
    let mut warnings = Vec::new();
    if k_max < 4 {
        warnings.push(format!("k_max = {k_max} stops before the high-frequency regime; rely on the K1 sweep beyond it"));
    }
    Ok(B3Report { entries, min_margin, passed: min_margin >= SPECTRAL_TOL, warnings })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct K1Entry {
    pub n: u32,
    pub resolvent_norm: f64,
    /// `n ‖(in - A)⁻¹‖`.
    pub scaled: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct K1Report {
    pub entries: Vec<K1Entry>,
    /// Largest scaled value over the sweep; the constant `M` used by the high-frequency bounds.
    pub sup: f64,
    pub argmax: u32,
}

/// Sweeps `n ‖(in - A)⁻¹‖_V` over `n_min ≤ n ≤ n_max`.
pub fn estimate_k1(sys: &dyn EvolutionSystem, n_min: u32, n_max: u32) -> Result<K1Report> {
    if n_min < 2 || n_max < n_min {
        return Err(HopfError::Config(format!("K1 sweep needs 2 <= n_min <= n_max, got [{n_min}, {n_max}]")));
    }
    let ns: Vec<u32> = (n_min..=n_max).collect();
    let entries = ns
        .par_iter()
        .map(|&n| {
            let r = resolvent_norm(sys, Complex64::new(0.0, n as f64))?;
            Ok(K1Entry { n, resolvent_norm: r, scaled: n as f64 * r })
        })
        .collect::<Result<Vec<_>>>()?;
    let (argmax, sup) = entries
        .iter()
        .map(|e| (e.n, e.scaled))
        .fold((n_min, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    Ok(K1Report { entries, sup, argmax })
}

/// `J(k, ξ) = (ξ⁴ + (k+1)²) / (ξ⁸ + 2(k²+1)ξ⁴ + (1-k²)²)`.
pub fn lemma51_j(k: f64, xi: f64) -> Result<f64> {
    let x4 = xi.powi(4);
    let den = x4 * x4 + 2.0 * (k * k + 1.0) * x4 + (1.0 - k * k).powi(2);
    if den == 0.0 {
        return Err(HopfError::Pole(format!("k = {k}, xi = {xi}")));
    }
    Ok((x4 + (k + 1.0).powi(2)) / den)
}

/// Fourier symbol of `(A0 - ik)⁻¹` for the constant-coefficient part of Example 1:
/// returns `(φ̂, ψ̂)` for data `(γ̂, ω̂)` at frequency `ξ`.
pub fn ex1_resolvent_symbol(k: f64, xi: f64, gamma: Complex64, omega: Complex64) -> Result<(Complex64, Complex64)> {
    let s = Complex64::new(xi * xi, k);
    let den = 1.0 + s * s;
    if den.norm() == 0.0 {
        return Err(HopfError::Pole(format!("k = {k}, xi = {xi}")));
    }
    Ok(((-s * gamma + omega) / den, -(gamma + s * omega) / den))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub mu_prime: Complex64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    pub problem: String,
    pub nx: usize,
    pub mu: Complex64,
    pub b1: SimplicityReport,
    pub b2: TransversalityReport,
    pub b3: B3Report,
    pub k1: K1Report,
    pub all_passed: bool,
}

pub fn run_conditions(p: &EvolutionProblem, k_max: u32, n_max: u32) -> Result<ConditionReport> {
    let b1 = check_simplicity(p)?;
    let mu_prime = transversality(p)?;
    let b2 = TransversalityReport { mu_prime, passed: mu_prime.re.abs() >= SPECTRAL_TOL };
    let b3 = check_b3(p, k_max)?;
    let k1 = estimate_k1(p.sys(), 2, n_max.max(2))?;
    let all_passed = b1.passed && b2.passed && b3.passed && k1.sup.is_finite();
    Ok(ConditionReport { problem: p.system.name().to_string(), nx: p.nx(), mu: p.mu, b1, b2, b3, k1, all_passed })
}
