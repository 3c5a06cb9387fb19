//! Two-component system on `(0, π)` with Dirichlet ends, in a sine basis.
//!
//! ```text
//! u_t = v - u
//! v_t = v_xx - 2u + 2v + u (λ sin²x - 2u² + 2uv - v²)
//! ```
//! The state holds the coefficients of `sin(n x)`, `n = 1..=nx`, for `u` then `v`.
//! `V = H¹₀ × L²`, so the mass weights are `(π/2) n²` and `π/2`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{EvolutionProblem, EvolutionSystem, ExactPoint, Grid};
use crate::error::{HopfError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Example2Config {
    pub nx: usize,
}

impl Default for Example2Config {
    fn default() -> Self {
        Example2Config { nx: 64 }
    }
}

impl Example2Config {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 {
            return Err(HopfError::Config(format!("example2.nx must be at least 8, got {}", self.nx)));
        }
        Ok(())
    }
}

pub struct Example2 {
    nx: usize,
    /// `sin(n x_j)` for collocation points `x_j = jπ/(J+1)`, row per point.
    table: Vec<f64>,
    points: usize,
    sin2: Vec<f64>,
    weights: Vec<f64>,
    entries: Vec<(usize, usize, f64)>,
}

impl Example2 {
    pub fn new(cfg: &Example2Config) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::unchecked(cfg.nx))
    }

    pub fn unchecked(nx: usize) -> Self {
        // 3nx+1 points resolve cubic products of degree-nx sine series without aliasing
        let points = 3 * nx + 1;
        let mut table = vec![0.0; points * nx];
        let mut sin2 = vec![0.0; points];
        for j in 0..points {
            let x = (j + 1) as f64 * PI / (points + 1) as f64;
            sin2[j] = x.sin().powi(2);
            for n in 0..nx {
                table[j * nx + n] = ((n + 1) as f64 * x).sin();
            }
        }
        let mut weights = Vec::with_capacity(2 * nx);
        weights.extend((1..=nx).map(|n| PI / 2.0 * (n * n) as f64));
        weights.extend(std::iter::repeat(PI / 2.0).take(nx));
        let mut entries = Vec::with_capacity(4 * nx);
        for k in 0..nx {
            let n2 = ((k + 1) * (k + 1)) as f64;
            entries.push((k, k, -1.0));
            entries.push((k, nx + k, 1.0));
            entries.push((nx + k, k, -2.0));
            entries.push((nx + k, nx + k, 2.0 - n2));
        }
        Example2 { nx, table, points, sin2, weights, entries }
    }

    fn synth(&self, c: &[f64]) -> Vec<f64> {
        (0..self.points)
            .map(|j| self.table[j * self.nx..(j + 1) * self.nx].iter().zip(c).map(|(s, a)| s * a).sum())
            .collect()
    }

    fn project(&self, vals: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nx];
        let scale = 2.0 / (self.points + 1) as f64;
        for (j, v) in vals.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(&self.table[j * self.nx..(j + 1) * self.nx]) {
                *o += scale * v * s;
            }
        }
        out
    }

    /// Places a `v`-component series behind a zero `u` component.
    fn second_component(&self, v: Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.nx];
        out.extend(v);
        out
    }

    /// Coefficient-space form of `ψ ↦ (0, sin²x ψ_u)` using
    /// `sin(nx) sin²x = sin(nx)/2 - [sin((n+2)x) + sin((n-2)x)]/4`.
    fn sin2_entries(&self) -> Vec<(usize, usize, f64)> {
        let nx = self.nx;
        let mut e = Vec::with_capacity(3 * nx);
        for n in 1..=nx {
            let col = n - 1;
            e.push((nx + n - 1, col, 0.5));
            if n + 2 <= nx {
                e.push((nx + n + 1, col, -0.25));
            }
            if n > 2 {
                e.push((nx + n - 3, col, -0.25));
            } else if n == 1 {
                // sin(-x) = -sin x
                e.push((nx, col, 0.25));
            }
        }
        e
    }
}

impl EvolutionSystem for Example2 {
    fn name(&self) -> &str {
        "example2"
    }

    fn nx(&self) -> usize {
        self.nx
    }

    fn grid(&self) -> Grid {
        Grid::SineModes { modes: self.nx }
    }

    fn v_weights(&self) -> &[f64] {
        &self.weights
    }

    fn a_entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    fn h(&self, lambda: f64, u: &[f64]) -> Vec<f64> {
        let (p, q) = (self.synth(&u[..self.nx]), self.synth(&u[self.nx..]));
        let vals: Vec<f64> = (0..self.points)
            .map(|j| {
                let (a, b) = (p[j], q[j]);
                a * (lambda * self.sin2[j] - 2.0 * a * a + 2.0 * a * b - b * b)
            })
            .collect();
        self.second_component(self.project(&vals))
    }

    fn h_u(&self, lambda: f64, u: &[f64], du: &[f64]) -> Vec<f64> {
        let (p, q) = (self.synth(&u[..self.nx]), self.synth(&u[self.nx..]));
        let (dp, dq) = (self.synth(&du[..self.nx]), self.synth(&du[self.nx..]));
        let vals: Vec<f64> = (0..self.points)
            .map(|j| {
                let (a, b) = (p[j], q[j]);
                let bracket = lambda * self.sin2[j] - 2.0 * a * a + 2.0 * a * b - b * b;
                dp[j] * (bracket - 4.0 * a * a + 2.0 * a * b) + dq[j] * (2.0 * a * a - 2.0 * a * b)
            })
            .collect();
        self.second_component(self.project(&vals))
    }

    fn h_lambda(&self, _lambda: f64, u: &[f64]) -> Vec<f64> {
        let p = self.synth(&u[..self.nx]);
        let vals: Vec<f64> = p.iter().zip(&self.sin2).map(|(a, s)| a * s).collect();
        self.second_component(self.project(&vals))
    }

    fn h_lambda_u_entries(&self) -> Vec<(usize, usize, f64)> {
        self.sin2_entries()
    }

    fn critical_guess(&self) -> Vec<Complex64> {
        let mut psi = vec![Complex64::new(0.0, 0.0); 2 * self.nx];
        psi[0] = Complex64::new(1.0, 0.0);
        psi[self.nx] = Complex64::new(1.0, 1.0);
        psi
    }

    /// `(-(1+i) sin x, sin x)`, the null vector of `(i - A)*` in `V`.
    fn adjoint_guess(&self) -> Vec<Complex64> {
        let mut psi = vec![Complex64::new(0.0, 0.0); 2 * self.nx];
        psi[0] = Complex64::new(-1.0, -1.0);
        psi[self.nx] = Complex64::new(1.0, 0.0);
        psi
    }

    /// `λ = α²`, `σ = 0`, `u = α (cos t sin x, (cos t - sin t) sin x)`.
    fn exact_branch(&self, alpha: f64) -> Option<ExactPoint> {
        let psi = self.critical_guess().into_iter().map(|z| alpha * z).collect();
        Some(ExactPoint { lambda: alpha * alpha, sigma: 0.0, psi })
    }

    /// Mode-decoupled `2×2` solves of `(z - A) w = rhs`.
    fn resolvent_solve(&self, z: Complex64, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let nx = self.nx;
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * nx];
        for k in 0..nx {
            let n2 = ((k + 1) * (k + 1)) as f64;
            // [[z+1, -1], [2, z-2+n²]]
            let (a11, a12, a21, a22) = (z + 1.0, Complex64::new(-1.0, 0.0), Complex64::new(2.0, 0.0), z - 2.0 + n2);
            let det = a11 * a22 - a12 * a21;
            let scale = a11.norm().max(a22.norm()).max(2.0);
            if det.norm() <= 1e-13 * scale * scale {
                return Err(HopfError::NearSpectrum { z, pivot: det.norm() / (scale * scale) });
            }
            let (r1, r2) = (rhs[k], rhs[nx + k]);
            out[k] = (a22 * r1 - a12 * r2) / det;
            out[nx + k] = (a11 * r2 - a21 * r1) / det;
        }
        Ok(out)
    }
}

/// Example 2 with its critical eigendata prepared.
pub fn ex2_build(cfg: &Example2Config, nt: usize) -> Result<EvolutionProblem> {
    EvolutionProblem::prepare(Box::new(Example2::new(cfg)?), nt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn critical_vector_is_exact_eigenvector() {
        let p = Example2::unchecked(16);
        let psi = p.critical_guess();
        let ap = p.apply_a_c(&psi);
        for (a, b) in ap.iter().zip(&psi) {
            assert_relative_eq!((a - c(0.0, 1.0) * b).norm(), 0.0, epsilon = 1e-15);
        }
    }

    fn adjoint_residual(p: &Example2, psi: &[Complex64]) -> f64 {
        // (i - A)* = -i - W⁻¹ Aᵀ W
        let w = p.v_weights();
        let wpsi: Vec<Complex64> = psi.iter().zip(w).map(|(z, w)| z * w).collect();
        let mut at = vec![c(0.0, 0.0); psi.len()];
        for &(i, j, v) in p.a_entries() {
            at[j] += v * wpsi[i];
        }
        at.iter().zip(w).zip(psi).map(|((a, w), z)| (-c(0.0, 1.0) * z - a / w).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn adjoint_guess_is_in_adjoint_kernel() {
        let p = Example2::unchecked(16);
        assert!(adjoint_residual(&p, &p.adjoint_guess()) < 1e-15);
    }

    #[test]
    fn sign_flipped_adjoint_candidate_is_not_null() {
        let p = Example2::unchecked(16);
        let mut cand = vec![c(0.0, 0.0); 32];
        cand[0] = c(1.0, 1.0);
        cand[16] = c(1.0, 0.0);
        assert_relative_eq!(adjoint_residual(&p, &cand), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn collocated_sin2_matches_three_term_formula() {
        let p = Example2::unchecked(20);
        let u: Vec<f64> = (0..40).map(|i| ((i * 13 % 7) as f64 - 3.0) / (1.0 + i as f64)).collect();
        let colloc = p.h_lambda(0.0, &u);
        let exact = p.h_lambda_u(&u);
        for (a, b) in colloc.iter().zip(&exact) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn branch_profile_annihilates_nonlinearity() {
        let p = Example2::unchecked(12);
        let alpha: f64 = 0.3;
        let t: f64 = 1.3;
        let mut u = vec![0.0; 24];
        u[0] = alpha * t.cos();
        u[12] = alpha * (t.cos() - t.sin());
        let h = p.h(alpha * alpha, &u);
        assert!(h.iter().all(|v| v.abs() < 1e-14), "{h:?}");
    }

    #[test]
    fn resolvent_closed_form_matches_banded_solve() {
        let p = Example2::unchecked(10);
        let z = c(0.3, 2.0);
        let rhs: Vec<Complex64> = (0..20).map(|i| c((i as f64).sin(), (i as f64).cos())).collect();
        let w = p.resolvent_solve(z, &rhs).unwrap();
        let op = crate::problems::ShiftedOperator::new(&p, z, 1.0, &[], false, crate::linalg::PivotPolicy::Strict { rel: 1e-13 }).unwrap();
        let w2 = crate::linalg::CoreSystem::solve(&op, &rhs);
        for (a, b) in w.iter().zip(&w2) {
            assert_relative_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn resolvent_at_i_is_rejected() {
        let p = Example2::unchecked(10);
        let rhs = vec![c(1.0, 0.0); 20];
        assert!(matches!(p.resolvent_solve(c(0.0, 1.0), &rhs), Err(HopfError::NearSpectrum { .. })));
    }

    #[test]
    fn shifted_first_mode_identity() {
        // (z - A)(sin nx / n, 0) = ((z+1)/n sin nx, 2/n sin nx)
        let p = Example2::unchecked(12);
        let z = c(0.0, 0.0);
        for n in 1..=12usize {
            let mut rhs = vec![c(0.0, 0.0); 24];
            rhs[n - 1] = (z + 1.0) / n as f64;
            rhs[12 + n - 1] = c(2.0 / n as f64, 0.0);
            let w = p.resolvent_solve(z, &rhs).unwrap();
            for (i, wi) in w.iter().enumerate() {
                let expect = if i == n - 1 { 1.0 / n as f64 } else { 0.0 };
                assert_relative_eq!((wi - expect).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }
}
