//! Reaction-diffusion pair on the line with a `sech` potential, truncated to `[-L, L]`.
//!
//! ```text
//! u_t = u_xx - ρ u - v + u (λ κ² - u² - v²)
//! v_t = v_xx - ρ v + u + v (λ κ² - u² - v²)
//! ```
//! with `κ = sech(x/2)` and `ρ = 1/4 - sech²(x/2)/2`, so that `κ'' = ρ κ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{EvolutionProblem, EvolutionSystem, ExactPoint, Grid};
use crate::error::{HopfError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Example1Config {
    #[serde(rename = "L")]
    pub half_length: f64,
    pub nx: usize,
}

impl Default for Example1Config {
    fn default() -> Self {
        Example1Config { half_length: 30.0, nx: 600 }
    }
}

impl Example1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_length >= 20.0) {
            return Err(HopfError::Config(format!("example1.L must be at least 20, got {}", self.half_length)));
        }
        if self.nx < 200 {
            return Err(HopfError::Config(format!("example1.nx must be at least 200, got {}", self.nx)));
        }
        Ok(())
    }
}

pub struct Example1 {
    half_length: f64,
    nx: usize,
    h: f64,
    x: Vec<f64>,
    rho: Vec<f64>,
    kappa: Vec<f64>,
    weights: Vec<f64>,
    entries: Vec<(usize, usize, f64)>,
}

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

impl Example1 {
    pub fn new(cfg: &Example1Config) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::unchecked(cfg.half_length, cfg.nx))
    }

    /// Builds without the resolution limits; for coarse experiments.
    pub fn unchecked(half_length: f64, nx: usize) -> Self {
        let h = 2.0 * half_length / (nx + 1) as f64;
        let x: Vec<f64> = (0..nx).map(|j| -half_length + (j + 1) as f64 * h).collect();
        let kappa: Vec<f64> = x.iter().map(|&x| sech(x / 2.0)).collect();
        let rho: Vec<f64> = x.iter().map(|&x| 0.25 - 0.5 * sech(x / 2.0).powi(2)).collect();
        let ih2 = 1.0 / (h * h);
        let mut entries = Vec::with_capacity(8 * nx);
        for c in 0..2 {
            let o = c * nx;
            for j in 0..nx {
                entries.push((o + j, o + j, -2.0 * ih2 - rho[j]));
                if j > 0 {
                    entries.push((o + j, o + j - 1, ih2));
                }
                if j + 1 < nx {
                    entries.push((o + j, o + j + 1, ih2));
                }
            }
        }
        for j in 0..nx {
            entries.push((j, nx + j, -1.0));
            entries.push((nx + j, j, 1.0));
        }
        Example1 { half_length, nx, h, x, rho, kappa, weights: vec![h; 2 * nx], entries }
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
}

impl EvolutionSystem for Example1 {
    fn name(&self) -> &str {
        "example1"
    }

    fn nx(&self) -> usize {
        self.nx
    }

    fn grid(&self) -> Grid {
        Grid::Uniform { half_length: self.half_length, spacing: self.h, points: self.x.clone() }
    }

    fn v_weights(&self) -> &[f64] {
        &self.weights
    }

    fn a_entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    fn h(&self, lambda: f64, u: &[f64]) -> Vec<f64> {
        let n = self.nx;
        let mut out = vec![0.0; 2 * n];
        for j in 0..n {
            let (p, q) = (u[j], u[n + j]);
            let s = lambda * self.kappa[j] * self.kappa[j] - p * p - q * q;
            out[j] = p * s;
            out[n + j] = q * s;
        }
        out
    }

    fn h_u(&self, lambda: f64, u: &[f64], du: &[f64]) -> Vec<f64> {
        let n = self.nx;
        let mut out = vec![0.0; 2 * n];
        for j in 0..n {
            let (p, q) = (u[j], u[n + j]);
            let (dp, dq) = (du[j], du[n + j]);
            let s = lambda * self.kappa[j] * self.kappa[j] - p * p - q * q;
            let ds = -2.0 * (p * dp + q * dq);
            out[j] = dp * s + p * ds;
            out[n + j] = dq * s + q * ds;
        }
        out
    }

    fn h_lambda(&self, _lambda: f64, u: &[f64]) -> Vec<f64> {
        let n = self.nx;
        (0..2 * n).map(|i| self.kappa[i % n].powi(2) * u[i]).collect()
    }

    fn h_lambda_u_entries(&self) -> Vec<(usize, usize, f64)> {
        let n = self.nx;
        (0..2 * n).map(|i| (i, i, self.kappa[i % n].powi(2))).collect()
    }

    fn critical_guess(&self) -> Vec<Complex64> {
        let mut psi: Vec<Complex64> = self.kappa.iter().map(|&k| Complex64::new(k, 0.0)).collect();
        psi.extend(self.kappa.iter().map(|&k| Complex64::new(0.0, -k)));
        psi
    }

    fn adjoint_guess(&self) -> Vec<Complex64> {
        self.critical_guess()
    }

    /// `λ = α²`, `σ = 0`, `u = α (κ cos t, κ sin t)` solves the continuous problem.
    fn exact_branch(&self, alpha: f64) -> Option<ExactPoint> {
        let psi = self.critical_guess().into_iter().map(|z| alpha * z).collect();
        Some(ExactPoint { lambda: alpha * alpha, sigma: 0.0, psi })
    }

    /// `A = A0 - ρ I` with `A0` normal; `σ_min(ik - A) ≥ σ_min(ik - A0) - max|ρ|`.
    fn perturbation_certificate(&self, k: i64) -> Option<f64> {
        let m = (self.nx + 1) as f64;
        let kk = k.unsigned_abs() as f64;
        let mut best = f64::INFINITY;
        for p in 1..=self.nx {
            let s = (p as f64 * std::f64::consts::PI / (2.0 * m)).sin();
            let d = -4.0 * s * s / (self.h * self.h);
            for sgn in [-1.0, 1.0] {
                best = best.min(d.hypot(kk + sgn));
            }
        }
        let rmax = self.rho.iter().map(|r| r.abs()).fold(0.0, f64::max);
        Some(best - rmax)
    }
}

/// Example 1 with its critical eigendata prepared.
pub fn ex1_build(cfg: &Example1Config, nt: usize) -> Result<EvolutionProblem> {
    EvolutionProblem::prepare(Box::new(Example1::new(cfg)?), nt)
}
