//! Real 2π-periodic space-time fields stored as truncated Fourier series in time.
//!
//! A field is `u(t) = a_0 + Σ_{n=1}^{nt} (a_n cos nt + b_n sin nt)` where every coefficient
//! is a spatial state of length `2 * nx` (component-major: `c * nx + j`).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HopfError, Result};
use crate::problems::{EvolutionProblem, EvolutionSystem};

/// Number of state components. Both built-in problems are two-component systems.
pub const NCOMP: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRepr", into = "FieldRepr")]
pub struct SpaceTimeField {
    nt: usize,
    nx: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldRepr {
    ncomp: usize,
    nt: usize,
    nx: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TryFrom<FieldRepr> for SpaceTimeField {
    type Error = HopfError;

    fn try_from(r: FieldRepr) -> Result<Self> {
        if r.ncomp != NCOMP {
            return Err(HopfError::MalformedField(format!("ncomp must be {NCOMP}, got {}", r.ncomp)));
        }
        if r.nx == 0 {
            return Err(HopfError::MalformedField("nx must be positive".into()));
        }
        let s = NCOMP * r.nx;
        if r.a.len() != (r.nt + 1) * s || r.b.len() != r.nt * s {
            return Err(HopfError::MalformedField(format!(
                "expected {} cosine and {} sine coefficients, got {} and {}",
                (r.nt + 1) * s,
                r.nt * s,
                r.a.len(),
                r.b.len()
            )));
        }
        if r.a.iter().chain(&r.b).any(|v| !v.is_finite()) {
            return Err(HopfError::MalformedField("non-finite coefficient".into()));
        }
        Ok(SpaceTimeField { nt: r.nt, nx: r.nx, a: r.a, b: r.b })
    }
}

impl From<SpaceTimeField> for FieldRepr {
    fn from(f: SpaceTimeField) -> Self {
        FieldRepr { ncomp: NCOMP, nt: f.nt, nx: f.nx, a: f.a, b: f.b }
    }
}

/// Decomposition `u = û(0) + L1(û(1)) + u_high`.
#[derive(Clone, Debug)]
pub struct FrequencySplit {
    pub mean: Vec<f64>,
    pub first: Vec<Complex64>,
    pub high: SpaceTimeField,
}

impl SpaceTimeField {
    pub fn zeros(nt: usize, nx: usize) -> Self {
        let s = NCOMP * nx;
        SpaceTimeField { nt, nx, a: vec![0.0; (nt + 1) * s], b: vec![0.0; nt * s] }
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Length of one spatial state.
    pub fn state_len(&self) -> usize {
        NCOMP * self.nx
    }

    pub fn cos(&self, n: usize) -> &[f64] {
        let s = self.state_len();
        &self.a[n * s..(n + 1) * s]
    }

    pub fn cos_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.state_len();
        &mut self.a[n * s..(n + 1) * s]
    }

    /// Sine coefficient of mode `n >= 1`.
    pub fn sin(&self, n: usize) -> &[f64] {
        assert!(n >= 1, "mode 0 has no sine part");
        let s = self.state_len();
        &self.b[(n - 1) * s..n * s]
    }

    pub fn sin_mut(&mut self, n: usize) -> &mut [f64] {
        assert!(n >= 1, "mode 0 has no sine part");
        let s = self.state_len();
        &mut self.b[(n - 1) * s..n * s]
    }

    /// All coefficients, cosine block first.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        v.extend_from_slice(&self.b);
        v
    }

    pub fn flat_len(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn from_flat(nt: usize, nx: usize, v: &[f64]) -> Result<Self> {
        let s = NCOMP * nx;
        if v.len() != (2 * nt + 1) * s {
            return Err(HopfError::Shape(format!("flat field of length {} for nt={nt}, nx={nx}", v.len())));
        }
        let (a, b) = v.split_at((nt + 1) * s);
        Ok(SpaceTimeField { nt, nx, a: a.to_vec(), b: b.to_vec() })
    }

    fn check_same(&self, other: &Self) {
        assert!(self.nt == other.nt && self.nx == other.nx, "field shapes differ");
    }

    pub fn scaled(&self, c: f64) -> Self {
        SpaceTimeField {
            nt: self.nt,
            nx: self.nx,
            a: self.a.iter().map(|v| c * v).collect(),
            b: self.b.iter().map(|v| c * v).collect(),
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        self.check_same(other);
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += c * y;
        }
        for (x, y) in self.b.iter_mut().zip(&other.b) {
            *x += c * y;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Same field with `nt` changed, padding with zeros or truncating.
    pub fn with_nt(&self, nt: usize) -> Self {
        let mut out = SpaceTimeField::zeros(nt, self.nx);
        for n in 0..=nt.min(self.nt) {
            out.cos_mut(n).copy_from_slice(self.cos(n));
            if n >= 1 {
                out.sin_mut(n).copy_from_slice(self.sin(n));
            }
        }
        out
    }

    /// Applies a linear spatial map to every coefficient.
    pub fn map_states(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut out = SpaceTimeField::zeros(self.nt, self.nx);
        for n in 0..=self.nt {
            out.cos_mut(n).copy_from_slice(&f(self.cos(n)));
            if n >= 1 {
                out.sin_mut(n).copy_from_slice(&f(self.sin(n)));
            }
        }
        out
    }

    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        let mut u = self.cos(0).to_vec();
        for n in 1..=self.nt {
            let (s, c) = (n as f64 * t).sin_cos();
            for ((ui, ai), bi) in u.iter_mut().zip(self.cos(n)).zip(self.sin(n)) {
                *ui += c * ai + s * bi;
            }
        }
        u
    }

    /// Values at `m` equispaced times `2πk/m`.
    pub fn sample(&self, m: usize) -> Vec<Vec<f64>> {
        (0..m).map(|k| self.evaluate(2.0 * PI * k as f64 / m as f64)).collect()
    }

    /// Discrete Fourier projection of equispaced samples onto modes `0..=nt`.
    /// Exact for trigonometric polynomials of degree at most `nt` when `samples.len() >= 2nt+1`.
    pub fn from_samples(samples: &[Vec<f64>], nt: usize, nx: usize) -> Self {
        let m = samples.len();
        let mut out = SpaceTimeField::zeros(nt, nx);
        for (k, s) in samples.iter().enumerate() {
            let t = 2.0 * PI * k as f64 / m as f64;
            for (o, v) in out.cos_mut(0).iter_mut().zip(s) {
                *o += v / m as f64;
            }
            for n in 1..=nt {
                let (sn, cn) = (n as f64 * t).sin_cos();
                for (o, v) in out.cos_mut(n).iter_mut().zip(s) {
                    *o += 2.0 * cn * v / m as f64;
                }
                for (o, v) in out.sin_mut(n).iter_mut().zip(s) {
                    *o += 2.0 * sn * v / m as f64;
                }
            }
        }
        out
    }

    /// Number of collocation times used for nonlinear terms.
    pub fn collocation_points(&self) -> usize {
        2 * self.nt + 1
    }

    /// Complex Fourier coefficient `û(n)` with `u(t) = Σ û(n) e^{int}`.
    pub fn fourier_coefficient(&self, n: i64) -> Result<Vec<Complex64>> {
        let m = n.unsigned_abs() as usize;
        if m > self.nt {
            return Err(HopfError::Shape(format!("mode {n} beyond nt={}", self.nt)));
        }
        if m == 0 {
            return Ok(self.cos(0).iter().map(|&v| Complex64::new(v, 0.0)).collect());
        }
        let sign = if n > 0 { -1.0 } else { 1.0 };
        Ok(self
            .cos(m)
            .iter()
            .zip(self.sin(m))
            .map(|(&a, &b)| Complex64::new(a / 2.0, sign * b / 2.0))
            .collect())
    }

    /// Mode-`n` coefficient as one complex state `a_n - i b_n`, so mode `n` of `u` is `Re(ψ e^{int})`.
    pub fn mode_complex(&self, n: usize) -> Vec<Complex64> {
        if n == 0 {
            return self.cos(0).iter().map(|&v| Complex64::new(v, 0.0)).collect();
        }
        self.cos(n).iter().zip(self.sin(n)).map(|(&a, &b)| Complex64::new(a, -b)).collect()
    }

    /// Inverse of [`mode_complex`](Self::mode_complex). For `n = 0` the imaginary part is dropped.
    pub fn set_mode_complex(&mut self, n: usize, psi: &[Complex64]) {
        if n == 0 {
            for (o, p) in self.cos_mut(0).iter_mut().zip(psi) {
                *o = p.re;
            }
            return;
        }
        for (o, p) in self.cos_mut(n).iter_mut().zip(psi) {
            *o = p.re;
        }
        for (o, p) in self.sin_mut(n).iter_mut().zip(psi) {
            *o = -p.im;
        }
    }

    pub fn split_frequencies(&self) -> FrequencySplit {
        let mut high = self.clone();
        high.cos_mut(0).fill(0.0);
        let first = if self.nt >= 1 {
            high.cos_mut(1).fill(0.0);
            high.sin_mut(1).fill(0.0);
            self.fourier_coefficient(1).expect("mode 1 present")
        } else {
            vec![Complex64::new(0.0, 0.0); self.state_len()]
        };
        FrequencySplit { mean: self.cos(0).to_vec(), first, high }
    }

    /// `d/dt` of the series.
    pub fn time_derivative(&self) -> Self {
        let mut out = SpaceTimeField::zeros(self.nt, self.nx);
        for n in 1..=self.nt {
            let k = n as f64;
            let (a, b) = (self.cos(n).to_vec(), self.sin(n).to_vec());
            for (o, v) in out.cos_mut(n).iter_mut().zip(&b) {
                *o = k * v;
            }
            for (o, v) in out.sin_mut(n).iter_mut().zip(&a) {
                *o = -k * v;
            }
        }
        out
    }

    /// `(τ_θ u)(t) = u(t - θ)`.
    pub fn translate(&self, theta: f64) -> Self {
        let mut out = self.clone();
        for n in 1..=self.nt {
            let (s, c) = (n as f64 * theta).sin_cos();
            let (a, b) = (self.cos(n).to_vec(), self.sin(n).to_vec());
            for ((o, x), y) in out.cos_mut(n).iter_mut().zip(&a).zip(&b) {
                *o = c * x - s * y;
            }
            for ((o, x), y) in out.sin_mut(n).iter_mut().zip(&a).zip(&b) {
                *o = s * x + c * y;
            }
        }
        out
    }

    /// Parseval norm of the coefficients with unit spatial weights.
    pub fn coefficient_norm(&self) -> f64 {
        let s = self.state_len();
        let mean: f64 = self.a[..s].iter().map(|v| v * v).sum();
        let rest: f64 = self.a[s..].iter().chain(&self.b).map(|v| v * v).sum();
        (2.0 * PI * mean + PI * rest).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().chain(&self.b).map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// `L1(ψ) = Re(ψ e^{it})`, i.e. cosine part `Re ψ` and sine part `-Im ψ`.
pub fn l1_embed(psi: &[Complex64], nt: usize, nx: usize) -> Result<SpaceTimeField> {
    if psi.len() != NCOMP * nx {
        return Err(HopfError::Shape(format!("state of length {} for nx={nx}", psi.len())));
    }
    if nt == 0 {
        return Err(HopfError::Shape("nt must be at least 1 to hold mode 1".into()));
    }
    let mut u = SpaceTimeField::zeros(nt, nx);
    u.set_mode_complex(1, psi);
    Ok(u)
}

/// Recovers `ψ` from `L1(ψ)`; rejects fields with other modes above `tol` relative to the field norm.
pub fn l1_inverse(u: &SpaceTimeField, tol: f64) -> Result<Vec<Complex64>> {
    if u.nt() == 0 {
        return Err(HopfError::NotFirstMode(1.0));
    }
    let total = u.coefficient_norm();
    let rest = u.split_frequencies();
    let mut other = rest.high.clone();
    other.cos_mut(0).copy_from_slice(&rest.mean);
    let rel = if total > 0.0 { other.coefficient_norm() / total } else { 0.0 };
    if rel > tol {
        return Err(HopfError::NotFirstMode(rel));
    }
    Ok(u.mode_complex(1))
}

/// Collocation of a pointwise-in-time map at `2nt+1` equispaced times, projected back to modes `0..=nt`.
pub fn collocate(u: &SpaceTimeField, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> SpaceTimeField {
    let samples = u.sample(u.collocation_points());
    let out: Vec<Vec<f64>> = samples.iter().map(|s| f(s)).collect();
    SpaceTimeField::from_samples(&out, u.nt(), u.nx())
}

fn weighted_sq(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(w, x)| w * x * x).sum()
}

fn weighted_dot(w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum()
}

/// `(u, v)_Y = ∫_0^{2π} (u(t), v(t))_V dt`.
pub fn inner_y(sys: &dyn EvolutionSystem, u: &SpaceTimeField, v: &SpaceTimeField) -> f64 {
    let w = sys.v_weights();
    let mut s = 2.0 * PI * weighted_dot(w, u.cos(0), v.cos(0));
    for n in 1..=u.nt() {
        s += PI * (weighted_dot(w, u.cos(n), v.cos(n)) + weighted_dot(w, u.sin(n), v.sin(n)));
    }
    s
}

pub fn norm_y(sys: &dyn EvolutionSystem, u: &SpaceTimeField) -> f64 {
    let w = sys.v_weights();
    let mut s = 2.0 * PI * weighted_sq(w, u.cos(0));
    for n in 1..=u.nt() {
        s += PI * (weighted_sq(w, u.cos(n)) + weighted_sq(w, u.sin(n)));
    }
    s.sqrt()
}

/// Graph norm `‖u‖_X² = ‖u_t‖_Y² + ‖Au‖_Y²`.
pub fn norm_x(sys: &dyn EvolutionSystem, u: &SpaceTimeField) -> f64 {
    let ut = norm_y(sys, &u.time_derivative());
    let au = norm_y(sys, &u.map_states(|x| sys.apply_a(x)));
    ut.hypot(au)
}

/// `T1 u = u_t - A u`.
pub fn apply_t1(sys: &dyn EvolutionSystem, u: &SpaceTimeField) -> SpaceTimeField {
    let mut out = u.time_derivative();
    out.axpy(-1.0, &u.map_states(|x| sys.apply_a(x)));
    out
}

/// The normalization functionals `(l¹u, l²u)`; only mode 1 contributes.
pub fn functional_l(p: &EvolutionProblem, u: &SpaceTimeField) -> (f64, f64) {
    if u.nt() == 0 {
        return (0.0, 0.0);
    }
    let w = &p.l_weights;
    let l1: f64 = w.iter().zip(u.cos(1)).map(|(a, b)| a * b).sum();
    let l2: f64 = w.iter().zip(u.sin(1)).map(|(a, b)| a * b).sum();
    (l1, l2)
}
