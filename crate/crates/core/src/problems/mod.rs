//! Evolution problems `u_t = f(λ, u) = A u + h(λ, u)` on a spatial discretization.

use num_complex::Complex64;

use crate::conditions::{find_adjoint_vector, find_critical_eigenpair};
use crate::error::{HopfError, Result};
use crate::linalg::{BandMatrix, BandSystem, CoreSystem, PivotPolicy};
use crate::spacetime::{l1_embed, norm_y, SpaceTimeField, NCOMP};

mod example1;
mod example2;
mod linear;

pub use example1::{ex1_build, Example1, Example1Config};
pub use example2::{ex2_build, Example2, Example2Config};
pub use linear::LinearSystem;

#[derive(Clone, Debug, PartialEq)]
pub enum Grid {
    /// Interior points of a uniform grid on `[-L, L]` with Dirichlet ends.
    Uniform { half_length: f64, spacing: f64, points: Vec<f64> },
    /// Coefficients of `sin(n x)`, `n = 1..=modes`, on `(0, π)`.
    SineModes { modes: usize },
}

/// Closed-form point on a known solution branch: `u = L1(psi)`.
#[derive(Clone, Debug)]
pub struct ExactPoint {
    pub lambda: f64,
    pub sigma: f64,
    pub psi: Vec<Complex64>,
}

/// Spatial discretization of a two-component evolution problem.
///
/// States have length `2 * nx` in component-major order. `A` is the linear part;
/// `h` collects everything else and satisfies `h(λ, 0) = 0`, `h_u(0, 0) = 0`.
pub trait EvolutionSystem: Send + Sync {
    fn name(&self) -> &str;
    fn nx(&self) -> usize;
    fn grid(&self) -> Grid;

    fn dim(&self) -> usize {
        NCOMP * self.nx()
    }

    /// Diagonal of the mass matrix of the space `V`.
    fn v_weights(&self) -> &[f64];

    /// Sparse entries of `A`.
    fn a_entries(&self) -> &[(usize, usize, f64)];

    fn h(&self, lambda: f64, u: &[f64]) -> Vec<f64>;
    fn h_u(&self, lambda: f64, u: &[f64], du: &[f64]) -> Vec<f64>;
    fn h_lambda(&self, lambda: f64, u: &[f64]) -> Vec<f64>;

    /// Entries of `f_λu(0, 0)`. Built-in problems have `h_u(λ, 0) = λ f_λu(0, 0)`.
    fn h_lambda_u_entries(&self) -> Vec<(usize, usize, f64)>;

    /// Analytic approximation of the eigenvector for `i`.
    fn critical_guess(&self) -> Vec<Complex64>;

    /// Analytic approximation of the adjoint null vector.
    fn adjoint_guess(&self) -> Vec<Complex64>;

    fn exact_branch(&self, _alpha: f64) -> Option<ExactPoint> {
        None
    }

    /// A lower bound for `σ_min(ik - A)` from a perturbation argument, if the problem has one.
    fn perturbation_certificate(&self, _k: i64) -> Option<f64> {
        None
    }

    fn h_u_zero_entries(&self, lambda: f64) -> Vec<(usize, usize, f64)> {
        self.h_lambda_u_entries().into_iter().map(|(i, j, v)| (i, j, lambda * v)).collect()
    }

    fn h_lambda_u(&self, du: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; du.len()];
        for (i, j, v) in self.h_lambda_u_entries() {
            out[i] += v * du[j];
        }
        out
    }

    fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for &(i, j, v) in self.a_entries() {
            y[i] += v * x[j];
        }
        y
    }

    fn apply_a_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for &(i, j, v) in self.a_entries() {
            y[j] += v * x[i];
        }
        y
    }

    fn apply_a_c(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
        for &(i, j, v) in self.a_entries() {
            y[i] += v * x[j];
        }
        y
    }

    fn f(&self, lambda: f64, u: &[f64]) -> Vec<f64> {
        let mut y = self.apply_a(u);
        for (a, b) in y.iter_mut().zip(self.h(lambda, u)) {
            *a += b;
        }
        y
    }

    /// Solves `(z - A) w = rhs`; fails when `z` is numerically in the spectrum.
    fn resolvent_solve(&self, z: Complex64, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let op = ShiftedOperator::new(self, z, 1.0, &[], false, PivotPolicy::Strict { rel: 1e-13 })
            .map_err(|e| relabel_near_spectrum(e, z))?;
        Ok(op.solve(rhs))
    }
}

pub(crate) fn relabel_near_spectrum(e: HopfError, z: Complex64) -> HopfError {
    match e {
        HopfError::NearSpectrum { pivot, .. } => HopfError::NearSpectrum { z, pivot },
        other => other,
    }
}

/// `(u, v)_V` for complex states, conjugate-linear in the second argument.
pub fn inner_v(sys: &dyn EvolutionSystem, u: &[Complex64], v: &[Complex64]) -> Complex64 {
    sys.v_weights().iter().zip(u).zip(v).map(|((w, a), b)| *w * a * b.conj()).sum()
}

pub fn norm_v(sys: &dyn EvolutionSystem, u: &[Complex64]) -> f64 {
    sys.v_weights().iter().zip(u).map(|(w, a)| w * a.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm_v_real(sys: &dyn EvolutionSystem, u: &[f64]) -> f64 {
    sys.v_weights().iter().zip(u).map(|(w, a)| w * a * a).sum::<f64>().sqrt()
}

/// `(u, v)_U = (Au, Av)_V`.
pub fn inner_u(sys: &dyn EvolutionSystem, u: &[Complex64], v: &[Complex64]) -> Complex64 {
    inner_v(sys, &sys.apply_a_c(u), &sys.apply_a_c(v))
}

/// Position of component-major index `i` in the interleaved ordering `2j + c`.
#[inline]
pub(crate) fn interleaved(nx: usize, i: usize) -> usize {
    2 * (i % nx) + i / nx
}

/// `z I - c (A + extra)` in interleaved ordering, optionally in `V`-orthonormal coordinates
/// `W^{1/2} (·) W^{-1/2}`, factored.
pub struct ShiftedOperator {
    nx: usize,
    band: BandSystem<Complex64>,
}

impl ShiftedOperator {
    pub fn new<S: EvolutionSystem + ?Sized>(
        sys: &S,
        z: Complex64,
        c: f64,
        extra: &[(usize, usize, f64)],
        weighted: bool,
        policy: PivotPolicy,
    ) -> Result<Self> {
        let nx = sys.nx();
        let n = NCOMP * nx;
        let w = sys.v_weights();
        let mut trip: Vec<(usize, usize, Complex64)> = Vec::with_capacity(sys.a_entries().len() + extra.len() + n);
        for i in 0..n {
            trip.push((interleaved(nx, i), interleaved(nx, i), z));
        }
        for &(i, j, v) in sys.a_entries().iter().chain(extra) {
            let s = if weighted { (w[i] / w[j]).sqrt() } else { 1.0 };
            trip.push((interleaved(nx, i), interleaved(nx, j), Complex64::new(-c * v * s, 0.0)));
        }
        let band = BandSystem::new(BandMatrix::from_triplets(n, &trip), policy)?;
        Ok(ShiftedOperator { nx, band })
    }

    pub fn floored(&self) -> usize {
        self.band.lu.floored()
    }

    fn to_band(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
        for (i, v) in x.iter().enumerate() {
            y[interleaved(self.nx, i)] = *v;
        }
        y
    }

    fn from_band(&self, y: &[Complex64]) -> Vec<Complex64> {
        (0..y.len()).map(|i| y[interleaved(self.nx, i)]).collect()
    }
}

impl CoreSystem<Complex64> for ShiftedOperator {
    fn dim(&self) -> usize {
        self.band.dim()
    }
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.from_band(&self.band.apply(&self.to_band(x)))
    }
    fn apply_adjoint(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.from_band(&self.band.apply_adjoint(&self.to_band(x)))
    }
    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.from_band(&self.band.solve(&self.to_band(b)))
    }
    fn solve_adjoint(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.from_band(&self.band.solve_adjoint(&self.to_band(b)))
    }
}

/// A discretized problem together with its critical eigendata and bordering.
pub struct EvolutionProblem {
    pub system: Box<dyn EvolutionSystem>,
    pub nt: usize,
    /// Computed eigenvalue nearest `i`.
    pub mu: Complex64,
    pub psi_star: Vec<Complex64>,
    pub psi_sharp: Vec<Complex64>,
    /// Real bordering vector with `(d, ψ★)_U = 1`.
    pub d: Vec<f64>,
    /// `Aᵀ W A d`, so that `l¹u = l_weights · a_1`, `l²u = l_weights · b_1`.
    pub l_weights: Vec<f64>,
}

impl std::fmt::Debug for EvolutionProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvolutionProblem")
            .field("name", &self.system.name())
            .field("nx", &self.system.nx())
            .field("nt", &self.nt)
            .field("mu", &self.mu)
            .finish()
    }
}

impl EvolutionProblem {
    pub fn prepare(system: Box<dyn EvolutionSystem>, nt: usize) -> Result<Self> {
        if nt < 1 {
            return Err(HopfError::Config("nt must be at least 1".into()));
        }
        let eig = find_critical_eigenpair(&*system)?;
        let psi_sharp = find_adjoint_vector(&*system, eig.mu)?;
        let d = prepare_bordering(&*system, &eig.psi)?;
        let ad = system.apply_a(&d);
        let wad: Vec<f64> = ad.iter().zip(system.v_weights()).map(|(a, w)| a * w).collect();
        let l_weights = system.apply_a_transpose(&wad);
        Ok(EvolutionProblem { system, nt, mu: eig.mu, psi_star: eig.psi, psi_sharp, d, l_weights })
    }

    pub fn sys(&self) -> &dyn EvolutionSystem {
        &*self.system
    }

    pub fn nx(&self) -> usize {
        self.system.nx()
    }

    /// `u★ = L1(ψ★)`.
    pub fn u_star(&self) -> SpaceTimeField {
        l1_embed(&self.psi_star, self.nt, self.nx()).expect("ψ★ has the state length")
    }

    /// Magnitude of the terms in `g(Λ, u)/α` near the bifurcation point, `‖A u★‖_Y`.
    pub fn residual_scale(&self) -> f64 {
        norm_y(self.sys(), &self.u_star().map_states(|x| self.system.apply_a(x)))
    }
}

/// Real `d ∈ span{Re ψ★, Im ψ★}` with `(d, Re ψ★)_U = 1` and `(d, Im ψ★)_U = 0`.
pub fn prepare_bordering(sys: &dyn EvolutionSystem, psi_star: &[Complex64]) -> Result<Vec<f64>> {
    let re: Vec<f64> = psi_star.iter().map(|z| z.re).collect();
    let im: Vec<f64> = psi_star.iter().map(|z| z.im).collect();
    let are = sys.apply_a(&re);
    let aim = sys.apply_a(&im);
    let w = sys.v_weights();
    let ip = |x: &[f64], y: &[f64]| -> f64 { w.iter().zip(x).zip(y).map(|((w, a), b)| w * a * b).sum() };
    let (grr, gri, gii) = (ip(&are, &are), ip(&are, &aim), ip(&aim, &aim));
    let det = grr * gii - gri * gri;
    if !(det.abs() > 1e-12 * grr * gii) || !det.is_finite() {
        return Err(HopfError::Degenerate(
            "real and imaginary parts of ψ★ are linearly dependent in U".into(),
        ));
    }
    let c1 = gii / det;
    let c2 = -gri / det;
    Ok(re.iter().zip(&im).map(|(r, i)| c1 * r + c2 * i).collect())
}
