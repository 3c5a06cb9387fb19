//! The extended system on space-time fields and its linearization at the bifurcation point.
//!
//! With `Λ = (λ, σ)` and time rescaled by `σ + 1`, periodic orbits solve
//! `g(Λ, u) = u_t - (σ+1) f(λ, u) = 0`. Modes `n ≥ 1` of a linear space-time operator
//! `∂_t - c L` act on `ψ_n = a_n - i b_n` as `(in - cL) ψ_n`, so such operators decouple by mode.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::SPECTRAL_TOL;
use crate::error::{HopfError, Result};
use crate::linalg::{lanczos_max, Bordered, CoreSystem, LanczosOptions, PivotPolicy};
use crate::problems::{relabel_near_spectrum, EvolutionProblem, EvolutionSystem, ShiftedOperator};
use crate::spacetime::{collocate, functional_l, norm_x, norm_y, SpaceTimeField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState {
    pub lambda: f64,
    pub sigma: f64,
    pub u: SpaceTimeField,
}

/// `A u + h(λ, u)` with the nonlinearity collocated in time.
pub fn apply_f(sys: &dyn EvolutionSystem, lambda: f64, u: &SpaceTimeField) -> SpaceTimeField {
    let mut out = u.map_states(|x| sys.apply_a(x));
    out.axpy(1.0, &collocate(u, |s| sys.h(lambda, s)));
    out
}

/// `g(Λ, u) = u_t - (σ+1) f(λ, u)`.
pub fn residual_g(sys: &dyn EvolutionSystem, lambda: f64, sigma: f64, u: &SpaceTimeField) -> SpaceTimeField {
    let mut g = u.time_derivative();
    g.axpy(-(sigma + 1.0), &apply_f(sys, lambda, u));
    g
}

fn apply_sparse(entries: &[(usize, usize, f64)], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for &(i, j, v) in entries {
        y[i] += v * x[j];
    }
    y
}

/// `H(Λ, u) = (l¹u - 1, l²u, u_t - (σ+1)(A + h_u(λ,0)) u)`.
pub fn assemble_h(p: &EvolutionProblem, s: &ExtendedState) -> (f64, f64, SpaceTimeField) {
    let sys = p.sys();
    let extra = sys.h_u_zero_entries(s.lambda);
    let (l1, l2) = functional_l(p, &s.u);
    let lin = s.u.map_states(|x| {
        let mut y = sys.apply_a(x);
        for (a, b) in y.iter_mut().zip(apply_sparse(&extra, x)) {
            *a += b;
        }
        y
    });
    let mut r = s.u.time_derivative();
    r.axpy(-(s.sigma + 1.0), &lin);
    (l1 - 1.0, l2, r)
}

/// `∂_t - c (A + extra)` on fields, solved mode by mode.
pub struct ModalCore {
    nt: usize,
    nx: usize,
    ops: Vec<ShiftedOperator>,
}

impl ModalCore {
    pub fn new(
        sys: &dyn EvolutionSystem,
        nt: usize,
        c: f64,
        extra: &[(usize, usize, f64)],
        policy: PivotPolicy,
    ) -> Result<Self> {
        let ops = (0..=nt)
            .into_par_iter()
            .map(|n| ShiftedOperator::new(sys, Complex64::new(0.0, n as f64), c, extra, false, policy))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModalCore { nt, nx: sys.nx(), ops })
    }

    pub fn floored(&self) -> usize {
        self.ops.iter().map(|o| o.floored()).sum()
    }

    fn per_mode(&self, x: &[f64], f: impl Fn(&ShiftedOperator, &[Complex64]) -> Vec<Complex64> + Sync) -> Vec<f64> {
        let u = SpaceTimeField::from_flat(self.nt, self.nx, x).expect("flat field length");
        let modes: Vec<Vec<Complex64>> = (0..=self.nt)
            .into_par_iter()
            .map(|n| f(&self.ops[n], &u.mode_complex(n)))
            .collect();
        let mut out = SpaceTimeField::zeros(self.nt, self.nx);
        for (n, m) in modes.iter().enumerate() {
            out.set_mode_complex(n, m);
        }
        out.to_flat()
    }
}

impl CoreSystem<f64> for ModalCore {
    fn dim(&self) -> usize {
        (2 * self.nt + 1) * 2 * self.nx
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.per_mode(x, |op, v| op.apply(v))
    }
    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.per_mode(x, |op, v| op.apply_adjoint(v))
    }
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.per_mode(b, |op, v| op.solve(v))
    }
    fn solve_adjoint(&self, b: &[f64]) -> Vec<f64> {
        self.per_mode(b, |op, v| op.solve_adjoint(v))
    }
}

/// Field plus the two normalization rows acting on mode 1, bordered by two parameter columns.
pub type FieldBordered = Bordered<f64, ModalCore>;

pub(crate) fn l_rows(p: &EvolutionProblem) -> Vec<Vec<f64>> {
    let (nt, nx) = (p.nt, p.nx());
    let mut r1 = SpaceTimeField::zeros(nt, nx);
    r1.cos_mut(1).copy_from_slice(&p.l_weights);
    let mut r2 = SpaceTimeField::zeros(nt, nx);
    r2.sin_mut(1).copy_from_slice(&p.l_weights);
    vec![r1.to_flat(), r2.to_flat()]
}

/// Matrix-free `DH★ = DH(0, u★)`: `(δλ, δσ, δu) ↦ (l δu, T1 δu - δσ A u★ - δλ f_λu u★)`.
pub struct DhStar<'a> {
    p: &'a EvolutionProblem,
    au_star: SpaceTimeField,
    fu_star: SpaceTimeField,
}

pub fn jacobian_dh_star(p: &EvolutionProblem) -> DhStar<'_> {
    let sys = p.sys();
    let us = p.u_star();
    let au_star = us.map_states(|x| sys.apply_a(x));
    let fu_star = us.map_states(|x| sys.h_lambda_u(x));
    DhStar { p, au_star, fu_star }
}

impl DhStar<'_> {
    pub fn apply(&self, dlambda: f64, dsigma: f64, du: &SpaceTimeField) -> (f64, f64, SpaceTimeField) {
        let sys = self.p.sys();
        let (l1, l2) = functional_l(self.p, du);
        let mut r = du.time_derivative();
        r.axpy(-1.0, &du.map_states(|x| sys.apply_a(x)));
        r.axpy(-dsigma, &self.au_star);
        r.axpy(-dlambda, &self.fu_star);
        (l1, l2, r)
    }

    pub fn lambda_column(&self) -> &SpaceTimeField {
        &self.fu_star
    }

    pub fn sigma_column(&self) -> &SpaceTimeField {
        &self.au_star
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeMargin {
    pub n: usize,
    /// `σ_min` from `X` (graph norm) to `Y`.
    pub weighted: f64,
    /// `σ_min` in plain coefficient coordinates.
    pub euclidean: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IsolatednessReport {
    pub margin: f64,
    pub margin_euclidean: f64,
    pub modes: Vec<ModeMargin>,
    pub passed: bool,
}

fn sqrt_w(sys: &dyn EvolutionSystem) -> Vec<f64> {
    sys.v_weights().iter().map(|w| w.sqrt()).collect()
}

/// `W^{1/2} A W^{-1/2} x` on a real vector.
fn a_tilde(sys: &dyn EvolutionSystem, sw: &[f64], x: &[f64]) -> Vec<f64> {
    let y: Vec<f64> = x.iter().zip(sw).map(|(v, s)| v / s).collect();
    sys.apply_a(&y).iter().zip(sw).map(|(v, s)| v * s).collect()
}

fn a_tilde_t(sys: &dyn EvolutionSystem, sw: &[f64], x: &[f64]) -> Vec<f64> {
    let y: Vec<f64> = x.iter().zip(sw).map(|(v, s)| v * s).collect();
    sys.apply_a_transpose(&y).iter().zip(sw).map(|(v, s)| v / s).collect()
}

fn split_c(x: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    (x.iter().map(|z| z.re).collect(), x.iter().map(|z| z.im).collect())
}

fn join_c(re: &[f64], im: &[f64]) -> Vec<Complex64> {
    re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect()
}

/// `x ↦ (Re, Im)` applied real-linearly.
fn map_c(x: &[Complex64], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Complex64> {
    let (re, im) = split_c(x);
    join_c(&f(&re), &f(&im))
}

/// Smallest singular value of `in - A` for `n ≠ 1` (mode `n` of `DH★`).
fn plain_mode_margin(sys: &dyn EvolutionSystem, n: usize) -> Result<ModeMargin> {
    let z = Complex64::new(0.0, n as f64);
    let dim = sys.dim();
    let euclid_op = ShiftedOperator::new(sys, z, 1.0, &[], false, PivotPolicy::Strict { rel: 1e-13 });
    let euclidean = match euclid_op {
        Ok(op) => 1.0 / lanczos_max::<Complex64>(dim, |x| op.solve_adjoint(&op.solve(x)), LanczosOptions::default()).sqrt(),
        Err(HopfError::NearSpectrum { .. }) => 0.0,
        Err(e) => return Err(relabel_near_spectrum(e, z)),
    };
    if n == 0 {
        // ‖u‖_X = ‖Au‖_Y on time-independent fields, and DH★ u = -Au there
        return Ok(ModeMargin { n, weighted: 1.0, euclidean });
    }
    let sw = sqrt_w(sys);
    let weighted = match ShiftedOperator::new(sys, z, 1.0, &[], true, PivotPolicy::Strict { rel: 1e-13 }) {
        Ok(op) => {
            let k2 = (n * n) as f64;
            let top = lanczos_max::<Complex64>(
                dim,
                |x| {
                    let q = op.solve(x);
                    let aq = map_c(&q, |v| a_tilde(sys, &sw, v));
                    let ata = map_c(&aq, |v| a_tilde_t(sys, &sw, v));
                    let g: Vec<Complex64> = q.iter().zip(&ata).map(|(a, b)| a * k2 + b).collect();
                    op.solve_adjoint(&g)
                },
                LanczosOptions::default(),
            );
            1.0 / top.sqrt()
        }
        Err(HopfError::NearSpectrum { .. }) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(ModeMargin { n, weighted, euclidean })
}

/// `i - A` in real `(a, b)` coordinates, `ψ = a - ib`.
struct RealifiedCore {
    op: ShiftedOperator,
    half: usize,
}

impl RealifiedCore {
    fn to_c(&self, x: &[f64]) -> Vec<Complex64> {
        (0..self.half).map(|i| Complex64::new(x[i], -x[self.half + i])).collect()
    }
    fn from_c(&self, z: &[Complex64]) -> Vec<f64> {
        let mut out: Vec<f64> = z.iter().map(|v| v.re).collect();
        out.extend(z.iter().map(|v| -v.im));
        out
    }
}

impl CoreSystem<f64> for RealifiedCore {
    fn dim(&self) -> usize {
        2 * self.half
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.from_c(&self.op.apply(&self.to_c(x)))
    }
    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.from_c(&self.op.apply_adjoint(&self.to_c(x)))
    }
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.from_c(&self.op.solve(&self.to_c(b)))
    }
    fn solve_adjoint(&self, b: &[f64]) -> Vec<f64> {
        self.from_c(&self.op.solve_adjoint(&self.to_c(b)))
    }
}

/// Mode-1 block of `DH★`: unknowns `(a, b, λ, σ)`, equations `(T1 part, l¹, l²)`.
fn first_mode_margin(p: &EvolutionProblem) -> Result<ModeMargin> {
    let sys = p.sys();
    let nn = sys.dim();
    let dh = jacobian_dh_star(p);
    let ab = |f: &SpaceTimeField| -> Vec<f64> {
        let mut v = f.cos(1).to_vec();
        v.extend_from_slice(f.sin(1));
        v
    };
    let col_l: Vec<f64> = ab(dh.lambda_column()).iter().map(|v| -v).collect();
    let col_s: Vec<f64> = ab(dh.sigma_column()).iter().map(|v| -v).collect();
    let mut r1 = p.l_weights.clone();
    r1.extend(std::iter::repeat(0.0).take(nn));
    let mut r2 = vec![0.0; nn];
    r2.extend_from_slice(&p.l_weights);

    let i = Complex64::new(0.0, 1.0);
    let policy = PivotPolicy::Floor { rel: 1e-12 };

    // plain coordinates
    let core = RealifiedCore { op: ShiftedOperator::new(sys, i, 1.0, &[], false, policy)?, half: nn };
    let euclidean = match Bordered::new(core, vec![col_l.clone(), col_s.clone()], vec![r1.clone(), r2.clone()], DMatrix::zeros(2, 2)) {
        Ok(b) => 1.0 / lanczos_max::<f64>(2 * nn + 2, |x| b.solve_adjoint(&b.solve(x)), LanczosOptions::default()).sqrt(),
        Err(HopfError::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };

    // V-orthonormal field coordinates scaled by √π, so the Y-norm is Euclidean
    let sw = sqrt_w(sys);
    let sw2: Vec<f64> = sw.iter().chain(&sw).copied().collect();
    let rp = std::f64::consts::PI.sqrt();
    let wcol = |c: &[f64]| -> Vec<f64> { c.iter().zip(&sw2).map(|(v, s)| v * s * rp).collect() };
    let wrow = |r: &[f64]| -> Vec<f64> { r.iter().zip(&sw2).map(|(v, s)| v / s / rp).collect() };
    let core = RealifiedCore { op: ShiftedOperator::new(sys, i, 1.0, &[], true, policy)?, half: nn };
    let weighted = match Bordered::new(core, vec![wcol(&col_l), wcol(&col_s)], vec![wrow(&r1), wrow(&r2)], DMatrix::zeros(2, 2)) {
        Ok(b) => {
            let gram = |x: &[f64]| -> Vec<f64> {
                // (x̂, Ãx̂, λ, σ) ↦ x̂ + ÃᵀÃx̂ on the field part
                let mut out = x.to_vec();
                for part in 0..2 {
                    let s = &x[part * nn..(part + 1) * nn];
                    let ata = a_tilde_t(sys, &sw, &a_tilde(sys, &sw, s));
                    for (o, v) in out[part * nn..(part + 1) * nn].iter_mut().zip(ata) {
                        *o += v;
                    }
                }
                out
            };
            let top = lanczos_max::<f64>(2 * nn + 2, |x| b.solve_adjoint(&gram(&b.solve(x))), LanczosOptions::default());
            1.0 / top.sqrt()
        }
        Err(HopfError::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(ModeMargin { n: 1, weighted, euclidean })
}

/// `σ_min(DH★)`, computed block by block over temporal modes `0..=nt`.
pub fn isolatedness_margin(p: &EvolutionProblem) -> Result<IsolatednessReport> {
    let sys = p.sys();
    let mut modes = vec![first_mode_margin(p)?];
    let others = (0..=p.nt)
        .filter(|&n| n != 1)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&n| plain_mode_margin(sys, n))
        .collect::<Result<Vec<_>>>()?;
    modes.extend(others);
    modes.sort_by_key(|m| m.n);
    let margin = modes.iter().map(|m| m.weighted).fold(f64::INFINITY, f64::min);
    let margin_euclidean = modes.iter().map(|m| m.euclidean).fold(f64::INFINITY, f64::min);
    Ok(IsolatednessReport { margin, margin_euclidean, modes, passed: margin >= SPECTRAL_TOL })
}

/// Solves `T1 u = z` for `z` with only modes `n ≥ 2`.
pub fn solve_high_frequency(sys: &dyn EvolutionSystem, z: &SpaceTimeField) -> Result<SpaceTimeField> {
    let low = z.cos(0).iter().chain(z.cos(1)).chain(z.sin(1)).map(|v| v.abs()).fold(0.0, f64::max);
    if low > 1e-12 * z.max_abs().max(1e-300) {
        return Err(HopfError::Shape("right-hand side has components in modes 0 or 1".into()));
    }
    let modes = (2..=z.nt())
        .into_par_iter()
        .map(|n| sys.resolvent_solve(Complex64::new(0.0, n as f64), &z.mode_complex(n)))
        .collect::<Result<Vec<_>>>()?;
    let mut u = SpaceTimeField::zeros(z.nt(), z.nx());
    for (k, m) in modes.iter().enumerate() {
        u.set_mode_complex(k + 2, m);
    }
    Ok(u)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NewtonReport {
    pub state: ExtendedState,
    /// Residual norm before each step and after the last one.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn h_norm(p: &EvolutionProblem, s: &ExtendedState) -> f64 {
    let (a, b, r) = assemble_h(p, s);
    (a * a + b * b + norm_y(p.sys(), &r).powi(2)).sqrt()
}

const MAX_HALVINGS: usize = 8;

fn trace(r: &[f64]) -> String {
    r.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HNewtonOptions {
    /// Stop at `‖H‖ ≤ tol · ‖A u★‖_Y`.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterates must keep `|λ|, |σ| ≤ basin` and `‖u - u_guess‖_X ≤ basin · ‖u★‖_X`.
    pub basin: f64,
}

impl Default for HNewtonOptions {
    fn default() -> Self {
        HNewtonOptions { tol: 1e-10, max_iter: 25, basin: 0.25 }
    }
}

/// Damped Newton on `H(Λ, u) = 0`, started near `(0, u★)`.
///
/// The Jacobian decouples by temporal mode up to the two parameter columns, so each step
/// is a bordered solve.
pub fn newton_refine_hstar(p: &EvolutionProblem, guess: &ExtendedState, opts: &HNewtonOptions) -> Result<NewtonReport> {
    let sys = p.sys();
    let tol = opts.tol * p.residual_scale();
    let radius = opts.basin * norm_x(sys, &p.u_star());
    let mut s = guess.clone();
    let mut residuals = vec![h_norm(p, &s)];
    for it in 0..=opts.max_iter {
        let r = *residuals.last().unwrap();
        let dist = norm_x(sys, &s.u.sub(&guess.u));
        if !r.is_finite() || s.lambda.abs() > opts.basin || s.sigma.abs() > opts.basin || dist > radius {
            return Err(HopfError::NoConvergence(format!(
                "Newton on H left the basin at step {it}: lambda {:.3e}, sigma {:.3e}, |u - guess|_X {dist:.3e}, residuals {}",
                s.lambda,
                s.sigma,
                trace(&residuals)
            )));
        }
        if r <= tol {
            return Ok(NewtonReport { state: s, residuals, iterations: it });
        }
        if it == opts.max_iter {
            break;
        }
        let c = s.sigma + 1.0;
        let extra = sys.h_u_zero_entries(s.lambda);
        let core = ModalCore::new(sys, p.nt, c, &extra, PivotPolicy::Floor { rel: 1e-14 })?;
        let lin = s.u.map_states(|x| {
            let mut y = sys.apply_a(x);
            for (a, b) in y.iter_mut().zip(apply_sparse(&extra, x)) {
                *a += b;
            }
            y
        });
        let col_l = s.u.map_states(|x| sys.h_lambda_u(x)).scaled(-c).to_flat();
        let col_s = lin.scaled(-1.0).to_flat();
        let sys_b = Bordered::new(core, vec![col_l, col_s], l_rows(p), DMatrix::zeros(2, 2))?;
        let (h1, h2, hf) = assemble_h(p, &s);
        let mut rhs: Vec<f64> = hf.to_flat().iter().map(|v| -v).collect();
        rhs.push(-h1);
        rhs.push(-h2);
        let dx = sys_b.solve(&rhs);
        let nf = s.u.flat_len();
        let du = SpaceTimeField::from_flat(p.nt, p.nx(), &dx[..nf])?;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..=MAX_HALVINGS {
            let mut trial = s.clone();
            trial.u.axpy(t, &du);
            trial.lambda += t * dx[nf];
            trial.sigma += t * dx[nf + 1];
            let tr = h_norm(p, &trial);
            if tr < r {
                next = Some((trial, tr));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, tr)) = next else {
            return Err(HopfError::NoConvergence(format!(
                "Newton on H: no decrease after {MAX_HALVINGS} halvings at step {it} (residual {r:.3e})"
            )));
        };
        s = trial;
        residuals.push(tr);
    }
    Err(HopfError::NoConvergence(format!(
        "Newton on H stalled after {} iterations, residuals {}",
        opts.max_iter,
        trace(&residuals)
    )))
}
