//! Banded LU, bordered block elimination and the Krylov pieces used on top of them.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HopfError, Result};

pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync {
    fn from_parts(re: f64, im: f64) -> Self;
}

impl Scalar for f64 {
    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
}

impl Scalar for Complex64 {
    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
}

#[inline]
pub fn zero<T: Scalar>() -> T {
    T::from_real(0.0)
}

/// `x^H y`.
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter()
        .zip(y)
        .fold(zero::<T>(), |acc, (a, b)| acc + a.conjugate() * *b)
}

pub fn norm<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.modulus_squared()).sum::<f64>().sqrt()
}

pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

pub fn scale<T: Scalar>(a: T, x: &mut [T]) {
    for v in x.iter_mut() {
        *v *= a;
    }
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Deterministic pseudo-random start vector.
pub fn seeded_vector<T: Scalar>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| T::from_parts(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// How tiny pivots are handled during a banded factorization.
#[derive(Clone, Copy, Debug)]
pub enum PivotPolicy {
    /// Fail when a pivot drops below `rel * max|a_ij|`.
    Strict { rel: f64 },
    /// Replace pivots below `rel * max|a_ij|` by that value. Used for singular cores of bordered systems.
    Floor { rel: f64 },
}

/// Square band matrix with room for the fill produced by partial pivoting.
#[derive(Clone, Debug)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, width, data: vec![zero(); n * width] }
    }

    /// Builds from `(row, col, value)` entries; duplicates are summed.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, T)]) -> Self {
        let mut kl = 0;
        let mut ku = 0;
        for &(i, j, _) in entries {
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        let mut m = Self::new(n, kl, ku);
        for &(i, j, v) in entries {
            m.add(i, j, v);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j + self.kl - i < self.width);
        i * self.width + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if j + self.kl < i || j > i + self.ku {
            return zero();
        }
        self.data[self.idx(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.modulus()).fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![zero(); self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut s = zero::<T>();
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                s += self.data[self.idx(i, j)] * *xj;
            }
            *yi = s;
        }
        y
    }

    pub fn matvec_adjoint(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![zero(); self.n];
        for (i, xi) in x.iter().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for (j, yj) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yj += self.data[self.idx(i, j)].conjugate() * *xi;
            }
        }
        y
    }

    pub fn factor(&self, policy: PivotPolicy) -> Result<BandLu<T>> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut a = self.clone();
        let mut piv = vec![0usize; n];
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut floored = 0;
        for k in 0..n {
            let imax = (k + kl).min(n - 1);
            let jmax = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = a.data[a.idx(k, k)].modulus();
            for i in k + 1..=imax {
                let m = a.data[a.idx(i, k)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            piv[k] = p;
            if p != k {
                for j in k..=jmax {
                    let (ik, ip) = (a.idx(k, j), a.idx(p, j));
                    a.data.swap(ik, ip);
                }
            }
            let kk = a.idx(k, k);
            match policy {
                PivotPolicy::Strict { rel } => {
                    if best <= rel * scale {
                        return Err(HopfError::NearSpectrum { z: Complex64::new(f64::NAN, f64::NAN), pivot: best / scale });
                    }
                }
                PivotPolicy::Floor { rel } => {
                    let floor = rel * scale;
                    if best < floor {
                        let cur = a.data[kk];
                        a.data[kk] = if best > 0.0 { cur * T::from_real(floor / best) } else { T::from_real(floor) };
                        floored += 1;
                    }
                }
            }
            let pivot = a.data[kk];
            for i in k + 1..=imax {
                let ik = a.idx(i, k);
                let l = a.data[ik] / pivot;
                a.data[ik] = l;
                if l.modulus() == 0.0 {
                    continue;
                }
                for j in k + 1..=jmax {
                    let (ij, kj) = (a.idx(i, j), a.idx(k, j));
                    let akj = a.data[kj];
                    a.data[ij] -= l * akj;
                }
            }
        }
        Ok(BandLu { a, piv, floored })
    }
}

/// LU factors of a band matrix, stored in the LAPACK `gbtrf` layout.
#[derive(Clone, Debug)]
pub struct BandLu<T> {
    a: BandMatrix<T>,
    piv: Vec<usize>,
    floored: usize,
}

impl<T: Scalar> BandLu<T> {
    /// Number of pivots replaced by the floor.
    pub fn floored(&self) -> usize {
        self.floored
    }

    pub fn min_pivot(&self) -> f64 {
        (0..self.a.n).map(|k| self.a.get(k, k).modulus()).fold(f64::INFINITY, f64::min)
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let a = &self.a;
        let n = a.n;
        let w = a.kl + a.ku;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + a.kl).min(n - 1) {
                b[i] -= a.data[a.idx(i, k)] * bk;
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + w).min(n - 1) {
                s -= a.data[a.idx(i, j)] * b[j];
            }
            b[i] = s / a.data[a.idx(i, i)];
        }
    }

    /// Solves `A^H x = b`.
    pub fn solve_adjoint_in_place(&self, b: &mut [T]) {
        let a = &self.a;
        let n = a.n;
        let w = a.kl + a.ku;
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(w)..i {
                s -= a.data[a.idx(j, i)].conjugate() * b[j];
            }
            b[i] = s / a.data[a.idx(i, i)].conjugate();
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=(k + a.kl).min(n - 1) {
                s -= a.data[a.idx(i, k)].conjugate() * b[i];
            }
            b[k] = s;
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_adjoint(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_adjoint_in_place(&mut x);
        x
    }
}

/// A square operator with (approximate) forward and adjoint solves.
pub trait CoreSystem<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T]) -> Vec<T>;
    fn apply_adjoint(&self, x: &[T]) -> Vec<T>;
    fn solve(&self, b: &[T]) -> Vec<T>;
    fn solve_adjoint(&self, b: &[T]) -> Vec<T>;
}

/// Band matrix together with its factors.
#[derive(Clone, Debug)]
pub struct BandSystem<T> {
    pub matrix: BandMatrix<T>,
    pub lu: BandLu<T>,
}

impl<T: Scalar> BandSystem<T> {
    pub fn new(matrix: BandMatrix<T>, policy: PivotPolicy) -> Result<Self> {
        let lu = matrix.factor(policy)?;
        Ok(BandSystem { matrix, lu })
    }
}

impl<T: Scalar> CoreSystem<T> for BandSystem<T> {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }
    fn apply(&self, x: &[T]) -> Vec<T> {
        self.matrix.matvec(x)
    }
    fn apply_adjoint(&self, x: &[T]) -> Vec<T> {
        self.matrix.matvec_adjoint(x)
    }
    fn solve(&self, b: &[T]) -> Vec<T> {
        self.lu.solve(b)
    }
    fn solve_adjoint(&self, b: &[T]) -> Vec<T> {
        self.lu.solve_adjoint(b)
    }
}

struct SchurSide<T: Scalar> {
    z: Vec<Vec<T>>,
    lu: nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>,
}

/// `[[K, B], [R, D]]` with `k` border rows and columns, solved by block elimination
/// around an approximate core solve and cleaned up by iterative refinement.
pub struct Bordered<T: Scalar, C: CoreSystem<T>> {
    core: C,
    cols: Vec<Vec<T>>,
    rows: Vec<Vec<T>>,
    d: DMatrix<T>,
    fwd: SchurSide<T>,
    adj: SchurSide<T>,
    pub max_refine: usize,
}

fn schur_side<T: Scalar>(z: Vec<Vec<T>>, rows: &[Vec<T>], d: &DMatrix<T>) -> Result<SchurSide<T>> {
    let k = rows.len();
    let mut s = d.clone();
    for i in 0..k {
        for j in 0..k {
            let rz = rows[i].iter().zip(&z[j]).fold(zero::<T>(), |acc, (a, b)| acc + *a * *b);
            s[(i, j)] -= rz;
        }
    }
    let smax = s.iter().map(|v| v.modulus()).fold(0.0, f64::max);
    let lu = s.lu();
    let umin = (0..k).map(|i| lu.u()[(i, i)].modulus()).fold(f64::INFINITY, f64::min);
    if k > 0 && !(umin > 1e-14 * smax.max(1e-300)) {
        return Err(HopfError::Degenerate(format!("singular Schur complement (pivot {umin:.3e})")));
    }
    Ok(SchurSide { z, lu })
}

impl<T: Scalar, C: CoreSystem<T>> Bordered<T, C> {
    /// `rows[i]` acts without conjugation: `(R x)_i = sum_j rows[i][j] x_j`.
    pub fn new(core: C, cols: Vec<Vec<T>>, rows: Vec<Vec<T>>, d: DMatrix<T>) -> Result<Self> {
        let n = core.dim();
        let k = cols.len();
        if rows.len() != k || d.nrows() != k || d.ncols() != k || cols.iter().chain(&rows).any(|v| v.len() != n) {
            return Err(HopfError::Shape("bordered blocks do not fit the core".into()));
        }
        let z: Vec<Vec<T>> = cols.iter().map(|c| core.solve(c)).collect();
        let fwd = schur_side(z, &rows, &d)?;
        let rows_h: Vec<Vec<T>> = cols.iter().map(|c| c.iter().map(|v| v.conjugate()).collect()).collect();
        let cols_h: Vec<Vec<T>> = rows.iter().map(|r| r.iter().map(|v| v.conjugate()).collect()).collect();
        let zh: Vec<Vec<T>> = cols_h.iter().map(|c| core.solve_adjoint(c)).collect();
        let adj = schur_side(zh, &rows_h, &d.adjoint())?;
        Ok(Bordered { core, cols, rows, d, fwd, adj, max_refine: 10 })
    }

    pub fn core(&self) -> &C {
        &self.core
    }

    pub fn dim(&self) -> usize {
        self.core.dim() + self.cols.len()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let n = self.core.dim();
        let k = self.cols.len();
        let (xc, xb) = x.split_at(n);
        let mut out = self.core.apply(xc);
        for (c, &y) in self.cols.iter().zip(xb) {
            axpy(y, c, &mut out);
        }
        for i in 0..k {
            let mut s = self.rows[i].iter().zip(xc).fold(zero::<T>(), |acc, (a, b)| acc + *a * *b);
            for j in 0..k {
                s += self.d[(i, j)] * xb[j];
            }
            out.push(s);
        }
        out
    }

    pub fn apply_adjoint(&self, x: &[T]) -> Vec<T> {
        let n = self.core.dim();
        let k = self.cols.len();
        let (xc, xb) = x.split_at(n);
        let mut out = self.core.apply_adjoint(xc);
        for (r, &y) in self.rows.iter().zip(xb) {
            for (o, rv) in out.iter_mut().zip(r) {
                *o += rv.conjugate() * y;
            }
        }
        for j in 0..k {
            let mut s = dot(&self.cols[j], xc);
            for i in 0..k {
                s += self.d[(i, j)].conjugate() * xb[i];
            }
            out.push(s);
        }
        out
    }

    fn solve_once(&self, b: &[T], adjoint: bool) -> Vec<T> {
        let n = self.core.dim();
        let k = self.cols.len();
        let (bc, bb) = b.split_at(n);
        let side = if adjoint { &self.adj } else { &self.fwd };
        let x0 = if adjoint { self.core.solve_adjoint(bc) } else { self.core.solve(bc) };
        let mut g = DVector::<T>::zeros(k);
        for i in 0..k {
            let s = if adjoint {
                dot(&self.cols[i], &x0)
            } else {
                self.rows[i].iter().zip(&x0).fold(zero::<T>(), |acc, (a, b)| acc + *a * *b)
            };
            g[i] = bb[i] - s;
        }
        let y = side.lu.solve(&g).unwrap_or(g);
        let mut x = x0;
        for j in 0..k {
            axpy(-y[j], &side.z[j], &mut x);
        }
        x.extend(y.iter().copied());
        x
    }

    fn refine(&self, b: &[T], adjoint: bool) -> Vec<T> {
        let bnorm = norm(b);
        let mut x = self.solve_once(b, adjoint);
        if bnorm == 0.0 {
            return x;
        }
        let mut last = f64::INFINITY;
        for _ in 0..self.max_refine {
            let ax = if adjoint { self.apply_adjoint(&x) } else { self.apply(&x) };
            let r: Vec<T> = b.iter().zip(&ax).map(|(p, q)| *p - *q).collect();
            let rn = norm(&r);
            if rn <= 1e-15 * bnorm || rn >= 0.5 * last {
                break;
            }
            last = rn;
            let dx = self.solve_once(&r, adjoint);
            axpy(T::from_real(1.0), &dx, &mut x);
        }
        x
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.refine(b, false)
    }

    pub fn solve_adjoint(&self, b: &[T]) -> Vec<T> {
        self.refine(b, true)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LanczosOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions { max_iter: 80, tol: 1e-9, seed: 0x5eed }
    }
}

/// Largest eigenvalue of a Hermitian positive semidefinite operator, by Lanczos with full reorthogonalization.
pub fn lanczos_max<T: Scalar>(n: usize, op: impl Fn(&[T]) -> Vec<T>, opts: LanczosOptions) -> f64 {
    let mut v = seeded_vector::<T>(n, opts.seed);
    let nv = norm(&v);
    scale(T::from_real(1.0 / nv), &mut v);
    let mut basis: Vec<Vec<T>> = vec![v];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut prev = f64::NAN;
    let m = opts.max_iter.min(n);
    for j in 0..m {
        let mut w = op(&basis[j]);
        let a = dot(&basis[j], &w).real();
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        let b = norm(&w);
        let ritz = tridiag_max(&alpha, &beta);
        let done = j + 1 == m || b <= 1e-14 * ritz.abs().max(1e-300);
        if done || (j >= 2 && (ritz - prev).abs() <= opts.tol * ritz.abs()) {
            return ritz;
        }
        prev = ritz;
        beta.push(b);
        scale(T::from_real(1.0 / b), &mut w);
        basis.push(w);
    }
    prev
}

fn tridiag_max(alpha: &[f64], beta: &[f64]) -> f64 {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Restarted, right-preconditioned GMRES. The preconditioned directions are kept, so
/// the preconditioner may vary between calls.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    restart: usize,
    max_iter: usize,
) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return GmresOutcome { x, iterations: 0, residual: 0.0, converged: true };
    }
    let target = rtol * bnorm;
    let mut total = 0;
    let mut r = b.to_vec();
    let mut rnorm = bnorm;
    while total < max_iter {
        let mut vs: Vec<Vec<f64>> = vec![r.iter().map(|v| v / rnorm).collect()];
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![rnorm];
        let mut k = 0;
        while k < restart && total < max_iter {
            let z = precond(&vs[k]);
            let mut w = apply(&z);
            zs.push(z);
            let mut col = vec![0.0; k + 2];
            for _ in 0..2 {
                for (i, v) in vs.iter().enumerate() {
                    let c = dot(v, &w);
                    col[i] += c;
                    axpy(-c, v, &mut w);
                }
            }
            let wn = norm(&w);
            col[k + 1] = wn;
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let rho = col[k].hypot(col[k + 1]);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (col[k] / rho, col[k + 1] / rho) };
            cs.push(c);
            sn.push(s);
            col[k] = rho;
            col[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            h.push(col);
            total += 1;
            k += 1;
            let breakdown = wn <= 1e-300;
            if g[k].abs() <= target || breakdown {
                break;
            }
            vs.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[j][i] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (j, z) in zs.iter().enumerate() {
            axpy(y[j], z, &mut x);
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        rnorm = norm(&r);
        if rnorm <= target {
            return GmresOutcome { x, iterations: total, residual: rnorm / bnorm, converged: true };
        }
        if k == 0 {
            break;
        }
    }
    GmresOutcome { x, iterations: total, residual: rnorm / bnorm, converged: false }
}
