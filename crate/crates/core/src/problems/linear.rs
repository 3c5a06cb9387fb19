use num_complex::Complex64;

use super::{EvolutionSystem, Grid};

/// Linear problem `u_t = A u + λ F u` given by sparse entries.
///
/// Handy for plugging in custom operators and for probing the analysis on
/// problems with known spectra.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub name: String,
    pub nx: usize,
    pub weights: Vec<f64>,
    pub a: Vec<(usize, usize, f64)>,
    pub f: Vec<(usize, usize, f64)>,
    pub guess: Vec<Complex64>,
    pub adjoint: Vec<Complex64>,
}

impl LinearSystem {
    /// Same operators as `sys`, with `A` replaced by `A + shift I`.
    pub fn shifted_copy(sys: &dyn EvolutionSystem, shift: f64) -> Self {
        let mut a = sys.a_entries().to_vec();
        a.extend((0..sys.dim()).map(|i| (i, i, shift)));
        LinearSystem {
            name: format!("{}+{shift}", sys.name()),
            nx: sys.nx(),
            weights: sys.v_weights().to_vec(),
            a,
            f: sys.h_lambda_u_entries(),
            guess: sys.critical_guess(),
            adjoint: sys.adjoint_guess(),
        }
    }

    fn apply_f(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for &(i, j, v) in &self.f {
            y[i] += v * x[j];
        }
        y
    }
}

impl EvolutionSystem for LinearSystem {
    fn name(&self) -> &str {
        &self.name
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
        &self.a
    }
    fn h(&self, lambda: f64, u: &[f64]) -> Vec<f64> {
        self.apply_f(u).into_iter().map(|v| lambda * v).collect()
    }
    fn h_u(&self, lambda: f64, _u: &[f64], du: &[f64]) -> Vec<f64> {
        self.apply_f(du).into_iter().map(|v| lambda * v).collect()
    }
    fn h_lambda(&self, _lambda: f64, u: &[f64]) -> Vec<f64> {
        self.apply_f(u)
    }
    fn h_lambda_u_entries(&self) -> Vec<(usize, usize, f64)> {
        self.f.clone()
    }
    fn critical_guess(&self) -> Vec<Complex64> {
        self.guess.clone()
    }
    fn adjoint_guess(&self) -> Vec<Complex64> {
        self.adjoint.clone()
    }
}
