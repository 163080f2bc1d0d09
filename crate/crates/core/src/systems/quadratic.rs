//! Quadratic springs and linear (gravity-like) potentials.

use nalgebra::DMatrix;

use super::EnergyTerm;

#[derive(Debug, Clone)]
enum Stiffness {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

/// `1/2 (q - r)^T K (q - r)` over a contiguous block of DOFs.
#[derive(Debug, Clone)]
pub struct QuadraticTerm {
    offset: usize,
    stiffness: Stiffness,
    center: Option<Vec<f64>>,
}

impl QuadraticTerm {
    pub fn diagonal(offset: usize, k: Vec<f64>, center: Option<Vec<f64>>) -> Self {
        QuadraticTerm {
            offset,
            stiffness: Stiffness::Diagonal(k),
            center,
        }
    }

    pub fn dense(offset: usize, k: DMatrix<f64>, center: Option<Vec<f64>>) -> Self {
        QuadraticTerm {
            offset,
            stiffness: Stiffness::Dense(k),
            center,
        }
    }

    pub fn len(&self) -> usize {
        match &self.stiffness {
            Stiffness::Diagonal(k) => k.len(),
            Stiffness::Dense(k) => k.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn displacement(&self, q: &[f64]) -> Vec<f64> {
        let block = &q[self.offset..self.offset + self.len()];
        match &self.center {
            Some(r) => block.iter().zip(r).map(|(a, b)| a - b).collect(),
            None => block.to_vec(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.stiffness {
            Stiffness::Diagonal(k) => k.iter().zip(x).map(|(k, x)| k * x).collect(),
            Stiffness::Dense(k) => {
                let n = k.nrows();
                (0..n)
                    .map(|i| (0..n).map(|j| k[(i, j)] * x[j]).sum())
                    .collect()
            }
        }
    }
}

impl EnergyTerm for QuadraticTerm {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn energy(&self, q: &[f64], _c: &[f64]) -> f64 {
        let x = self.displacement(q);
        let kx = self.apply(&x);
        0.5 * x.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>()
    }

    fn accumulate_gradient(&self, q: &[f64], _c: &[f64], grad: &mut [f64]) -> f64 {
        let x = self.displacement(q);
        let kx = self.apply(&x);
        for (g, v) in grad[self.offset..].iter_mut().zip(&kx) {
            *g += v;
        }
        0.5 * x.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// `sum_i w_i q_i`. Gravity is `m_i g` on the vertical coordinate of each
/// vertex or body translation.
#[derive(Debug, Clone)]
pub struct GravityTerm {
    entries: Vec<(usize, f64)>,
}

impl GravityTerm {
    pub fn new(entries: Vec<(usize, f64)>) -> Self {
        GravityTerm { entries }
    }

    /// Gravity with acceleration `g` along `-axis` for point masses of
    /// dimension `dim` starting at `offset`.
    pub fn for_points(offset: usize, dim: usize, axis: usize, masses: &[f64], g: f64) -> Self {
        GravityTerm {
            entries: masses
                .iter()
                .enumerate()
                .map(|(i, m)| (offset + i * dim + axis, m * g))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }
}

impl EnergyTerm for GravityTerm {
    fn name(&self) -> &str {
        "gravity"
    }

    fn energy(&self, q: &[f64], _c: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * q[i]).sum()
    }

    fn accumulate_gradient(&self, q: &[f64], c: &[f64], grad: &mut [f64]) -> f64 {
        for &(i, w) in &self.entries {
            grad[i] += w;
        }
        self.energy(q, c)
    }
}
