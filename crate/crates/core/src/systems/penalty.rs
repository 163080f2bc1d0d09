//! Soft constraint penalties `w_eq |C_eq|^2 + w_ineq |min(C_ineq, 0)|^2`.
//!
//! Penalties stay finite for every finite configuration, so training can
//! optimize through violated constraints.

use super::EnergyTerm;

pub fn penalty_energy(c_eq: &[f64], c_ineq: &[f64], w_eq: f64, w_ineq: f64) -> f64 {
    let eq: f64 = c_eq.iter().map(|c| c * c).sum();
    let ineq: f64 = c_ineq.iter().map(|c| c.min(0.0).powi(2)).sum();
    w_eq * eq + w_ineq * ineq
}

/// Derivative of the penalty with respect to each constraint value.
pub fn penalty_cotangents(c_eq: &[f64], c_ineq: &[f64], w_eq: f64, w_ineq: f64) -> (Vec<f64>, Vec<f64>) {
    (
        c_eq.iter().map(|c| 2.0 * w_eq * c).collect(),
        c_ineq.iter().map(|c| 2.0 * w_ineq * c.min(0.0)).collect(),
    )
}

/// Equality penalty pinning mesh vertices to target positions. An optional
/// condition shifts every target along one axis.
#[derive(Debug, Clone)]
pub struct PinTerm {
    offset: usize,
    dim: usize,
    pins: Vec<(usize, [f64; 3])>,
    weight: f64,
    shift: Option<(usize, usize)>,
}

impl PinTerm {
    pub fn new(offset: usize, dim: usize, pins: Vec<(usize, [f64; 3])>, weight: f64) -> Self {
        PinTerm {
            offset,
            dim,
            pins,
            weight,
            shift: None,
        }
    }

    /// Shift targets by `c[condition]` along `axis`.
    pub fn with_shift(mut self, condition: usize, axis: usize) -> Self {
        self.shift = Some((condition, axis));
        self
    }

    pub fn num_pins(&self) -> usize {
        self.pins.len()
    }

    fn residuals(&self, q: &[f64], c: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pins.len() * self.dim);
        for &(v, target) in &self.pins {
            for r in 0..self.dim {
                let mut t = target[r];
                if let Some((ci, axis)) = self.shift {
                    if axis == r {
                        t += c[ci];
                    }
                }
                out.push(q[self.offset + self.dim * v + r] - t);
            }
        }
        out
    }
}

impl EnergyTerm for PinTerm {
    fn name(&self) -> &str {
        "pin"
    }

    fn energy(&self, q: &[f64], c: &[f64]) -> f64 {
        penalty_energy(&self.residuals(q, c), &[], self.weight, 0.0)
    }

    fn accumulate_gradient(&self, q: &[f64], c: &[f64], grad: &mut [f64]) -> f64 {
        let res = self.residuals(q, c);
        let (ceq, _) = penalty_cotangents(&res, &[], self.weight, 0.0);
        let mut k = 0;
        for &(v, _) in &self.pins {
            for r in 0..self.dim {
                grad[self.offset + self.dim * v + r] += ceq[k];
                k += 1;
            }
        }
        penalty_energy(&res, &[], self.weight, 0.0)
    }
}
