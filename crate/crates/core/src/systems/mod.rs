//! Physical systems: potential energies, lumped masses, seed states and
//! condition spaces behind one interface.
//!
//! A [`SystemDef`] is a sum of [`EnergyTerm`]s over a flat configuration
//! vector `q`. Each term reads the slice of `q` it owns (its part's DOF
//! offset) plus the condition vector `c`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

pub mod build;
pub mod cloth;
pub mod fem;
pub mod mesh;
pub mod penalty;
pub mod quadratic;
pub mod rigid;

pub use build::{build_system, SystemSpec};
pub use fem::Material;

/// Default cap on `n` for dense Hessian assembly.
pub const DEFAULT_DENSE_CAP: usize = 2000;

/// One additive contribution to the potential energy.
pub trait EnergyTerm: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;

    fn energy(&self, q: &[f64], c: &[f64]) -> f64;

    /// Adds this term's gradient into `grad` and returns its energy.
    fn accumulate_gradient(&self, q: &[f64], c: &[f64], grad: &mut [f64]) -> f64;
}

/// A named, bounded condition parameter. Training samples it uniformly.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConditionDesc {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Geometry kept only for rendering and export.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderPart {
    pub name: String,
    pub kind: RenderKind,
    /// First DOF of the part in `q`.
    pub offset: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum RenderKind {
    #[default]
    Vector,
    /// Vertex positions come from `q[offset..]` with `dim` coordinates each.
    Mesh { dim: usize, faces: Vec<[usize; 3]> },
    /// Each body is a template mesh transformed by its 12 coefficients.
    Rigid {
        bodies: Vec<(Vec<[f64; 3]>, Vec<[usize; 3]>)>,
    },
}

#[derive(Debug)]
pub struct SystemDef {
    name: String,
    terms: Vec<Box<dyn EnergyTerm>>,
    mass_diag: Vec<f64>,
    q_seed: Vec<f64>,
    conditions: Vec<ConditionDesc>,
    render: Vec<RenderPart>,
    dense_cap: usize,
}

impl SystemDef {
    pub fn new(
        name: impl Into<String>,
        mass_diag: Vec<f64>,
        q_seed: Vec<f64>,
        terms: Vec<Box<dyn EnergyTerm>>,
        conditions: Vec<ConditionDesc>,
    ) -> Result<Self> {
        let n = mass_diag.len();
        if n == 0 {
            return Err(Error::config("system has no degrees of freedom"));
        }
        if terms.is_empty() {
            return Err(Error::config("system needs at least one energy term"));
        }
        Error::check_dim("seed state", n, q_seed.len())?;
        if let Some(i) = mass_diag.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::config(format!(
                "mass must be positive, got {} at DOF {i}",
                mass_diag[i]
            )));
        }
        for cond in &conditions {
            if !(cond.min <= cond.max) || !cond.min.is_finite() || !cond.max.is_finite() {
                return Err(Error::config(format!(
                    "condition '{}' has an invalid range [{}, {}]",
                    cond.name, cond.min, cond.max
                )));
            }
        }
        let sys = SystemDef {
            name: name.into(),
            terms,
            mass_diag,
            q_seed,
            conditions,
            render: Vec::new(),
            dense_cap: DEFAULT_DENSE_CAP,
        };
        let c = sys.default_condition();
        let e = sys.energy(&sys.q_seed, &c);
        if !e.is_finite() {
            return Err(Error::config(format!(
                "seed state of '{}' has non-finite energy",
                sys.name
            )));
        }
        Ok(sys)
    }

    pub fn with_render(mut self, render: Vec<RenderPart>) -> Self {
        self.render = render;
        self
    }

    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.mass_diag.len()
    }

    pub fn condition_dim(&self) -> usize {
        self.conditions.len()
    }

    pub fn conditions(&self) -> &[ConditionDesc] {
        &self.conditions
    }

    pub fn mass_diag(&self) -> &[f64] {
        &self.mass_diag
    }

    pub fn q_seed(&self) -> &[f64] {
        &self.q_seed
    }

    pub fn terms(&self) -> &[Box<dyn EnergyTerm>] {
        &self.terms
    }

    pub fn render(&self) -> &[RenderPart] {
        &self.render
    }

    /// Midpoint of every condition range.
    pub fn default_condition(&self) -> Vec<f64> {
        self.conditions
            .iter()
            .map(|c| 0.5 * (c.min + c.max))
            .collect()
    }

    pub fn sample_condition<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.conditions
            .iter()
            .map(|c| {
                if c.max > c.min {
                    rng.random_range(c.min..c.max)
                } else {
                    c.min
                }
            })
            .collect()
    }

    pub fn energy(&self, q: &[f64], c: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.n());
        self.terms.iter().map(|t| t.energy(q, c)).sum()
    }

    /// Energy and its gradient in one pass.
    pub fn energy_and_gradient(&self, q: &[f64], c: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.n()];
        let e = self
            .terms
            .iter()
            .map(|t| t.accumulate_gradient(q, c, &mut grad))
            .sum();
        (e, grad)
    }

    pub fn gradient(&self, q: &[f64], c: &[f64]) -> Vec<f64> {
        self.energy_and_gradient(q, c).1
    }

    /// Fails when the system is too large for a dense Hessian.
    pub fn check_dense_cap(&self) -> Result<()> {
        if self.n() > self.dense_cap {
            return Err(Error::config(format!(
                "system '{}' has {} DOFs, above the dense Hessian cap of {}; skip the modal baseline for this system",
                self.name,
                self.n(),
                self.dense_cap
            )));
        }
        Ok(())
    }

    /// Dense Hessian from central differences of the analytic gradient,
    /// symmetrized.
    pub fn hessian(&self, q: &[f64], c: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.n();
        Error::check_dim("Hessian configuration", n, q.len())?;
        self.check_dense_cap()?;
        let mut h = DMatrix::zeros(n, n);
        let mut work = q.to_vec();
        for j in 0..n {
            let step = 1e-5 * q[j].abs().max(1.0);
            work[j] = q[j] + step;
            let gp = self.gradient(&work, c);
            work[j] = q[j] - step;
            let gm = self.gradient(&work, c);
            work[j] = q[j];
            for i in 0..n {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        let sym = (&h + h.transpose()) * 0.5;
        Ok(sym)
    }

    /// `|x|_M^2` for the lumped mass matrix.
    pub fn mass_norm_sq(&self, x: &[f64]) -> f64 {
        mass_norm_sq(&self.mass_diag, x)
    }
}

pub fn mass_norm_sq(mass_diag: &[f64], x: &[f64]) -> f64 {
    mass_diag.iter().zip(x).map(|(m, v)| m * v * v).sum()
}

/// Central-difference gradient, used by tests and as a reference.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, q: &[f64], step: f64) -> Vec<f64> {
    let mut work = q.to_vec();
    (0..q.len())
        .map(|i| {
            work[i] = q[i] + step;
            let fp = f(&work);
            work[i] = q[i] - step;
            let fm = f(&work);
            work[i] = q[i];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Largest componentwise relative error between two gradients, with the
/// scale floored by `floor` times the largest entry of `reference`.
pub fn gradient_rel_error(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let denom_floor = (floor * scale).max(1e-12);
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / r.abs().max(denom_floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::quadratic::QuadraticTerm;
    use super::*;

    fn spring(k: f64) -> SystemDef {
        SystemDef::new(
            "spring",
            vec![1.0],
            vec![0.0],
            vec![Box::new(QuadraticTerm::diagonal(0, vec![k], None))],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn one_dof_spring_hessian() {
        let s = spring(4.0);
        let h = s.hessian(&[0.3], &[]).unwrap();
        assert!((h[(0, 0)] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_hessian_is_exact_and_symmetric() {
        let k = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
        let sys = SystemDef::new(
            "quad",
            vec![1.0; 3],
            vec![0.0; 3],
            vec![Box::new(QuadraticTerm::dense(0, k.clone(), None))],
            vec![],
        )
        .unwrap();
        let h = sys.hessian(&[0.2, -1.0, 0.7], &[]).unwrap();
        assert!((&h - &k).abs().max() < 1e-6);
        let asym = (&h - h.transpose()).abs().max();
        assert!(asym < 1e-6 * h.abs().max());
    }

    #[test]
    fn hessian_cap_is_enforced() {
        let s = spring(1.0).with_dense_cap(0);
        assert!(matches!(s.hessian(&[0.0], &[]), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_definitions() {
        assert!(SystemDef::new("x", vec![1.0], vec![0.0], vec![], vec![]).is_err());
        let term = || -> Box<dyn EnergyTerm> { Box::new(QuadraticTerm::diagonal(0, vec![1.0], None)) };
        assert!(SystemDef::new("x", vec![0.0], vec![0.0], vec![term()], vec![]).is_err());
        assert!(SystemDef::new("x", vec![1.0], vec![0.0, 1.0], vec![term()], vec![]).is_err());
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let a = QuadraticTerm::diagonal(0, vec![1.0, 2.0], None);
        let b = QuadraticTerm::diagonal(0, vec![3.0, 0.5], Some(vec![1.0, -1.0]));
        let q = [0.3, 0.8];
        let mut ga = vec![0.0; 2];
        a.accumulate_gradient(&q, &[], &mut ga);
        let mut gb = vec![0.0; 2];
        b.accumulate_gradient(&q, &[], &mut gb);
        let sys = SystemDef::new(
            "sum",
            vec![1.0; 2],
            vec![0.0; 2],
            vec![Box::new(a), Box::new(b)],
            vec![],
        )
        .unwrap();
        let g = sys.gradient(&q, &[]);
        for i in 0..2 {
            assert!((g[i] - ga[i] - gb[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn conditions_sample_inside_ranges() {
        use rand::SeedableRng;
        let sys = SystemDef::new(
            "c",
            vec![1.0],
            vec![0.0],
            vec![Box::new(QuadraticTerm::diagonal(0, vec![1.0], None))],
            vec![
                ConditionDesc { name: "a".into(), min: -1.0, max: 2.0 },
                ConditionDesc { name: "b".into(), min: 3.0, max: 3.0 },
            ],
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let c = sys.sample_condition(&mut rng);
            assert!((-1.0..2.0).contains(&c[0]));
            assert_eq!(c[1], 3.0);
        }
        assert_eq!(sys.default_condition(), vec![0.5, 3.0]);
    }
}
