//! Stable neo-Hookean finite elements on triangles (2D) and tetrahedra (3D).
//!
//! Energy density, with `I_C = tr(F^T F)`, `J = det F` and dimension `d`:
//!
//! ```text
//! psi(F) = mu/2 (I_C - d) + lambda/2 (J - alpha)^2 - mu/2 log(I_C + 1) - psi(I)
//! alpha  = 1 + mu/lambda - mu/((d + 1) lambda)
//! ```
//!
//! `alpha` makes the rest state stress free; subtracting `psi(I)` makes it
//! energy free. The density stays finite under inversion.

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use super::EnergyTerm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Mass per unit volume (per unit area for cloth and 2D meshes).
    pub density: f64,
    #[serde(default = "default_bending")]
    pub bending_stiffness: f64,
    /// Membrane stiffness (Young's modulus times thickness) for cloth.
    #[serde(default = "default_stretch")]
    pub stretch_stiffness: f64,
}

fn default_bending() -> f64 {
    1e-3
}

fn default_stretch() -> f64 {
    1e3
}

impl Material {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, density: f64) -> Self {
        Material {
            youngs_modulus,
            poisson_ratio,
            density,
            bending_stiffness: default_bending(),
            stretch_stiffness: default_stretch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("youngs_modulus", self.youngs_modulus),
            ("poisson_ratio", self.poisson_ratio),
            ("density", self.density),
            ("bending_stiffness", self.bending_stiffness),
            ("stretch_stiffness", self.stretch_stiffness),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("material.{name} must be positive, got {v}")));
            }
        }
        if self.poisson_ratio >= 0.5 {
            return Err(Error::config(format!(
                "material.poisson_ratio must be below 0.5, got {}",
                self.poisson_ratio
            )));
        }
        Ok(())
    }

    /// Lamé parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }
}

fn alpha(mu: f64, lambda: f64, dim: f64) -> f64 {
    1.0 + mu / lambda - mu / ((dim + 1.0) * lambda)
}

fn rest_offset(mu: f64, lambda: f64, dim: f64) -> f64 {
    let a = alpha(mu, lambda, dim);
    0.5 * lambda * (1.0 - a) * (1.0 - a) - 0.5 * mu * (dim + 1.0).ln()
}

/// Stable neo-Hookean density from invariants.
pub fn snh_density(ic: f64, j: f64, mu: f64, lambda: f64, dim: usize) -> f64 {
    let d = dim as f64;
    let a = alpha(mu, lambda, d);
    0.5 * mu * (ic - d) + 0.5 * lambda * (j - a) * (j - a) - 0.5 * mu * (ic + 1.0).ln()
        - rest_offset(mu, lambda, d)
}

#[derive(Debug, Clone)]
struct Element<const K: usize> {
    verts: [usize; K],
    /// Row-major inverse of the rest edge matrix.
    dm_inv: [f64; 9],
    volume: f64,
}

#[derive(Debug, Clone)]
enum Elements {
    Tri(Vec<Element<3>>),
    Tet(Vec<Element<4>>),
}

/// Neo-Hookean elasticity over one mesh part.
#[derive(Debug, Clone)]
pub struct NeoHookeanTerm {
    offset: usize,
    elements: Elements,
    mu: f64,
    lambda: f64,
    /// Condition index scaling both Lamé parameters.
    stiffness_condition: Option<usize>,
}

impl NeoHookeanTerm {
    /// Triangles in the plane; `rest` holds 2D positions.
    pub fn triangles(
        offset: usize,
        rest: &[[f64; 2]],
        faces: &[[usize; 3]],
        mat: &Material,
    ) -> Result<Self> {
        mat.validate()?;
        let mut elements = Vec::with_capacity(faces.len());
        for (ei, f) in faces.iter().enumerate() {
            let p = |i: usize| rest[f[i]];
            let dm = Matrix2::new(
                p(1)[0] - p(0)[0],
                p(2)[0] - p(0)[0],
                p(1)[1] - p(0)[1],
                p(2)[1] - p(0)[1],
            );
            let det = dm.determinant();
            if det.abs() < 1e-14 {
                return Err(Error::config(format!("triangle {ei} is degenerate in the rest state")));
            }
            // orient counter-clockwise so the rest state has J = +1
            let (verts, dm) = if det > 0.0 {
                (*f, dm)
            } else {
                let g = [f[0], f[2], f[1]];
                (g, Matrix2::new(dm[(0, 1)], dm[(0, 0)], dm[(1, 1)], dm[(1, 0)]))
            };
            let inv = dm.try_inverse().expect("nonsingular");
            elements.push(Element {
                verts,
                dm_inv: [inv[(0, 0)], inv[(0, 1)], 0.0, inv[(1, 0)], inv[(1, 1)], 0.0, 0.0, 0.0, 0.0],
                volume: 0.5 * det.abs(),
            });
        }
        let (mu, lambda) = mat.lame();
        Ok(NeoHookeanTerm {
            offset,
            elements: Elements::Tri(elements),
            mu,
            lambda,
            stiffness_condition: None,
        })
    }

    pub fn tets(offset: usize, rest: &[[f64; 3]], tets: &[[usize; 4]], mat: &Material) -> Result<Self> {
        mat.validate()?;
        let mut elements = Vec::with_capacity(tets.len());
        for (ei, t) in tets.iter().enumerate() {
            let col = |i: usize| {
                nalgebra::Vector3::new(
                    rest[t[i]][0] - rest[t[0]][0],
                    rest[t[i]][1] - rest[t[0]][1],
                    rest[t[i]][2] - rest[t[0]][2],
                )
            };
            let dm = Matrix3::from_columns(&[col(1), col(2), col(3)]);
            let det = dm.determinant();
            if det.abs() < 1e-14 {
                return Err(Error::config(format!("tet {ei} is degenerate in the rest state")));
            }
            let (verts, dm) = if det > 0.0 {
                (*t, dm)
            } else {
                (
                    [t[0], t[2], t[1], t[3]],
                    Matrix3::from_columns(&[col(2), col(1), col(3)]),
                )
            };
            let inv = dm.try_inverse().expect("nonsingular");
            let mut dm_inv = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    dm_inv[r * 3 + c] = inv[(r, c)];
                }
            }
            elements.push(Element {
                verts,
                dm_inv,
                volume: det.abs() / 6.0,
            });
        }
        let (mu, lambda) = mat.lame();
        Ok(NeoHookeanTerm {
            offset,
            elements: Elements::Tet(elements),
            mu,
            lambda,
            stiffness_condition: None,
        })
    }

    pub fn with_stiffness_condition(mut self, index: usize) -> Self {
        self.stiffness_condition = Some(index);
        self
    }

    pub fn num_elements(&self) -> usize {
        match &self.elements {
            Elements::Tri(e) => e.len(),
            Elements::Tet(e) => e.len(),
        }
    }

    /// Lumped per-vertex mass: each element's mass split equally among its vertices.
    pub fn lumped_vertex_mass(&self, num_vertices: usize, density: f64) -> Vec<f64> {
        let mut m = vec![0.0; num_vertices];
        match &self.elements {
            Elements::Tri(es) => {
                for e in es {
                    for &v in &e.verts {
                        m[v] += density * e.volume / 3.0;
                    }
                }
            }
            Elements::Tet(es) => {
                for e in es {
                    for &v in &e.verts {
                        m[v] += density * e.volume / 4.0;
                    }
                }
            }
        }
        m
    }

    fn lame_at(&self, c: &[f64]) -> (f64, f64) {
        let s = self.stiffness_condition.map_or(1.0, |i| c[i]);
        (s * self.mu, s * self.lambda)
    }

    fn eval(&self, q: &[f64], c: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (mu, lambda) = self.lame_at(c);
        let q = &q[self.offset..];
        let mut total = 0.0;
        match &self.elements {
            Elements::Tri(es) => {
                let a = alpha(mu, lambda, 2.0);
                let off = rest_offset(mu, lambda, 2.0);
                for e in es {
                    let x = |i: usize| [q[2 * e.verts[i]], q[2 * e.verts[i] + 1]];
                    let (x0, x1, x2) = (x(0), x(1), x(2));
                    let ds = Matrix2::new(x1[0] - x0[0], x2[0] - x0[0], x1[1] - x0[1], x2[1] - x0[1]);
                    let dm_inv = Matrix2::new(e.dm_inv[0], e.dm_inv[1], e.dm_inv[3], e.dm_inv[4]);
                    let f = ds * dm_inv;
                    let ic = f.norm_squared();
                    let j = f.determinant();
                    total += e.volume
                        * (0.5 * mu * (ic - 2.0) + 0.5 * lambda * (j - a) * (j - a)
                            - 0.5 * mu * (ic + 1.0).ln()
                            - off);
                    if let Some(g) = grad.as_deref_mut() {
                        let cof = Matrix2::new(f[(1, 1)], -f[(1, 0)], -f[(0, 1)], f[(0, 0)]);
                        let p = f * (mu * (1.0 - 1.0 / (ic + 1.0))) + cof * (lambda * (j - a));
                        let h = p * dm_inv.transpose() * e.volume;
                        let g = &mut g[self.offset..];
                        for r in 0..2 {
                            g[2 * e.verts[1] + r] += h[(r, 0)];
                            g[2 * e.verts[2] + r] += h[(r, 1)];
                            g[2 * e.verts[0] + r] -= h[(r, 0)] + h[(r, 1)];
                        }
                    }
                }
            }
            Elements::Tet(es) => {
                let a = alpha(mu, lambda, 3.0);
                let off = rest_offset(mu, lambda, 3.0);
                for e in es {
                    let x = |i: usize| {
                        let v = e.verts[i];
                        nalgebra::Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2])
                    };
                    let x0 = x(0);
                    let ds = Matrix3::from_columns(&[x(1) - x0, x(2) - x0, x(3) - x0]);
                    let dm_inv = Matrix3::from_row_slice(&e.dm_inv);
                    let f = ds * dm_inv;
                    let ic = f.norm_squared();
                    let j = f.determinant();
                    total += e.volume
                        * (0.5 * mu * (ic - 3.0) + 0.5 * lambda * (j - a) * (j - a)
                            - 0.5 * mu * (ic + 1.0).ln()
                            - off);
                    if let Some(g) = grad.as_deref_mut() {
                        let (f0, f1, f2) = (f.column(0), f.column(1), f.column(2));
                        let cof = Matrix3::from_columns(&[f1.cross(&f2), f2.cross(&f0), f0.cross(&f1)]);
                        let p = f * (mu * (1.0 - 1.0 / (ic + 1.0))) + cof * (lambda * (j - a));
                        let h = p * dm_inv.transpose() * e.volume;
                        let g = &mut g[self.offset..];
                        for r in 0..3 {
                            let mut sum = 0.0;
                            for k in 0..3 {
                                g[3 * e.verts[k + 1] + r] += h[(r, k)];
                                sum += h[(r, k)];
                            }
                            g[3 * e.verts[0] + r] -= sum;
                        }
                    }
                }
            }
        }
        total
    }
}

impl EnergyTerm for NeoHookeanTerm {
    fn name(&self) -> &str {
        "neohookean"
    }

    fn energy(&self, q: &[f64], c: &[f64]) -> f64 {
        self.eval(q, c, None)
    }

    fn accumulate_gradient(&self, q: &[f64], c: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(q, c, Some(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::mesh::{grid_tets, grid_triangles};
    use crate::systems::{finite_difference_gradient, gradient_rel_error};
    use rand::{Rng, SeedableRng};

    fn mat() -> Material {
        Material::new(1000.0, 0.3, 1.0)
    }

    fn flat(v: &[[f64; 3]], dim: usize) -> Vec<f64> {
        v.iter().flat_map(|p| p[..dim].to_vec()).collect()
    }

    #[test]
    fn rest_state_has_zero_energy_and_gradient() {
        let m = grid_tets([3, 3, 2], [1.0, 1.0, 0.5]).unwrap();
        let t = NeoHookeanTerm::tets(0, &m.vertices, &m.tets, &mat()).unwrap();
        let q = flat(&m.vertices, 3);
        let mut g = vec![0.0; q.len()];
        let e = t.accumulate_gradient(&q, &[], &mut g);
        assert!(e.abs() < 1e-10, "{e}");
        assert!(g.iter().all(|v| v.abs() < 1e-9));

        let m2 = grid_triangles(4, 3, 2.0, 1.0).unwrap();
        let rest: Vec<[f64; 2]> = m2.vertices.iter().map(|v| [v[0], v[1]]).collect();
        let t2 = NeoHookeanTerm::triangles(0, &rest, &m2.faces, &mat()).unwrap();
        let q2 = flat(&m2.vertices, 2);
        let mut g2 = vec![0.0; q2.len()];
        assert!(t2.accumulate_gradient(&q2, &[], &mut g2).abs() < 1e-10);
        assert!(g2.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn uniformly_scaled_unit_tet_by_hand() {
        let rest = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let t = NeoHookeanTerm::tets(0, &rest, &[[0, 1, 2, 3]], &mat()).unwrap();
        let s = 1.1;
        let q: Vec<f64> = rest.iter().flat_map(|p| p.map(|x| s * x)).collect();
        // independent evaluation of the density at F = s I
        let (mu, lambda) = mat().lame();
        let alpha = 1.0 + 0.75 * mu / lambda;
        let psi = |ic: f64, j: f64| {
            0.5 * mu * (ic - 3.0) + 0.5 * lambda * (j - alpha).powi(2) - 0.5 * mu * (ic + 1.0).ln()
        };
        let expected = (psi(3.0 * s * s, s * s * s) - psi(3.0, 1.0)) / 6.0;
        let got = t.energy(&q, &[]);
        assert!((got - expected).abs() < 1e-12 * expected.abs(), "{got} vs {expected}");
    }

    #[test]
    fn degenerate_rest_element_rejected() {
        let rest = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(NeoHookeanTerm::tets(0, &rest, &[[0, 1, 2, 3]], &mat()).is_err());
        let rest2 = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert!(NeoHookeanTerm::triangles(0, &rest2, &[[0, 1, 2]], &mat()).is_err());
    }

    #[test]
    fn tet_gradient_matches_finite_differences() {
        let m = grid_tets([3, 3, 2], [2.0, 2.0, 1.0]).unwrap();
        assert!(m.tets.len() >= 20);
        let t = NeoHookeanTerm::tets(0, &m.vertices, &m.tets, &mat()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let q: Vec<f64> = flat(&m.vertices, 3)
                .iter()
                .map(|x| x + rng.random_range(-0.1..0.1))
                .collect();
            let mut g = vec![0.0; q.len()];
            t.accumulate_gradient(&q, &[], &mut g);
            let fd = finite_difference_gradient(|x| t.energy(x, &[]), &q, 1e-6);
            assert!(gradient_rel_error(&g, &fd, 1e-3) < 1e-5);
        }
    }

    #[test]
    fn inverted_elements_stay_finite() {
        let rest = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let t = NeoHookeanTerm::triangles(0, &rest, &[[0, 1, 2]], &mat()).unwrap();
        let q = [0.0, 0.0, 1.0, 0.0, 0.0, -1.0];
        let e = t.energy(&q, &[]);
        assert!(e.is_finite() && e > 0.0);
        let collapsed = [0.0; 6];
        assert!(t.energy(&collapsed, &[]).is_finite());
    }

    #[test]
    fn translation_invariance() {
        let m = grid_triangles(4, 3, 2.0, 1.0).unwrap();
        let rest: Vec<[f64; 2]> = m.vertices.iter().map(|v| [v[0], v[1]]).collect();
        let t = NeoHookeanTerm::triangles(0, &rest, &m.faces, &mat()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let q: Vec<f64> = flat(&m.vertices, 2).iter().map(|x| x + rng.random_range(-0.2..0.2)).collect();
        let shifted: Vec<f64> = q.iter().enumerate().map(|(i, x)| x + if i % 2 == 0 { 3.7 } else { -1.2 }).collect();
        let (a, b) = (t.energy(&q, &[]), t.energy(&shifted, &[]));
        assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn stiffness_condition_scales_energy() {
        let rest = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let t = NeoHookeanTerm::triangles(0, &rest, &[[0, 1, 2]], &mat())
            .unwrap()
            .with_stiffness_condition(0);
        let q = [0.0, 0.0, 1.2, 0.0, 0.0, 0.9];
        let e1 = t.energy(&q, &[1.0]);
        let e3 = t.energy(&q, &[3.0]);
        assert!((e3 - 3.0 * e1).abs() < 1e-9 * e3);
    }

    #[test]
    fn material_validation() {
        assert!(Material::new(1.0, 0.5, 1.0).validate().is_err());
        assert!(Material::new(-1.0, 0.3, 1.0).validate().is_err());
        assert!(Material::new(1.0, 0.3, 1.0).validate().is_ok());
    }
}
