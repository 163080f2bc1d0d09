//! Cloth: constant-strain StVK membrane on faces plus discrete hinge bending
//! on interior edges.

use nalgebra::{Matrix2, Matrix3x2, Vector3};

use super::mesh::{interior_edges, TriMesh};
use super::{EnergyTerm, Material};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Face {
    verts: [usize; 3],
    dm_inv: Matrix2<f64>,
    area: f64,
}

#[derive(Debug, Clone)]
struct Hinge {
    /// Shared edge `a-b`, opposite vertices `c` and `d`.
    verts: [usize; 4],
    rest_angle: f64,
    /// `|e|^2 / (A_1 + A_2)` at rest.
    weight: f64,
}

#[derive(Debug, Clone)]
pub struct ClothTerm {
    offset: usize,
    faces: Vec<Face>,
    hinges: Vec<Hinge>,
    mu: f64,
    lambda: f64,
    bending_stiffness: f64,
}

fn v3(q: &[f64], i: usize) -> Vector3<f64> {
    Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2])
}

/// Signed dihedral angle at edge `a-b`; zero when the two faces are coplanar
/// and unfolded.
pub fn dihedral_angle(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    let e = b - a;
    let n1 = e.cross(&(c - a));
    let n2 = (d - a).cross(&e);
    let en = e.norm();
    if en == 0.0 {
        return 0.0;
    }
    n1.cross(&n2).dot(&e).atan2(n1.dot(&n2) * en)
}

/// Gradient of [`dihedral_angle`] with respect to `(a, b, c, d)`.
fn dihedral_gradient(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
    d: &Vector3<f64>,
) -> Option<[Vector3<f64>; 4]> {
    let e = b - a;
    let e2 = e.norm_squared();
    let n1 = e.cross(&(c - a));
    let n2 = (d - a).cross(&e);
    let (s1, s2) = (n1.norm_squared(), n2.norm_squared());
    if e2 == 0.0 || s1 == 0.0 || s2 == 0.0 {
        return None;
    }
    let en = e2.sqrt();
    let gc = -n1 * (en / s1);
    let gd = -n2 * (en / s2);
    let tc = (c - a).dot(&e) / e2;
    let td = (d - a).dot(&e) / e2;
    let ga = -gc * (1.0 - tc) - gd * (1.0 - td);
    let gb = -gc * tc - gd * td;
    Some([ga, gb, gc, gd])
}

impl ClothTerm {
    pub fn new(offset: usize, rest: &TriMesh, mat: &Material) -> Result<Self> {
        mat.validate()?;
        let r = |i: usize| Vector3::from(rest.vertices[i]);
        let mut faces = Vec::with_capacity(rest.faces.len());
        for (fi, f) in rest.faces.iter().enumerate() {
            let e1 = r(f[1]) - r(f[0]);
            let e2 = r(f[2]) - r(f[0]);
            let l1 = e1.norm();
            let cross = e1.cross(&e2).norm();
            if l1 < 1e-14 || cross < 1e-14 {
                return Err(Error::config(format!("cloth face {fi} is degenerate in the rest state")));
            }
            let dm = Matrix2::new(l1, e1.dot(&e2) / l1, 0.0, cross / l1);
            faces.push(Face {
                verts: *f,
                dm_inv: dm.try_inverse().expect("nonsingular"),
                area: 0.5 * cross,
            });
        }
        let area_of = |v: [usize; 3]| 0.5 * (r(v[1]) - r(v[0])).cross(&(r(v[2]) - r(v[0]))).norm();
        let hinges = interior_edges(&rest.faces)
            .into_iter()
            .map(|[a, b, c, d]| {
                let e2 = (r(b) - r(a)).norm_squared();
                Hinge {
                    verts: [a, b, c, d],
                    rest_angle: dihedral_angle(&r(a), &r(b), &r(c), &r(d)),
                    weight: e2 / (area_of([a, b, c]) + area_of([b, a, d])),
                }
            })
            .collect();
        let (y, nu) = (mat.stretch_stiffness, mat.poisson_ratio);
        Ok(ClothTerm {
            offset,
            faces,
            hinges,
            mu: y / (2.0 * (1.0 + nu)),
            lambda: y * nu / (1.0 - nu * nu),
            bending_stiffness: mat.bending_stiffness,
        })
    }

    pub fn num_hinges(&self) -> usize {
        self.hinges.len()
    }

    pub fn lumped_vertex_mass(&self, num_vertices: usize, density: f64) -> Vec<f64> {
        let mut m = vec![0.0; num_vertices];
        for f in &self.faces {
            for &v in &f.verts {
                m[v] += density * f.area / 3.0;
            }
        }
        m
    }

    pub fn stretch_energy(&self, q: &[f64]) -> f64 {
        self.stretch(&q[self.offset..], None)
    }

    pub fn bending_energy(&self, q: &[f64]) -> f64 {
        self.bending(&q[self.offset..], None)
    }

    fn stretch(&self, q: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        for f in &self.faces {
            let x0 = v3(q, f.verts[0]);
            let ds = Matrix3x2::from_columns(&[v3(q, f.verts[1]) - x0, v3(q, f.verts[2]) - x0]);
            let def = ds * f.dm_inv;
            let strain = (def.transpose() * def - Matrix2::identity()) * 0.5;
            let tr = strain.trace();
            total += f.area * (self.mu * strain.norm_squared() + 0.5 * self.lambda * tr * tr);
            if let Some(g) = grad.as_deref_mut() {
                let stress = strain * (2.0 * self.mu) + Matrix2::identity() * (self.lambda * tr);
                let h = def * stress * f.dm_inv.transpose() * f.area;
                for r in 0..3 {
                    g[3 * f.verts[1] + r] += h[(r, 0)];
                    g[3 * f.verts[2] + r] += h[(r, 1)];
                    g[3 * f.verts[0] + r] -= h[(r, 0)] + h[(r, 1)];
                }
            }
        }
        total
    }

    fn bending(&self, q: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        for h in &self.hinges {
            let [a, b, c, d] = h.verts.map(|i| v3(q, i));
            let dev = dihedral_angle(&a, &b, &c, &d) - h.rest_angle;
            let k = self.bending_stiffness * h.weight;
            total += k * dev * dev;
            if let Some(g) = grad.as_deref_mut() {
                if let Some(dg) = dihedral_gradient(&a, &b, &c, &d) {
                    for (vi, gv) in h.verts.iter().zip(&dg) {
                        for r in 0..3 {
                            g[3 * vi + r] += 2.0 * k * dev * gv[r];
                        }
                    }
                }
            }
        }
        total
    }
}

impl EnergyTerm for ClothTerm {
    fn name(&self) -> &str {
        "cloth"
    }

    fn energy(&self, q: &[f64], _c: &[f64]) -> f64 {
        let q = &q[self.offset..];
        self.stretch(q, None) + self.bending(q, None)
    }

    fn accumulate_gradient(&self, q: &[f64], _c: &[f64], grad: &mut [f64]) -> f64 {
        let q = &q[self.offset..];
        let g = &mut grad[self.offset..];
        self.stretch(q, Some(g)) + self.bending(q, Some(g))
    }
}
