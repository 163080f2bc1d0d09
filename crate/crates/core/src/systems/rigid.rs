//! Rigid bodies as unconstrained 3x4 transforms `[R | t]`.
//!
//! Each body owns 12 consecutive coefficients stored row-major: row `r` is
//! `R[r][0], R[r][1], R[r][2], t[r]`. Orthogonality of `R` is encouraged by a
//! potential rather than enforced. Joints and collisions are penalties.

use serde::{Deserialize, Serialize};

use super::EnergyTerm;

pub const BODY_DOFS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Segment along the local x axis from `-half_length` to `half_length`.
    Capsule { radius: f64, half_length: f64 },
}

fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn unit_or_up(p: [f64; 3]) -> [f64; 3] {
    let n = norm(p);
    if n > 0.0 {
        [p[0] / n, p[1] / n, p[2] / n]
    } else {
        [0.0, 1.0, 0.0]
    }
}

impl Shape {
    /// Signed distance and its gradient at local point `p`.
    pub fn sdf(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        match *self {
            Shape::Sphere { radius } => (norm(p) - radius, unit_or_up(p)),
            Shape::Capsule {
                radius,
                half_length,
            } => {
                let rel = [p[0] - p[0].clamp(-half_length, half_length), p[1], p[2]];
                (norm(rel) - radius, unit_or_up(rel))
            }
            Shape::Box { half_extents: h } => {
                let q = [p[0].abs() - h[0], p[1].abs() - h[1], p[2].abs() - h[2]];
                let outside = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
                let out_len = norm(outside);
                if out_len > 0.0 {
                    let mut g = [0.0; 3];
                    for k in 0..3 {
                        g[k] = p[k].signum() * outside[k] / out_len;
                    }
                    (out_len, g)
                } else {
                    let k = (0..3).max_by(|&a, &b| q[a].total_cmp(&q[b])).unwrap();
                    let mut g = [0.0; 3];
                    g[k] = if p[k] < 0.0 { -1.0 } else { 1.0 };
                    (q[k], g)
                }
            }
        }
    }

    /// Per-axis second moment `<p_c^2>` of a solid of unit mass.
    pub fn second_moments(&self) -> [f64; 3] {
        match *self {
            Shape::Sphere { radius } => [radius * radius / 5.0; 3],
            Shape::Box { half_extents: h } => [h[0] * h[0] / 3.0, h[1] * h[1] / 3.0, h[2] * h[2] / 3.0],
            Shape::Capsule {
                radius,
                half_length,
            } => {
                let r2 = radius * radius / 5.0;
                [half_length * half_length / 3.0 + r2, r2, r2]
            }
        }
    }

    /// Template surface mesh used for rendering and as collision sample points.
    pub fn surface_mesh(&self, resolution: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
        match *self {
            Shape::Box { half_extents: h } => {
                let mut v = Vec::new();
                for i in 0..8 {
                    let s = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
                    v.push([s(0) * h[0], s(1) * h[1], s(2) * h[2]]);
                }
                let f = vec![
                    [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],
                    [0, 1, 4], [1, 5, 4], [2, 6, 3], [3, 6, 7],
                    [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
                ];
                (v, f)
            }
            Shape::Sphere { radius } => uv_sphere(radius, 0.0, resolution.max(3)),
            Shape::Capsule {
                radius,
                half_length,
            } => uv_sphere(radius, half_length, resolution.max(3)),
        }
    }
}

/// Sphere (or capsule when `stretch > 0`) with poles on the x axis.
fn uv_sphere(radius: f64, stretch: f64, res: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let stacks = res;
    let slices = 2 * res;
    let mut v = vec![[-radius - stretch, 0.0, 0.0]];
    for i in 1..stacks {
        let phi = std::f64::consts::PI * i as f64 / stacks as f64;
        let x = -radius * phi.cos();
        let shift = if x < 0.0 { -stretch } else { stretch };
        for j in 0..slices {
            let th = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
            v.push([x + shift, radius * phi.sin() * th.cos(), radius * phi.sin() * th.sin()]);
        }
    }
    v.push([radius + stretch, 0.0, 0.0]);
    let last = v.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + (j % slices);
    let mut f = Vec::new();
    for j in 0..slices {
        f.push([0, ring(1, j + 1), ring(1, j)]);
        f.push([last, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            f.push([ring(i, j), ring(i, j + 1), ring(i + 1, j)]);
            f.push([ring(i, j + 1), ring(i + 1, j + 1), ring(i + 1, j)]);
        }
    }
    (v, f)
}

/// World position `R p + t` of local point `p` for the body at `off`.
pub fn transform_point(q: &[f64], off: usize, p: [f64; 3]) -> [f64; 3] {
    let mut x = [0.0; 3];
    for (r, xr) in x.iter_mut().enumerate() {
        let row = &q[off + 4 * r..off + 4 * r + 4];
        *xr = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3];
    }
    x
}

/// Pulls `d/dx` of a world point back to the body coefficients.
fn transform_point_backward(grad: &mut [f64], off: usize, p: [f64; 3], gx: [f64; 3]) {
    for r in 0..3 {
        let row = &mut grad[off + 4 * r..off + 4 * r + 4];
        row[0] += gx[r] * p[0];
        row[1] += gx[r] * p[1];
        row[2] += gx[r] * p[2];
        row[3] += gx[r];
    }
}

/// Body-local coordinates `R^T (x - t)`. Exact inverse only when `R` is orthogonal.
pub fn to_local(q: &[f64], off: usize, x: [f64; 3]) -> [f64; 3] {
    let mut p = [0.0; 3];
    for r in 0..3 {
        let d = x[r] - q[off + 4 * r + 3];
        for (c, pc) in p.iter_mut().enumerate() {
            *pc += q[off + 4 * r + c] * d;
        }
    }
    p
}

/// Backward of [`to_local`]: accumulates coefficient gradients, returns `d/dx`.
fn to_local_backward(q: &[f64], grad: &mut [f64], off: usize, x: [f64; 3], gp: [f64; 3]) -> [f64; 3] {
    let mut gx = [0.0; 3];
    for r in 0..3 {
        let d = x[r] - q[off + 4 * r + 3];
        let mut s = 0.0;
        for c in 0..3 {
            s += q[off + 4 * r + c] * gp[c];
            grad[off + 4 * r + c] += d * gp[c];
        }
        gx[r] = s;
        grad[off + 4 * r + 3] -= s;
    }
    gx
}

/// Identity rotation at `position`.
pub fn identity_state(position: [f64; 3]) -> [f64; BODY_DOFS] {
    let mut s = [0.0; BODY_DOFS];
    for r in 0..3 {
        s[4 * r + r] = 1.0;
        s[4 * r + 3] = position[r];
    }
    s
}

/// `stiffness * sum_b |R_b^T R_b - I|_F^2` over all bodies in `q`.
pub fn rigid_orthogonality_energy(q: &[f64], stiffness: f64) -> f64 {
    OrthogonalityTerm::new(0, q.len() / BODY_DOFS, stiffness).energy(q, &[])
}

#[derive(Debug, Clone)]
pub struct OrthogonalityTerm {
    offset: usize,
    bodies: usize,
    stiffness: f64,
}

impl OrthogonalityTerm {
    pub fn new(offset: usize, bodies: usize, stiffness: f64) -> Self {
        OrthogonalityTerm {
            offset,
            bodies,
            stiffness,
        }
    }

    fn eval(&self, q: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        for b in 0..self.bodies {
            let off = self.offset + b * BODY_DOFS;
            let rot = |r: usize, c: usize| q[off + 4 * r + c];
            // S = R^T R - I
            let mut s = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    s[i][j] = (0..3).map(|k| rot(k, i) * rot(k, j)).sum::<f64>() - if i == j { 1.0 } else { 0.0 };
                    total += self.stiffness * s[i][j] * s[i][j];
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                // d/dR |S|^2 = 4 R S
                for r in 0..3 {
                    for c in 0..3 {
                        let v: f64 = (0..3).map(|k| rot(r, k) * s[k][c]).sum();
                        g[off + 4 * r + c] += 4.0 * self.stiffness * v;
                    }
                }
            }
        }
        total
    }
}

impl EnergyTerm for OrthogonalityTerm {
    fn name(&self) -> &str {
        "rigid_orthogonality"
    }

    fn energy(&self, q: &[f64], _c: &[f64]) -> f64 {
        self.eval(q, None)
    }

    fn accumulate_gradient(&self, q: &[f64], _c: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(q, Some(grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointTarget {
    /// Anchor on another body (its DOF offset and local anchor).
    Body { offset: usize, anchor: [f64; 3] },
    World([f64; 3]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub offset: usize,
    pub anchor: [f64; 3],
    pub target: JointTarget,
}

/// Equality penalty `w |x_a - x_b|^2` between world-space anchor points.
#[derive(Debug, Clone)]
pub struct JointTerm {
    joints: Vec<Joint>,
    weight: f64,
}

impl JointTerm {
    pub fn new(joints: Vec<Joint>, weight: f64) -> Self {
        JointTerm { joints, weight }
    }

    fn eval(&self, q: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        for j in &self.joints {
            let xa = transform_point(q, j.offset, j.anchor);
            let xb = match j.target {
                JointTarget::Body { offset, anchor } => transform_point(q, offset, anchor),
                JointTarget::World(p) => p,
            };
            let res = [xa[0] - xb[0], xa[1] - xb[1], xa[2] - xb[2]];
            total += super::penalty::penalty_energy(&res, &[], self.weight, 0.0);
            if let Some(g) = grad.as_deref_mut() {
                let gx = res.map(|r| 2.0 * self.weight * r);
                transform_point_backward(g, j.offset, j.anchor, gx);
                if let JointTarget::Body { offset, anchor } = j.target {
                    transform_point_backward(g, offset, anchor, gx.map(|v| -v));
                }
            }
        }
        total
    }
}

impl EnergyTerm for JointTerm {
    fn name(&self) -> &str {
        "joint"
    }

    fn energy(&self, q: &[f64], _c: &[f64]) -> f64 {
        self.eval(q, None)
    }

    fn accumulate_gradient(&self, q: &[f64], _c: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(q, Some(grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointSource {
    /// Mesh vertices read directly from `q` (3 coordinates each).
    Mesh { offset: usize, vertices: Vec<usize> },
    /// Local points carried by a rigid body.
    Body { offset: usize, points: Vec<[f64; 3]> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Collider {
    /// Fixed shape translated to `center`.
    World { shape: Shape, center: [f64; 3] },
    Body { offset: usize, shape: Shape },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionPair {
    pub points: PointSource,
    pub collider: Collider,
}

/// Penalty on negative signed distance of sample points against colliders.
#[derive(Debug, Clone)]
pub struct SdfCollisionTerm {
    pairs: Vec<CollisionPair>,
    weight: f64,
}

/// World-space helper: `w * sum min(d, 0)^2` over all points and fixed colliders.
pub fn sdf_collision_energy(points: &[[f64; 3]], colliders: &[(Shape, [f64; 3])], weight: f64) -> f64 {
    let mut dists = Vec::new();
    for p in points {
        for (shape, center) in colliders {
            dists.push(shape.sdf([p[0] - center[0], p[1] - center[1], p[2] - center[2]]).0);
        }
    }
    super::penalty::penalty_energy(&[], &dists, 0.0, weight)
}

impl SdfCollisionTerm {
    pub fn new(pairs: Vec<CollisionPair>, weight: f64) -> Self {
        SdfCollisionTerm { pairs, weight }
    }

    fn eval(&self, q: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        for pair in &self.pairs {
            let n_points = match &pair.points {
                PointSource::Mesh { vertices, .. } => vertices.len(),
                PointSource::Body { points, .. } => points.len(),
            };
            for k in 0..n_points {
                let x = match &pair.points {
                    PointSource::Mesh { offset, vertices } => {
                        let b = offset + 3 * vertices[k];
                        [q[b], q[b + 1], q[b + 2]]
                    }
                    PointSource::Body { offset, points } => transform_point(q, *offset, points[k]),
                };
                let (local, shape) = match &pair.collider {
                    Collider::World { shape, center } => {
                        ([x[0] - center[0], x[1] - center[1], x[2] - center[2]], shape)
                    }
                    Collider::Body { offset, shape } => (to_local(q, *offset, x), shape),
                };
                let (d, gd) = shape.sdf(local);
                if d >= 0.0 {
                    continue;
                }
                total += self.weight * d * d;
                let Some(g) = grad.as_deref_mut() else { continue };
                let gp = gd.map(|v| 2.0 * self.weight * d * v);
                let gx = match &pair.collider {
                    Collider::World { .. } => gp,
                    Collider::Body { offset, .. } => to_local_backward(q, g, *offset, x, gp),
                };
                match &pair.points {
                    PointSource::Mesh { offset, vertices } => {
                        let b = offset + 3 * vertices[k];
                        for r in 0..3 {
                            g[b + r] += gx[r];
                        }
                    }
                    PointSource::Body { offset, points } => {
                        transform_point_backward(g, *offset, points[k], gx)
                    }
                }
            }
        }
        total
    }
}

impl EnergyTerm for SdfCollisionTerm {
    fn name(&self) -> &str {
        "sdf_collision"
    }

    fn energy(&self, q: &[f64], _c: &[f64]) -> f64 {
        self.eval(q, None)
    }

    fn accumulate_gradient(&self, q: &[f64], _c: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(q, Some(grad))
    }
}
