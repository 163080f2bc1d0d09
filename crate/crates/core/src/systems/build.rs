//! Declarative system descriptions and their assembly into a [`SystemDef`].
//!
//! A system is a list of parts (each owning a contiguous DOF block) and a
//! list of energy terms referring to parts by name. The total energy is the
//! sum of the terms.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cloth::ClothTerm;
use super::fem::{Material, NeoHookeanTerm};
use super::mesh::{self, TriMesh};
use super::penalty::PinTerm;
use super::quadratic::{GravityTerm, QuadraticTerm};
use super::rigid::{
    self, Collider, CollisionPair, Joint, JointTarget, JointTerm, OrthogonalityTerm, PointSource,
    SdfCollisionTerm, Shape, BODY_DOFS,
};
use super::{ConditionDesc, EnergyTerm, RenderKind, RenderPart, SystemDef};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    #[serde(default)]
    pub parts: Vec<PartSpec>,
    #[serde(default)]
    pub terms: Vec<TermSpec>,
    #[serde(default)]
    pub conditions: Vec<ConditionDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_hessian_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartSpec {
    /// Abstract coordinates with no geometry.
    Vector {
        name: String,
        dofs: usize,
        #[serde(default = "one")]
        mass: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<Vec<f64>>,
    },
    /// Planar triangle mesh; the z coordinate of the input is ignored.
    Fem2d {
        name: String,
        mesh: MeshSource,
        material: Material,
        #[serde(default)]
        seed: SeedTransform,
    },
    Fem3d {
        name: String,
        mesh: MeshSource,
        material: Material,
        #[serde(default)]
        seed: SeedTransform,
    },
    Cloth {
        name: String,
        mesh: MeshSource,
        material: Material,
        #[serde(default)]
        seed: SeedTransform,
    },
    Rigid {
        name: String,
        bodies: Vec<BodySpec>,
        #[serde(default = "one")]
        inertia_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    /// `.obj` triangle mesh or `.tet` tetrahedral mesh.
    File(PathBuf),
    Grid {
        nx: usize,
        ny: usize,
        width: f64,
        height: f64,
    },
    BoxGrid {
        n: [usize; 3],
        size: [f64; 3],
    },
}

/// Seed positions `about + scale * (x - about) + translate`, `about`
/// defaulting to the centroid of the rest mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedTransform {
    #[serde(default = "unit_scale")]
    pub scale: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub about: Option<[f64; 3]>,
    #[serde(default)]
    pub translate: [f64; 3],
}

fn unit_scale() -> [f64; 3] {
    [1.0; 3]
}

impl Default for SeedTransform {
    fn default() -> Self {
        SeedTransform {
            scale: unit_scale(),
            about: None,
            translate: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub shape: Shape,
    pub mass: f64,
    pub position: [f64; 3],
    /// Tessellation level of the template surface.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum VertexSelect {
    Indices(Vec<usize>),
    /// Vertices whose coordinate along this axis is minimal.
    Min(usize),
    Max(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinShift {
    pub condition: String,
    pub axis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyRef {
    pub part: String,
    #[serde(default)]
    pub body: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub a: BodyRef,
    pub anchor_a: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<BodyRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_b: Option<[f64; 3]>,
    /// Fixed world anchor, used when `b` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsRef {
    pub part: String,
    /// Body index for rigid parts; all vertices for mesh parts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColliderSpec {
    Body(BodyRef),
    World { shape: Shape, center: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionSpec {
    pub points: PointsRef,
    pub collider: ColliderSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermSpec {
    Quadratic {
        part: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stiffness: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    Neohookean {
        part: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stiffness_condition: Option<String>,
    },
    Cloth {
        part: String,
    },
    Gravity {
        /// Parts to load; all geometric parts when empty.
        #[serde(default)]
        parts: Vec<String>,
        #[serde(default = "default_g")]
        g: f64,
        #[serde(default = "default_up")]
        axis: usize,
    },
    Pin {
        part: String,
        select: VertexSelect,
        weight: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<PinShift>,
    },
    RigidOrthogonality {
        part: String,
        stiffness: f64,
    },
    Joint {
        weight: f64,
        joints: Vec<JointSpec>,
    },
    SdfCollision {
        weight: f64,
        pairs: Vec<CollisionSpec>,
    },
}

fn default_g() -> f64 {
    9.81
}

fn default_up() -> usize {
    1
}

#[derive(Debug)]
enum PartGeom {
    Vector,
    Mesh {
        dim: usize,
        rest: Vec<[f64; 3]>,
        seed: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
        tets: Vec<[usize; 4]>,
        material: Material,
        vertex_mass: Vec<f64>,
    },
    Rigid {
        bodies: Vec<BodySpec>,
        templates: Vec<(Vec<[f64; 3]>, Vec<[usize; 3]>)>,
    },
}

#[derive(Debug)]
struct Part {
    name: String,
    kind: &'static str,
    offset: usize,
    geom: PartGeom,
}

impl Part {
    fn mesh(&self) -> Result<(usize, &[[f64; 3]], &[[f64; 3]])> {
        match &self.geom {
            PartGeom::Mesh { dim, rest, seed, .. } => Ok((*dim, rest, seed)),
            _ => Err(Error::config(format!("part '{}' is not a mesh part", self.name))),
        }
    }

    fn body_offset(&self, body: usize) -> Result<usize> {
        match &self.geom {
            PartGeom::Rigid { bodies, .. } if body < bodies.len() => Ok(self.offset + body * BODY_DOFS),
            PartGeom::Rigid { bodies, .. } => Err(Error::config(format!(
                "part '{}' has {} bodies, body {body} requested",
                self.name,
                bodies.len()
            ))),
            _ => Err(Error::config(format!("part '{}' is not a rigid part", self.name))),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl SystemSpec {
    /// Makes relative mesh paths absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for part in &mut self.parts {
            if let PartSpec::Fem2d { mesh, .. } | PartSpec::Fem3d { mesh, .. } | PartSpec::Cloth { mesh, .. } = part {
                if let MeshSource::File(p) = mesh {
                    *p = resolve(base, p);
                }
            }
        }
    }

    /// DOF count implied by the parts, without building energies.
    pub fn dof_count(&self) -> Result<usize> {
        Ok(load_parts(self)?.1)
    }
}

fn load_tri_mesh(src: &MeshSource) -> Result<TriMesh> {
    match src {
        MeshSource::File(p) => mesh::load_obj(p).map_err(|e| with_path(e, p)),
        MeshSource::Grid { nx, ny, width, height } => mesh::grid_triangles(*nx, *ny, *width, *height),
        MeshSource::BoxGrid { .. } => Err(Error::config("box_grid meshes are tetrahedral; use grid or an .obj file")),
    }
}

fn with_path(e: Error, p: &Path) -> Error {
    match e {
        Error::Io(io) => Error::config(format!("cannot read mesh '{}': {io}", p.display())),
        other => other,
    }
}

fn seed_positions(rest: &[[f64; 3]], t: &SeedTransform) -> Vec<[f64; 3]> {
    let about = t.about.unwrap_or_else(|| {
        let mut c = [0.0; 3];
        for v in rest {
            for k in 0..3 {
                c[k] += v[k] / rest.len() as f64;
            }
        }
        c
    });
    rest.iter()
        .map(|v| std::array::from_fn(|k| about[k] + t.scale[k] * (v[k] - about[k]) + t.translate[k]))
        .collect()
}

fn load_parts(spec: &SystemSpec) -> Result<(Vec<Part>, usize)> {
    let mut parts = Vec::new();
    let mut offset = 0;
    for ps in &spec.parts {
        let (name, kind, geom, dofs) = match ps {
            PartSpec::Vector { name, dofs, .. } => (name, "vector", PartGeom::Vector, *dofs),
            PartSpec::Fem2d { name, mesh: src, material, seed } => {
                material.validate()?;
                let m = load_tri_mesh(src)?;
                let rest: Vec<[f64; 3]> = m.vertices.iter().map(|v| [v[0], v[1], 0.0]).collect();
                let seed = seed_positions(&rest, seed);
                let dofs = 2 * rest.len();
                let geom = PartGeom::Mesh { dim: 2, seed, rest, faces: m.faces, tets: vec![], material: *material, vertex_mass: vec![] };
                (name, "fem2d", geom, dofs)
            }
            PartSpec::Fem3d { name, mesh: src, material, seed } => {
                material.validate()?;
                let m = match src {
                    MeshSource::File(p) => mesh::load_tet(p).map_err(|e| with_path(e, p))?,
                    MeshSource::BoxGrid { n, size } => mesh::grid_tets(*n, *size)?,
                    MeshSource::Grid { .. } => {
                        return Err(Error::config(format!("part '{name}': fem3d needs a .tet file or box_grid")))
                    }
                };
                let faces = boundary_faces(&m.tets);
                let seed = seed_positions(&m.vertices, seed);
                let dofs = 3 * m.vertices.len();
                let geom = PartGeom::Mesh { dim: 3, seed, rest: m.vertices, faces, tets: m.tets, material: *material, vertex_mass: vec![] };
                (name, "fem3d", geom, dofs)
            }
            PartSpec::Cloth { name, mesh: src, material, seed } => {
                material.validate()?;
                let m = load_tri_mesh(src)?;
                let seed = seed_positions(&m.vertices, seed);
                let dofs = 3 * m.vertices.len();
                let geom = PartGeom::Mesh { dim: 3, seed, rest: m.vertices, faces: m.faces, tets: vec![], material: *material, vertex_mass: vec![] };
                (name, "cloth", geom, dofs)
            }
            PartSpec::Rigid { name, bodies, .. } => {
                if bodies.is_empty() {
                    return Err(Error::config(format!("rigid part '{name}' has no bodies")));
                }
                let templates = bodies.iter().map(|b| b.shape.surface_mesh(b.resolution)).collect();
                let geom = PartGeom::Rigid { bodies: bodies.clone(), templates };
                (name, "rigid", geom, BODY_DOFS * bodies.len())
            }
        };
        if parts.iter().any(|p: &Part| &p.name == name) {
            return Err(Error::config(format!("duplicate part name '{name}'")));
        }
        if dofs == 0 {
            return Err(Error::config(format!("part '{name}' has no degrees of freedom")));
        }
        parts.push(Part { name: name.clone(), kind, offset, geom });
        offset += dofs;
    }
    Ok((parts, offset))
}

/// Faces of a tet mesh that belong to exactly one tet, outward oriented.
fn boundary_faces(tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    let mut count: HashMap<[usize; 3], ([usize; 3], usize)> = HashMap::new();
    for t in tets {
        for f in [[t[0], t[2], t[1]], [t[0], t[1], t[3]], [t[1], t[2], t[3]], [t[0], t[3], t[2]]] {
            let mut key = f;
            key.sort_unstable();
            count.entry(key).or_insert((f, 0)).1 += 1;
        }
    }
    let mut out: Vec<[usize; 3]> = count.into_values().filter(|(_, c)| *c == 1).map(|(f, _)| f).collect();
    out.sort_unstable();
    out
}

fn find<'a>(parts: &'a [Part], name: &str) -> Result<&'a Part> {
    parts
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::config(format!("unknown part '{name}'")))
}

fn condition_index(spec: &SystemSpec, name: &str) -> Result<usize> {
    spec.conditions
        .iter()
        .position(|c| c.name == name)
        .ok_or_else(|| Error::config(format!("unknown condition '{name}'")))
}

/// Assembles the energy terms, lumped masses, seed and render data.
pub fn build_system(spec: &SystemSpec) -> Result<SystemDef> {
    if spec.terms.is_empty() {
        return Err(Error::config(format!("system '{}' lists no energy terms", spec.name)));
    }
    if spec.parts.is_empty() {
        return Err(Error::config(format!("system '{}' lists no parts", spec.name)));
    }
    let (mut parts, n) = load_parts(spec)?;
    let mut mass = vec![0.0; n];
    let mut seed = vec![0.0; n];
    let mut render = Vec::new();

    // lumped masses and seeds
    for (part, ps) in parts.iter_mut().zip(&spec.parts) {
        let off = part.offset;
        match (&mut part.geom, ps) {
            (PartGeom::Vector, PartSpec::Vector { dofs, mass: m, seed: s, .. }) => {
                mass[off..off + dofs].iter_mut().for_each(|v| *v = *m);
                if let Some(s) = s {
                    Error::check_dim("vector part seed", *dofs, s.len())?;
                    seed[off..off + dofs].copy_from_slice(s);
                }
                render.push(RenderPart { name: part.name.clone(), kind: RenderKind::Vector, offset: off });
            }
            (PartGeom::Mesh { dim, rest, seed: sp, faces, tets, material, vertex_mass }, _) => {
                let vm = match part.kind {
                    "fem2d" => {
                        let rest2: Vec<[f64; 2]> = rest.iter().map(|v| [v[0], v[1]]).collect();
                        NeoHookeanTerm::triangles(0, &rest2, faces, material)?.lumped_vertex_mass(rest.len(), material.density)
                    }
                    "fem3d" => NeoHookeanTerm::tets(0, rest, tets, material)?.lumped_vertex_mass(rest.len(), material.density),
                    _ => ClothTerm::new(0, &TriMesh { vertices: rest.clone(), faces: faces.clone() }, material)?
                        .lumped_vertex_mass(rest.len(), material.density),
                };
                for (i, (m, p)) in vm.iter().zip(sp.iter()).enumerate() {
                    if !(*m > 0.0) {
                        return Err(Error::config(format!("part '{}': vertex {i} belongs to no element", part.name)));
                    }
                    for k in 0..*dim {
                        mass[off + *dim * i + k] = *m;
                        seed[off + *dim * i + k] = p[k];
                    }
                }
                *vertex_mass = vm;
                render.push(RenderPart { name: part.name.clone(), kind: RenderKind::Mesh { dim: *dim, faces: faces.clone() }, offset: off });
            }
            (PartGeom::Rigid { bodies, templates }, PartSpec::Rigid { inertia_scale, .. }) => {
                for (b, body) in bodies.iter().enumerate() {
                    if !(body.mass > 0.0) {
                        return Err(Error::config(format!("part '{}': body {b} needs positive mass", part.name)));
                    }
                    let bo = off + b * BODY_DOFS;
                    seed[bo..bo + BODY_DOFS].copy_from_slice(&rigid::identity_state(body.position));
                    let moments = body.shape.second_moments();
                    for r in 0..3 {
                        for c in 0..3 {
                            mass[bo + 4 * r + c] = body.mass * inertia_scale * moments[c];
                        }
                        mass[bo + 4 * r + 3] = body.mass;
                    }
                }
                render.push(RenderPart { name: part.name.clone(), kind: RenderKind::Rigid { bodies: templates.clone() }, offset: off });
            }
            _ => unreachable!("part geometry matches its spec"),
        }
    }

    let mut terms: Vec<Box<dyn EnergyTerm>> = Vec::new();
    for ts in &spec.terms {
        let term: Box<dyn EnergyTerm> = match ts {
            TermSpec::Quadratic { part, stiffness, matrix, center } => {
                let p = find(&parts, part)?;
                let len = match (stiffness, matrix) {
                    (Some(k), None) => k.len(),
                    (None, Some(m)) => m.len(),
                    _ => return Err(Error::config("quadratic term needs exactly one of 'stiffness' or 'matrix'")),
                };
                let part_len = part_dofs(&parts, p, n);
                if len != part_len {
                    return Err(Error::config(format!("quadratic term has size {len} but part '{part}' has {part_len} DOFs")));
                }
                if let Some(c) = center {
                    Error::check_dim("quadratic center", len, c.len())?;
                }
                match (stiffness, matrix) {
                    (Some(k), _) => Box::new(QuadraticTerm::diagonal(p.offset, k.clone(), center.clone())),
                    (_, Some(m)) => {
                        if m.iter().any(|row| row.len() != len) {
                            return Err(Error::config("quadratic matrix must be square"));
                        }
                        let flat: Vec<f64> = m.iter().flatten().copied().collect();
                        Box::new(QuadraticTerm::dense(p.offset, nalgebra::DMatrix::from_row_slice(len, len, &flat), center.clone()))
                    }
                    _ => unreachable!(),
                }
            }
            TermSpec::Neohookean { part, stiffness_condition } => {
                let p = find(&parts, part)?;
                let PartGeom::Mesh { rest, faces, tets, material, .. } = &p.geom else {
                    return Err(Error::config(format!("neohookean term needs a fem part, '{part}' is {}", p.kind)));
                };
                let mut t = match p.kind {
                    "fem2d" => {
                        let rest2: Vec<[f64; 2]> = rest.iter().map(|v| [v[0], v[1]]).collect();
                        NeoHookeanTerm::triangles(p.offset, &rest2, faces, material)?
                    }
                    "fem3d" => NeoHookeanTerm::tets(p.offset, rest, tets, material)?,
                    other => return Err(Error::config(format!("neohookean term needs a fem part, '{part}' is {other}"))),
                };
                if let Some(c) = stiffness_condition {
                    t = t.with_stiffness_condition(condition_index(spec, c)?);
                }
                Box::new(t)
            }
            TermSpec::Cloth { part } => {
                let p = find(&parts, part)?;
                match &p.geom {
                    PartGeom::Mesh { rest, faces, material, .. } if p.kind == "cloth" => Box::new(ClothTerm::new(
                        p.offset,
                        &TriMesh { vertices: rest.clone(), faces: faces.clone() },
                        material,
                    )?),
                    _ => return Err(Error::config(format!("cloth term needs a cloth part, '{part}' is {}", p.kind))),
                }
            }
            TermSpec::Gravity { parts: names, g, axis } => {
                let selected: Vec<&Part> = if names.is_empty() {
                    parts.iter().filter(|p| !matches!(p.geom, PartGeom::Vector)).collect()
                } else {
                    names.iter().map(|nm| find(&parts, nm)).collect::<Result<_>>()?
                };
                let mut entries = Vec::new();
                for p in selected {
                    match &p.geom {
                        PartGeom::Vector => return Err(Error::config(format!("gravity cannot act on vector part '{}'", p.name))),
                        PartGeom::Mesh { dim, vertex_mass, .. } => {
                            if *axis >= *dim {
                                return Err(Error::config(format!("gravity axis {axis} out of range for part '{}'", p.name)));
                            }
                            entries.extend(GravityTerm::for_points(p.offset, *dim, *axis, vertex_mass, *g).entries().iter().copied());
                        }
                        PartGeom::Rigid { bodies, .. } => {
                            if *axis >= 3 {
                                return Err(Error::config(format!("gravity axis {axis} out of range")));
                            }
                            for (b, body) in bodies.iter().enumerate() {
                                entries.push((p.offset + b * BODY_DOFS + 4 * axis + 3, body.mass * g));
                            }
                        }
                    }
                }
                Box::new(GravityTerm::new(entries))
            }
            TermSpec::Pin { part, select, weight, shift } => {
                let p = find(&parts, part)?;
                let (dim, rest, seed_pos) = p.mesh()?;
                let idx = select_vertices(rest, select)?;
                if !(*weight > 0.0) {
                    return Err(Error::config("pin weight must be positive"));
                }
                let pins = idx.into_iter().map(|i| (i, seed_pos[i])).collect();
                let mut t = PinTerm::new(p.offset, dim, pins, *weight);
                if let Some(s) = shift {
                    if s.axis >= dim {
                        return Err(Error::config(format!("pin shift axis {} out of range", s.axis)));
                    }
                    t = t.with_shift(condition_index(spec, &s.condition)?, s.axis);
                }
                Box::new(t)
            }
            TermSpec::RigidOrthogonality { part, stiffness } => {
                let p = find(&parts, part)?;
                let PartGeom::Rigid { bodies, .. } = &p.geom else {
                    return Err(Error::config(format!("rigid_orthogonality needs a rigid part, '{part}' is {}", p.kind)));
                };
                Box::new(OrthogonalityTerm::new(p.offset, bodies.len(), *stiffness))
            }
            TermSpec::Joint { weight, joints } => {
                let mut built = Vec::with_capacity(joints.len());
                for j in joints {
                    let offset = find(&parts, &j.a.part)?.body_offset(j.a.body)?;
                    let target = match (&j.b, j.world) {
                        (Some(b), None) => JointTarget::Body {
                            offset: find(&parts, &b.part)?.body_offset(b.body)?,
                            anchor: j.anchor_b.unwrap_or([0.0; 3]),
                        },
                        (None, Some(w)) => JointTarget::World(w),
                        _ => return Err(Error::config("each joint needs exactly one of 'b' or 'world'")),
                    };
                    built.push(Joint { offset, anchor: j.anchor_a, target });
                }
                Box::new(JointTerm::new(built, *weight))
            }
            TermSpec::SdfCollision { weight, pairs } => {
                let mut built = Vec::with_capacity(pairs.len());
                for cs in pairs {
                    let p = find(&parts, &cs.points.part)?;
                    let points = match (&p.geom, cs.points.body) {
                        (PartGeom::Mesh { dim: 3, rest, .. }, None) => PointSource::Mesh { offset: p.offset, vertices: (0..rest.len()).collect() },
                        (PartGeom::Rigid { templates, .. }, Some(b)) => PointSource::Body {
                            offset: p.body_offset(b)?,
                            points: templates[b].0.clone(),
                        },
                        _ => return Err(Error::config(format!(
                            "collision points must be a 3D mesh part or a rigid body, got part '{}'",
                            p.name
                        ))),
                    };
                    let collider = match &cs.collider {
                        ColliderSpec::World { shape, center } => Collider::World { shape: *shape, center: *center },
                        ColliderSpec::Body(r) => {
                            let cp = find(&parts, &r.part)?;
                            let PartGeom::Rigid { bodies, .. } = &cp.geom else {
                                return Err(Error::config(format!("collider part '{}' is not rigid", r.part)));
                            };
                            let shape = bodies.get(r.body).map(|b| b.shape).ok_or_else(|| Error::config("collider body out of range"))?;
                            Collider::Body { offset: cp.body_offset(r.body)?, shape }
                        }
                    };
                    built.push(CollisionPair { points, collider });
                }
                Box::new(SdfCollisionTerm::new(built, *weight))
            }
        };
        terms.push(term);
    }

    let sys = SystemDef::new(spec.name.clone(), mass, seed, terms, spec.conditions.clone())?.with_render(render);
    Ok(match spec.dense_hessian_cap {
        Some(cap) => sys.with_dense_cap(cap),
        None => sys,
    })
}

fn part_dofs(parts: &[Part], p: &Part, n: usize) -> usize {
    let idx = parts.iter().position(|q| q.name == p.name).unwrap();
    parts.get(idx + 1).map_or(n, |next| next.offset) - p.offset
}

fn select_vertices(rest: &[[f64; 3]], sel: &VertexSelect) -> Result<Vec<usize>> {
    let by_axis = |axis: usize, pick_max: bool| -> Result<Vec<usize>> {
        if axis > 2 {
            return Err(Error::config(format!("selection axis {axis} out of range")));
        }
        let vals = rest.iter().map(|v| v[axis]);
        let target = if pick_max { vals.fold(f64::MIN, f64::max) } else { vals.fold(f64::MAX, f64::min) };
        let span = rest.iter().map(|v| v[axis]).fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        Ok((0..rest.len()).filter(|&i| (rest[i][axis] - target).abs() <= 1e-9 * span).collect())
    };
    let idx = match sel {
        VertexSelect::Indices(v) => {
            if let Some(&bad) = v.iter().find(|&&i| i >= rest.len()) {
                return Err(Error::config(format!("pinned vertex {bad} out of range")));
            }
            v.clone()
        }
        VertexSelect::Min(axis) => by_axis(*axis, false)?,
        VertexSelect::Max(axis) => by_axis(*axis, true)?,
    };
    if idx.is_empty() {
        return Err(Error::config("pin selection is empty"));
    }
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> SystemSpec {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn chain_of_24_bodies_has_288_dofs() {
        let mut text = String::from("name = \"chain\"\n[[parts]]\nkind = \"rigid\"\nname = \"links\"\n");
        for i in 0..24 {
            text.push_str(&format!(
                "[[parts.bodies]]\nmass = 1.0\nposition = [{}, 0.0, 0.0]\nshape = {{ type = \"capsule\", radius = 0.1, half_length = 0.3 }}\n",
                i as f64 * 0.8
            ));
        }
        text.push_str("[[terms]]\ntype = \"rigid_orthogonality\"\npart = \"links\"\nstiffness = 10.0\n");
        let sys = build_system(&parse(&text)).unwrap();
        assert_eq!(sys.n(), 288);
        assert!(sys.energy(sys.q_seed(), &[]).abs() < 1e-12);
    }

    #[test]
    fn empty_terms_rejected() {
        let spec = parse("name = \"x\"\n[[parts]]\nkind = \"vector\"\nname = \"v\"\ndofs = 2\n");
        assert!(matches!(build_system(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_names_rejected() {
        let spec = parse(
            "name = \"x\"\n[[parts]]\nkind = \"vector\"\nname = \"v\"\ndofs = 1\n[[terms]]\ntype = \"quadratic\"\npart = \"w\"\nstiffness = [1.0]\n",
        );
        assert!(build_system(&spec).is_err());
        let bad_type = toml::from_str::<SystemSpec>("name = \"x\"\n[[terms]]\ntype = \"magic\"\n");
        assert!(bad_type.is_err());
    }

    #[test]
    fn missing_mesh_file_is_config_error() {
        let spec = parse(
            "name = \"x\"\n[[parts]]\nkind = \"cloth\"\nname = \"c\"\nmesh = { file = \"/nonexistent/sheet.obj\" }\nmaterial = { youngs_modulus = 1.0, poisson_ratio = 0.3, density = 1.0 }\n[[terms]]\ntype = \"cloth\"\npart = \"c\"\n",
        );
        let err = build_system(&spec).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("sheet.obj")), "{err}");
    }

    #[test]
    fn nonpositive_mass_rejected() {
        let spec = parse(
            "name = \"x\"\n[[parts]]\nkind = \"vector\"\nname = \"v\"\ndofs = 1\nmass = 0.0\n[[terms]]\ntype = \"quadratic\"\npart = \"v\"\nstiffness = [1.0]\n",
        );
        assert!(build_system(&spec).is_err());
    }

    #[test]
    fn pinned_compressed_bar() {
        let spec = parse(
            r#"
name = "bar"
[[parts]]
kind = "fem2d"
name = "bar"
mesh = { grid = { nx = 6, ny = 2, width = 5.0, height = 1.0 } }
material = { youngs_modulus = 100.0, poisson_ratio = 0.3, density = 1.0 }
seed = { scale = [0.9, 1.0, 1.0] }
[[terms]]
type = "neohookean"
part = "bar"
[[terms]]
type = "pin"
part = "bar"
select = { min = 0 }
weight = 1e4
[[terms]]
type = "pin"
part = "bar"
select = { max = 0 }
weight = 1e4
"#,
        );
        let sys = build_system(&spec).unwrap();
        assert_eq!(sys.n(), 24);
        let total_mass: f64 = sys.mass_diag().iter().step_by(2).sum();
        assert!((total_mass - 5.0).abs() < 1e-12);
        // seed is compressed, so elastic energy is positive but pins are satisfied
        let e = sys.energy(sys.q_seed(), &[]);
        assert!(e > 0.0 && e.is_finite());
        assert!((sys.q_seed()[0] - 0.25).abs() < 1e-12);
    }
}
