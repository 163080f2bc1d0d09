//! Mesh containers, file readers (OBJ, ASCII tet) and grid generators.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TetMesh {
    pub vertices: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    tok.ok_or_else(|| Error::Format(format!("line {line}: missing coordinate")))?
        .parse::<f64>()
        .map_err(|e| Error::Format(format!("line {line}: {e}")))
}

/// Reads `v` and `f` records; polygons are fan-triangulated and
/// `v/vt/vn` index forms accepted. Other records are ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut mesh = TriMesh::default();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), lineno)?;
                let y = parse_f64(toks.next(), lineno)?;
                let z = parse_f64(toks.next(), lineno)?;
                mesh.vertices.push([x, y, z]);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in toks {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|e| Error::Format(format!("line {lineno}: bad face index '{t}': {e}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else {
                        mesh.vertices.len() as i64 + i
                    };
                    if resolved < 0 {
                        return Err(Error::Format(format!("line {lineno}: face index {i} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::Format(format!("line {lineno}: face with fewer than 3 vertices")));
                }
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    check_indices(mesh.vertices.len(), mesh.faces.iter().flatten())?;
    Ok(mesh)
}

pub fn load_obj(path: &Path) -> Result<TriMesh> {
    parse_obj(&std::fs::read_to_string(path)?)
}

/// Header `tet <nv> <nt>`, then `v x y z` and `t i j k l` lines, zero-based.
pub fn parse_tet(text: &str) -> Result<TetMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("empty tet file".into()))?;
    let mut h = header.split_whitespace();
    if h.next() != Some("tet") {
        return Err(Error::Format("tet file must start with 'tet <nv> <nt>'".into()));
    }
    let parse_count = |t: Option<&str>| -> Result<usize> {
        t.and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad count in tet header".into()))
    };
    let nv = parse_count(h.next())?;
    let nt = parse_count(h.next())?;
    let mut mesh = TetMesh::default();
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), lineno)?;
                let y = parse_f64(toks.next(), lineno)?;
                let z = parse_f64(toks.next(), lineno)?;
                mesh.vertices.push([x, y, z]);
            }
            Some("t") => {
                let mut t = [0usize; 4];
                for slot in &mut t {
                    *slot = toks
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Format(format!("line {lineno}: bad tet index")))?;
                }
                mesh.tets.push(t);
            }
            Some(other) => {
                return Err(Error::Format(format!("line {lineno}: unknown record '{other}'")));
            }
            None => {}
        }
    }
    if mesh.vertices.len() != nv || mesh.tets.len() != nt {
        return Err(Error::Format(format!(
            "tet header declares {nv} vertices and {nt} tets, found {} and {}",
            mesh.vertices.len(),
            mesh.tets.len()
        )));
    }
    check_indices(nv, mesh.tets.iter().flatten())?;
    Ok(mesh)
}

pub fn load_tet(path: &Path) -> Result<TetMesh> {
    parse_tet(&std::fs::read_to_string(path)?)
}

pub fn write_tet(mesh: &TetMesh) -> String {
    let mut s = format!("tet {} {}\n", mesh.vertices.len(), mesh.tets.len());
    for v in &mesh.vertices {
        s.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for t in &mesh.tets {
        s.push_str(&format!("t {} {} {} {}\n", t[0], t[1], t[2], t[3]));
    }
    s
}

fn check_indices<'a>(nv: usize, idx: impl Iterator<Item = &'a usize>) -> Result<()> {
    for &i in idx {
        if i >= nv {
            return Err(Error::Format(format!(
                "element references vertex {i} but only {nv} vertices exist"
            )));
        }
    }
    Ok(())
}

/// `nx x ny` vertex grid in the xy-plane spanning `[0, width] x [0, height]`,
/// each cell split into two triangles along alternating diagonals.
pub fn grid_triangles(nx: usize, ny: usize, width: f64, height: f64) -> Result<TriMesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::config("grid needs at least 2 vertices per side"));
    }
    let mut mesh = TriMesh::default();
    for j in 0..ny {
        for i in 0..nx {
            mesh.vertices.push([
                width * i as f64 / (nx - 1) as f64,
                height * j as f64 / (ny - 1) as f64,
                0.0,
            ]);
        }
    }
    let id = |i: usize, j: usize| j * nx + i;
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                mesh.faces.push([a, b, c]);
                mesh.faces.push([a, c, d]);
            } else {
                mesh.faces.push([a, b, d]);
                mesh.faces.push([b, c, d]);
            }
        }
    }
    Ok(mesh)
}

/// Box of `nx x ny x nz` vertices, each cube split into six tets.
pub fn grid_tets(n: [usize; 3], size: [f64; 3]) -> Result<TetMesh> {
    if n.iter().any(|&k| k < 2) {
        return Err(Error::config("tet grid needs at least 2 vertices per axis"));
    }
    let mut mesh = TetMesh::default();
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                mesh.vertices.push([
                    size[0] * i as f64 / (n[0] - 1) as f64,
                    size[1] * j as f64 / (n[1] - 1) as f64,
                    size[2] * k as f64 / (n[2] - 1) as f64,
                ]);
            }
        }
    }
    let id = |i: usize, j: usize, k: usize| (k * n[1] + j) * n[0] + i;
    for k in 0..n[2] - 1 {
        for j in 0..n[1] - 1 {
            for i in 0..n[0] - 1 {
                let c = |di: usize, dj: usize, dk: usize| id(i + di, j + dj, k + dk);
                let v0 = c(0, 0, 0);
                let v7 = c(1, 1, 1);
                // Kuhn subdivision along the main diagonal; all six are positively oriented.
                let paths = [
                    [c(1, 0, 0), c(1, 1, 0)],
                    [c(1, 1, 0), c(0, 1, 0)],
                    [c(0, 1, 0), c(0, 1, 1)],
                    [c(0, 1, 1), c(0, 0, 1)],
                    [c(0, 0, 1), c(1, 0, 1)],
                    [c(1, 0, 1), c(1, 0, 0)],
                ];
                for [a, b] in paths {
                    mesh.tets.push([v0, a, b, v7]);
                }
            }
        }
    }
    Ok(mesh)
}

/// Interior edges `(a, b, c, d)`: `a-b` shared, `c` opposite in the first
/// face, `d` opposite in the second.
pub fn interior_edges(faces: &[[usize; 3]]) -> Vec<[usize; 4]> {
    use std::collections::HashMap;
    let mut seen: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    let mut out = Vec::new();
    for f in faces {
        for e in 0..3 {
            let a = f[e];
            let b = f[(e + 1) % 3];
            let c = f[(e + 2) % 3];
            let key = (a.min(b), a.max(b));
            if let Some(&(pa, pb, pc)) = seen.get(&key) {
                out.push([pa, pb, pc, c]);
            } else {
                seen.insert(key, (a, b, c));
            }
        }
    }
    out
}
