//! Plain-text formats: keyframe lists, line-delimited trajectories and OBJ frames.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent_sim::{StepReport, Trajectory};
use crate::systems::{rigid, RenderKind, SystemDef};

/// One vector per line, entries separated by whitespace or commas; blank
/// lines and `#` comments are ignored.
pub fn parse_keyframes(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Format(format!("keyframes line {}: bad number '{s}'", ln + 1)))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = out.first() {
            if first.len() != v.len() {
                return Err(Error::Format(format!(
                    "keyframes line {}: expected {} values, found {}",
                    ln + 1,
                    first.len(),
                    v.len()
                )));
            }
        }
        out.push(v);
    }
    Ok(out)
}

pub fn write_keyframes(keys: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for k in keys {
        let line: Vec<String> = k.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct TrajectoryRecord<'a> {
    step: usize,
    t: f64,
    z: &'a [f64],
    #[serde(skip_serializing_if = "<[f64]>::is_empty")]
    c: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none", flatten)]
    report: Option<StepReport>,
}

/// One JSON object per state: step, time, latent, condition, optional
/// configuration and the optimizer report of the step that produced it.
pub fn trajectory_jsonl(traj: &Trajectory, h: f64, include_q: bool) -> String {
    let mut out = String::new();
    for k in 0..traj.len() {
        let rec = TrajectoryRecord {
            step: k,
            t: k as f64 * h,
            z: &traj.z[k],
            c: &traj.conditions[k],
            q: include_q.then(|| traj.q[k].as_slice()),
            report: k.checked_sub(1).map(|i| traj.reports[i]),
        };
        out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// `{"index": i, "z": [...], "q": [...]}` per line.
pub fn states_jsonl<'a>(states: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> String {
    let mut out = String::new();
    for (i, (z, q)) in states.into_iter().enumerate() {
        out.push_str(&serde_json::json!({ "index": i, "z": z, "q": q }).to_string());
        out.push('\n');
    }
    out
}

/// Triangle soup of every renderable part of `sys` at configuration `q`,
/// or `None` when the system has nothing to draw.
pub fn configuration_obj(sys: &SystemDef, q: &[f64]) -> Result<Option<String>> {
    Error::check_dim("configuration", sys.n(), q.len())?;
    let mut verts: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let parts = sys.render();
    for (i, p) in parts.iter().enumerate() {
        let end = parts.get(i + 1).map_or(sys.n(), |n| n.offset);
        match &p.kind {
            RenderKind::Vector => {}
            RenderKind::Mesh { dim, faces: f } => {
                let base = verts.len();
                for v in q[p.offset..end].chunks_exact(*dim) {
                    verts.push([v[0], v[1], if *dim == 3 { v[2] } else { 0.0 }]);
                }
                faces.extend(f.iter().map(|t| t.map(|x| x + base)));
            }
            RenderKind::Rigid { bodies } => {
                for (b, (tv, tf)) in bodies.iter().enumerate() {
                    let base = verts.len();
                    let off = p.offset + b * rigid::BODY_DOFS;
                    verts.extend(tv.iter().map(|&v| rigid::transform_point(q, off, v)));
                    faces.extend(tf.iter().map(|t| t.map(|x| x + base)));
                }
            }
        }
    }
    if faces.is_empty() {
        return Ok(None);
    }
    let mut s = String::with_capacity(32 * (verts.len() + faces.len()));
    for v in &verts {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in &faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    Ok(Some(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyframes_round_trip() {
        let keys = vec![vec![0.1, -2.0, 1e-17], vec![3.0, 4.5, -0.0]];
        assert_eq!(parse_keyframes(&write_keyframes(&keys)).unwrap(), keys);
    }

    #[test]
    fn keyframes_comments_and_commas() {
        let k = parse_keyframes("# header\n1, 2 ,3\n\n4 5 6 # tail\n").unwrap();
        assert_eq!(k, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert!(parse_keyframes("1 2\n3\n").is_err());
        assert!(parse_keyframes("1 x\n").is_err());
        assert!(parse_keyframes("1 nan\n").is_err());
    }
}
