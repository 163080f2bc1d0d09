//! Uniform Catmull-Rom interpolation of latent keyframes.

use crate::error::{Error, Result};

fn check(keys: &[Vec<f64>], cyclic: bool) -> Result<()> {
    let need = if cyclic { 4 } else { 2 };
    if keys.len() < need {
        return Err(Error::config(format!(
            "{} Catmull-Rom path needs at least {need} keyframes, got {}",
            if cyclic { "cyclic" } else { "open" },
            keys.len()
        )));
    }
    let d = keys[0].len();
    for k in keys {
        Error::check_dim("keyframe", d, k.len())?;
    }
    Ok(())
}

/// Point on the segment from `p1` to `p2` at parameter `t` in `[0, 1]`.
pub fn catmull_rom_segment(p0: &[f64], p1: &[f64], p2: &[f64], p3: &[f64], t: f64) -> Vec<f64> {
    let (t2, t3) = (t * t, t * t * t);
    (0..p1.len())
        .map(|i| {
            0.5 * (2.0 * p1[i]
                + (p2[i] - p0[i]) * t
                + (2.0 * p0[i] - 5.0 * p1[i] + 4.0 * p2[i] - p3[i]) * t2
                + (3.0 * p1[i] - p0[i] - 3.0 * p2[i] + p3[i]) * t3)
        })
        .collect()
}

fn neighbors(keys: &[Vec<f64>], seg: usize, cyclic: bool) -> [&[f64]; 4] {
    let k = keys.len() as isize;
    let at = |i: isize| -> &[f64] {
        let j = if cyclic { i.rem_euclid(k) } else { i.clamp(0, k - 1) };
        &keys[j as usize]
    };
    let s = seg as isize;
    [at(s - 1), at(s), at(s + 1), at(s + 2)]
}

/// Number of segments: `k` when cyclic, `k - 1` otherwise.
pub fn segment_count(num_keys: usize, cyclic: bool) -> usize {
    if cyclic {
        num_keys
    } else {
        num_keys.saturating_sub(1)
    }
}

/// Evaluates the path at global parameter `u` in `[0, segments]`; segment
/// `s` covers `[s, s + 1]`.
pub fn catmull_rom_eval(keys: &[Vec<f64>], cyclic: bool, u: f64) -> Result<Vec<f64>> {
    check(keys, cyclic)?;
    let segs = segment_count(keys.len(), cyclic);
    let u = u.clamp(0.0, segs as f64);
    let seg = (u.floor() as usize).min(segs - 1);
    let [p0, p1, p2, p3] = neighbors(keys, seg, cyclic);
    Ok(catmull_rom_segment(p0, p1, p2, p3, u - seg as f64))
}

/// Samples the path through `keys`. Open paths clamp the end tangents by
/// repeating the end keyframes and return `(k - 1) * samples_per_segment + 1`
/// points ending at the last keyframe. Cyclic paths wrap around and return
/// `k * samples_per_segment` points; the next sample would be the start again.
pub fn catmull_rom_path(keys: &[Vec<f64>], samples_per_segment: usize, cyclic: bool) -> Result<Vec<Vec<f64>>> {
    check(keys, cyclic)?;
    if samples_per_segment == 0 {
        return Err(Error::config("samples_per_segment must be positive"));
    }
    let segs = segment_count(keys.len(), cyclic);
    let mut out = Vec::with_capacity(segs * samples_per_segment + 1);
    for seg in 0..segs {
        let [p0, p1, p2, p3] = neighbors(keys, seg, cyclic);
        for j in 0..samples_per_segment {
            out.push(catmull_rom_segment(p0, p1, p2, p3, j as f64 / samples_per_segment as f64));
        }
    }
    if !cyclic {
        out.push(keys[keys.len() - 1].clone());
    }
    Ok(out)
}
