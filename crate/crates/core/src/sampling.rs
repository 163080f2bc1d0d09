//! Drawing configurations from a fitted subspace.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::subspace::SubspaceMap;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub z: Vec<f64>,
    pub q: Vec<f64>,
}

/// Largest per-dimension amplitude of a sinusoidal latent path.
pub const MAX_SINUSOID_AMPLITUDE: f64 = 2.0;

/// `q_i = f(z_i, c)` with `z_i ~ N(0, stddev^2 I)`.
pub fn sample_states<F: SubspaceMap + ?Sized, R: Rng + ?Sized>(
    map: &F,
    count: usize,
    latent_stddev: f64,
    c: &[f64],
    rng: &mut R,
) -> Result<Vec<StateSample>> {
    if !(latent_stddev >= 0.0 && latent_stddev.is_finite()) {
        return Err(Error::config("latent standard deviation must be finite and nonnegative"));
    }
    (0..count)
        .map(|_| {
            let z: Vec<f64> = (0..map.latent_dim())
                .map(|_| latent_stddev * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let q = map.eval(&z, c)?;
            Ok(StateSample { z, q })
        })
        .collect()
}

/// Latent path with `z_k(t) = a_k sin(2 pi w_k t + phi_k)` for `t` in
/// `[0, 1)`, amplitude `a_k` uniform in `(0, 2]`, `w_k` uniform in
/// `[0.5, 3]` cycles and uniform phase.
pub fn sinusoidal_latents<R: Rng + ?Sized>(latent_dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let params: Vec<(f64, f64, f64)> = (0..latent_dim)
        .map(|_| {
            let a = MAX_SINUSOID_AMPLITUDE * (1.0 - rng.random::<f64>());
            (a, rng.random_range(0.5..=3.0), rng.random_range(0.0..TAU))
        })
        .collect();
    (0..count)
        .map(|i| {
            let t = i as f64 / count as f64;
            params.iter().map(|&(a, w, phi)| a * (TAU * w * t + phi).sin()).collect()
        })
        .collect()
}

pub fn sample_sinusoidal<F: SubspaceMap + ?Sized, R: Rng + ?Sized>(
    map: &F,
    count: usize,
    c: &[f64],
    rng: &mut R,
) -> Result<Vec<StateSample>> {
    sinusoidal_latents(map.latent_dim(), count, rng)
        .into_iter()
        .map(|z| Ok(StateSample { q: map.eval(&z, c)?, z }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::AffineSubspace;
    use nalgebra::DMatrix;
    use rand::SeedableRng;

    fn map() -> AffineSubspace {
        AffineSubspace::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]), vec![0.5, -0.5], 1.0).unwrap()
    }

    #[test]
    fn empty_and_degenerate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(sample_states(&map(), 0, 1.0, &[], &mut rng).unwrap().is_empty());
        for s in sample_states(&map(), 20, 0.0, &[], &mut rng).unwrap() {
            assert_eq!(s.q, vec![0.5, -0.5]);
        }
    }

    #[test]
    fn sinusoid_amplitudes_bounded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s = sample_sinusoidal(&map(), 1000, &[], &mut rng).unwrap();
        assert_eq!(s.len(), 1000);
        assert!(s.iter().flat_map(|s| &s.z).all(|z| z.abs() <= 2.0));
    }
}
