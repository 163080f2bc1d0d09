//! Subspace maps `f: (z, c) -> q` and the trained-model container.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mlp::MlpParams;
use crate::systems::SystemDef;

/// A differentiable map from latent coordinates (plus conditions) to
/// configurations.
pub trait SubspaceMap {
    fn latent_dim(&self) -> usize;
    fn condition_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, z: &[f64], c: &[f64]) -> Result<Vec<f64>>;
    /// Returns `(f(z, c), J_z^T cot)`.
    fn vjp_latent(&self, z: &[f64], c: &[f64], cot: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Identifies the system and configuration a model was trained for.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fingerprint {
    pub n: usize,
    pub system: String,
    pub config_hash: u64,
}

impl Fingerprint {
    pub fn new(n: usize, system: impl Into<String>, config_text: &str) -> Self {
        Fingerprint {
            n,
            system: system.into(),
            config_hash: config_hash(config_text),
        }
    }
}

/// First 8 bytes of the SHA-256 digest, little endian.
pub fn config_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Final numbers from the training run that produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_energy: f64,
    pub final_penalty: f64,
    pub median_abs_log_ratio: f64,
    pub clamped_energies: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub mlp: MlpParams,
    pub latent_dim: usize,
    pub condition_dim: usize,
    pub sigma: f64,
    pub fingerprint: Fingerprint,
    pub summary: TrainSummary,
}

impl SubspaceModel {
    pub fn new(mlp: MlpParams, latent_dim: usize, condition_dim: usize, sigma: f64, fingerprint: Fingerprint) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::config("latent dimension must be at least 1"));
        }
        Error::check_dim("model input width", latent_dim + condition_dim, mlp.input_dim())?;
        Error::check_dim("model output width", fingerprint.n, mlp.output_dim())?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be finite and nonnegative, got {sigma}")));
        }
        Ok(SubspaceModel {
            mlp,
            latent_dim,
            condition_dim,
            sigma,
            fingerprint,
            summary: TrainSummary::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Errors unless the model was built for a system of this shape.
    pub fn check_system(&self, sys: &SystemDef) -> Result<()> {
        Error::check_dim("system DOFs vs model output", self.n(), sys.n())?;
        if self.condition_dim != 0 {
            Error::check_dim("system conditions vs model", self.condition_dim, sys.condition_dim())?;
        }
        Ok(())
    }

    /// Network input `[z, c]`.
    pub fn input(&self, z: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("latent vector", self.latent_dim, z.len())?;
        Error::check_dim("condition vector", self.condition_dim, c.len())?;
        Ok(z.iter().chain(c).copied().collect())
    }
}

impl SubspaceMap for SubspaceModel {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    fn output_dim(&self) -> usize {
        self.n()
    }

    fn eval(&self, z: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        self.mlp.forward(&self.input(z, c)?)
    }

    fn vjp_latent(&self, z: &[f64], c: &[f64], cot: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let pass = self.mlp.forward_pass(&self.input(z, c)?)?;
        let mut g = pass.backward(&self.mlp, cot, None)?;
        g.truncate(self.latent_dim);
        Ok((pass.into_output(), g))
    }
}

/// `f(z) = A z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub sigma: f64,
}

impl AffineSubspace {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>, sigma: f64) -> Result<Self> {
        Error::check_dim("affine offset", a.nrows(), b.len())?;
        if a.ncols() == 0 {
            return Err(Error::config("affine subspace needs at least one column"));
        }
        Ok(AffineSubspace { a, b, sigma })
    }

    /// `f = id`, with `d = n`.
    pub fn identity(n: usize) -> Self {
        AffineSubspace {
            a: DMatrix::identity(n, n),
            b: vec![0.0; n],
            sigma: 1.0,
        }
    }

    /// Largest entry of `|A^T M A - sigma^2 I|`.
    pub fn constraint_residual(&self, mass_diag: &[f64]) -> f64 {
        let ma = DMatrix::from_fn(self.a.nrows(), self.a.ncols(), |r, c| mass_diag[r] * self.a[(r, c)]);
        let g = self.a.transpose() * ma - DMatrix::identity(self.a.ncols(), self.a.ncols()) * self.sigma.powi(2);
        g.amax()
    }

    /// The same map as a single-layer network, for the checkpoint format.
    pub fn to_model(&self, fingerprint: Fingerprint) -> Result<SubspaceModel> {
        let (n, d) = self.a.shape();
        let mut data = Vec::with_capacity(n * d + n);
        for r in 0..n {
            data.extend(self.a.row(r).iter());
        }
        data.extend(&self.b);
        let mlp = MlpParams::from_parts(vec![d, n], data)?;
        SubspaceModel::new(mlp, d, 0, self.sigma, fingerprint)
    }
}

impl SubspaceMap for AffineSubspace {
    fn latent_dim(&self) -> usize {
        self.a.ncols()
    }

    fn condition_dim(&self) -> usize {
        0
    }

    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, z: &[f64], _c: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("latent vector", self.a.ncols(), z.len())?;
        let q = &self.a * DVector::from_column_slice(z) + DVector::from_column_slice(&self.b);
        Ok(q.as_slice().to_vec())
    }

    fn vjp_latent(&self, z: &[f64], c: &[f64], cot: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Error::check_dim("cotangent", self.a.nrows(), cot.len())?;
        let g = self.a.transpose() * DVector::from_column_slice(cot);
        Ok((self.eval(z, c)?, g.as_slice().to_vec()))
    }
}
