//! `NSUB` binary model container.
//!
//! Layout, all integers and floats little endian:
//!
//! ```text
//! "NSUB"            4 bytes
//! version           u32 (= 1)
//! n, d, m           u64 x 3
//! sigma             f64
//! layer count L     u64, then L+1 layer widths as u64
//! parameters        f64 x P, per layer: row-major weights then bias
//! system name       u64 byte length + UTF-8
//! config hash       u64
//! summary           steps u64, final energy f64, final penalty f64,
//!                   median |log ratio| f64, clamped energies u64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::mlp::MlpParams;
use crate::subspace::{Fingerprint, SubspaceModel, TrainSummary};

pub const MAGIC: &[u8; 4] = b"NSUB";
pub const FORMAT_VERSION: u32 = 1;

const MAX_LAYERS: u64 = 1024;
const MAX_WIDTH: u64 = 1 << 28;

pub fn encode_model(model: &SubspaceModel) -> Vec<u8> {
    let sizes = model.mlp.layer_sizes();
    let mut out = Vec::with_capacity(64 + 8 * (sizes.len() + model.mlp.num_params()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [model.n(), model.latent_dim, model.condition_dim] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&model.sigma.to_le_bytes());
    out.extend_from_slice(&((sizes.len() - 1) as u64).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for &p in model.mlp.as_slice() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let name = model.fingerprint.system.as_bytes();
    out.extend_from_slice(&(name.len() as u64).to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&model.fingerprint.config_hash.to_le_bytes());
    let s = &model.summary;
    out.extend_from_slice(&s.steps.to_le_bytes());
    for v in [s.final_energy, s.final_penalty, s.median_abs_log_ratio] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&s.clamped_energies.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < k {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str, max: u64) -> Result<usize> {
        let v = self.u64(what)?;
        if v > max {
            return Err(Error::Format(format!("implausible {what}: {v}")));
        }
        Ok(v as usize)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<SubspaceModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not an NSUB checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (this build reads version {FORMAT_VERSION})"
        )));
    }
    let n = r.usize("n", MAX_WIDTH)?;
    let d = r.usize("latent dimension", MAX_WIDTH)?;
    let m = r.usize("condition dimension", MAX_WIDTH)?;
    let sigma = r.f64("sigma")?;
    let layers = r.usize("layer count", MAX_LAYERS)?;
    if layers == 0 {
        return Err(Error::Format("checkpoint has no layers".into()));
    }
    let sizes: Vec<usize> = (0..=layers).map(|_| r.usize("layer width", MAX_WIDTH)).collect::<Result<_>>()?;
    if sizes[0] != d + m || sizes[layers] != n {
        return Err(Error::Format(format!(
            "layer widths {sizes:?} disagree with dims n={n}, d={d}, m={m}"
        )));
    }
    let count: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let payload = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("parameter count overflow".into()))?, "parameters")?;
    let data: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let name_len = r.usize("system name length", 1 << 20)?;
    let name = std::str::from_utf8(r.take(name_len, "system name")?)
        .map_err(|_| Error::Format("system name is not UTF-8".into()))?
        .to_string();
    let hash = r.u64("config hash")?;
    let summary = TrainSummary {
        steps: r.u64("summary")?,
        final_energy: r.f64("summary")?,
        final_penalty: r.f64("summary")?,
        median_abs_log_ratio: r.f64("summary")?,
        clamped_energies: r.u64("summary")?,
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    let mlp = MlpParams::from_parts(sizes, data).map_err(|e| Error::Format(e.to_string()))?;
    let fingerprint = Fingerprint {
        n,
        system: name,
        config_hash: hash,
    };
    let mut model = SubspaceModel::new(mlp, d, m, sigma, fingerprint).map_err(|e| Error::Format(e.to_string()))?;
    model.summary = summary;
    Ok(model)
}

/// Writes through a temporary file so a failed write never leaves a partial checkpoint.
pub fn save_model(model: &SubspaceModel, path: &Path) -> Result<()> {
    let tmp = path.with_extension("nsub.partial");
    std::fs::write(&tmp, encode_model(model))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SubspaceModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::config(format!("cannot read model '{}': {e}", path.display())))?;
    decode_model(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
