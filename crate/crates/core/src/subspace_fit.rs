//! Data-free subspace fitting.
//!
//! The loss for a batch of latents `z_i ~ N(0, I)` is
//!
//! ```text
//! mean_i E(f(z_i)) + lambda * mean_{i<j} log(|f(z_i) - f(z_j)|_M / (sigma |z_i - z_j|))^2
//! ```
//!
//! where `f = rho * MLP + (1 - rho) * q_seed` blends the network with a seed
//! configuration early in training. The blend factor `rho` grows linearly and
//! reaches 1 at `seed_knee * total_steps`; the scale of the isometry term is
//! multiplied by the same `rho`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{init_mlp, ForwardPass, MlpParams};
use crate::subspace::{Fingerprint, SubspaceMap, SubspaceModel, TrainSummary};
use crate::systems::SystemDef;

/// Latent pairs closer than this are skipped by the isometry estimator.
pub const LATENT_PAIR_FLOOR: f64 = 1e-12;
/// Bounds applied to the distance ratio before taking its logarithm.
pub const RATIO_CLAMP: (f64, f64) = (1e-8, 1e8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dim: usize,
    /// Checked against the system when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_dim: Option<usize>,
    pub lambda: f64,
    pub sigma: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    pub total_steps: u64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::lr_decay_every")]
    pub lr_decay_every: u64,
    #[serde(default = "defaults::lr_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "defaults::log_every")]
    pub log_every: u64,
    #[serde(default = "defaults::hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "defaults::hidden_width")]
    pub hidden_width: usize,
    /// Fraction of training after which the seed blend is fully off.
    #[serde(default = "defaults::seed_knee")]
    pub seed_knee: f64,
    #[serde(default = "defaults::energy_ceiling")]
    pub energy_ceiling: f64,
    /// Consecutive non-finite steps tolerated before aborting.
    #[serde(default = "defaults::divergence_window")]
    pub divergence_window: u64,
    /// Checkpoint interval in steps; 0 disables intermediate checkpoints.
    #[serde(default)]
    pub checkpoint_every: u64,
}

mod defaults {
    pub fn batch_size() -> usize {
        32
    }
    pub fn learning_rate() -> f64 {
        1e-4
    }
    pub fn lr_decay_every() -> u64 {
        250_000
    }
    pub fn lr_decay_factor() -> f64 {
        0.5
    }
    pub fn log_every() -> u64 {
        100
    }
    pub fn hidden_layers() -> usize {
        5
    }
    pub fn hidden_width() -> usize {
        128
    }
    pub fn seed_knee() -> f64 {
        0.9
    }
    pub fn energy_ceiling() -> f64 {
        1e10
    }
    pub fn divergence_window() -> u64 {
        50
    }
}

impl TrainConfig {
    /// Config with the stated essentials and defaults for the rest.
    pub fn new(latent_dim: usize, lambda: f64, sigma: f64, total_steps: u64) -> Self {
        TrainConfig {
            latent_dim,
            condition_dim: None,
            lambda,
            sigma,
            batch_size: defaults::batch_size(),
            total_steps,
            learning_rate: defaults::learning_rate(),
            lr_decay_every: defaults::lr_decay_every(),
            lr_decay_factor: defaults::lr_decay_factor(),
            rng_seed: 0,
            log_every: defaults::log_every(),
            hidden_layers: defaults::hidden_layers(),
            hidden_width: defaults::hidden_width(),
            seed_knee: defaults::seed_knee(),
            energy_ceiling: defaults::energy_ceiling(),
            divergence_window: defaults::divergence_window(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, rule: &str| Err(Error::config(format!("train.{field}: {rule}")));
        if self.latent_dim < 1 {
            return fail("latent_dim", "must be at least 1");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail("lambda", "must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail("sigma", "must be positive");
        }
        if self.batch_size < 2 {
            return fail("batch_size", "must be at least 2");
        }
        if self.total_steps == 0 {
            return fail("total_steps", "must be positive; zero steps would leave only the seed");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be positive");
        }
        if self.lr_decay_every == 0 {
            return fail("lr_decay_every", "must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return fail("lr_decay_factor", "must lie in (0, 1]");
        }
        if self.log_every == 0 {
            return fail("log_every", "must be positive");
        }
        if self.hidden_width == 0 {
            return fail("hidden_width", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.seed_knee) {
            return fail("seed_knee", "must lie in [0, 1]");
        }
        if !(self.energy_ceiling > 0.0) {
            return fail("energy_ceiling", "must be positive");
        }
        if self.divergence_window == 0 {
            return fail("divergence_window", "must be positive");
        }
        Ok(())
    }

    /// Layer widths `[d + m, w, ..., w, n]`.
    pub fn layer_sizes(&self, m: usize, n: usize) -> Vec<usize> {
        let mut sizes = vec![self.latent_dim + m];
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        sizes.push(n);
        sizes
    }

    /// Blend factor at `step`.
    pub fn rho(&self, step: u64) -> f64 {
        let knee = self.seed_knee * self.total_steps as f64;
        if knee <= 0.0 {
            1.0
        } else {
            (step as f64 / knee).min(1.0)
        }
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let decays = (step / self.lr_decay_every) as i32;
        self.learning_rate * self.lr_decay_factor.powi(decays)
    }
}

/// One latent/condition sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub c: Vec<f64>,
}

/// Draws `batch` standard normal latents. One condition vector is drawn per
/// batch and shared by all samples, so that every pair compared by the
/// isometry term lives in the same conditional subspace.
pub fn sample_latent_batch<R: Rng + ?Sized>(
    rng: &mut R,
    batch: usize,
    latent_dim: usize,
    condition_sampler: impl FnOnce(&mut R) -> Vec<f64>,
) -> Result<Vec<LatentSample>> {
    if batch < 2 {
        return Err(Error::config("batch size must be at least 2"));
    }
    let c = condition_sampler(rng);
    Ok((0..batch)
        .map(|_| LatentSample {
            z: (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect(),
            c: c.clone(),
        })
        .collect())
}

/// `rho * u + (1 - rho) * q_seed`.
pub fn blend(u: &[f64], rho: f64, q_seed: &[f64]) -> Vec<f64> {
    if rho == 1.0 {
        return u.to_vec();
    }
    u.iter().zip(q_seed).map(|(u, s)| rho * u + (1.0 - rho) * s).collect()
}

pub fn scheduled_map(mlp: &MlpParams, z: &[f64], c: &[f64], rho: f64, q_seed: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config(format!("blend factor {rho} outside [0, 1]")));
    }
    let input: Vec<f64> = z.iter().chain(c).copied().collect();
    if rho == 0.0 {
        return Ok(q_seed.to_vec());
    }
    let u = mlp.forward(&input)?;
    Error::check_dim("seed configuration", u.len(), q_seed.len())?;
    Ok(blend(&u, rho, q_seed))
}

/// Isometry penalty value, its gradient with respect to each output, and the
/// per-pair `|log ratio|` values.
#[derive(Debug, Clone)]
pub struct PenaltyEval {
    pub value: f64,
    pub output_grads: Vec<Vec<f64>>,
    pub abs_log_ratios: Vec<f64>,
    pub skipped_pairs: usize,
    pub clamped_pairs: usize,
}

pub fn isometry_penalty(outputs: &[Vec<f64>], zs: &[Vec<f64>], mass_diag: &[f64], sigma: f64) -> Result<f64> {
    Ok(isometry_penalty_with_grad(outputs, zs, mass_diag, sigma)?.value)
}

pub fn isometry_penalty_with_grad(
    outputs: &[Vec<f64>],
    zs: &[Vec<f64>],
    mass_diag: &[f64],
    sigma: f64,
) -> Result<PenaltyEval> {
    Error::check_dim("isometry penalty samples", outputs.len(), zs.len())?;
    if outputs.len() < 2 {
        return Err(Error::config("isometry penalty needs at least two samples"));
    }
    if !(sigma > 0.0) {
        return Err(Error::config("isometry penalty needs sigma > 0"));
    }
    for o in outputs {
        Error::check_dim("isometry penalty output", mass_diag.len(), o.len())?;
    }
    let n = mass_diag.len();
    let mut grads = vec![vec![0.0; n]; outputs.len()];
    let mut logs = Vec::with_capacity(outputs.len() * (outputs.len() - 1) / 2);
    let (mut sum, mut skipped, mut clamped) = (0.0, 0, 0);
    let mut diff = vec![0.0; n];
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            let dz = zs[i].iter().zip(&zs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dz < LATENT_PAIR_FLOOR {
                skipped += 1;
                continue;
            }
            let mut df2 = 0.0;
            for k in 0..n {
                diff[k] = outputs[i][k] - outputs[j][k];
                df2 += mass_diag[k] * diff[k] * diff[k];
            }
            let raw = df2.sqrt() / (sigma * dz);
            let ratio = raw.clamp(RATIO_CLAMP.0, RATIO_CLAMP.1);
            let l = ratio.ln();
            sum += l * l;
            logs.push(l.abs());
            if ratio != raw || !raw.is_finite() {
                clamped += 1;
                continue;
            }
            // d(l^2)/d f_i = 2 l M (f_i - f_j) / |f_i - f_j|_M^2
            let s = 2.0 * l / df2;
            for k in 0..n {
                let g = s * mass_diag[k] * diff[k];
                grads[i][k] += g;
                grads[j][k] -= g;
            }
        }
    }
    let used = logs.len();
    if used == 0 {
        return Err(Error::numerical("every latent pair in the batch was degenerate"));
    }
    let inv = 1.0 / used as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= inv);
    Ok(PenaltyEval {
        value: sum * inv,
        output_grads: grads,
        abs_log_ratios: logs,
        skipped_pairs: skipped,
        clamped_pairs: clamped,
    })
}

/// Median of a nonempty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub energy_mean: f64,
    pub penalty: f64,
    pub median_abs_log_ratio: f64,
    pub clamped_energies: usize,
    pub grads: MlpParams,
}

/// Loss and parameter gradient for one batch.
///
/// The isometry term is evaluated on the raw network outputs with scale
/// `sigma`: blending scales both distances by `rho`, which cancels.
pub fn subspace_loss(
    mlp: &MlpParams,
    batch: &[LatentSample],
    sys: &SystemDef,
    lambda: f64,
    sigma: f64,
    rho: f64,
    energy_ceiling: f64,
) -> Result<LossEval> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config(format!("blend factor {rho} outside [0, 1]")));
    }
    Error::check_dim("network output vs system", sys.n(), mlp.output_dim())?;
    let b = batch.len();
    let passes: Vec<ForwardPass> = batch
        .iter()
        .map(|s| mlp.forward_pass(&s.z.iter().chain(&s.c).copied().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let q_seed = sys.q_seed();

    let mut cot = vec![vec![0.0; sys.n()]; b];
    let (mut energy_sum, mut clamped) = (0.0, 0);
    for (i, (pass, s)) in passes.iter().zip(batch).enumerate() {
        let q = blend(pass.output(), rho, q_seed);
        let (e, g) = sys.energy_and_gradient(&q, &s.c);
        if !e.is_finite() || e > energy_ceiling || g.iter().any(|v| !v.is_finite()) {
            energy_sum += energy_ceiling;
            clamped += 1;
            continue;
        }
        energy_sum += e;
        let scale = rho / b as f64;
        for (c, gv) in cot[i].iter_mut().zip(&g) {
            *c = scale * gv;
        }
    }
    let energy_mean = energy_sum / b as f64;

    let (penalty, med) = if lambda != 0.0 {
        let outs: Vec<Vec<f64>> = passes.iter().map(|p| p.output().to_vec()).collect();
        let zs: Vec<Vec<f64>> = batch.iter().map(|s| s.z.clone()).collect();
        let pe = isometry_penalty_with_grad(&outs, &zs, sys.mass_diag(), sigma)?;
        for (c, g) in cot.iter_mut().zip(&pe.output_grads) {
            for (cv, gv) in c.iter_mut().zip(g) {
                *cv += lambda * gv;
            }
        }
        (pe.value, median(&pe.abs_log_ratios))
    } else {
        (0.0, f64::NAN)
    };

    let mut grads = mlp.zeros_like();
    for (pass, c) in passes.iter().zip(&cot) {
        if c.iter().any(|v| *v != 0.0) {
            pass.backward(mlp, c, Some(&mut grads))?;
        }
    }
    Ok(LossEval {
        loss: energy_mean + lambda * penalty,
        energy_mean,
        penalty,
        median_abs_log_ratio: med,
        clamped_energies: clamped,
        grads,
    })
}

/// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8` and bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        Error::check_dim("Adam parameters", self.m.len(), params.len())?;
        Error::check_dim("Adam gradients", self.m.len(), grads.len())?;
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g;
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub step: u64,
    pub loss: f64,
    pub energy: f64,
    pub penalty: f64,
    pub median_abs_log_ratio: f64,
    pub rho: f64,
    pub lr: f64,
    pub clamped_energies: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTelemetry {
    pub records: Vec<TelemetryRecord>,
    pub clamped_energies: u64,
    pub steps: u64,
}

impl TrainTelemetry {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Hooks called during training.
pub trait TrainObserver {
    fn on_record(&mut self, _record: &TelemetryRecord) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _step: u64, _mlp: &MlpParams) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

pub fn train(sys: &SystemDef, cfg: &TrainConfig) -> Result<(SubspaceModel, TrainTelemetry)> {
    train_with(sys, cfg, &mut ())
}

pub fn train_with(sys: &SystemDef, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<(SubspaceModel, TrainTelemetry)> {
    cfg.validate()?;
    let m = sys.condition_dim();
    if let Some(cm) = cfg.condition_dim {
        if cm != m {
            return Err(Error::config(format!(
                "train.condition_dim is {cm} but system '{}' declares {m} conditions",
                sys.name()
            )));
        }
    }
    let mut mlp = init_mlp(&cfg.layer_sizes(m, sys.n()), cfg.rng_seed)?;
    // separate stream from the initializer
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(mlp.num_params());
    let mut telemetry = TrainTelemetry::default();

    let (mut win_loss, mut win_energy, mut win_pen, mut win_ratio, mut win_n) = (0.0, 0.0, 0.0, Vec::new(), 0u64);
    let mut win_clamped = 0u64;
    let mut bad_streak = 0u64;
    for step in 0..cfg.total_steps {
        let rho = cfg.rho(step);
        let lr = cfg.learning_rate_at(step);
        let batch = sample_latent_batch(&mut rng, cfg.batch_size, cfg.latent_dim, |r| sys.sample_condition(r))?;
        let eval = subspace_loss(&mlp, &batch, sys, cfg.lambda, cfg.sigma, rho, cfg.energy_ceiling)?;
        let finite = eval.loss.is_finite() && eval.grads.as_slice().iter().all(|g| g.is_finite());
        if finite {
            bad_streak = 0;
            adam.step(mlp.as_mut_slice(), eval.grads.as_slice(), lr)?;
        } else {
            bad_streak += 1;
            if bad_streak >= cfg.divergence_window {
                return Err(Error::numerical(format!(
                    "training diverged: loss non-finite for {bad_streak} consecutive steps ending at step {step} \
                     (rho = {rho}, last energy mean = {}, penalty = {}); try a smaller learning rate or larger lambda",
                    eval.energy_mean, eval.penalty
                )));
            }
        }
        telemetry.clamped_energies += eval.clamped_energies as u64;
        win_clamped += eval.clamped_energies as u64;
        win_loss += eval.loss;
        win_energy += eval.energy_mean;
        win_pen += eval.penalty;
        win_ratio.push(eval.median_abs_log_ratio);
        win_n += 1;

        let last = step + 1 == cfg.total_steps;
        if (step + 1) % cfg.log_every == 0 || last {
            let k = win_n as f64;
            let rec = TelemetryRecord {
                step: step + 1,
                loss: win_loss / k,
                energy: win_energy / k,
                penalty: win_pen / k,
                median_abs_log_ratio: median(&win_ratio),
                rho,
                lr,
                clamped_energies: win_clamped,
            };
            observer.on_record(&rec)?;
            telemetry.records.push(rec);
            (win_loss, win_energy, win_pen, win_n, win_clamped) = (0.0, 0.0, 0.0, 0, 0);
            win_ratio.clear();
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && !last {
            observer.on_checkpoint(step + 1, &mlp)?;
        }
    }
    telemetry.steps = cfg.total_steps;

    let cfg_text = toml::to_string(cfg).map_err(|e| Error::config(e.to_string()))?;
    let mut model = SubspaceModel::new(mlp, cfg.latent_dim, m, cfg.sigma, Fingerprint::new(sys.n(), sys.name(), &cfg_text))?;
    let last = telemetry.records.last().expect("at least one record");
    model.summary = TrainSummary {
        steps: cfg.total_steps,
        final_energy: last.energy,
        final_penalty: last.penalty,
        median_abs_log_ratio: last.median_abs_log_ratio,
        clamped_energies: telemetry.clamped_energies,
    };
    Ok((model, telemetry))
}

/// Distribution of the ratio `|f(z) - f(z')|_M / (sigma |z - z'|)` over random pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioStats {
    pub pairs: usize,
    pub median_ratio: f64,
    pub q10: f64,
    pub q90: f64,
    pub median_abs_log_ratio: f64,
}

impl RatioStats {
    /// Ratios far from 1 suggest increasing lambda.
    pub fn needs_larger_lambda(&self) -> bool {
        !(self.median_abs_log_ratio < 0.5)
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn ratio_diagnostics<F: SubspaceMap + ?Sized, R: Rng + ?Sized>(
    map: &F,
    sigma: f64,
    sys: &SystemDef,
    pairs: usize,
    rng: &mut R,
) -> Result<RatioStats> {
    if pairs == 0 {
        return Err(Error::config("ratio diagnostics need at least one pair"));
    }
    if !(sigma > 0.0) {
        return Err(Error::config("ratio diagnostics need sigma > 0"));
    }
    Error::check_dim("map output vs system", sys.n(), map.output_dim())?;
    let d = map.latent_dim();
    let mut ratios = Vec::with_capacity(pairs);
    while ratios.len() < pairs {
        let c = if map.condition_dim() > 0 { sys.sample_condition(rng) } else { Vec::new() };
        let z1: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let z2: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let dz = z1.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dz < LATENT_PAIR_FLOOR {
            continue;
        }
        let (f1, f2) = (map.eval(&z1, &c)?, map.eval(&z2, &c)?);
        let diff: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
        ratios.push(sys.mass_norm_sq(&diff).sqrt() / (sigma * dz));
    }
    ratios.sort_by(f64::total_cmp);
    let logs: Vec<f64> = ratios.iter().map(|r| r.max(RATIO_CLAMP.0).ln().abs()).collect();
    Ok(RatioStats {
        pairs,
        median_ratio: median(&ratios),
        q10: quantile(&ratios, 0.1),
        q90: quantile(&ratios, 0.9),
        median_abs_log_ratio: median(&logs),
    })
}
