use std::fs;
use std::io::{LineWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nsub_core::io::config::RunSpec;
use nsub_core::io::export::{export_web, web_fixture};
use nsub_core::io::formats::{configuration_obj, parse_keyframes, states_jsonl, trajectory_jsonl};
use nsub_core::io::{load_model, parse_run_spec, save_model};
use nsub_core::latent_sim::{simulate, LatentSimState};
use nsub_core::modal::{linear_modes, quadratic_loss_oracle};
use nsub_core::mlp::MlpParams;
use nsub_core::sampling::{sample_sinusoidal, sample_states, StateSample};
use nsub_core::spline::{catmull_rom_eval, catmull_rom_path, segment_count};
use nsub_core::subspace::{Fingerprint, TrainSummary};
use nsub_core::subspace_fit::{ratio_diagnostics, train_with, TelemetryRecord, TrainObserver};
use nsub_core::systems::build_system;
use nsub_core::{Error, Result, SubspaceModel, SystemDef};

#[derive(Parser, Debug)]
#[command(name = "nsub", version, about = "Fit, explore and simulate neural reduced-order subspaces")]
struct Cli {
    /// Random seed (training seed for `train`, sampling seed elsewhere).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a subspace and write model.nsub, telemetry.jsonl and the effective config.
    Train { spec: PathBuf },
    /// Linear modal subspace about the rest state nearest the seed.
    Modes {
        spec: PathBuf,
        #[arg(short = 'd', long = "latent-dim")]
        latent_dim: Option<usize>,
        #[arg(short = 's', long)]
        sigma: Option<f64>,
    },
    /// Draw configurations from a model.
    Sample {
        model: PathBuf,
        #[arg(short = 'n', long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 1.0)]
        stddev: f64,
        /// Sample along a random sinusoidal latent path instead.
        #[arg(long)]
        sinusoidal: bool,
        /// Comma-separated condition vector.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        condition: Vec<f64>,
        /// Also write one OBJ per sample for this run spec.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Latent implicit Euler from rest at z = 0.
    Simulate {
        model: PathBuf,
        spec: PathBuf,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Condition keyframes, spread evenly over the run.
        #[arg(long)]
        keyframes: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z0: Vec<f64>,
        /// Write one OBJ per frame.
        #[arg(long)]
        obj: bool,
    },
    /// Catmull-Rom path through latent keyframes, mapped through the model.
    Interpolate {
        model: PathBuf,
        keyframes: PathBuf,
        #[arg(long, default_value_t = 16)]
        samples_per_segment: usize,
        /// Open path instead of a closed loop.
        #[arg(long)]
        open: bool,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        condition: Vec<f64>,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// JSON export for the browser explorer.
    ExportWeb {
        model: PathBuf,
        spec: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        /// Also write forward and spline test vectors here.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Distance-ratio statistics of a model over random latent pairs.
    Diagnose {
        model: PathBuf,
        spec: PathBuf,
        #[arg(long)]
        pairs: Option<usize>,
    },
}

struct Ctx {
    seed: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn out_dir(&self, default: &Path) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| default.to_path_buf());
        fs::create_dir_all(&dir).map_err(|e| Error::config(format!("cannot create output directory '{}': {e}", dir.display())))?;
        Ok(dir)
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.unwrap_or(0))
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::config(format!("cannot write '{}': {e}", path.display())))
}

fn load(spec_path: &Path) -> Result<(RunSpec, SystemDef)> {
    let spec = parse_run_spec(spec_path)?;
    let sys = build_system(&spec.system)?;
    Ok((spec, sys))
}

fn load_pair(model_path: &Path, spec_path: &Path) -> Result<(SubspaceModel, RunSpec, SystemDef)> {
    let model = load_model(model_path)?;
    let (spec, sys) = load(spec_path)?;
    model.check_system(&sys)?;
    Ok((model, spec, sys))
}

fn model_dir(model: &Path) -> PathBuf {
    match model.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn condition_for(model: &SubspaceModel, given: &[f64], sys: Option<&SystemDef>) -> Result<Vec<f64>> {
    if model.condition_dim == 0 {
        if !given.is_empty() {
            return Err(Error::config("--condition given but the model takes no conditions"));
        }
        return Ok(Vec::new());
    }
    if given.is_empty() {
        return match sys {
            Some(s) => Ok(s.default_condition()),
            None => Err(Error::config(format!(
                "model takes {} condition values; pass --condition",
                model.condition_dim
            ))),
        };
    }
    if given.len() != model.condition_dim {
        return Err(Error::config(format!(
            "--condition has {} values, model expects {}",
            given.len(),
            model.condition_dim
        )));
    }
    Ok(given.to_vec())
}

fn write_objs(dir: &Path, stem: &str, sys: &SystemDef, qs: &[&[f64]]) -> Result<usize> {
    let frames = dir.join("frames");
    fs::create_dir_all(&frames)?;
    let mut written = 0;
    for (i, q) in qs.iter().enumerate() {
        if let Some(obj) = configuration_obj(sys, q)? {
            write(&frames.join(format!("{stem}_{i:05}.obj")), obj)?;
            written += 1;
        }
    }
    Ok(written)
}

struct TrainWriter<'a> {
    ctx: &'a Ctx,
    telemetry: LineWriter<fs::File>,
    checkpoints: PathBuf,
    total: u64,
    template: (usize, usize, f64, Fingerprint),
}

impl TrainObserver for TrainWriter<'_> {
    fn on_record(&mut self, r: &TelemetryRecord) -> Result<()> {
        writeln!(self.telemetry, "{}", serde_json::to_string(r).expect("records serialize"))?;
        if !self.ctx.quiet {
            eprintln!(
                "step {:>8}/{}  loss {:.6e}  energy {:.6e}  penalty {:.4e}  |log ratio| {:.3}  rho {:.3}",
                r.step, self.total, r.loss, r.energy, r.penalty, r.median_abs_log_ratio, r.rho
            );
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, step: u64, mlp: &MlpParams) -> Result<()> {
        let (d, m, sigma, fp) = &self.template;
        let mut model = SubspaceModel::new(mlp.clone(), *d, *m, *sigma, fp.clone())?;
        model.summary = TrainSummary { steps: step, ..Default::default() };
        fs::create_dir_all(&self.checkpoints)?;
        save_model(&model, &self.checkpoints.join(format!("step_{step:09}.nsub")))
    }
}

fn cmd_train(ctx: &Ctx, spec_path: &Path) -> Result<()> {
    let (mut spec, sys) = load(spec_path)?;
    if let Some(seed) = ctx.seed {
        spec.train
            .as_mut()
            .ok_or_else(|| Error::config("run spec has no [train] table"))?
            .rng_seed = seed;
    }
    let cfg = spec.train_config()?.clone();
    let dir = ctx.out_dir(&spec.output.dir)?;
    spec.output.dir = dir.clone();
    write(&dir.join("effective_config.toml"), spec.to_toml())?;
    let hash = spec.config_hash();
    let fingerprint = Fingerprint {
        n: sys.n(),
        system: sys.name().to_string(),
        config_hash: hash,
    };
    let telemetry = fs::File::create(dir.join("telemetry.jsonl"))?;
    let mut observer = TrainWriter {
        ctx,
        telemetry: LineWriter::new(telemetry),
        checkpoints: dir.join("checkpoints"),
        total: cfg.total_steps,
        template: (cfg.latent_dim, sys.condition_dim(), cfg.sigma, fingerprint.clone()),
    };
    ctx.say(format!(
        "training '{}': n = {}, d = {}, m = {}, {} steps",
        sys.name(),
        sys.n(),
        cfg.latent_dim,
        sys.condition_dim(),
        cfg.total_steps
    ));
    let (mut model, tel) = train_with(&sys, &cfg, &mut observer)?;
    observer.telemetry.flush()?;
    model.fingerprint = fingerprint;
    let model_path = dir.join("model.nsub");
    save_model(&model, &model_path)?;
    let s = model.summary;
    ctx.say(format!(
        "final energy {:.6e}, penalty {:.4e}, median |log ratio| {:.4}, clamped energies {}",
        s.final_energy, s.final_penalty, s.median_abs_log_ratio, tel.clamped_energies
    ));
    ctx.say(format!("wrote {}", model_path.display()));
    Ok(())
}

fn cmd_modes(ctx: &Ctx, spec_path: &Path, d: Option<usize>, sigma: Option<f64>) -> Result<()> {
    let (mut spec, sys) = load(spec_path)?;
    let from_train = |f: fn(&nsub_core::TrainConfig) -> f64| spec.train.as_ref().map(f);
    let d = d
        .or(spec.modes.latent_dim)
        .or_else(|| from_train(|t| t.latent_dim as f64).map(|v| v as usize))
        .ok_or_else(|| Error::config("modes: latent dimension not given (-d or modes.latent_dim)"))?;
    let sigma = sigma
        .or(spec.modes.sigma)
        .or_else(|| from_train(|t| t.sigma))
        .ok_or_else(|| Error::config("modes: sigma not given (--sigma or modes.sigma)"))?;
    if d == 0 || d > sys.n() {
        return Err(Error::config(format!("modes: latent dimension must be in 1..={}", sys.n())));
    }
    if !(sigma > 0.0) {
        return Err(Error::config("modes: sigma must be positive"));
    }
    spec.modes.latent_dim = Some(d);
    spec.modes.sigma = Some(sigma);
    let dir = ctx.out_dir(&spec.output.dir)?;
    spec.output.dir = dir.clone();
    write(&dir.join("effective_config.toml"), spec.to_toml())?;
    let c = sys.default_condition();
    let sub = linear_modes(&sys, d, sigma, sys.q_seed(), &c, &spec.modes.lbfgs)?;
    let loss = quadratic_loss_oracle(&sub, &sys, &c)?;
    let model = sub.to_model(Fingerprint {
        n: sys.n(),
        system: sys.name().to_string(),
        config_hash: spec.config_hash(),
    })?;
    let path = dir.join("modes.nsub");
    save_model(&model, &path)?;
    ctx.say(format!(
        "rest energy {:.6e}, quadratic loss {:.6e}",
        sys.energy(&sub.b, &c),
        loss
    ));
    ctx.say(format!("wrote {}", path.display()));
    Ok(())
}

fn invocation(entries: &[(&str, String)]) -> String {
    let mut t = toml::Table::new();
    for (k, v) in entries {
        t.insert((*k).to_string(), toml::Value::String(v.clone()));
    }
    toml::to_string(&t).expect("tables serialize")
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    ctx: &Ctx,
    model_path: &Path,
    count: usize,
    stddev: f64,
    sinusoidal: bool,
    condition: &[f64],
    spec_path: Option<&Path>,
) -> Result<()> {
    let model = load_model(model_path)?;
    let sys = match spec_path {
        Some(p) => {
            let (_, sys) = load(p)?;
            model.check_system(&sys)?;
            Some(sys)
        }
        None => None,
    };
    let c = condition_for(&model, condition, sys.as_ref())?;
    let mut rng = ctx.rng();
    let samples: Vec<StateSample> = if sinusoidal {
        sample_sinusoidal(&model, count, &c, &mut rng)?
    } else {
        sample_states(&model, count, stddev, &c, &mut rng)?
    };
    let dir = ctx.out_dir(&model_dir(model_path))?;
    write(
        &dir.join("sample_invocation.toml"),
        invocation(&[
            ("model", model_path.display().to_string()),
            ("count", count.to_string()),
            ("stddev", stddev.to_string()),
            ("sinusoidal", sinusoidal.to_string()),
            ("condition", format!("{c:?}")),
            ("seed", ctx.seed.unwrap_or(0).to_string()),
        ]),
    )?;
    write(
        &dir.join("samples.jsonl"),
        states_jsonl(samples.iter().map(|s| (s.z.as_slice(), s.q.as_slice()))),
    )?;
    if let Some(sys) = &sys {
        let qs: Vec<&[f64]> = samples.iter().map(|s| s.q.as_slice()).collect();
        write_objs(&dir, "sample", sys, &qs)?;
    }
    ctx.say(format!("wrote {} samples to {}", samples.len(), dir.join("samples.jsonl").display()));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    ctx: &Ctx,
    model_path: &Path,
    spec_path: &Path,
    h: Option<f64>,
    steps: Option<usize>,
    keyframes: Option<&Path>,
    z0: &[f64],
    obj: bool,
) -> Result<()> {
    let (model, mut spec, sys) = load_pair(model_path, spec_path)?;
    if let Some(h) = h {
        spec.simulate.h = h;
    }
    if let Some(s) = steps {
        spec.simulate.steps = s;
    }
    spec.validate()?;
    let opts = spec.simulate.clone();
    let keys = match keyframes {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::config(format!("cannot read keyframes '{}': {e}", p.display())))?;
            let keys = parse_keyframes(&text)?;
            if sys.condition_dim() == 0 {
                return Err(Error::config("--keyframes drives conditions, but the system has none"));
            }
            if keys.first().is_some_and(|k| k.len() != sys.condition_dim()) {
                return Err(Error::config(format!(
                    "keyframes have {} values per line, system has {} conditions",
                    keys[0].len(),
                    sys.condition_dim()
                )));
            }
            Some(keys)
        }
        None => None,
    };
    let z0 = if z0.is_empty() { vec![0.0; model.latent_dim] } else { z0.to_vec() };
    if z0.len() != model.latent_dim {
        return Err(Error::config(format!("--z0 has {} values, model latent dimension is {}", z0.len(), model.latent_dim)));
    }
    let c0 = match &keys {
        Some(k) => catmull_rom_eval(k, false, 0.0)?,
        None => sys.default_condition(),
    };
    let dir = ctx.out_dir(&spec.output.dir)?;
    spec.output.dir = dir.clone();
    write(&dir.join("effective_config.toml"), spec.to_toml())?;
    let segs = keys.as_ref().map_or(0, |k| segment_count(k.len(), false)) as f64;
    let total = opts.steps.max(1) as f64;
    let initial = LatentSimState::at_rest(z0, opts.h, c0)?;
    let traj = simulate(&model, &sys, initial, opts.steps, &opts.lbfgs, |k| {
        keys.as_ref()
            .map(|keys| catmull_rom_eval(keys, false, segs * k as f64 / total).expect("keyframes validated"))
    })?;
    let unconverged = traj.reports.iter().filter(|r| !r.converged).count();
    write(&dir.join("trajectory.jsonl"), trajectory_jsonl(&traj, opts.h, true))?;
    if obj {
        let qs: Vec<&[f64]> = traj.q.iter().map(Vec::as_slice).collect();
        let n = write_objs(&dir, "frame", &sys, &qs)?;
        ctx.say(format!("wrote {n} OBJ frames"));
    }
    ctx.say(format!(
        "simulated {} steps of h = {} ({} steps hit the iteration limit)",
        opts.steps, opts.h, unconverged
    ));
    ctx.say(format!("wrote {}", dir.join("trajectory.jsonl").display()));
    Ok(())
}

fn cmd_interpolate(
    ctx: &Ctx,
    model_path: &Path,
    keyframes: &Path,
    sps: usize,
    open: bool,
    condition: &[f64],
    spec_path: Option<&Path>,
) -> Result<()> {
    let model = load_model(model_path)?;
    let sys = match spec_path {
        Some(p) => {
            let (_, sys) = load(p)?;
            model.check_system(&sys)?;
            Some(sys)
        }
        None => None,
    };
    let c = condition_for(&model, condition, sys.as_ref())?;
    let text = fs::read_to_string(keyframes)
        .map_err(|e| Error::config(format!("cannot read keyframes '{}': {e}", keyframes.display())))?;
    let keys = parse_keyframes(&text)?;
    if let Some(k) = keys.first() {
        if k.len() != model.latent_dim {
            return Err(Error::config(format!(
                "keyframes have {} values per line, model latent dimension is {}",
                k.len(),
                model.latent_dim
            )));
        }
    }
    let path = catmull_rom_path(&keys, sps, !open)?;
    let states: Vec<StateSample> = path
        .into_iter()
        .map(|z| Ok(StateSample { q: nsub_core::SubspaceMap::eval(&model, &z, &c)?, z }))
        .collect::<Result<_>>()?;
    let dir = ctx.out_dir(&model_dir(model_path))?;
    write(
        &dir.join("interpolate_invocation.toml"),
        invocation(&[
            ("model", model_path.display().to_string()),
            ("keyframes", keyframes.display().to_string()),
            ("samples_per_segment", sps.to_string()),
            ("cyclic", (!open).to_string()),
            ("condition", format!("{c:?}")),
        ]),
    )?;
    write(
        &dir.join("interpolation.jsonl"),
        states_jsonl(states.iter().map(|s| (s.z.as_slice(), s.q.as_slice()))),
    )?;
    if let Some(sys) = &sys {
        let qs: Vec<&[f64]> = states.iter().map(|s| s.q.as_slice()).collect();
        write_objs(&dir, "path", sys, &qs)?;
    }
    ctx.say(format!("wrote {} states to {}", states.len(), dir.join("interpolation.jsonl").display()));
    Ok(())
}

fn cmd_export(ctx: &Ctx, model_path: &Path, spec_path: &Path, output: &Path, fixture: Option<&Path>) -> Result<()> {
    let (model, _, sys) = load_pair(model_path, spec_path)?;
    let doc = export_web(&model, &sys)?;
    let resolve = |p: &Path| match &ctx.out {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    };
    let output = resolve(output);
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write(&output, serde_json::to_string(&doc).expect("export serializes"))?;
    ctx.say(format!("wrote {}", output.display()));
    if let Some(f) = fixture {
        let f = resolve(f);
        let fx = web_fixture(&model, &sys, ctx.seed.unwrap_or(0))?;
        write(&f, serde_json::to_string_pretty(&fx).expect("fixture serializes"))?;
        ctx.say(format!("wrote {}", f.display()));
    }
    Ok(())
}

fn cmd_diagnose(ctx: &Ctx, model_path: &Path, spec_path: &Path, pairs: Option<usize>) -> Result<()> {
    let (model, spec, sys) = load_pair(model_path, spec_path)?;
    let pairs = pairs.unwrap_or(spec.diagnose.pairs);
    let stats = ratio_diagnostics(&model, model.sigma, &sys, pairs, &mut ctx.rng())?;
    println!("pairs {}", stats.pairs);
    println!("median ratio {:.6}", stats.median_ratio);
    println!("ratio 10%-90% [{:.6}, {:.6}]", stats.q10, stats.q90);
    println!("median |log ratio| {:.6}", stats.median_abs_log_ratio);
    if stats.needs_larger_lambda() {
        ctx.say("distances deviate from sigma-scaled latent distances; consider a larger lambda");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Train { spec } => cmd_train(&ctx, &spec),
        Command::Modes { spec, latent_dim, sigma } => cmd_modes(&ctx, &spec, latent_dim, sigma),
        Command::Sample {
            model,
            count,
            stddev,
            sinusoidal,
            condition,
            spec,
        } => cmd_sample(&ctx, &model, count, stddev, sinusoidal, &condition, spec.as_deref()),
        Command::Simulate {
            model,
            spec,
            h,
            steps,
            keyframes,
            z0,
            obj,
        } => cmd_simulate(&ctx, &model, &spec, h, steps, keyframes.as_deref(), &z0, obj),
        Command::Interpolate {
            model,
            keyframes,
            samples_per_segment,
            open,
            condition,
            spec,
        } => cmd_interpolate(&ctx, &model, &keyframes, samples_per_segment, open, &condition, spec.as_deref()),
        Command::ExportWeb {
            model,
            spec,
            output,
            fixture,
        } => cmd_export(&ctx, &model, &spec, &output, fixture.as_deref()),
        Command::Diagnose { model, spec, pairs } => cmd_diagnose(&ctx, &model, &spec, pairs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
