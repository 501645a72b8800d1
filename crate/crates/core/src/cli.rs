//! Command-line driver. `run` parses arguments, validates every config
//! before touching the filesystem and maps failures to exit codes:
//! 0 success, 1 invalid input, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::agent::{Agent, AgentError, PolicyMode};
use crate::encoder::{pretrain, EncoderError, PretrainConfig};
use crate::env::{preset, named_shape, EnvError, ObjectRegistry, TorqueMap, PRESETS};
use crate::harness::{
    evaluate, scaling_sweep, select_objects, split_objects, train, write_report, HarnessError,
    RunConfig, TrainOptions, TrainingSet, DEFAULT_TEST_RATIO,
};
use crate::mesh::{load_mesh, procedural_object, MeshError};
use crate::nn::{Checkpoint, EncoderModel, NnError};

/// Seed used when neither a flag nor a config file sets one.
pub const SEED_ENV: &str = "GEODEX_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let invalid = match &e {
            HarnessError::Config(_) | HarnessError::TooFewObjects { .. } | HarnessError::Resume(_) => true,
            HarnessError::Env(e) => env_invalid(e),
            HarnessError::Agent(AgentError::Config(_)) => true,
            HarnessError::Encoder(EncoderError::Config(_)) => true,
            HarnessError::Json(_) => true,
            _ => false,
        };
        if invalid {
            CliError::Invalid(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn env_invalid(e: &EnvError) -> bool {
    matches!(
        e,
        EnvError::Config(_) | EnvError::UnknownObject(_) | EnvError::Registry(_) | EnvError::Json(_)
    )
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        if env_invalid(&e) {
            CliError::Invalid(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::Config(_) | EncoderError::NoObjects => CliError::Invalid(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(std::io::Error, NnError, AgentError, csv::Error);

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "geodex", version, about = "Geometry-aware in-hand rotation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize mesh files (OBJ, OFF, ASCII STL) into an object registry.
    Ingest {
        /// Mesh files or directories containing them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        mass: f64,
    },
    /// Write procedural objects and their registry.
    GenObjects {
        /// One of basic4, basic8, heldout2.
        #[arg(long, conflicts_with = "shapes")]
        preset: Option<String>,
        /// Comma-separated shape names.
        #[arg(long, value_delimiter = ',')]
        shapes: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        mass: f64,
    },
    /// Score objects with short single-object probes and deal a balanced split.
    Split {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value_t = DEFAULT_TEST_RATIO)]
        ratio: f64,
        #[arg(long, default_value_t = 5)]
        probe_epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the geometry encoder on a registry's objects.
    PretrainEncoder {
        #[arg(long)]
        objects: PathBuf,
        /// Pretraining config JSON; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated trunk widths ending in 512.
        #[arg(long, value_delimiter = ',')]
        trunk: Vec<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single- or multi-object policy.
    Train {
        #[command(flatten)]
        run: RunFlags,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run on its objects or another registry.
    Eval {
        run_dir: PathBuf,
        #[arg(long)]
        objects: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        names: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train over growing prefixes of the object list and record held-out success.
    Sweep {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8])]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [PolicyMode::GeometryAware])]
        modes: Vec<PolicyMode>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a run's metrics.jsonl into CSV.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Run config flags; each overrides the config file.
#[derive(Debug, Args)]
struct RunFlags {
    /// Run config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<PolicyMode>,
    #[arg(long)]
    objects: Option<PathBuf>,
    /// Comma-separated names; default is the whole registry.
    #[arg(long, value_delimiter = ',')]
    train_objects: Vec<String>,
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    heldout_objects: Vec<String>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    finetune_encoder: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long)]
    relabel_k: Option<f64>,
    #[arg(long)]
    cloud_points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rollout threads; defaults to the core count.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Invalid(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Reads a JSON config, reporting whether it set `seed` itself.
fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, bool)> {
    match path {
        None => Ok((T::default(), false)),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let has_seed = value.get("seed").is_some();
            Ok((serde_json::from_value(value)?, has_seed))
        }
    }
}

fn pick_seed(flag: Option<u64>, from_file: bool, current: u64) -> Result<u64> {
    Ok(match (flag, from_file) {
        (Some(s), _) => s,
        (None, true) => current,
        (None, false) => env_seed()?.unwrap_or(current),
    })
}

impl RunFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let (mut c, file_seed): (RunConfig, bool) = read_config(self.config.as_deref())?;
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(p) = &self.objects {
            c.objects = p.clone();
        }
        if !self.train_objects.is_empty() {
            c.train_objects = self.train_objects.clone();
        }
        if let Some(p) = &self.heldout {
            c.heldout = Some(p.clone());
        }
        if !self.heldout_objects.is_empty() {
            c.heldout_objects = self.heldout_objects.clone();
        }
        if let Some(p) = &self.encoder {
            c.encoder = Some(p.clone());
        }
        if self.finetune_encoder {
            c.finetune_encoder = true;
        }
        set(&mut c.epochs, self.epochs);
        set(&mut c.cycles, self.cycles);
        set(&mut c.rollouts_per_epoch, self.rollouts);
        set(&mut c.updates_per_epoch, self.updates);
        set(&mut c.eval_episodes, self.eval_episodes);
        set(&mut c.agent.batch, self.batch);
        set(&mut c.replay.relabel_k, self.relabel_k);
        set(&mut c.env.cloud_points, self.cloud_points);
        if !self.hidden.is_empty() {
            c.agent.hidden = self.hidden.clone();
        }
        c.seed = pick_seed(self.seed, file_seed, c.seed)?;
        if c.mode == PolicyMode::Vanilla && self.encoder.is_none() {
            c.encoder = None;
        }
        let c = c.resolved();
        c.validate()?;
        Ok(c)
    }

    fn options(&self) -> TrainOptions {
        TrainOptions {
            workers: self
                .workers
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            progress: !self.quiet,
            ..Default::default()
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr as a single line.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("geodex: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { inputs, out, mass } => ingest(&inputs, &out, mass),
        Command::GenObjects {
            preset: p,
            shapes,
            out,
            mass,
        } => gen_objects(p.as_deref(), &shapes, &out, mass),
        Command::Split {
            run,
            ratio,
            probe_epochs,
            out,
        } => split(&run, ratio, probe_epochs, &out),
        Command::PretrainEncoder {
            objects,
            config,
            trunk,
            points,
            steps,
            batch,
            lr,
            seed,
            out,
        } => {
            let (mut c, file_seed): (PretrainConfig, bool) = read_config(config.as_deref())?;
            if !trunk.is_empty() {
                c.trunk = trunk;
            }
            set(&mut c.points, points);
            set(&mut c.steps, steps);
            set(&mut c.batch, batch);
            if let Some(lr) = lr {
                c.lr_final *= lr / c.lr;
                c.lr = lr;
            }
            c.seed = pick_seed(seed, file_seed, c.seed)?;
            c.validate()?;
            pretrain_encoder(&objects, &c, &out)
        }
        Command::Train { run, resume, out } => {
            let config = run.resolve()?;
            let set = TrainingSet::load(&config)?;
            let options = TrainOptions {
                resume,
                ..run.options()
            };
            let r = train(&config, set, Some(&out), &options)?;
            for s in r.final_train.iter() {
                println!("train    {:<16} {:.3}", s.object, s.success);
            }
            for s in r.final_heldout.iter() {
                println!("heldout  {:<16} {:.3}", s.object, s.success);
            }
            println!("wrote {}", out.join("metrics.jsonl").display());
            Ok(())
        }
        Command::Eval {
            run_dir,
            objects,
            names,
            episodes,
            seed,
        } => eval(&run_dir, objects.as_deref(), &names, episodes, seed),
        Command::Sweep {
            run,
            counts,
            modes,
            seeds,
            out,
        } => {
            let mut config = run.resolve()?;
            if config.encoder.is_none() && modes.contains(&PolicyMode::GeometryAware) {
                return Err(CliError::Invalid("geometry-aware sweeps need --encoder".into()));
            }
            // cells pick their own mode; keep the shared config valid for loading
            config.mode = if config.encoder.is_some() {
                PolicyMode::GeometryAware
            } else {
                PolicyMode::Vanilla
            };
            let config = config.resolved();
            let set = TrainingSet::load(&config)?;
            std::fs::create_dir_all(&out)?;
            config.save(&out.join("config.json"))?;
            let rows = scaling_sweep(&config, &set, &counts, &modes, &seeds, Some(&out), &run.options())?;
            for r in rows {
                println!(
                    "n={:<3} {:<15} seed {:<3} train {:.3} heldout {:.3}",
                    r.count, r.mode, r.seed, r.train_success, r.heldout_success
                );
            }
            Ok(())
        }
        Command::Report { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("report.csv"));
            let rows = write_report(&run_dir, &out)?;
            println!("wrote {rows} rows to {}", out.display());
            Ok(())
        }
    }
}

fn mesh_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "obj" | "off" | "stl"))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(CliError::Invalid(format!("{} does not exist", p.display())));
        }
    }
    if files.is_empty() {
        return Err(CliError::Invalid("no mesh files found".into()));
    }
    Ok(files)
}

fn ingest(inputs: &[PathBuf], out: &Path, mass: f64) -> Result<()> {
    if !(mass > 0.0) {
        return Err(CliError::Invalid("mass must be positive".into()));
    }
    let files = mesh_files(inputs)?;
    let mut objects = Vec::with_capacity(files.len());
    for f in &files {
        let parsed = load_mesh(f).map_err(|e| CliError::Invalid(format!("{}: {e}", f.display())))?;
        if parsed.dropped_faces > 0 {
            eprintln!("{}: dropped {} degenerate faces", f.display(), parsed.dropped_faces);
        }
        let name = parsed.mesh.name().to_string();
        objects.push((name, parsed.mesh, None));
    }
    let reg = ObjectRegistry::write_objects(out, &objects, mass)?;
    println!("ingested {} objects into {}", reg.objects.len(), out.join("registry.json").display());
    Ok(())
}

fn gen_objects(preset_name: Option<&str>, shapes: &[String], out: &Path, mass: f64) -> Result<()> {
    if !(mass > 0.0) {
        return Err(CliError::Invalid("mass must be positive".into()));
    }
    let specs = match preset_name {
        Some(p) => preset(p).ok_or_else(|| {
            CliError::Invalid(format!("unknown preset {p:?}; known: {}", PRESETS.join(", ")))
        })?,
        None if shapes.is_empty() => {
            return Err(CliError::Invalid("give --preset or --shapes".into()))
        }
        None => shapes
            .iter()
            .map(|n| {
                named_shape(n)
                    .map(|s| (n.clone(), s))
                    .ok_or_else(|| CliError::Invalid(format!("unknown shape {n:?}")))
            })
            .collect::<Result<_>>()?,
    };
    let mut objects = Vec::with_capacity(specs.len());
    for (name, spec) in specs {
        objects.push((name, procedural_object(&spec)?, Some(spec)));
    }
    let reg = ObjectRegistry::write_objects(out, &objects, mass)?;
    println!("wrote {} objects to {}", reg.objects.len(), out.join("registry.json").display());
    Ok(())
}

fn split(run: &RunFlags, ratio: f64, probe_epochs: usize, out: &Path) -> Result<()> {
    let config = run.resolve()?;
    if probe_epochs == 0 {
        return Err(CliError::Invalid("probe-epochs must be positive".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CliError::Invalid(format!("ratio {ratio} must be in (0, 1)")));
    }
    let set = TrainingSet::load(&config)?;
    std::fs::create_dir_all(out)?;
    config.save(&out.join("config.json"))?;
    let (split, scores) = split_objects(&config, &set, probe_epochs, ratio, &run.options())?;

    // sub-registries point back at the original mesh files
    let source = ObjectRegistry::load(&config.objects)?;
    let base = config
        .objects
        .parent()
        .unwrap_or(Path::new("."))
        .canonicalize()?;
    let by_name = |name: &str| -> ObjectRegistry {
        let mut e = source
            .objects
            .iter()
            .find(|e| e.name == name)
            .cloned()
            .expect("split names come from the registry");
        e.mesh = e.mesh.map(|m| base.join(m));
        ObjectRegistry { objects: vec![e] }
    };
    let subset = |ix: &[usize]| -> ObjectRegistry {
        ObjectRegistry {
            objects: ix
                .iter()
                .flat_map(|&i| by_name(&set.objects[i].name).objects)
                .collect(),
        }
    };
    subset(&split.train).save(&out.join("train.json"))?;
    subset(&split.test).save(&out.join("test.json"))?;
    let names = |ix: &[usize]| -> Vec<String> { ix.iter().map(|&i| set.objects[i].name.clone()).collect() };
    let summary = serde_json::json!({
        "ratio": ratio,
        "probe_epochs": probe_epochs,
        "scores": set.objects.iter().zip(&scores).map(|(o, s)| (o.name.clone(), serde_json::Value::from(*s))).collect::<serde_json::Map<_, _>>(),
        "train": names(&split.train),
        "test": names(&split.test),
        "train_mean": split.train_mean,
        "test_mean": split.test_mean,
    });
    std::fs::write(out.join("split.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "train {} objects (mean probe success {:.3}), test {} (mean {:.3})",
        split.train.len(),
        split.train_mean,
        split.test.len(),
        split.test_mean
    );
    Ok(())
}

fn pretrain_encoder(objects: &Path, config: &PretrainConfig, out: &Path) -> Result<()> {
    let objs = ObjectRegistry::load_objects(objects)?;
    let meshes: Vec<_> = objs.iter().map(|o| o.mesh.clone()).collect();
    std::fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    std::fs::write(out.join("config.json"), text)?;
    let r = pretrain(&meshes, config, Some(out))?;
    println!(
        "validation acc {:.3} rot_err {:.4} rad; wrote {}",
        r.validation.acc,
        r.validation.rot_err_rad,
        out.join("encoder.gdx").display()
    );
    Ok(())
}

fn eval(
    run_dir: &Path,
    objects: Option<&Path>,
    names: &[String],
    episodes: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let config = RunConfig::load(&run_dir.join("config.json"))?;
    config.validate()?;
    let episodes = episodes.unwrap_or(config.eval_episodes);
    if episodes == 0 {
        return Err(CliError::Invalid("episodes must be positive".into()));
    }
    let seed = pick_seed(seed, true, config.seed)?;
    let agent = Agent::load(&run_dir.join("checkpoints").join("agent.gdx"))?;
    let tuned = run_dir.join("checkpoints").join("encoder.gdx");
    let encoder = match (&config.encoder, tuned.exists()) {
        (Some(_), true) => Some(EncoderModel::from_checkpoint(&Checkpoint::load(&tuned)?)?),
        (Some(p), false) => Some(EncoderModel::from_checkpoint(&Checkpoint::load(p)?)?),
        (None, _) => None,
    };
    let targets = match objects {
        Some(reg) => select_objects(reg, names, 0)?,
        None => {
            let set = TrainingSet::load(&config)?;
            set.objects.into_iter().chain(set.heldout).collect()
        }
    };
    let map = std::sync::Arc::new(TorqueMap::seeded(config.env.map_seed, config.env.tau_max));
    let stats = evaluate(
        &agent.model,
        encoder.as_ref(),
        &targets,
        &config.env,
        &map,
        episodes,
        seed,
        u64::MAX,
    )?;
    let mut table = serde_json::Map::new();
    for s in &stats {
        println!("{:<16} {:.3}", s.object, s.success);
        table.insert(s.object.clone(), s.success.into());
    }
    let v = serde_json::json!({ "episodes": episodes, "seed": seed, "success": table });
    std::fs::write(run_dir.join("eval.json"), serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}
