//! Command-line front end.
//!
//! Failures print exactly one line on stderr,
//! `error: kind=<kind> message=<text>`, and exit with 2 for usage or
//! configuration problems and 1 for runtime failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::bench::{embed_tree, run_comparison, ProblemKind, TestProblem, TreeTask};
use crate::config::{parse_widths, ConfigFile};
use crate::diffusion::{generate_samples, DiffusionRun, DatasetKind, LossKind, TrainRunConfig};
use crate::error::{Error, Result};
use crate::nn::Denoiser;
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::records::{
    aggregate_replicates, format_g17, render_aggregate_csv, write_records, Format, RunRecord,
};
use crate::schedule::{DiffusionSchedule, SamplerKind};

pub const SEED_ENV: &str = "POINCARE_OPT_SEED";

#[derive(Debug, Parser)]
#[command(name = "poincare-opt", version, about = "Hyperbolic optimizers on toy problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the toy diffusion model and write per-epoch records.
    Train(TrainArgs),
    /// Draw samples from a saved denoiser.
    Sample(SampleArgs),
    /// Compare optimizers on an analytic test function.
    Bench(BenchArgs),
    /// Embed a balanced tree in the Poincaré disk.
    Embed(EmbedArgs),
    /// Run a preset comparison group over replicates.
    Compare(CompareArgs),
}

/// Overrides shared by `train` and `compare`.
#[derive(Debug, Args, Default)]
struct TrainOverrides {
    /// key = value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of passes over the dataset.
    #[arg(long)]
    epochs: Option<usize>,
    /// Denoising steps used when sampling for the metric.
    #[arg(long)]
    inference_steps: Option<usize>,
    /// Length of the diffusion noise schedule.
    #[arg(long)]
    train_timesteps: Option<usize>,
    /// Compute the energy distance every this many epochs.
    #[arg(long)]
    metric_every: Option<usize>,
    /// Samples drawn per energy-distance evaluation.
    #[arg(long)]
    metric_samples: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// gaussian_mixture, two_moons or swiss_roll_2d.
    #[arg(long)]
    dataset: Option<DatasetKind>,
    /// Size of the toy dataset.
    #[arg(long)]
    n_points: Option<usize>,
    /// Comma-separated hidden widths, e.g. 128,128.
    #[arg(long)]
    hidden: Option<String>,
    /// Width of the sinusoidal timestep embedding.
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Base seed; falls back to POINCARE_OPT_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// csv or json.
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Start from a named preset, e.g. HyperAdamW+HyperT.
    #[arg(long, default_value = "AdamW+LinearT")]
    preset: String,
    /// Label written to the config_label column.
    #[arg(long)]
    label: Option<String>,
    /// sgd, adamw, hyper_sgd or hyper_adamw.
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// linear or unit_hyperbola.
    #[arg(long)]
    t_sampler: Option<SamplerKind>,
    /// mse or poincare.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    lr: Option<f64>,
    /// Independent runs with seeds base, base+1, ...
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Save the trained denoiser (single replicate only).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    common: TrainOverrides,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    train_timesteps: usize,
    #[arg(long, default_value = "linear")]
    t_sampler: SamplerKind,
    #[arg(long, default_value_t = 200)]
    inference_steps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "samples.csv")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value = "rosenbrock")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0.002)]
    lr: f64,
    /// Comma-separated optimizers; defaults to all four.
    #[arg(long, value_delimiter = ',')]
    optimizers: Vec<OptimizerKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "bench.csv")]
    output: PathBuf,
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value = "hyper_sgd")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "embed.csv")]
    output: PathBuf,
    /// Also write the final node coordinates here.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long, default_value_t = 1)]
    group: u8,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, default_value = "compare")]
    output_dir: PathBuf,
    #[command(flatten)]
    common: TrainOverrides,
}

/// Parse `argv` (program name first), run the command, return the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            report(&Error::Usage(first.to_string()));
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            report(&e);
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Parse(_) => 2,
        _ => 1,
    }
}

fn report(e: &Error) {
    let text = e.to_string().replace(['\n', '\r'], " ");
    let prefix = format!("{}: ", e.kind());
    let msg = text.strip_prefix(&prefix).unwrap_or(&text);
    eprintln!("error: kind={} message={}", e.kind(), msg);
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Bench(a) => bench(a),
        Command::Embed(a) => embed(a),
        Command::Compare(a) => compare(a),
    }
}

struct Resolved {
    format: Format,
    output: Option<PathBuf>,
    replicates: Option<usize>,
}

/// Apply the config file, then flags, on top of `cfg`. The seed comes from
/// the flag, else the file, else the environment, else the preset.
fn apply_overrides(cfg: &mut TrainRunConfig, o: &TrainOverrides) -> Result<Resolved> {
    let file = match &o.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let settings = file.apply(cfg)?;
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = o.$f.clone() { cfg.$f = v; } )* };
    }
    over!(epochs, inference_steps, train_timesteps, metric_every, metric_samples,
          batch_size, dataset, n_points, embed_dim, weight_decay);
    if let Some(h) = &o.hidden {
        cfg.hidden = parse_widths(h)?;
    }
    if o.seed.is_some() || file.get("seed").is_none() {
        if let Some(s) = env_or_flag_seed(o.seed)? {
            cfg.seed = s;
        }
    }
    Ok(Resolved {
        format: o.format.or(settings.format).unwrap_or(Format::Csv),
        output: settings.output,
        replicates: settings.replicates,
    })
}

fn env_or_flag_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() || std::env::var_os(SEED_ENV).is_some() {
        resolve_seed(flag).map(Some)
    } else {
        Ok(None)
    }
}

fn check_replicates(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::usage("replicates must be at least 1"));
    }
    Ok(n)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainRunConfig::preset(&a.preset)
        .ok_or_else(|| Error::usage(format!("unknown preset `{}`", a.preset)))?;
    let resolved = apply_overrides(&mut cfg, &a.common)?;
    if let Some(v) = a.optimizer {
        cfg.optimizer = v;
    }
    if let Some(v) = a.t_sampler {
        cfg.t_sampler = v;
    }
    if let Some(v) = a.loss {
        cfg.loss = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.label {
        cfg.label = v;
    }
    cfg.validate()?;
    let replicates = check_replicates(a.replicates.or(resolved.replicates).unwrap_or(1))?;
    if a.checkpoint.is_some() && replicates > 1 {
        return Err(Error::usage("--checkpoint needs a single replicate"));
    }
    let output = a
        .output
        .or(resolved.output)
        .unwrap_or_else(|| PathBuf::from(default_name("train", resolved.format)));

    let mut records = Vec::new();
    for r in 0..replicates {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(r as u64);
        let mut run = DiffusionRun::new(c)?;
        records.extend(run.run(&format!("train-r{r}"))?);
        if let Some(path) = &a.checkpoint {
            run.model().save(path)?;
        }
    }
    write_records(&records, &output, resolved.format)?;
    println!("wrote {} records to {}", records.len(), output.display());
    Ok(())
}

fn default_name(stem: &str, format: Format) -> String {
    format!("{stem}.{format}")
}

fn sample(a: SampleArgs) -> Result<()> {
    let model = Denoiser::load(&a.checkpoint)?;
    let schedule = DiffusionSchedule::new(a.train_timesteps, a.t_sampler)?;
    let seed = resolve_seed(a.seed)?;
    let pts = generate_samples(&model, &schedule, a.n, a.inference_steps, seed)?;
    let mut text = String::from("x,y\n");
    for p in pts.chunks(2) {
        text.push_str(&format!("{},{}\n", format_g17(p[0]), format_g17(p[1])));
    }
    write_text(&a.output, &text)?;
    println!("wrote {} samples to {}", a.n, a.output.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn bench(a: BenchArgs) -> Result<()> {
    let problem = TestProblem::new(a.problem, a.dim)?;
    let seed = resolve_seed(a.seed)?;
    let kinds = if a.optimizers.is_empty() {
        OptimizerKind::ALL.to_vec()
    } else {
        a.optimizers
    };
    let configs: Vec<(String, OptimizerConfig)> = kinds
        .iter()
        .map(|k| (k.to_string(), OptimizerConfig::new(*k, a.lr)))
        .collect();
    let trajectories = run_comparison(&problem, &configs, a.steps, seed)?;
    let run_id = format!("bench-{}", a.problem);
    let mut records = Vec::new();
    for t in &trajectories {
        if t.diverged {
            eprintln!("note: {} diverged after {} steps", t.label, t.values.len());
        }
        records.extend(t.to_records(&run_id, seed));
    }
    write_records(&records, &a.output, a.format)?;
    println!("wrote {} records to {}", records.len(), a.output.display());
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let task = TreeTask::balanced(a.branching, a.depth)?.with_negatives(a.negatives);
    let config = OptimizerConfig::new(a.optimizer, a.lr);
    config.validate()?;
    let seed = resolve_seed(a.seed)?;
    let result = embed_tree(&task, &config, a.epochs, seed)?;
    let n = result.losses.len();
    let records: Vec<RunRecord> = result
        .losses
        .iter()
        .enumerate()
        .map(|(e, loss)| RunRecord {
            run_id: "embed".into(),
            config_label: a.optimizer.to_string(),
            epoch: e as u64,
            loss: *loss,
            // distortion is only computed for the final embedding
            metric: (e + 1 == n).then_some(result.distortion),
            wall_ms: 0,
            seed,
        })
        .collect();
    write_records(&records, &a.output, a.format)?;
    if let Some(path) = &a.embeddings {
        let mut text = String::from("node,x,y\n");
        for (i, p) in result.embeddings.chunks(2).enumerate() {
            text.push_str(&format!("{i},{},{}\n", format_g17(p[0]), format_g17(p[1])));
        }
        write_text(path, &text)?;
    }
    println!(
        "mean distortion {:.4} after {} epochs; wrote {}",
        result.distortion,
        a.epochs,
        a.output.display()
    );
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let mut configs = TrainRunConfig::group(a.group)?;
    let mut resolved = None;
    for c in &mut configs {
        resolved = Some(apply_overrides(c, &a.common)?);
        c.validate()?;
    }
    let resolved = resolved.expect("groups are non-empty");
    let replicates = check_replicates(a.replicates.or(resolved.replicates).unwrap_or(1))?;
    let base_seed = configs[0].seed;

    let mut all = Vec::new();
    for r in 0..replicates {
        let seed = base_seed.wrapping_add(r as u64);
        let run_id = format!("g{}-r{r}", a.group);
        let per_config = configs
            .par_iter()
            .map(|c| {
                let mut c = c.clone();
                c.seed = seed;
                DiffusionRun::new(c)?.run(&run_id)
            })
            .collect::<Result<Vec<_>>>()?;
        let records: Vec<RunRecord> = per_config.into_iter().flatten().collect();
        let path = a
            .output_dir
            .join(format!("group{}_rep{r}.{}", a.group, resolved.format));
        write_records(&records, &path, resolved.format)?;
        println!("wrote {}", path.display());
        all.extend(records);
    }
    let agg = a.output_dir.join("aggregate.csv");
    write_text(&agg, &render_aggregate_csv(&aggregate_replicates(&all)))?;
    println!("wrote {}", agg.display());
    Ok(())
}
