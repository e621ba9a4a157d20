//! `ddt`: generate synthetic data, train, evaluate, benchmark and ablate.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ddt_core::body::{dataset_load, dataset_save, generate_dataset, generate_sequence, SequenceConfig};
use ddt_core::ddt::Variant;
use ddt_core::harness::{
    ablate, ablation_table, benchmark, check_compat, evaluate_dataset, train, BenchMode, Checkpoint, TrainConfig,
};
use ddt_core::metrics::MetricsReport;

#[derive(Parser)]
#[command(name = "ddt", version, about = "Temporal mesh recovery on synthetic motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic motion dataset.
    GenData(GenData),
    /// Train a model and save its best checkpoint.
    Train(Train),
    /// Score a checkpoint on a dataset.
    Eval(Eval),
    /// Time inference per output frame.
    Bench(Bench),
    /// Train and score several variants over several seeds.
    Ablate(Ablate),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    sequences: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature noise level.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 8)]
    joints: usize,
    #[arg(long, default_value_t = 24)]
    vertices: usize,
    #[arg(long, default_value_t = 64)]
    d_feat: usize,
    #[arg(long, default_value_t = 25.0)]
    fps: f64,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// key=value file; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Write the per-epoch log here as well as to stdout.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// key=value report destination; printed to stdout either way.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write a one-row delimited table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct Bench {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "m2m")]
    mode: BenchMode,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Take the input window from the first sequence of this dataset
    /// instead of a freshly generated one.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated variant names.
    #[arg(long, value_delimiter = ',', default_value = "two_modes,one_mode,one_phase,fwd_only,bwd_only,both")]
    variants: Vec<Variant>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Held-out dataset; without it the tail of `--data` is used.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .parse::<TrainConfig>()?,
        None => TrainConfig::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override '{o}' is not key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Take the data's dimensions so a config file only has to name what differs.
fn adopt_dims(cfg: &mut TrainConfig, header: &ddt_core::body::DatasetHeader) {
    cfg.frames = header.frames;
    cfg.joints = header.joints;
    cfg.vertices = header.vertices;
    cfg.d_feat = header.d_feat;
    cfg.max_step = cfg.max_step.max(header.frames);
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn gen_data(a: GenData) -> Result<()> {
    let cfg = SequenceConfig {
        frames: a.frames,
        joints: a.joints,
        vertices: a.vertices,
        d_feat: a.d_feat,
        noise_level: a.noise,
        fps: a.fps,
        ..SequenceConfig::default()
    };
    let data = generate_dataset(&cfg, a.sequences, a.seed)?;
    let header = dataset_save(&a.out, &data, a.fps)?;
    println!("sequences={}", header.sequences);
    println!("frames={}", header.frames);
    println!("bytes={}", header.file_bytes());
    Ok(())
}

fn run_train(a: Train) -> Result<()> {
    let (header, data) = dataset_load(&a.data)?;
    let mut cfg = load_config(a.config.as_ref(), &a.overrides)?;
    adopt_dims(&mut cfg, &header);
    cfg.validate()?;
    let outcome = train(&cfg, &data)?;
    let log = outcome.log_text();
    print!("{log}");
    write_out(a.log.as_ref(), &log)?;
    outcome.checkpoint.save(&a.out)?;
    println!("best_epoch={}", outcome.best_epoch);
    println!("checkpoint={}", a.out.display());
    Ok(())
}

fn run_eval(a: Eval) -> Result<()> {
    let model = Checkpoint::load(&a.ckpt)?.to_model()?;
    let (header, data) = dataset_load(&a.data)?;
    let report = evaluate_dataset(&model, &header, &data)?;
    let text = report.to_kv();
    print!("{text}");
    write_out(a.report.as_ref(), &text)?;
    write_out(a.csv.as_ref(), &format!("{}\n{}\n", MetricsReport::csv_header(), report.csv_row()))?;
    Ok(())
}

fn run_bench(a: Bench) -> Result<()> {
    let model = Checkpoint::load(&a.ckpt)?.to_model()?;
    let cfg = &model.config;
    let features = match &a.data {
        Some(p) => {
            let (header, data) = dataset_load(p)?;
            check_compat(cfg, &header)?;
            match data.into_iter().next() {
                Some(s) => s.features,
                None => bail!("{} holds no sequences", p.display()),
            }
        }
        None => {
            let seq = SequenceConfig {
                frames: cfg.frames,
                joints: cfg.joints,
                vertices: cfg.vertices,
                d_feat: cfg.d_feat,
                ..SequenceConfig::default()
            };
            generate_sequence(&seq, a.seed)?.features
        }
    };
    print!("{}", benchmark(&model, &features, a.mode, a.repeats, a.warmup)?);
    Ok(())
}

fn run_ablate(a: Ablate) -> Result<()> {
    let (header, data) = dataset_load(&a.data)?;
    let mut cfg = load_config(a.config.as_ref(), &a.overrides)?;
    adopt_dims(&mut cfg, &header);
    cfg.validate()?;
    let (train_set, test_set) = match &a.test {
        Some(p) => {
            let (test_header, test) = dataset_load(p)?;
            check_compat(&cfg, &test_header)?;
            (data, test)
        }
        None => {
            if !(0.0..1.0).contains(&a.test_fraction) {
                bail!("--test-fraction must lie in [0, 1)");
            }
            let n = data.len();
            let held = ((a.test_fraction * n as f64).ceil() as usize).clamp(1, n.saturating_sub(1).max(1));
            let mut data = data;
            let test = data.split_off(n - held);
            (data, test)
        }
    };
    if train_set.is_empty() || test_set.is_empty() {
        bail!("ablation needs at least one training and one test sequence");
    }
    let rows = ablate(&cfg, &train_set, &test_set, header.fps as f64, &a.variants, &a.seeds)?;
    let table = ablation_table(&rows);
    print!("{table}");
    write_out(a.out.as_ref(), &table)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Bench(a) => run_bench(a),
        Command::Ablate(a) => run_ablate(a),
    }
}
