//! `visinst`: train a model from a folder of target images, perform with it
//! live, replay recordings offline, and inspect training pairs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use visinst::config::{Layout, RepoConfig};
use visinst::control::ControlState;
use visinst::dataset::{batch_rng, load_corpus, next_minibatch};
use visinst::instrument::{self, read_sidecar, EndReason, PerformOptions, PreviewBus, ProcessParams, SourceSpec};
use visinst::model::load_generator;
use visinst::preprocess::LiveParams;
use visinst::{codec, service, synth, trainer, Error};

#[derive(Parser)]
#[command(name = "visinst", version, about = "Train and play a target-only image-to-image visual instrument")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Repo config file (TOML). Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator on a directory of target images.
    Train(TrainArgs),
    /// Run the live loop with the WebSocket control service.
    Perform(PerformArgs),
    /// Apply the live path to every image in a directory.
    Process(ProcessArgs),
    /// Write training pair triptychs (target | input | blank) without a model.
    PreviewPairs(PreviewArgs),
    /// Write a procedural corpus of soft blob images.
    SynthCorpus(SynthArgs),
    /// Print the default config file.
    DefaultConfig,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Prefetch threads (0 assembles batches on the training thread).
    #[arg(long)]
    workers: Option<usize>,
    /// Side of the square training crop.
    #[arg(long)]
    size: Option<usize>,
    /// Checkpoint to continue from, or a run directory to continue from its newest checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct PerformArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// camera:N, video:PATH or seq:DIR.
    #[arg(long)]
    source: SourceSpec,
    /// WebSocket port; 0 picks a free port.
    #[arg(long)]
    control_port: Option<u16>,
    #[arg(long)]
    bind: Option<String>,
    /// Root for numbered recording runs.
    #[arg(long)]
    record_dir: Option<PathBuf>,
    /// Start recording with the first frame.
    #[arg(long)]
    record: bool,
    /// No display window; previews only through the control service.
    #[arg(long)]
    headless: bool,
    /// Pacing for sequence sources (0 = as fast as possible).
    #[arg(long)]
    fps: Option<f64>,
    /// Loop sequence sources.
    #[arg(long = "loop")]
    looping: bool,
    /// Stop after this many frames.
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long)]
    layout: Option<Layout>,
    /// Initial live parameters, e.g. "norm_low=0,norm_high=200".
    #[arg(long)]
    params: Option<String>,
    /// Process only the newest frame when inference falls behind.
    #[arg(long)]
    drop_stale: bool,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct ProcessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Live parameters for every image, e.g. "norm_high=64,brightness=1.1".
    #[arg(long, conflicts_with = "sidecar")]
    params: Option<String>,
    /// Recorded params.csv; renders each row's frame with that row's parameters.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    layout: Option<Layout>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct PreviewArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    size: usize,
}

fn print_config(cfg: &RepoConfig) {
    println!("# effective configuration");
    print!("{}", cfg.to_toml());
    println!("# end configuration");
}

fn load_config(cli: &Cli) -> Result<RepoConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RepoConfig::load(p)?,
        None => RepoConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn resolve_resume(path: &Path) -> Result<PathBuf, Error> {
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    trainer::list_checkpoints(path)?
        .pop()
        .map(|(_, p)| p)
        .ok_or_else(|| Error::InvalidArgument(format!("no checkpoints in {}", path.display())))
}

fn train(mut cfg: RepoConfig, a: &TrainArgs) -> Result<(), Error> {
    let t = &mut cfg.train;
    if let Some(v) = &a.corpus {
        t.corpus = v.clone();
    }
    if let Some(v) = &a.out {
        t.out_dir = v.clone();
    }
    if let Some(v) = a.iters {
        t.total_iterations = v;
    }
    if let Some(v) = a.batch {
        t.batch_size = v;
    }
    if let Some(v) = a.workers {
        t.workers = v;
    }
    if let Some(v) = a.size {
        cfg.preprocess.desired_size = v;
    }
    print_config(&cfg);
    let tc = cfg.train_config();
    tc.validate()?;
    std::fs::create_dir_all(&tc.out_dir)?;
    std::fs::write(tc.out_dir.join("effective_config.toml"), cfg.to_toml())?;
    let resume = a.resume.as_deref().map(resolve_resume).transpose()?;
    let last = trainer::train(&tc, resume.as_deref())?;
    println!("final checkpoint: {}", last.display());
    Ok(())
}

fn perform(mut cfg: RepoConfig, a: &PerformArgs) -> Result<bool, Error> {
    let inst = &mut cfg.instrument;
    if let Some(v) = a.fps {
        inst.fps = v;
    }
    if a.looping {
        inst.loop_source = true;
    }
    if a.drop_stale {
        inst.drop_stale_frames = true;
    }
    if let Some(v) = a.layout {
        inst.layout = v;
    }
    if let Some(v) = &a.record_dir {
        inst.record_dir = Some(v.clone());
    }
    if let Some(p) = &a.params {
        inst.initial = LiveParams::parse(p)?;
    }
    if let Some(v) = a.control_port {
        cfg.service.port = v;
    }
    if let Some(v) = &a.bind {
        cfg.service.bind = v.clone();
    }
    if let Some(v) = a.size {
        cfg.preprocess.desired_size = v;
    }
    print_config(&cfg);
    cfg.preprocess.validate()?;
    if a.record && cfg.instrument.record_dir.is_none() {
        return Err(Error::InvalidArgument("--record needs --record-dir or instrument.record_dir".into()));
    }
    let generator = load_generator(&a.checkpoint, None)?;
    generator.spec.check_size(cfg.preprocess.desired_size)?;
    let inst = &cfg.instrument;
    let source = instrument::open_source(&a.source, inst.fps, inst.loop_source)?;
    if !a.headless {
        log::warn!("no display window in this build; previews are served over the control service");
    }

    let control = ControlState::new(inst.initial, inst.record_dir.clone());
    if a.record {
        control.start_recording(None)?;
    }
    let bus = Arc::new(PreviewBus::default());
    let svc = service::serve(&cfg.service, control.clone(), bus.clone())?;
    println!("listening on {}", svc.url());
    std::io::stdout().flush()?;

    let opts = PerformOptions {
        layout: inst.layout,
        drop_stale_frames: inst.drop_stale_frames,
        max_frames: a.frames,
        preview: Some(bus),
    };
    let report = instrument::run_performance(&generator, &cfg.preprocess, source, &control, &opts, &mut []);
    svc.shutdown();
    let report = report?;
    println!("{report}");
    Ok(!matches!(report.reason, EndReason::SourceFailed(_)))
}

fn process(mut cfg: RepoConfig, a: &ProcessArgs) -> Result<(), Error> {
    if let Some(v) = a.layout {
        cfg.instrument.layout = v;
    }
    if let Some(v) = a.size {
        cfg.preprocess.desired_size = v;
    }
    if let Some(p) = &a.params {
        cfg.instrument.initial = LiveParams::parse(p)?;
    }
    print_config(&cfg);
    cfg.preprocess.validate()?;
    let params = match &a.sidecar {
        Some(path) => ProcessParams::Sidecar(read_sidecar(path)?),
        None => ProcessParams::Fixed(cfg.instrument.initial),
    };
    let generator = load_generator(&a.checkpoint, None)?;
    let written =
        instrument::process_dir(&generator, &cfg.preprocess, &a.input, &a.out, &params, cfg.instrument.layout)?;
    println!("wrote {} images to {}", written.len(), a.out.display());
    Ok(())
}

fn preview_pairs(mut cfg: RepoConfig, a: &PreviewArgs) -> Result<(), Error> {
    if let Some(v) = &a.corpus {
        cfg.train.corpus = v.clone();
    }
    if let Some(v) = a.size {
        cfg.preprocess.desired_size = v;
    }
    print_config(&cfg);
    cfg.preprocess.validate()?;
    let corpus = load_corpus(&cfg.train.corpus, cfg.preprocess.desired_size)?;
    std::fs::create_dir_all(&a.out)?;
    for i in 0..a.n {
        let mut rng = batch_rng(cfg.train.seed, i as u64);
        let b = next_minibatch(&corpus, &cfg.preprocess, &mut rng, 1)?;
        let img = trainer::triptych(&b.inputs, &b.targets, None)?;
        codec::write_png(a.out.join(format!("pair_{i:04}.png")), &img)?;
    }
    println!("wrote {} triptychs to {}", a.n, a.out.display());
    Ok(())
}

fn synth_corpus(cfg: &RepoConfig, a: &SynthArgs) -> Result<(), Error> {
    if a.size == 0 {
        return Err(Error::InvalidArgument("--size must be >= 1".into()));
    }
    println!("seed = {}", cfg.train.seed);
    let paths = synth::write_corpus(&a.out, a.count, a.size, cfg.train.seed)?;
    println!("wrote {} images to {}", paths.len(), a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train(a) => train(cfg, a).map(|_| true),
        Command::Perform(a) => perform(cfg, a),
        Command::Process(a) => process(cfg, a).map(|_| true),
        Command::PreviewPairs(a) => preview_pairs(cfg, a).map(|_| true),
        Command::SynthCorpus(a) => synth_corpus(&cfg, a).map(|_| true),
        Command::DefaultConfig => {
            print!("{}", RepoConfig::default_toml());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
