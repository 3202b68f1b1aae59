//! The training run: prefetch, steps, metrics, previews and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::dataset::{self, batch_rng, load_corpus, next_minibatch, Corpus, MiniBatch, Prefetcher};
use crate::error::{invalid, Error, Result};
use crate::imaging::{self, Image8};
use crate::model::{
    load_checkpoint, save_checkpoint, train_step, write_model_card, Checkpoint, DiscriminatorSpec, GeneratorSpec,
    HyperParams, TrainState,
};
use crate::preprocess::PreprocessConfig;
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "iter,l1,gan_g,gan_d,wall_ms";
pub const MANIFEST_FILE: &str = "corpus_manifest.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub corpus: PathBuf,
    pub preprocess: PreprocessConfig,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub hyper: HyperParams,
    pub total_iterations: u64,
    pub batch_size: usize,
    /// Zero disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    /// Zero disables previews.
    pub preview_every: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Prefetch threads; zero assembles batches on the trainer thread.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            preprocess: PreprocessConfig::default(),
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            hyper: HyperParams::default(),
            total_iterations: 500_000,
            batch_size: 4,
            checkpoint_every: 5_000,
            preview_every: 1_000,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            workers: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_iterations == 0 {
            return Err(invalid("total_iterations must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        self.preprocess.validate()?;
        self.generator.validate()?;
        self.generator.check_size(self.preprocess.desired_size)?;
        let d_in = self.generator.in_channels + self.generator.out_channels;
        if self.discriminator.in_channels != d_in {
            return Err(invalid(format!(
                "discriminator in_channels must be {d_in} (input plus output channels), got {}",
                self.discriminator.in_channels
            )));
        }
        if !self.preprocess.desired_size.is_multiple_of(8) {
            return Err(invalid("desired_size must be a multiple of 8 for the discriminator"));
        }
        Ok(())
    }
}

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration:07}.l2sc")
}

pub fn preview_name(iteration: u64) -> String {
    format!("preview_{iteration:07}.png")
}

fn checkpoint_iteration(path: &Path) -> Option<u64> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("ckpt_")?.strip_suffix(".l2sc")?.parse().ok()
}

/// Checkpoints in `dir` sorted by iteration.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if let Some(it) = checkpoint_iteration(&path) {
            out.push((it, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Keeps the newest three checkpoints plus every tenth periodic one.
fn prune_checkpoints(dir: &Path, every: u64) -> Result<()> {
    let all = list_checkpoints(dir)?;
    let keep_from = all.len().saturating_sub(3);
    for (i, (it, path)) in all.iter().enumerate() {
        let milestone = every > 0 && it % (10 * every) == 0;
        if i < keep_from && !milestone {
            fs::remove_file(path)?;
            let _ = fs::remove_file(crate::model::checkpoint::model_card_path(path));
        }
    }
    Ok(())
}

/// One row per batch item: target crop | synthesized input | prediction.
/// A missing prediction renders as mid-gray.
pub fn triptych(inputs: &Tensor, targets: &Tensor, predictions: Option<&Tensor>) -> Result<Image8> {
    let (n, _, h, w) = targets.dims4();
    let gray = Image8::filled(w, h, 3, 128)?;
    let mut rows = Vec::with_capacity(n);
    for b in 0..n {
        let target = dataset::from_tensor_item(targets, b)?;
        let input = dataset::from_tensor_item(inputs, b)?.to_rgb();
        let pred = match predictions {
            Some(p) => dataset::from_tensor_item(p, b)?.to_rgb(),
            None => gray.clone(),
        };
        rows.push(imaging::hconcat(&[&target, &input, &pred])?);
    }
    imaging::vconcat(&rows.iter().collect::<Vec<_>>())
}

/// One `metrics.csv` row: `(iter, l1, gan_g, gan_d, wall_ms)`.
pub type MetricsRow = (u64, f32, f32, f32, f64);

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for line in file.lines().skip(1) {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Config(format!("malformed metrics row {line:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        rows.push((
            f[0].parse().map_err(|_| bad())?,
            f[1].parse().map_err(|_| bad())?,
            f[2].parse().map_err(|_| bad())?,
            f[3].parse().map_err(|_| bad())?,
            f[4].parse().map_err(|_| bad())?,
        ));
    }
    Ok(rows)
}

/// Opens the metrics file, keeping only rows up to `completed` when resuming.
fn open_metrics(path: &Path, completed: u64) -> Result<File> {
    let mut kept = vec![METRICS_HEADER.to_string()];
    if completed > 0 && path.exists() {
        for line in BufReader::new(File::open(path)?).lines().skip(1) {
            let line = line?;
            let iter: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
            if iter.is_some_and(|i| i <= completed) {
                kept.push(line);
            }
        }
    }
    let mut body = kept.join("\n");
    body.push('\n');
    fs::write(path, body)?;
    Ok(OpenOptions::new().append(true).open(path)?)
}

enum Batches {
    Inline { corpus: Arc<Corpus>, cfg: PreprocessConfig, seed: u64, batch: usize, next: u64 },
    Prefetch(Prefetcher),
}

impl Batches {
    fn next(&mut self) -> Result<MiniBatch> {
        match self {
            Batches::Inline { corpus, cfg, seed, batch, next } => {
                let b = next_minibatch(corpus, cfg, &mut batch_rng(*seed, *next), *batch);
                *next += 1;
                b
            }
            Batches::Prefetch(p) => p.next_batch().unwrap_or_else(|| Err(Error::Corpus("batch stream ended".into()))),
        }
    }
}

fn save(cfg: &TrainConfig, state: &TrainState, seed: u64) -> Result<PathBuf> {
    let path = cfg.out_dir.join(checkpoint_name(state.iteration));
    let ckpt = Checkpoint::from_state(state, seed);
    save_checkpoint(&path, &ckpt)?;
    write_model_card(&path, &ckpt, Some(&cfg.corpus))?;
    Ok(path)
}

/// Runs training to `total_iterations` and returns the final checkpoint path.
///
/// With `resume`, the networks, optimizer moments, iteration counter and
/// root seed come from the checkpoint; the metrics file is truncated to the
/// resumed iteration and the run continues with the same batch stream an
/// uninterrupted run would have seen.
pub fn train(cfg: &TrainConfig, resume: Option<&Path>) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let corpus = Arc::new(load_corpus(&cfg.corpus, cfg.preprocess.desired_size)?);
    corpus.write_manifest(cfg.out_dir.join(MANIFEST_FILE))?;
    log::info!("corpus: {} images ({} rejected)", corpus.len(), corpus.rejected.len());

    let (mut state, seed) = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.generator.spec != cfg.generator || ckpt.discriminator.spec != cfg.discriminator {
                return Err(Error::Shape(format!(
                    "checkpoint networks {:?} / {:?} do not match the configured ones",
                    ckpt.generator.spec, ckpt.discriminator.spec
                )));
            }
            if ckpt.seed != cfg.seed {
                log::warn!("resuming with the checkpoint's seed {} instead of {}", ckpt.seed, cfg.seed);
            }
            let seed = ckpt.seed;
            (ckpt.into_state(), seed)
        }
        None => {
            let mut rng = batch_rng(cfg.seed, 0);
            (TrainState::init(cfg.generator, cfg.discriminator, &mut rng), cfg.seed)
        }
    };
    if state.iteration >= cfg.total_iterations {
        return Err(invalid(format!(
            "checkpoint is at iteration {} but total_iterations is {}",
            state.iteration, cfg.total_iterations
        )));
    }

    let mut metrics = open_metrics(&cfg.out_dir.join(METRICS_FILE), state.iteration)?;
    let first = state.iteration + 1;
    let mut batches = if cfg.workers == 0 {
        Batches::Inline {
            corpus: corpus.clone(),
            cfg: cfg.preprocess.clone(),
            seed,
            batch: cfg.batch_size,
            next: first,
        }
    } else {
        Batches::Prefetch(Prefetcher::spawn(
            corpus.clone(),
            cfg.preprocess.clone(),
            seed,
            cfg.batch_size,
            first,
            cfg.total_iterations,
            cfg.workers,
            2 * cfg.workers,
        ))
    };

    let mut last = None;
    while state.iteration < cfg.total_iterations {
        let started = Instant::now();
        let batch = batches.next()?;
        let out = match train_step(&mut state, &batch.inputs, &batch.targets, &cfg.hyper) {
            Ok(out) => out,
            Err(e @ Error::NonFinite { .. }) => {
                log::error!("{e}; last good checkpoint: {:?}", last.as_ref().map(|p: &PathBuf| p.display()));
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let it = state.iteration;
        let m = out.metrics;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        writeln!(metrics, "{it},{},{},{},{wall_ms:.3}", m.l1, m.gan_g, m.gan_d)?;

        if cfg.preview_every > 0 && it % cfg.preview_every == 0 {
            let img = triptych(&batch.inputs, &batch.targets, Some(&out.prediction))?;
            codec::write_png(cfg.out_dir.join(preview_name(it)), &img)?;
        }
        if it % 50 == 0 || it == cfg.total_iterations {
            log::info!("iter {it}: l1 {:.4} gan_g {:.4} gan_d {:.4} ({wall_ms:.1} ms)", m.l1, m.gan_g, m.gan_d);
        }
        let periodic = cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0;
        if periodic || it == cfg.total_iterations {
            metrics.flush()?;
            last = Some(save(cfg, &state, seed)?);
            prune_checkpoints(&cfg.out_dir, cfg.checkpoint_every)?;
        }
    }
    Ok(last.expect("final iteration always checkpoints"))
}
