//! Target-only corpus ingestion and on-the-fly mini-batch assembly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use walkdir::WalkDir;

use crate::codec;
use crate::error::{invalid, Error, Result};
use crate::imaging::Image8;
use crate::preprocess::{make_pair, sample_params, PreprocessConfig, PreprocessParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: String,
}

/// Validated, immutable index of target images.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    /// Sorted by path.
    pub entries: Vec<CorpusEntry>,
    pub min_dim: usize,
    /// Files that were found but not admitted, with the reason.
    pub rejected: Vec<Rejection>,
}

pub const SHORT_SIDE_REASON: &str = "short side < desired_size";

pub fn load_corpus(dir: impl AsRef<Path>, desired_size: usize) -> Result<Corpus> {
    let root = dir.as_ref();
    if !root.is_dir() {
        return Err(Error::Corpus(format!("corpus directory {} does not exist", root.display())));
    }
    let mut paths = Vec::new();
    for entry in WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| Error::Corpus(e.to_string()))?;
        if entry.file_type().is_file() && codec::is_image_path(entry.path()) {
            paths.push(entry.into_path());
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Corpus(format!("no PNG or JPEG files under {}", root.display())));
    }

    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for path in paths {
        let reason = match codec::read_image(&path) {
            Ok(img) if img.channels() != 3 => format!("{}-channel image; RGB required", img.channels()),
            Ok(img) if img.width().min(img.height()) < desired_size => SHORT_SIDE_REASON.to_string(),
            Ok(img) => {
                entries.push(CorpusEntry { path, width: img.width(), height: img.height() });
                continue;
            }
            Err(e) => e.to_string(),
        };
        log::warn!("skipping {}: {reason}", path.display());
        rejected.push(Rejection { path, reason });
    }
    if entries.is_empty() {
        let report: Vec<String> = rejected.iter().map(|r| format!("{}: {}", r.path.display(), r.reason)).collect();
        return Err(Error::Corpus(format!("no valid images in {}:\n{}", root.display(), report.join("\n"))));
    }
    Ok(Corpus { root: root.to_path_buf(), entries, min_dim: desired_size, rejected })
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<Image8> {
        codec::read_image(&self.entries[index].path)
    }

    /// One line per entry: `path<TAB>width<TAB>height`.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.path.display(), e.width, e.height);
        }
        out
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.manifest())?;
        Ok(())
    }
}

/// Maps samples `v -> v / 127.5 - 1`, giving a `(1, C, H, W)` planar tensor.
pub fn to_tensor(img: &Image8) -> Tensor {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut data = vec![0.0f32; c * h * w];
    for (i, px) in img.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * h * w + i] = v as f32 / 127.5 - 1.0;
        }
    }
    Tensor::new(vec![1, c, h, w], data).expect("shape matches data")
}

/// Inverse of [`to_tensor`] for batch item `index`:
/// `x -> clamp(round((x + 1) · 127.5), 0, 255)`.
pub fn from_tensor_item(t: &Tensor, index: usize) -> Result<Image8> {
    let shape = t.shape();
    if shape.len() != 4 || index >= shape[0] {
        return Err(Error::Shape(format!("cannot take item {index} of tensor {shape:?}")));
    }
    let (_, c, h, w) = t.dims4();
    if c != 1 && c != 3 {
        return Err(Error::Shape(format!("image tensors need 1 or 3 channels, got {c}")));
    }
    let item = t.item(index);
    let mut data = vec![0u8; c * h * w];
    for i in 0..h * w {
        for ch in 0..c {
            let x = item[ch * h * w + i] as f64;
            data[i * c + ch] = crate::imaging::quantize((x + 1.0) * 127.5);
        }
    }
    Image8::new(w, h, c, data)
}

pub fn from_tensor(t: &Tensor) -> Result<Image8> {
    if t.shape().first() != Some(&1) {
        return Err(Error::Shape(format!("from_tensor expects batch size 1, got {:?}", t.shape())));
    }
    from_tensor_item(t, 0)
}

#[derive(Clone, Debug)]
pub struct MiniBatch {
    /// `(B, 1, S, S)` in `[-1, 1]`.
    pub inputs: Tensor,
    /// `(B, 3, S, S)` in `[-1, 1]`.
    pub targets: Tensor,
    pub params_used: Vec<PreprocessParams>,
    /// Corpus index of each pair's source image.
    pub sources: Vec<usize>,
}

/// Attempts per image load before the draw is discarded.
const LOAD_ATTEMPTS: usize = 2;

/// Draws `batch` images uniformly with replacement and synthesizes one pair
/// from each. Unreadable files are retried once, then replaced by a fresh
/// draw.
pub fn next_minibatch(
    corpus: &Corpus,
    config: &PreprocessConfig,
    rng: &mut impl Rng,
    batch: usize,
) -> Result<MiniBatch> {
    if batch == 0 {
        return Err(invalid("batch size must be >= 1"));
    }
    let mut inputs = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch);
    let mut params_used = Vec::with_capacity(batch);
    let mut sources = Vec::with_capacity(batch);
    let mut failures = 0;
    while inputs.len() < batch {
        let idx = rng.random_range(0..corpus.len());
        let img = (0..LOAD_ATTEMPTS).find_map(|_| corpus.load(idx).ok());
        let Some(img) = img else {
            failures += 1;
            log::warn!("could not read {}; drawing another image", corpus.entries[idx].path.display());
            if failures > 8 * batch {
                return Err(Error::Corpus("too many unreadable images while assembling a batch".into()));
            }
            continue;
        };
        let params = sample_params(config, rng);
        let pair = make_pair(&img, config, &params)?;
        inputs.push(to_tensor(&pair.input));
        targets.push(to_tensor(&pair.target));
        params_used.push(params);
        sources.push(idx);
    }
    Ok(MiniBatch { inputs: Tensor::stack(&inputs)?, targets: Tensor::stack(&targets)?, params_used, sources })
}

/// Generator for the batch of a given iteration: the root seed selects the
/// key, the iteration selects the stream. Any batch can be regenerated
/// independently, which makes resumed runs continue the same data stream.
pub fn batch_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Background workers assembling mini-batches ahead of the trainer.
///
/// Worker `w` of `n` builds the batches for iterations `w, w + n, ...` from
/// [`batch_rng`]; batches are handed out in iteration order regardless of the
/// worker count.
pub struct Prefetcher {
    rx: Receiver<(u64, Result<MiniBatch>)>,
    pending: BTreeMap<u64, Result<MiniBatch>>,
    next: u64,
    end: u64,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

/// Upper bound on queued batches.
pub const MAX_PREFETCH: usize = 8;

impl Prefetcher {
    /// Prefetches the batches for iterations `first..=last`.
    #[allow(clippy::too_many_arguments)]
    pub fn spawn(
        corpus: Arc<Corpus>,
        config: PreprocessConfig,
        seed: u64,
        batch: usize,
        first: u64,
        last: u64,
        workers: usize,
        capacity: usize,
    ) -> Self {
        let workers = workers.max(1);
        let (tx, rx) = sync_channel(capacity.clamp(1, MAX_PREFETCH));
        let stop = Arc::new(AtomicBool::new(false));
        let handles = (0..workers as u64)
            .map(|w| {
                let (tx, corpus, config, stop) = (tx.clone(), corpus.clone(), config.clone(), stop.clone());
                std::thread::spawn(move || {
                    let mut it = first + w;
                    while it <= last && !stop.load(Ordering::Relaxed) {
                        let mut rng = batch_rng(seed, it);
                        let mut msg = (it, next_minibatch(&corpus, &config, &mut rng, batch));
                        loop {
                            match tx.try_send(msg) {
                                Ok(()) => break,
                                Err(TrySendError::Full(m)) => {
                                    if stop.load(Ordering::Relaxed) {
                                        return;
                                    }
                                    msg = m;
                                    std::thread::sleep(Duration::from_millis(1));
                                }
                                Err(TrySendError::Disconnected(_)) => return,
                            }
                        }
                        it += workers as u64;
                    }
                })
            })
            .collect();
        Self { rx, pending: BTreeMap::new(), next: first, end: last, stop, workers: handles }
    }

    /// The batch for the next iteration, or `None` past the last one.
    pub fn next_batch(&mut self) -> Option<Result<MiniBatch>> {
        if self.next > self.end {
            return None;
        }
        loop {
            if let Some(b) = self.pending.remove(&self.next) {
                self.next += 1;
                return Some(b);
            }
            match self.rx.recv() {
                Ok((it, b)) => {
                    self.pending.insert(it, b);
                }
                Err(_) => return Some(Err(Error::Corpus("prefetch workers exited early".into()))),
            }
        }
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        while self.rx.try_recv().is_ok() {}
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}
