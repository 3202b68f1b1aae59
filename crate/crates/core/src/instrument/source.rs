use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::codec;
use crate::error::{Error, Result};
use crate::imaging::Image8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SourceSpec {
    Camera(u32),
    Video(PathBuf),
    Sequence(PathBuf),
}

impl FromStr for SourceSpec {
    type Err = Error;

    /// `camera:N`, `video:path` or `seq:dir`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!("source {s:?} must look like camera:N, video:path or seq:dir"))
        })?;
        match kind {
            "camera" => arg
                .parse()
                .map(SourceSpec::Camera)
                .map_err(|_| Error::InvalidArgument(format!("camera id must be a number, got {arg:?}"))),
            "video" if !arg.is_empty() => Ok(SourceSpec::Video(arg.into())),
            "seq" if !arg.is_empty() => Ok(SourceSpec::Sequence(arg.into())),
            _ => Err(Error::InvalidArgument(format!("unknown source {s:?}; use camera:N, video:path or seq:dir"))),
        }
    }
}

pub trait FrameSource: Send {
    /// The next RGB frame, or `None` once the source is exhausted.
    fn next_frame(&mut self) -> Result<Option<Image8>>;

    fn native_size(&self) -> (usize, usize);
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Source(format!("cannot read {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && codec::is_image_path(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Deterministic source over the images of a directory. Frame `n` is file
/// `n mod len` when looping.
pub struct SequenceSource {
    files: Vec<PathBuf>,
    pos: usize,
    looping: bool,
    interval: Option<Duration>,
    next_due: Option<Instant>,
    size: (usize, usize),
}

impl SequenceSource {
    /// `fps <= 0` delivers frames as fast as they are requested.
    pub fn open(dir: &Path, fps: f64, looping: bool) -> Result<Self> {
        let files = list_images(dir)?;
        let first =
            files.first().ok_or_else(|| Error::Source(format!("no PNG or JPEG frames in {}", dir.display())))?;
        let img = codec::read_image(first)?;
        let interval = (fps > 0.0 && fps.is_finite()).then(|| Duration::from_secs_f64(1.0 / fps));
        Ok(Self { files, pos: 0, looping, interval, next_due: None, size: (img.width(), img.height()) })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

impl FrameSource for SequenceSource {
    fn next_frame(&mut self) -> Result<Option<Image8>> {
        if self.pos >= self.files.len() {
            if !self.looping {
                return Ok(None);
            }
            self.pos = 0;
        }
        if let Some(interval) = self.interval {
            let now = Instant::now();
            let due = self.next_due.unwrap_or(now);
            if due > now {
                std::thread::sleep(due - now);
            }
            self.next_due = Some(due.max(now) + interval);
        }
        let img = codec::read_image(&self.files[self.pos])
            .map_err(|e| Error::Source(format!("frame {}: {e}", self.files[self.pos].display())))?;
        self.pos += 1;
        Ok(Some(img.to_rgb()))
    }

    fn native_size(&self) -> (usize, usize) {
        self.size
    }
}

pub fn open_source(spec: &SourceSpec, fps: f64, looping: bool) -> Result<Box<dyn FrameSource>> {
    match spec {
        SourceSpec::Sequence(dir) => Ok(Box::new(SequenceSource::open(dir, fps, looping)?)),
        SourceSpec::Camera(id) => {
            Err(Error::Source(format!("camera:{id}: camera capture is not available in this build; use seq:dir")))
        }
        SourceSpec::Video(path) => Err(Error::Source(format!(
            "video:{}: video decoding is not available in this build; extract frames and use seq:dir",
            path.display()
        ))),
    }
}

/// Capacity-one slot where a newer value replaces an unread older one.
pub struct LatestSlot<T> {
    state: Mutex<(Option<T>, bool)>,
    ready: Condvar,
}

impl<T> Default for LatestSlot<T> {
    fn default() -> Self {
        Self { state: Mutex::new((None, false)), ready: Condvar::new() }
    }
}

impl<T> LatestSlot<T> {
    /// Stores `value`; returns true if it replaced an unread one.
    pub fn put(&self, value: T) -> bool {
        let mut s = self.state.lock().expect("slot lock poisoned");
        let dropped = s.0.replace(value).is_some();
        self.ready.notify_one();
        dropped
    }

    pub fn close(&self) {
        self.state.lock().expect("slot lock poisoned").1 = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().expect("slot lock poisoned").1
    }

    /// Blocks for the newest value; `None` once closed and empty.
    pub fn take(&self) -> Option<T> {
        let mut s = self.state.lock().expect("slot lock poisoned");
        loop {
            if let Some(v) = s.0.take() {
                return Some(v);
            }
            if s.1 {
                return None;
            }
            s = self.ready.wait(s).expect("slot lock poisoned");
        }
    }
}

/// Runs a source on its own thread, keeping only the newest frame.
pub struct LatestFrames {
    slot: Arc<LatestSlot<Result<Image8>>>,
    size: (usize, usize),
    handle: Option<std::thread::JoinHandle<u64>>,
}

impl LatestFrames {
    pub fn spawn(mut source: Box<dyn FrameSource>) -> Self {
        let slot = Arc::new(LatestSlot::default());
        let size = source.native_size();
        let producer = slot.clone();
        let handle = std::thread::spawn(move || {
            let mut dropped = 0;
            while !producer.is_closed() {
                match source.next_frame() {
                    Ok(Some(f)) => dropped += producer.put(Ok(f)) as u64,
                    Ok(None) => break,
                    Err(e) => {
                        producer.put(Err(e));
                        break;
                    }
                }
            }
            producer.close();
            dropped
        });
        Self { slot, size, handle: Some(handle) }
    }

    /// Number of frames replaced before they were read; available once the
    /// producer has finished.
    pub fn finish(mut self) -> u64 {
        self.slot.close();
        self.handle.take().map(|h| h.join().unwrap_or(0)).unwrap_or(0)
    }
}

impl FrameSource for LatestFrames {
    fn next_frame(&mut self) -> Result<Option<Image8>> {
        self.slot.take().transpose()
    }

    fn native_size(&self) -> (usize, usize) {
        self.size
    }
}

impl Drop for LatestFrames {
    fn drop(&mut self) {
        self.slot.close();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
