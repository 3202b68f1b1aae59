use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::codec;
use crate::control::ControlState;
use crate::error::{Error, Result};
use crate::imaging::Image8;
use crate::preprocess::LiveParams;

pub const PARAMS_FILE: &str = "params.csv";
pub const PARAMS_HEADER: &str = "frame,t_ms,norm_low,norm_high,brightness,contrast";

pub fn frame_name(index: u64) -> String {
    format!("frame_{index:07}.png")
}

/// First `run_NNN` under `root` that does not exist yet.
pub fn next_run_dir(root: &Path) -> PathBuf {
    (0..).map(|i| root.join(format!("run_{i:03}"))).find(|p| !p.exists()).expect("unbounded range")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SidecarRow {
    pub frame: u64,
    pub t_ms: u64,
    pub params: LiveParams,
}

impl SidecarRow {
    fn to_line(self) -> String {
        let p = self.params;
        format!("{},{},{},{},{},{}", self.frame, self.t_ms, p.norm_low, p.norm_high, p.brightness, p.contrast)
    }
}

pub fn read_sidecar(path: &Path) -> Result<Vec<SidecarRow>> {
    let file = File::open(path).map_err(|e| Error::InvalidArgument(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == PARAMS_HEADER => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "{}: expected header {PARAMS_HEADER:?}, got {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidArgument(format!("{}: malformed row {line:?}", path.display()));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        rows.push(SidecarRow {
            frame: f[0].parse().map_err(|_| bad())?,
            t_ms: f[1].parse().map_err(|_| bad())?,
            params: LiveParams {
                norm_low: f[2].parse().map_err(|_| bad())?,
                norm_high: f[3].parse().map_err(|_| bad())?,
                brightness: f[4].parse().map_err(|_| bad())?,
                contrast: f[5].parse().map_err(|_| bad())?,
            },
        });
    }
    Ok(rows)
}

struct Job {
    row: SidecarRow,
    image: Image8,
}

/// One recording run: composited frames as numbered PNGs plus a params
/// sidecar, written in order on a background thread.
///
/// A write failure stops the run, clears the recording flag and reports the
/// error to control subscribers; the performance itself continues.
pub struct Recorder {
    dir: PathBuf,
    tx: Option<Sender<Job>>,
    handle: Option<JoinHandle<Result<u64>>>,
}

impl Recorder {
    pub fn start(root: &Path, control: Arc<ControlState>) -> Result<Self> {
        fs::create_dir_all(root)?;
        let dir = next_run_dir(root);
        fs::create_dir(&dir)?;
        let mut csv = BufWriter::new(File::create(dir.join(PARAMS_FILE))?);
        writeln!(csv, "{PARAMS_HEADER}")?;
        csv.flush()?;
        let (tx, rx) = channel::<Job>();
        let out = dir.clone();
        let handle = std::thread::spawn(move || {
            let mut written = 0;
            for job in &rx {
                let res = codec::write_png(out.join(frame_name(job.row.frame)), &job.image)
                    .and_then(|_| Ok(writeln!(csv, "{}", job.row.to_line()).and_then(|_| csv.flush())?));
                if let Err(e) = res {
                    control.report_error(format!("recording to {} stopped: {e}", out.display()));
                    control.stop_recording();
                    rx.iter().for_each(drop);
                    return Err(e);
                }
                written += 1;
            }
            Ok(written)
        });
        log::info!("recording to {}", dir.display());
        Ok(Self { dir, tx: Some(tx), handle: Some(handle) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn push(&self, frame: u64, t_ms: u64, params: LiveParams, image: Image8) {
        if let Some(tx) = &self.tx {
            let _ = tx.send(Job { row: SidecarRow { frame, t_ms, params }, image });
        }
    }

    /// Waits for pending writes; returns the number of frames written.
    pub fn finish(mut self) -> Result<u64> {
        self.tx.take();
        self.handle
            .take()
            .expect("joined once")
            .join()
            .unwrap_or_else(|_| Err(Error::Source("recorder panicked".into())))
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
