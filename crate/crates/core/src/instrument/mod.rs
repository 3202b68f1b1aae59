//! The performance loop: frames in, live preprocessing, inference,
//! compositing, and delivery to the preview bus, sinks and recorder.

mod recorder;
mod source;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

pub use recorder::{frame_name, next_run_dir, read_sidecar, Recorder, SidecarRow, PARAMS_FILE, PARAMS_HEADER};
pub use source::{list_images, open_source, FrameSource, LatestFrames, LatestSlot, SequenceSource, SourceSpec};

use crate::codec;
use crate::config::Layout;
use crate::control::{ControlSnapshot, ControlState};
use crate::dataset::{from_tensor, to_tensor};
use crate::error::{Error, Result};
use crate::imaging::{self, Image8};
use crate::model::GeneratorWeights;
use crate::preprocess::{apply_live, LiveParams, PreprocessConfig};
use crate::protocol::PreviewKind;

/// Everything produced for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    /// Grayscale model input.
    pub input: Image8,
    /// RGB model output.
    pub output: Image8,
    pub composite: Image8,
}

/// Source frame scaled to the output height at its own aspect, then the
/// output; or the output alone.
pub fn composite(frame: &Image8, output: &Image8, layout: Layout) -> Result<Image8> {
    match layout {
        Layout::OutputOnly => Ok(output.clone()),
        Layout::SideBySide => {
            let h = output.height();
            let w = ((frame.width() as f64 * h as f64 / frame.height() as f64).round() as usize).max(1);
            let left = imaging::resize_cubic(&frame.to_rgb(), w, h)?;
            imaging::hconcat(&[&left, output])
        }
    }
}

pub fn infer(generator: &GeneratorWeights, input: &Image8) -> Result<Image8> {
    from_tensor(&generator.forward(&to_tensor(input))?)
}

fn render_timed(
    generator: &GeneratorWeights,
    config: &PreprocessConfig,
    frame: &Image8,
    live: &LiveParams,
    layout: Layout,
) -> Result<(Rendered, [f64; 3])> {
    let t0 = Instant::now();
    let input = apply_live(frame, config, live);
    let t1 = Instant::now();
    let output = infer(generator, &input)?;
    let t2 = Instant::now();
    let composite = composite(frame, &output, layout)?;
    let t3 = Instant::now();
    let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
    Ok((Rendered { input, output, composite }, [ms(t0, t1), ms(t1, t2), ms(t2, t3)]))
}

/// The per-frame pipeline shared by live performance and offline replay.
pub fn render_frame(
    generator: &GeneratorWeights,
    config: &PreprocessConfig,
    frame: &Image8,
    live: &LiveParams,
    layout: Layout,
) -> Result<Rendered> {
    render_timed(generator, config, frame, live, layout).map(|r| r.0)
}

pub struct PreviewFrame {
    pub kind: PreviewKind,
    pub index: u64,
    pub image: Image8,
    png: OnceLock<Vec<u8>>,
}

impl PreviewFrame {
    /// PNG encoding, computed on first use by whichever reader needs it.
    pub fn png(&self) -> &[u8] {
        self.png.get_or_init(|| codec::encode_png(&self.image))
    }
}

/// Latest frame of each preview kind. Publishing never waits on readers.
#[derive(Default)]
pub struct PreviewBus {
    latest: Mutex<[Option<Arc<PreviewFrame>>; 3]>,
}

impl PreviewBus {
    pub fn publish(&self, kind: PreviewKind, index: u64, image: Image8) {
        let frame = Arc::new(PreviewFrame { kind, index, image, png: OnceLock::new() });
        self.latest.lock().expect("bus lock poisoned")[kind as usize] = Some(frame);
    }

    pub fn latest(&self, kind: PreviewKind) -> Option<Arc<PreviewFrame>> {
        self.latest.lock().expect("bus lock poisoned")[kind as usize].clone()
    }
}

pub trait FrameSink {
    fn deliver(&mut self, index: u64, frame: &Rendered, params: &LiveParams);
}

/// Stage names in [`FrameStats::latency_ms`] order.
pub const STAGES: [&str; 4] = ["acquire", "preprocess", "infer", "composite"];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameStats {
    /// Exponential moving average of the delivered frame rate.
    pub fps: f64,
    /// Latest per-stage latencies.
    pub latency_ms: [f64; 4],
    pub frames_total: u64,
}

const FPS_SMOOTHING: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub enum EndReason {
    SourceExhausted,
    FrameLimit,
    Stopped,
    SourceFailed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitReport {
    pub frames: u64,
    /// Frames over unpaused wall time.
    pub mean_fps: f64,
    pub mean_latency_ms: [f64; 4],
    /// Per-frame wall time in milliseconds.
    pub frame_times_ms: Vec<f64>,
    pub dropped_frames: u64,
    pub recordings: Vec<PathBuf>,
    pub reason: EndReason,
}

impl fmt::Display for ExitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames: {}", self.frames)?;
        writeln!(f, "mean fps: {:.2}", self.mean_fps)?;
        for (name, ms) in STAGES.iter().zip(self.mean_latency_ms) {
            writeln!(f, "mean {name} ms: {ms:.3}")?;
        }
        if self.dropped_frames > 0 {
            writeln!(f, "dropped frames: {}", self.dropped_frames)?;
        }
        for r in &self.recordings {
            writeln!(f, "recorded: {}", r.display())?;
        }
        let reason = match &self.reason {
            EndReason::SourceExhausted => "source exhausted".to_string(),
            EndReason::FrameLimit => "frame limit reached".to_string(),
            EndReason::Stopped => "stop requested".to_string(),
            EndReason::SourceFailed(e) => format!("source failed: {e}"),
        };
        write!(f, "ended: {reason}")
    }
}

#[derive(Clone, Default)]
pub struct PerformOptions {
    pub layout: Layout,
    /// Run the source on its own thread and always process its newest frame.
    pub drop_stale_frames: bool,
    pub max_frames: Option<u64>,
    pub preview: Option<Arc<PreviewBus>>,
}

enum Feed {
    Direct(Box<dyn FrameSource>),
    Latest(LatestFrames),
}

impl Feed {
    fn next_frame(&mut self) -> Result<Option<Image8>> {
        match self {
            Feed::Direct(s) => s.next_frame(),
            Feed::Latest(l) => l.next_frame(),
        }
    }
}

struct ActiveRecording {
    session: u64,
    recorder: Recorder,
}

fn sync_recorder(
    rec: &mut Option<ActiveRecording>,
    snap: &ControlSnapshot,
    control: &Arc<ControlState>,
    finished: &mut Vec<PathBuf>,
) {
    let wanted = snap.recording.then_some(snap.record_session);
    if rec.as_ref().map(|r| r.session) == wanted {
        return;
    }
    if let Some(old) = rec.take() {
        let dir = old.recorder.dir().to_path_buf();
        match old.recorder.finish() {
            Ok(n) => log::info!("recorded {n} frames to {}", dir.display()),
            Err(e) => log::warn!("recording {} ended with {e}", dir.display()),
        }
        finished.push(dir);
    }
    if let (Some(session), Some(root)) = (wanted, snap.record_dir.as_ref()) {
        match Recorder::start(root, control.clone()) {
            Ok(recorder) => *rec = Some(ActiveRecording { session, recorder }),
            Err(e) => {
                control.report_error(format!("cannot start recording in {}: {e}", root.display()));
                control.stop_recording();
            }
        }
    }
}

/// Runs the loop until the source ends, `max_frames` is reached or a stop is
/// requested.
///
/// Each frame uses exactly one control snapshot, taken once the frame has
/// been acquired. While paused no frames are pulled or delivered and the
/// stats stay frozen. Inference failures abort with the error; a failing
/// source ends the run with a report.
pub fn run_performance(
    generator: &GeneratorWeights,
    config: &PreprocessConfig,
    source: Box<dyn FrameSource>,
    control: &Arc<ControlState>,
    options: &PerformOptions,
    sinks: &mut [&mut dyn FrameSink],
) -> Result<ExitReport> {
    generator.spec.check_size(config.desired_size)?;
    let mut feed =
        if options.drop_stale_frames { Feed::Latest(LatestFrames::spawn(source)) } else { Feed::Direct(source) };
    let started = Instant::now();
    let mut stats = FrameStats::default();
    let mut sums = [0.0; 4];
    let mut active = Duration::ZERO;
    let mut frame_times = Vec::new();
    let mut last_frame: Option<Instant> = None;
    let mut pending: Option<Image8> = None;
    let mut rec: Option<ActiveRecording> = None;
    let mut recordings = Vec::new();

    let reason = loop {
        if control.stop_requested() {
            break EndReason::Stopped;
        }
        if options.max_frames.is_some_and(|m| stats.frames_total >= m) {
            break EndReason::FrameLimit;
        }
        let early = control.snapshot();
        sync_recorder(&mut rec, &early, control, &mut recordings);
        if early.paused {
            last_frame = None;
            std::thread::sleep(Duration::from_millis(5));
            continue;
        }

        let t0 = Instant::now();
        let frame = match pending.take() {
            Some(f) => f,
            None => match feed.next_frame() {
                Ok(Some(f)) => f,
                Ok(None) => break EndReason::SourceExhausted,
                Err(e) => {
                    control.report_error(format!("source failed: {e}"));
                    break EndReason::SourceFailed(e.to_string());
                }
            },
        };
        let acquire_ms = t0.elapsed().as_secs_f64() * 1e3;
        let snap = control.snapshot();
        if snap.paused {
            pending = Some(frame);
            continue;
        }
        sync_recorder(&mut rec, &snap, control, &mut recordings);

        let (rendered, [pre_ms, infer_ms, comp_ms]) =
            match render_timed(generator, config, &frame, &snap.params, options.layout) {
                Ok(r) => r,
                Err(e) => {
                    drop(rec);
                    return Err(e);
                }
            };
        let index = stats.frames_total;
        if let Some(bus) = &options.preview {
            bus.publish(PreviewKind::Input, index, rendered.input.clone());
            bus.publish(PreviewKind::Output, index, rendered.output.clone());
            bus.publish(PreviewKind::Composite, index, rendered.composite.clone());
        }
        for sink in sinks.iter_mut() {
            sink.deliver(index, &rendered, &snap.params);
        }
        if let Some(r) = &rec {
            let t_ms = started.elapsed().as_millis() as u64;
            r.recorder.push(index, t_ms, snap.params, rendered.composite);
        }

        let now = Instant::now();
        let frame_time = now - t0;
        active += frame_time;
        frame_times.push(frame_time.as_secs_f64() * 1e3);
        if let Some(prev) = last_frame {
            let inst = 1.0 / (now - prev).as_secs_f64().max(1e-9);
            stats.fps = if stats.fps == 0.0 { inst } else { stats.fps + FPS_SMOOTHING * (inst - stats.fps) };
            control.set_fps(stats.fps);
        }
        last_frame = Some(now);
        stats.latency_ms = [acquire_ms, pre_ms, infer_ms, comp_ms];
        for (s, l) in sums.iter_mut().zip(stats.latency_ms) {
            *s += l;
        }
        stats.frames_total += 1;
    };

    if let Some(old) = rec.take() {
        let dir = old.recorder.dir().to_path_buf();
        if let Err(e) = old.recorder.finish() {
            log::warn!("recording {} ended with {e}", dir.display());
        }
        recordings.push(dir);
    }
    let dropped_frames = match feed {
        Feed::Latest(l) => l.finish(),
        Feed::Direct(_) => 0,
    };
    let n = stats.frames_total;
    let secs = active.as_secs_f64();
    Ok(ExitReport {
        frames: n,
        mean_fps: if secs > 0.0 { n as f64 / secs } else { 0.0 },
        mean_latency_ms: sums.map(|s| if n > 0 { s / n as f64 } else { 0.0 }),
        frame_times_ms: frame_times,
        dropped_frames,
        recordings,
        reason,
    })
}

/// Parameters for offline processing: one set for every frame, or a
/// recorded sidecar naming frame indices and their parameters.
pub enum ProcessParams {
    Fixed(LiveParams),
    Sidecar(Vec<SidecarRow>),
}

/// Offline equivalent of the live path over a directory of frames.
///
/// With fixed parameters every image becomes `<stem>.png`. With a sidecar,
/// row `frame = n` renders input file `n mod len` as `frame_{n:07}.png`,
/// reproducing a recording made from the same directory as a sequence
/// source.
pub fn process_dir(
    generator: &GeneratorWeights,
    config: &PreprocessConfig,
    in_dir: &Path,
    out_dir: &Path,
    params: &ProcessParams,
    layout: Layout,
) -> Result<Vec<PathBuf>> {
    generator.spec.check_size(config.desired_size)?;
    let files = list_images(in_dir).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG or JPEG images in {}", in_dir.display())));
    }
    std::fs::create_dir_all(out_dir)?;
    let jobs: Vec<(PathBuf, PathBuf, LiveParams)> = match params {
        ProcessParams::Fixed(p) => files
            .iter()
            .map(|f| {
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
                (f.clone(), out_dir.join(format!("{stem}.png")), *p)
            })
            .collect(),
        ProcessParams::Sidecar(rows) => rows
            .iter()
            .map(|r| {
                (files[(r.frame % files.len() as u64) as usize].clone(), out_dir.join(frame_name(r.frame)), r.params)
            })
            .collect(),
    };
    let mut written = Vec::with_capacity(jobs.len());
    for (src, dst, p) in jobs {
        let frame = codec::read_image(&src)?.to_rgb();
        let r = render_frame(generator, config, &frame, &p, layout)?;
        codec::write_png(&dst, &r.composite)?;
        written.push(dst);
    }
    Ok(written)
}
