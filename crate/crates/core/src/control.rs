//! Live control state with snapshot semantics.
//!
//! Readers take an `Arc` of the current snapshot and never see a partially
//! applied change. All writes go through a single mutex-guarded updater that
//! bumps the generation counter and notifies subscribers in order, so every
//! subscriber observes generations strictly increasing.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};

use crate::error::{Error, Result};
use crate::preprocess::LiveParams;

#[derive(Clone, Debug, PartialEq)]
pub struct ControlSnapshot {
    pub params: LiveParams,
    pub paused: bool,
    pub recording: bool,
    /// Where the current or next recording goes.
    pub record_dir: Option<PathBuf>,
    /// Incremented on every `start_record`; lets the render loop notice a
    /// stop/start pair that happened between two frames.
    pub record_session: u64,
    pub generation: u64,
}

#[derive(Clone, Debug)]
pub enum ControlEvent {
    State(Arc<ControlSnapshot>),
    Error(String),
}

pub struct ControlState {
    current: RwLock<Arc<ControlSnapshot>>,
    subscribers: Mutex<Vec<Sender<ControlEvent>>>,
    stop: AtomicBool,
    fps_bits: AtomicU64,
}

impl ControlState {
    pub fn new(params: LiveParams, record_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            current: RwLock::new(Arc::new(ControlSnapshot {
                params,
                paused: false,
                recording: false,
                record_dir,
                record_session: 0,
                generation: 0,
            })),
            subscribers: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
            fps_bits: AtomicU64::new(0f64.to_bits()),
        })
    }

    pub fn snapshot(&self) -> Arc<ControlSnapshot> {
        self.current.read().expect("control lock poisoned").clone()
    }

    /// Receives every state change and error from now on.
    pub fn subscribe(&self) -> Receiver<ControlEvent> {
        let (tx, rx) = channel();
        self.subscribers.lock().expect("control lock poisoned").push(tx);
        rx
    }

    fn update<R>(&self, f: impl FnOnce(&mut ControlSnapshot) -> Result<R>) -> Result<R> {
        let mut subs = self.subscribers.lock().expect("control lock poisoned");
        let mut next = (*self.snapshot()).clone();
        let r = f(&mut next)?;
        next.generation += 1;
        let next = Arc::new(next);
        *self.current.write().expect("control lock poisoned") = next.clone();
        subs.retain(|s| s.send(ControlEvent::State(next.clone())).is_ok());
        Ok(r)
    }

    /// Validates and stores one live parameter; returns the stored (possibly
    /// clamped) value.
    pub fn set_param(&self, name: &str, value: f64) -> Result<f64> {
        self.update(|s| s.params.set(name, value))
    }

    pub fn set_params(&self, params: LiveParams) {
        let _ = self.update(|s| {
            s.params = params;
            Ok(())
        });
    }

    pub fn pause(&self) {
        let _ = self.update(|s| {
            s.paused = true;
            Ok(())
        });
    }

    pub fn resume(&self) {
        let _ = self.update(|s| {
            s.paused = false;
            Ok(())
        });
    }

    /// Starts a new recording run. Without `dir`, the last configured
    /// directory is reused. Starting while already recording keeps the
    /// current run.
    pub fn start_recording(&self, dir: Option<PathBuf>) -> Result<()> {
        self.update(|s| {
            if s.recording {
                return Ok(());
            }
            if let Some(d) = dir {
                s.record_dir = Some(d);
            }
            if s.record_dir.is_none() {
                return Err(Error::InvalidArgument("no record directory configured".into()));
            }
            s.recording = true;
            s.record_session += 1;
            Ok(())
        })
    }

    pub fn stop_recording(&self) {
        let _ = self.update(|s| {
            s.recording = false;
            Ok(())
        });
    }

    /// Forwards an error to every subscriber.
    pub fn report_error(&self, message: impl Into<String>) {
        let message = message.into();
        log::error!("{message}");
        let mut subs = self.subscribers.lock().expect("control lock poisoned");
        subs.retain(|s| s.send(ControlEvent::Error(message.clone())).is_ok());
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    pub fn set_fps(&self, fps: f64) {
        self.fps_bits.store(fps.to_bits(), Ordering::Relaxed);
    }

    pub fn fps(&self) -> f64 {
        f64::from_bits(self.fps_bits.load(Ordering::Relaxed))
    }
}
