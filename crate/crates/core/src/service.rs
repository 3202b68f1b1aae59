//! WebSocket control service.
//!
//! One listener thread and one thread per client. Clients drive the shared
//! [`ControlState`]; every change is broadcast to all clients as a state
//! message. Previews are pulled from the [`PreviewBus`] at a capped rate and
//! skipped while a client's socket is still draining earlier output, so a
//! slow reader only ever sees fewer, newer frames.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tungstenite::{Bytes, Message, WebSocket};

use crate::config::ServiceConfig;
use crate::control::{ControlEvent, ControlState};
use crate::error::Result;
use crate::instrument::{PreviewBus, PreviewFrame};
use crate::protocol::{encode_preview, ClientMessage, PreviewKind, ServerMessage};

const POLL: Duration = Duration::from_millis(5);
/// Poll interval while a client's socket is full.
const BACKLOG_POLL: Duration = Duration::from_millis(50);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);

/// Wire-encoded previews shared by all clients, one slot per kind.
#[derive(Default)]
struct WireCache {
    slots: Mutex<[Option<(u64, Bytes)>; 3]>,
}

impl WireCache {
    fn get(&self, frame: &PreviewFrame) -> Bytes {
        let mut slots = self.slots.lock().expect("wire cache poisoned");
        let slot = &mut slots[frame.kind as usize];
        match slot {
            Some((index, bytes)) if *index == frame.index => bytes.clone(),
            _ => {
                let bytes = Bytes::from(encode_preview(frame.kind, frame.index, frame.png()));
                *slot = Some((frame.index, bytes.clone()));
                bytes
            }
        }
    }
}

pub struct Service {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Service {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

/// Binds `bind:port` (port 0 picks a free one) and starts serving.
pub fn serve(cfg: &ServiceConfig, control: Arc<ControlState>, bus: Arc<PreviewBus>) -> Result<Service> {
    let listener = TcpListener::bind((cfg.bind.as_str(), cfg.port))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let rate = cfg.preview_rate;
    let epoch = Instant::now();
    let cache = Arc::new(WireCache::default());
    let flag = stop.clone();
    let handle = std::thread::spawn(move || {
        let mut clients: Vec<JoinHandle<()>> = Vec::new();
        while !flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    let (control, bus, cache, flag) = (control.clone(), bus.clone(), cache.clone(), flag.clone());
                    clients.push(std::thread::spawn(move || {
                        log::debug!("client {peer} connected");
                        if let Err(e) = handle_client(stream, &control, &bus, &cache, rate, epoch, &flag) {
                            log::debug!("client {peer}: {e}");
                        }
                        log::debug!("client {peer} disconnected");
                    }));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => log::warn!("accept failed: {e}"),
            }
            clients.retain(|c| !c.is_finished());
        }
        for c in clients {
            let _ = c.join();
        }
    });
    log::info!("control service on ws://{addr}");
    Ok(Service { addr, stop, handle: Some(handle) })
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

struct Client {
    ws: WebSocket<TcpStream>,
    /// Output is buffered but not yet accepted by the socket.
    backlogged: bool,
}

impl Client {
    fn queue(&mut self, msg: Message) -> std::result::Result<(), tungstenite::Error> {
        match self.ws.write(msg) {
            Ok(()) => Ok(()),
            Err(e) if would_block(&e) => {
                self.backlogged = true;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn send(&mut self, msg: &ServerMessage) -> std::result::Result<(), tungstenite::Error> {
        self.queue(Message::text(msg.to_json()))
    }
}

/// Replies for one text frame. State changes are broadcast separately
/// through the control subscription.
pub fn handle_text(text: &str, control: &ControlState) -> Vec<ServerMessage> {
    let msg = match ClientMessage::parse(text) {
        Ok(m) => m,
        Err(e) => return vec![ServerMessage::error(e.to_string())],
    };
    let reply = match msg {
        ClientMessage::SetParam { name, value } => match control.set_param(&name, value) {
            Ok(v) => ServerMessage::ack(&name, v),
            Err(e) => ServerMessage::error(e.to_string()),
        },
        ClientMessage::GetState => ServerMessage::state(&control.snapshot(), control.fps()),
        ClientMessage::StartRecord { dir } => match control.start_recording(dir.map(PathBuf::from)) {
            Ok(()) => return Vec::new(),
            Err(e) => ServerMessage::error(e.to_string()),
        },
        ClientMessage::StopRecord => {
            control.stop_recording();
            return Vec::new();
        }
        ClientMessage::Pause => {
            control.pause();
            return Vec::new();
        }
        ClientMessage::Resume => {
            control.resume();
            return Vec::new();
        }
    };
    vec![reply]
}

fn handle_client(
    stream: TcpStream,
    control: &ControlState,
    bus: &PreviewBus,
    cache: &WireCache,
    rate: f64,
    epoch: Instant,
    stop: &AtomicBool,
) -> std::result::Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(f) => f,
        tungstenite::HandshakeError::Interrupted(_) => {
            tungstenite::Error::Io(std::io::Error::new(ErrorKind::TimedOut, "handshake timed out"))
        }
    })?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    ws.get_ref().set_write_timeout(Some(POLL))?;
    let events = control.subscribe();
    let mut client = Client { ws, backlogged: false };
    client.send(&ServerMessage::hello())?;

    // Preview slots are ticks of one service-wide clock, so clients sample
    // the bus together and share each frame's lazily encoded PNG.
    let interval = (rate > 0.0).then(|| 1.0 / rate);
    let mut last_tick: Option<u64> = None;
    let mut sent = [None::<u64>; 3];
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = client.ws.close(None);
            let _ = client.ws.flush();
            return Ok(());
        }
        match client.ws.read() {
            Ok(Message::Text(t)) => {
                for reply in handle_text(t.as_str(), control) {
                    client.send(&reply)?;
                }
            }
            Ok(Message::Binary(_)) => client.send(&ServerMessage::error("binary frames are not accepted"))?,
            Ok(_) => {}
            Err(e) if would_block(&e) => {}
            Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
        for ev in events.try_iter() {
            let msg = match ev {
                ControlEvent::State(s) => ServerMessage::state(&s, control.fps()),
                ControlEvent::Error(m) => ServerMessage::error(m),
            };
            client.send(&msg)?;
        }
        if let Some(interval) = interval {
            let tick = (epoch.elapsed().as_secs_f64() / interval) as u64;
            if !client.backlogged && last_tick != Some(tick) {
                let mut any = false;
                for kind in PreviewKind::ALL {
                    let Some(frame) = bus.latest(kind) else { continue };
                    if sent[kind as usize] == Some(frame.index) {
                        continue;
                    }
                    sent[kind as usize] = Some(frame.index);
                    client.queue(Message::Binary(cache.get(&frame)))?;
                    any = true;
                }
                if any {
                    last_tick = Some(tick);
                }
            }
        }
        let was_backlogged = client.backlogged;
        match client.ws.flush() {
            Ok(()) => client.backlogged = false,
            Err(e) if would_block(&e) => client.backlogged = true,
            Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
        if client.backlogged != was_backlogged {
            let poll = if client.backlogged { BACKLOG_POLL } else { POLL };
            client.ws.get_ref().set_read_timeout(Some(poll))?;
            client.ws.get_ref().set_write_timeout(Some(poll))?;
        }
    }
}
