//! Minimal scripted WebSocket client for protocol tests.

use std::net::TcpStream;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};
use visinst::protocol::{decode_preview, ClientMessage, PreviewKind, ServerMessage};

pub struct Preview {
    pub kind: PreviewKind,
    pub index: u32,
    pub png: Vec<u8>,
}

pub struct Client {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
    /// Every text frame received so far, raw.
    pub texts: Vec<String>,
    pub previews: Vec<Preview>,
    read: usize,
}

impl Client {
    /// Connects, retrying until `patience` runs out.
    pub fn connect(url: &str, patience: Duration) -> Client {
        let deadline = Instant::now() + patience;
        loop {
            match tungstenite::connect(url) {
                Ok((ws, _)) => {
                    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
                        s.set_read_timeout(Some(Duration::from_millis(20))).unwrap();
                    }
                    return Client { ws, texts: Vec::new(), previews: Vec::new(), read: 0 };
                }
                Err(e) if Instant::now() >= deadline => panic!("cannot connect to {url}: {e}"),
                Err(_) => std::thread::sleep(Duration::from_millis(20)),
            }
        }
    }

    pub fn send(&mut self, msg: &ClientMessage) {
        self.send_raw(&msg.to_json());
    }

    pub fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::text(text)).unwrap();
    }

    pub fn send_binary(&mut self, bytes: Vec<u8>) {
        self.ws.send(Message::binary(bytes)).unwrap();
    }

    /// Reads one frame if one arrives before the socket's read timeout.
    /// Returns false once the connection is closed.
    fn pump(&mut self) -> bool {
        match self.ws.read() {
            Ok(Message::Text(t)) => self.texts.push(t.as_str().to_owned()),
            Ok(Message::Binary(b)) => {
                let (kind, index, png) = decode_preview(&b).expect("well-formed preview frame");
                self.previews.push(Preview { kind, index, png: png.to_vec() });
            }
            Ok(Message::Close(_)) => return false,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => return false,
        }
        true
    }

    /// Next unread text message (raw and parsed), waiting up to `timeout`.
    pub fn next(&mut self, timeout: Duration) -> Option<(String, ServerMessage)> {
        let deadline = Instant::now() + timeout;
        while self.read >= self.texts.len() {
            if Instant::now() >= deadline || !self.pump() {
                return None;
            }
        }
        let raw = self.texts[self.read].clone();
        self.read += 1;
        let parsed: ServerMessage = serde_json::from_str(&raw).expect("server text is a protocol message");
        Some((raw, parsed))
    }

    /// Skips unread messages until one satisfies `pred`.
    pub fn expect(&mut self, what: &str, pred: impl Fn(&ServerMessage) -> bool) -> (String, ServerMessage) {
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.next(left) {
                Some((raw, m)) if pred(&m) => return (raw, m),
                Some(_) => {}
                None => panic!("timed out waiting for {what}; received {:?}", self.texts),
            }
        }
    }

    /// Unread text messages arriving within `window`.
    pub fn drain(&mut self, window: Duration) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        let deadline = Instant::now() + window;
        while let Some((_, m)) = self.next(deadline.saturating_duration_since(Instant::now())) {
            out.push(m);
        }
        out
    }

    /// Waits for a preview of `kind` with index at least `min_index`.
    pub fn wait_preview(&mut self, kind: PreviewKind, min_index: u32, timeout: Duration) -> Option<&Preview> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(i) = self.previews.iter().position(|p| p.kind == kind && p.index >= min_index) {
                return Some(&self.previews[i]);
            }
            if Instant::now() >= deadline || !self.pump() {
                return None;
            }
        }
    }

    /// Generations of all state messages received so far, in order.
    pub fn generations(&self) -> Vec<u64> {
        self.texts
            .iter()
            .filter_map(|t| match serde_json::from_str::<ServerMessage>(t) {
                Ok(ServerMessage::State { generation, .. }) => Some(generation),
                _ => None,
            })
            .collect()
    }

    pub fn close(mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}
