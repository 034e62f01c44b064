//! Fire-and-forget network mirroring of frames: OSC over UDP and a JSON
//! feed for WebSocket clients.
//!
//! The engine hands events to [`NetEmitter::emit`], which never blocks: the
//! queue is bounded and drops its oldest entry when full.

mod osc;

pub use osc::osc_encode;

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam::channel::{self, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::engine::{Lead, Source};

pub const FRAME_ADDRESS: &str = "/impsy/frame";
pub const LEAD_ADDRESS: &str = "/impsy/lead";
/// Version of the JSON feed schema, also reported by `/api/schema`.
pub const FEED_VERSION: u32 = 1;

/// One feed message. Clients should ignore fields they do not know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeedMessage {
    Frame { t: f64, source: Source, values: Vec<f64>, dt: f64 },
    Lead { t: f64, lead: Lead },
}

impl FeedMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("feed messages serialize")
    }

    fn to_osc(&self) -> Vec<u8> {
        match self {
            FeedMessage::Frame { values, .. } => {
                let args: Vec<f32> = values.iter().map(|v| *v as f32).collect();
                osc_encode(FRAME_ADDRESS, &args)
            }
            FeedMessage::Lead { lead, .. } => osc_encode(LEAD_ADDRESS, &[if *lead == Lead::Ai { 1.0 } else { 0.0 }]),
        }
        .expect("constant addresses are valid")
    }
}

#[derive(Debug, Default)]
pub struct NetStats {
    pub sent: AtomicU64,
    pub dropped: AtomicU64,
    pub errors: AtomicU64,
}

/// Where emitted messages go. Either sink may be absent.
#[derive(Debug, Clone, Default)]
pub struct Sinks {
    pub osc: Option<SocketAddr>,
    pub feed: Option<broadcast::Sender<String>>,
}

impl Sinks {
    pub fn is_empty(&self) -> bool {
        self.osc.is_none() && self.feed.is_none()
    }
}

pub struct NetEmitter {
    tx: Option<Sender<FeedMessage>>,
    /// Held so `emit` can discard the oldest entry on overflow.
    rx: Receiver<FeedMessage>,
    pub stats: Arc<NetStats>,
    thread: Option<JoinHandle<()>>,
}

impl NetEmitter {
    /// Start the emission thread. With no sinks, `emit` is a no-op.
    pub fn spawn(sinks: Sinks, capacity: usize) -> Self {
        let (tx, rx) = channel::bounded::<FeedMessage>(capacity.max(1));
        let stats = Arc::new(NetStats::default());
        if sinks.is_empty() {
            return Self { tx: None, rx, stats, thread: None };
        }
        let socket = sinks.osc.and_then(|target| {
            let bind: SocketAddr = if target.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().unwrap();
            match UdpSocket::bind(bind).and_then(|s| s.set_nonblocking(true).map(|_| s)) {
                Ok(s) => Some((s, target)),
                Err(e) => {
                    log::warn!("OSC disabled, cannot open UDP socket: {e}");
                    None
                }
            }
        });
        let st = stats.clone();
        let worker_rx = rx.clone();
        let feed = sinks.feed;
        let thread = std::thread::Builder::new()
            .name("net-emitter".into())
            .spawn(move || {
                for msg in worker_rx.iter() {
                    if let Some((sock, target)) = &socket {
                        if sock.send_to(&msg.to_osc(), target).is_err() {
                            st.errors.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    if let Some(feed) = &feed {
                        // no receivers is not an error: nobody is watching
                        let _ = feed.send(msg.to_json());
                    }
                    st.sent.fetch_add(1, Ordering::Relaxed);
                }
            })
            .expect("spawn net emitter");
        Self { tx: Some(tx), rx, stats, thread: Some(thread) }
    }

    pub fn emit(&self, msg: FeedMessage) {
        let Some(tx) = &self.tx else { return };
        let mut msg = msg;
        loop {
            match tx.try_send(msg) {
                Ok(()) => return,
                Err(TrySendError::Full(m)) => {
                    if self.rx.try_recv().is_ok() {
                        self.stats.dropped.fetch_add(1, Ordering::Relaxed);
                    }
                    msg = m;
                }
                Err(TrySendError::Disconnected(_)) => return,
            }
        }
    }

    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.tx.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for NetEmitter {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::{Duration, Instant};

    fn frame(v: f64) -> FeedMessage {
        FeedMessage::Frame { t: 1.0, source: Source::Ai, values: vec![v, 0.25], dt: 0.1 }
    }

    #[test]
    fn feed_json_schema() {
        let v: serde_json::Value = serde_json::from_str(&frame(0.5).to_json()).unwrap();
        assert_eq!(v["source"], "ai");
        assert_eq!(v["values"].as_array().unwrap().len(), 2);
        assert_eq!(v["dt"], 0.1);
        assert_eq!(v["t"], 1.0);
        let lead = FeedMessage::Lead { t: 2.0, lead: Lead::Human }.to_json();
        assert_eq!(lead, r#"{"t":2.0,"lead":"human"}"#);
    }

    #[test]
    fn no_sinks_is_noop() {
        let em = NetEmitter::spawn(Sinks::default(), 4);
        for i in 0..100 {
            em.emit(frame(i as f64));
        }
        assert_eq!(em.stats.sent.load(Ordering::Relaxed), 0);
        assert_eq!(em.stats.dropped.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn udp_datagrams_arrive() {
        let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
        rx.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let em = NetEmitter::spawn(Sinks { osc: Some(rx.local_addr().unwrap()), feed: None }, 16);
        em.emit(frame(0.5));
        let mut buf = [0u8; 256];
        let n = rx.recv(&mut buf).unwrap();
        assert_eq!(&buf[..n], osc_encode(FRAME_ADDRESS, &[0.5, 0.25]).unwrap().as_slice());
    }

    #[test]
    fn broadcast_feed_receives_json() {
        let (tx, mut sub) = broadcast::channel(16);
        let em = NetEmitter::spawn(Sinks { osc: None, feed: Some(tx) }, 16);
        em.emit(frame(0.75));
        em.close();
        let got: FeedMessage = serde_json::from_str(&sub.try_recv().unwrap()).unwrap();
        assert_eq!(got, frame(0.75));
    }

    #[test]
    fn emit_never_blocks_and_drops_oldest() {
        // unroutable target: sends fail or vanish, emission must stay cheap
        let em = NetEmitter::spawn(Sinks { osc: Some("192.0.2.1:9".parse().unwrap()), feed: None }, 2);
        let start = Instant::now();
        for i in 0..10_000 {
            em.emit(frame(i as f64));
        }
        let per = start.elapsed() / 10_000;
        assert!(per < Duration::from_millis(1), "{per:?}");
        em.close();
    }
}
