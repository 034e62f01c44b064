//! Device backends: in-process virtual ports and the platform's raw MIDI
//! character devices.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, RecvTimeoutError, Sender, TrySendError};

use super::message::{serialize, MidiMessage, TimedMidi};
use super::parser::MidiParser;
use crate::Error;

/// Monotonic seconds since a fixed origin. Cheap to clone; every clone
/// shares the origin.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    origin: Instant,
}

impl Clock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }

    pub fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    pub fn origin(&self) -> Instant {
        self.origin
    }
}

impl Default for Clock {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputEvent {
    Midi(TimedMidi),
    /// The device went away; no further events follow.
    End,
}

/// An input event tagged with the name of the device it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceEvent {
    pub device: String,
    pub event: InputEvent,
}

/// Resolve a selector against device names: exact match first, then the
/// first name containing the selector (case-insensitive).
pub fn select_device(names: &[String], selector: &str) -> Result<String, Error> {
    if let Some(n) = names.iter().find(|n| *n == selector) {
        return Ok(n.clone());
    }
    let needle = selector.to_lowercase();
    names.iter().find(|n| n.to_lowercase().contains(&needle)).cloned().ok_or_else(|| Error::DeviceNotFound {
        selector: selector.to_string(),
        available: names.to_vec(),
    })
}

pub trait MidiBackend: Send + Sync {
    fn list_devices(&self) -> Vec<String>;

    /// Start reading a device. Parsed messages are stamped with `clock` as
    /// they are decoded and pushed to `sink`; when `sink` is full the event
    /// is dropped and counted on the returned handle.
    fn open_input(&self, selector: &str, clock: Clock, sink: Sender<DeviceEvent>) -> Result<MidiInput, Error>;

    fn open_output(&self, selector: &str) -> Result<MidiOutput, Error>;
}

/// Handle to a running input reader.
pub struct MidiInput {
    pub name: String,
    stop: Arc<AtomicBool>,
    dropped: Arc<AtomicU64>,
    thread: Option<JoinHandle<()>>,
}

impl MidiInput {
    /// Events discarded because the consumer queue was full.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MidiInput {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug)]
enum Chunk {
    Bytes(Vec<u8>),
    Hangup,
}

#[derive(Debug)]
enum OutputSink {
    Virtual(Sender<Chunk>),
    File(File),
}

/// Writes serialized messages to one device.
#[derive(Debug)]
pub struct MidiOutput {
    pub name: String,
    sink: OutputSink,
}

impl MidiOutput {
    pub fn send(&mut self, m: &MidiMessage) -> std::io::Result<()> {
        self.send_bytes(&serialize(m))
    }

    pub fn send_bytes(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        match &mut self.sink {
            OutputSink::Virtual(tx) => tx
                .send(Chunk::Bytes(bytes.to_vec()))
                .map_err(|_| std::io::Error::new(std::io::ErrorKind::BrokenPipe, "virtual port closed")),
            OutputSink::File(f) => f.write_all(bytes),
        }
    }
}

fn spawn_reader(
    name: String,
    clock: Clock,
    sink: Sender<DeviceEvent>,
    stop: Arc<AtomicBool>,
    dropped: Arc<AtomicU64>,
    mut next_chunk: impl FnMut() -> Option<Option<Vec<u8>>> + Send + 'static,
) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name(format!("midi-in:{name}"))
        .spawn(move || {
            let mut parser = MidiParser::new();
            let mut msgs = Vec::new();
            let deliver = |event: InputEvent| match sink.try_send(DeviceEvent { device: name.clone(), event }) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    dropped.fetch_add(1, Ordering::Relaxed);
                    true
                }
                Err(TrySendError::Disconnected(_)) => false,
            };
            while !stop.load(Ordering::Relaxed) {
                match next_chunk() {
                    // timeout, poll the stop flag again
                    Some(None) => continue,
                    Some(Some(bytes)) => {
                        parser.feed(&bytes, &mut msgs);
                        let at = clock.now();
                        for message in msgs.drain(..) {
                            if !deliver(InputEvent::Midi(TimedMidi { message, at })) {
                                return;
                            }
                        }
                    }
                    None => {
                        deliver(InputEvent::End);
                        return;
                    }
                }
            }
        })
        .expect("spawn midi reader")
}

/// Test-side view of a virtual port.
#[derive(Clone)]
pub struct VirtualPort {
    pub name: String,
    to_engine: Sender<Chunk>,
    from_engine: Option<Receiver<Chunk>>,
}

impl VirtualPort {
    /// Inject bytes as if the device had sent them.
    pub fn send_bytes(&self, bytes: &[u8]) {
        let _ = self.to_engine.send(Chunk::Bytes(bytes.to_vec()));
    }

    pub fn send(&self, m: &MidiMessage) {
        self.send_bytes(&serialize(m));
    }

    /// Everything written to the port's output so far. Empty for loopback
    /// ports, whose output feeds their own input.
    pub fn drain_output(&self) -> Vec<Vec<u8>> {
        let Some(rx) = &self.from_engine else { return Vec::new() };
        rx.try_iter()
            .filter_map(|c| match c {
                Chunk::Bytes(b) => Some(b),
                Chunk::Hangup => None,
            })
            .collect()
    }

    /// Wait up to `timeout` for the next written chunk.
    pub fn recv_output(&self, timeout: Duration) -> Option<Vec<u8>> {
        match self.from_engine.as_ref()?.recv_timeout(timeout) {
            Ok(Chunk::Bytes(b)) => Some(b),
            _ => None,
        }
    }
}

struct PortEntry {
    input_tx: Sender<Chunk>,
    input_rx: Receiver<Chunk>,
    output_tx: Sender<Chunk>,
}

/// In-process MIDI ports for running the whole engine without hardware.
#[derive(Clone, Default)]
pub struct VirtualMidi {
    ports: Arc<Mutex<BTreeMap<String, PortEntry>>>,
}

impl VirtualMidi {
    pub fn new() -> Self {
        Self::default()
    }

    /// A port whose input is driven by the returned handle and whose output
    /// is captured by it.
    pub fn create_port(&self, name: &str) -> VirtualPort {
        let (input_tx, input_rx) = channel::unbounded();
        let (output_tx, output_rx) = channel::unbounded();
        self.ports.lock().unwrap().insert(
            name.to_string(),
            PortEntry { input_tx: input_tx.clone(), input_rx, output_tx },
        );
        VirtualPort { name: name.to_string(), to_engine: input_tx, from_engine: Some(output_rx) }
    }

    /// A port whose output is wired straight back to its own input.
    pub fn create_loopback(&self, name: &str) -> VirtualPort {
        let (input_tx, input_rx) = channel::unbounded();
        self.ports.lock().unwrap().insert(
            name.to_string(),
            PortEntry { input_tx: input_tx.clone(), input_rx, output_tx: input_tx.clone() },
        );
        VirtualPort { name: name.to_string(), to_engine: input_tx, from_engine: None }
    }

    /// Simulate unplugging: open inputs see [`InputEvent::End`] and the
    /// port disappears from the device list.
    pub fn disconnect(&self, name: &str) {
        if let Some(p) = self.ports.lock().unwrap().remove(name) {
            let _ = p.input_tx.send(Chunk::Hangup);
        }
    }
}

impl MidiBackend for VirtualMidi {
    fn list_devices(&self) -> Vec<String> {
        self.ports.lock().unwrap().keys().cloned().collect()
    }

    fn open_input(&self, selector: &str, clock: Clock, sink: Sender<DeviceEvent>) -> Result<MidiInput, Error> {
        let name = select_device(&self.list_devices(), selector)?;
        let rx = self.ports.lock().unwrap()[&name].input_rx.clone();
        let stop = Arc::new(AtomicBool::new(false));
        let dropped = Arc::new(AtomicU64::new(0));
        let thread = spawn_reader(name.clone(), clock, sink, stop.clone(), dropped.clone(), move || {
            match rx.recv_timeout(Duration::from_millis(20)) {
                Ok(Chunk::Bytes(b)) => Some(Some(b)),
                Ok(Chunk::Hangup) | Err(RecvTimeoutError::Disconnected) => None,
                Err(RecvTimeoutError::Timeout) => Some(None),
            }
        });
        Ok(MidiInput { name, stop, dropped, thread: Some(thread) })
    }

    fn open_output(&self, selector: &str) -> Result<MidiOutput, Error> {
        let name = select_device(&self.list_devices(), selector)?;
        let tx = self.ports.lock().unwrap()[&name].output_tx.clone();
        Ok(MidiOutput { name, sink: OutputSink::Virtual(tx) })
    }
}

/// Raw MIDI character devices (`/dev/snd/midiC*D*`, `/dev/midi*`), which
/// speak the plain MIDI byte protocol.
#[derive(Debug, Clone)]
pub struct SystemMidi {
    roots: Vec<PathBuf>,
}

impl Default for SystemMidi {
    fn default() -> Self {
        Self { roots: vec![PathBuf::from("/dev/snd"), PathBuf::from("/dev")] }
    }
}

impl SystemMidi {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scan custom directories instead of `/dev`.
    pub fn with_roots(roots: Vec<PathBuf>) -> Self {
        Self { roots }
    }

    fn paths(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for root in &self.roots {
            let Ok(entries) = std::fs::read_dir(root) else { continue };
            for e in entries.flatten() {
                let name = e.file_name().to_string_lossy().into_owned();
                if name.starts_with("midi") || name.starts_with("amidi") {
                    out.push(e.path());
                }
            }
        }
        out.sort();
        out
    }
}

impl MidiBackend for SystemMidi {
    fn list_devices(&self) -> Vec<String> {
        self.paths().iter().map(|p| p.display().to_string()).collect()
    }

    fn open_input(&self, selector: &str, clock: Clock, sink: Sender<DeviceEvent>) -> Result<MidiInput, Error> {
        let name = select_device(&self.list_devices(), selector)?;
        let mut file = File::open(&name)?;
        let stop = Arc::new(AtomicBool::new(false));
        let dropped = Arc::new(AtomicU64::new(0));
        let mut buf = [0u8; 256];
        // Blocking reads: the reader is detached and exits on its next read
        // after stop, or at EOF.
        let _reader = spawn_reader(name.clone(), clock, sink, stop.clone(), dropped.clone(), move || {
            match file.read(&mut buf) {
                Ok(0) | Err(_) => None,
                Ok(n) => Some(Some(buf[..n].to_vec())),
            }
        });
        Ok(MidiInput { name, stop, dropped, thread: None })
    }

    fn open_output(&self, selector: &str) -> Result<MidiOutput, Error> {
        let name = select_device(&self.list_devices(), selector)?;
        let file = OpenOptions::new().write(true).open(&name)?;
        Ok(MidiOutput { name, sink: OutputSink::File(file) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_prefers_exact_match() {
        let names = vec!["volca keys".to_string(), "volca".to_string()];
        assert_eq!(select_device(&names, "volca").unwrap(), "volca");
        assert_eq!(select_device(&names, "KEYS").unwrap(), "volca keys");
    }

    #[test]
    fn unknown_selector_lists_candidates() {
        let vm = VirtualMidi::new();
        vm.create_port("x-touch");
        vm.create_port("s-1");
        let err = vm.open_output("microfreak").unwrap_err();
        match err {
            Error::DeviceNotFound { selector, available } => {
                assert_eq!(selector, "microfreak");
                assert_eq!(available, vm.list_devices());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn virtual_port_delivers_timestamped_messages() {
        let vm = VirtualMidi::new();
        let port = vm.create_port("synth");
        let clock = Clock::new();
        let (tx, rx) = channel::bounded(16);
        let _input = vm.open_input("synth", clock, tx).unwrap();
        port.send_bytes(&[0xB0, 0x07]);
        port.send_bytes(&[0x7F]);
        let ev = rx.recv_timeout(Duration::from_secs(2)).unwrap();
        assert_eq!(ev.device, "synth");
        match ev.event {
            InputEvent::Midi(t) => {
                assert_eq!(t.message, MidiMessage::control_change(0, 7, 127));
                assert!(t.at >= 0.0 && t.at <= clock.now());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn output_is_captured() {
        let vm = VirtualMidi::new();
        let port = vm.create_port("synth");
        let mut out = vm.open_output("synth").unwrap();
        out.send(&MidiMessage::note_on(1, 64, 90)).unwrap();
        assert_eq!(port.drain_output(), vec![vec![0x91, 64, 90]]);
    }

    #[test]
    fn full_queue_drops_and_counts() {
        let vm = VirtualMidi::new();
        let port = vm.create_port("busy");
        let (tx, rx) = channel::bounded(2);
        let input = vm.open_input("busy", Clock::new(), tx).unwrap();
        for i in 0..10 {
            port.send(&MidiMessage::control_change(0, 1, i));
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        while input.dropped() < 8 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        assert_eq!(input.dropped(), 8);
        assert_eq!(rx.len(), 2);
    }

    #[test]
    fn system_backend_lists_only_midi_nodes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("midiC1D0"), b"").unwrap();
        std::fs::write(dir.path().join("mixer"), b"").unwrap();
        let sys = SystemMidi::with_roots(vec![dir.path().to_path_buf()]);
        let names = sys.list_devices();
        assert_eq!(names.len(), 1);
        assert!(names[0].ends_with("midiC1D0"));
        assert!(sys.open_output("midiC1D0").is_ok());
    }

    #[test]
    fn system_backend_reads_bytes_then_ends() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("midi0"), [0x90, 0x40, 0x7F]).unwrap();
        let sys = SystemMidi::with_roots(vec![dir.path().to_path_buf()]);
        let (tx, rx) = channel::bounded(8);
        let _input = sys.open_input("midi0", Clock::new(), tx).unwrap();
        let first = rx.recv_timeout(Duration::from_secs(2)).unwrap();
        assert!(matches!(first.event, InputEvent::Midi(ref t) if t.message == MidiMessage::note_on(0, 64, 127)));
        let second = rx.recv_timeout(Duration::from_secs(2)).unwrap();
        assert_eq!(second.event, InputEvent::End);
    }
}
