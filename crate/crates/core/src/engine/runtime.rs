//! Threaded runtime: MIDI readers feed one engine loop thread, which
//! ticks the [`Engine`] at the configured rate and hands its effects to
//! device writers, the log writer and the network emitter.
//!
//! Other threads reach the engine only through [`EngineHandle`] commands,
//! which the loop handles between ticks.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use crossbeam::channel::{self, Receiver, Sender};
use tokio::sync::{broadcast, oneshot};

use super::{Effects, Engine, LogStats, LogWriter, SessionLog, Status};
use crate::config::EngineConfig;
use crate::mdrnn::MdrnnParams;
use crate::midi::{Clock, DeviceEvent, InputEvent, MidiBackend, MidiInput, MidiOutput, TimedMidi};
use crate::netio::{FeedMessage, NetEmitter, Sinks};
use crate::Error;

const INPUT_QUEUE: usize = 4096;
const COMMAND_QUEUE: usize = 64;
const LOG_QUEUE: usize = 8192;
const NET_QUEUE: usize = 1024;

pub enum Command {
    Status(oneshot::Sender<Status>),
    Config(oneshot::Sender<EngineConfig>),
    ApplyConfig(Box<EngineConfig>, oneshot::Sender<()>),
    SwapModel { model: Arc<MdrnnParams>, name: String, config: Box<EngineConfig>, reply: oneshot::Sender<()> },
    Shutdown,
}

/// Cloneable sender side of the command channel.
#[derive(Clone)]
pub struct EngineHandle {
    tx: Sender<Command>,
}

impl EngineHandle {
    /// Handle over a caller-run command loop, e.g. a test double.
    pub fn from_sender(tx: Sender<Command>) -> Self {
        Self { tx }
    }

    fn request<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Option<oneshot::Receiver<T>> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).ok()?;
        Some(rx)
    }

    pub async fn status(&self) -> Option<Status> {
        self.request(Command::Status)?.await.ok()
    }

    pub async fn config(&self) -> Option<EngineConfig> {
        self.request(Command::Config)?.await.ok()
    }

    /// Resolves once the engine has switched to `config`.
    pub async fn apply_config(&self, config: EngineConfig) -> bool {
        match self.request(|r| Command::ApplyConfig(Box::new(config), r)) {
            Some(rx) => rx.await.is_ok(),
            None => false,
        }
    }

    pub async fn swap_model(&self, model: Arc<MdrnnParams>, name: String, config: EngineConfig) -> bool {
        match self.request(|reply| Command::SwapModel { model, name, config: Box::new(config), reply }) {
            Some(rx) => rx.await.is_ok(),
            None => false,
        }
    }

    /// Blocking variant for callers outside an async runtime.
    pub fn status_blocking(&self) -> Option<Status> {
        self.request(Command::Status)?.blocking_recv().ok()
    }

    pub fn shutdown(&self) {
        let _ = self.tx.send(Command::Shutdown);
    }
}

/// Owns the engine and everything its effects touch. Used by the threaded
/// loop and directly by simulations that drive time themselves.
pub struct Driver {
    pub engine: Engine,
    backend: Arc<dyn MidiBackend>,
    outputs: HashMap<String, MidiOutput>,
    log: Option<LogWriter>,
    net: NetEmitter,
    pub output_errors: u64,
}

impl Driver {
    pub fn new(engine: Engine, backend: Arc<dyn MidiBackend>, log: Option<LogWriter>, net: NetEmitter) -> Self {
        let mut d = Self { engine, backend, outputs: HashMap::new(), log, net, output_errors: 0 };
        d.open_outputs();
        d
    }

    fn open_outputs(&mut self) {
        for sel in self.engine.config().output_devices() {
            if self.outputs.contains_key(&sel) {
                continue;
            }
            match self.backend.open_output(&sel) {
                Ok(o) => {
                    self.outputs.insert(sel, o);
                }
                Err(e) => log::warn!("output {sel:?} unavailable: {e}"),
            }
        }
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.log.as_ref().map(|l| l.path.clone())
    }

    pub fn log_stats(&self) -> Option<Arc<LogStats>> {
        self.log.as_ref().map(|l| l.stats.clone())
    }

    pub fn on_midi(&mut self, device: &str, t: &TimedMidi) {
        let fx = self.engine.on_midi(device, t);
        self.dispatch(fx);
    }

    pub fn tick(&mut self, now: f64) {
        let fx = self.engine.tick(now);
        self.dispatch(fx);
    }

    pub fn apply_config(&mut self, config: EngineConfig) {
        self.engine.apply_config(config);
        self.open_outputs();
    }

    pub fn swap_model(&mut self, model: Arc<MdrnnParams>, name: String, config: EngineConfig) {
        self.engine.swap_model(model, name, config);
        self.open_outputs();
    }

    fn dispatch(&mut self, fx: Effects) {
        for out in fx.midi {
            match self.outputs.get_mut(&out.device) {
                Some(dev) => {
                    if let Err(e) = dev.send(&out.midi.message) {
                        self.output_errors += 1;
                        log::debug!("write to {} failed: {e}", dev.name);
                    }
                }
                None => self.output_errors += 1,
            }
        }
        if let Some(log) = &self.log {
            for rec in fx.logs {
                log.write(rec);
            }
        }
        for f in fx.frames {
            self.net.emit(FeedMessage::Frame { t: f.at, source: f.source, values: f.frame.values, dt: f.frame.dt });
        }
        if let Some(lead) = fx.lead_changed {
            self.net.emit(FeedMessage::Lead { t: self.engine.now, lead });
        }
    }

    /// Flush and stop the log and network writers.
    pub fn finish(self) {
        if let Some(log) = self.log {
            log.close();
        }
        self.net.close();
    }
}

/// Open the session log for `config`, or run without one if that fails.
pub fn open_log(config: &EngineConfig, base: &std::path::Path, start: DateTime<Utc>) -> Option<LogWriter> {
    match SessionLog::create(&config.log_path(base), start, config.dimension) {
        Ok(log) => Some(LogWriter::spawn(log, LOG_QUEUE)),
        Err(e) => {
            log::error!("session logging disabled: {e}");
            None
        }
    }
}

pub fn sinks_for(config: &EngineConfig, feed: Option<broadcast::Sender<String>>) -> Sinks {
    let osc = if config.net.osc_enabled {
        match config.net.osc_target.parse() {
            Ok(addr) => Some(addr),
            Err(e) => {
                log::warn!("OSC target {:?} unusable: {e}", config.net.osc_target);
                None
            }
        }
    } else {
        None
    };
    Sinks { osc, feed: if config.net.ws_enabled { feed } else { None } }
}

pub struct RuntimeOptions {
    /// Directory that relative paths in the config are resolved against.
    pub base_dir: PathBuf,
    /// Stop by itself after this many seconds.
    pub duration: Option<f64>,
    /// Broadcast channel serving the WebSocket feed.
    pub feed: Option<broadcast::Sender<String>>,
    pub logging: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub status: Status,
    pub log_path: Option<PathBuf>,
    pub log_dropped: u64,
    pub input_dropped: u64,
    pub output_errors: u64,
}

pub struct Runtime {
    handle: EngineHandle,
    thread: Option<JoinHandle<RunSummary>>,
    /// Time from start until the loop was ready to emit.
    pub startup: Duration,
    pub clock: Clock,
}

impl Runtime {
    pub fn start(
        config: EngineConfig,
        model: Arc<MdrnnParams>,
        model_name: String,
        backend: Arc<dyn MidiBackend>,
        opts: RuntimeOptions,
    ) -> Result<Self, Error> {
        let begun = Instant::now();
        let clock = Clock::new();
        let wall_origin = Utc::now();
        let (in_tx, in_rx) = channel::bounded::<DeviceEvent>(INPUT_QUEUE);
        let mut inputs = Vec::new();
        for sel in config.input_devices() {
            inputs.push(backend.open_input(&sel, clock, in_tx.clone())?);
        }
        let log = if opts.logging { open_log(&config, &opts.base_dir, wall_origin) } else { None };
        let net = NetEmitter::spawn(sinks_for(&config, opts.feed.clone()), NET_QUEUE);
        let engine = Engine::new(config, model, model_name, wall_origin);
        let driver = Driver::new(engine, backend.clone(), log, net);
        let (cmd_tx, cmd_rx) = channel::bounded::<Command>(COMMAND_QUEUE);
        let ctx = LoopCtx { driver, clock, in_rx, in_tx, cmd_rx, inputs, backend, duration: opts.duration };
        let thread = std::thread::Builder::new().name("engine".into()).spawn(move || ctx.run())?;
        Ok(Self { handle: EngineHandle { tx: cmd_tx }, thread: Some(thread), startup: begun.elapsed(), clock })
    }

    pub fn handle(&self) -> EngineHandle {
        self.handle.clone()
    }

    /// Wait for the loop to end (duration elapsed or shutdown requested).
    pub fn wait(mut self) -> RunSummary {
        self.thread.take().expect("joined once").join().expect("engine thread panicked")
    }

    pub fn stop(self) -> RunSummary {
        self.handle.shutdown();
        self.wait()
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            self.handle.shutdown();
            let _ = t.join();
        }
    }
}

struct LoopCtx {
    driver: Driver,
    clock: Clock,
    in_rx: Receiver<DeviceEvent>,
    in_tx: Sender<DeviceEvent>,
    cmd_rx: Receiver<Command>,
    inputs: Vec<MidiInput>,
    backend: Arc<dyn MidiBackend>,
    duration: Option<f64>,
}

impl LoopCtx {
    fn open_inputs(&mut self) {
        for sel in self.driver.engine.config().input_devices() {
            if self.inputs.iter().any(|i| crate::mapping::device_matches(&sel, &i.name)) {
                continue;
            }
            match self.backend.open_input(&sel, self.clock, self.in_tx.clone()) {
                Ok(i) => self.inputs.push(i),
                Err(e) => log::warn!("input {sel:?} unavailable: {e}"),
            }
        }
    }

    /// Returns false on shutdown.
    fn command(&mut self, cmd: Command) -> bool {
        let now = self.clock.now();
        match cmd {
            Command::Status(r) => {
                let _ = r.send(self.driver.engine.status(now));
            }
            Command::Config(r) => {
                let _ = r.send(self.driver.engine.config().clone());
            }
            Command::ApplyConfig(c, r) => {
                self.driver.apply_config(*c);
                self.open_inputs();
                let _ = r.send(());
            }
            Command::SwapModel { model, name, config, reply } => {
                self.driver.swap_model(model, name, *config);
                self.open_inputs();
                let _ = reply.send(());
            }
            Command::Shutdown => return false,
        }
        true
    }

    fn run(mut self) -> RunSummary {
        let mut next_tick = 0.0;
        loop {
            let now = self.clock.now();
            if self.duration.is_some_and(|d| now >= d) {
                break;
            }
            if now >= next_tick {
                self.driver.tick(now);
                let period = self.driver.engine.config().interaction.tick_period();
                next_tick += period;
                if next_tick <= now {
                    // fell behind: skip missed ticks rather than bursting
                    next_tick = now + period;
                }
                continue;
            }
            let wait = Duration::from_secs_f64(next_tick - now);
            crossbeam::select! {
                recv(self.in_rx) -> ev => {
                    if let Ok(DeviceEvent { device, event }) = ev {
                        match event {
                            InputEvent::Midi(t) => self.driver.on_midi(&device, &t),
                            InputEvent::End => {
                                log::warn!("input {device:?} disconnected");
                                self.inputs.retain(|i| i.name != device);
                            }
                        }
                    }
                }
                recv(self.cmd_rx) -> cmd => {
                    match cmd {
                        Ok(cmd) => if !self.command(cmd) { break },
                        Err(_) => break,
                    }
                }
                default(wait) => {}
            }
        }
        let now = self.clock.now();
        let status = self.driver.engine.status(now);
        let input_dropped = self.inputs.iter().map(|i| i.dropped()).sum();
        for i in self.inputs.drain(..) {
            i.close();
        }
        let log_path = self.driver.log_path();
        let log_dropped =
            self.driver.log_stats().map_or(0, |s| s.dropped.load(std::sync::atomic::Ordering::Relaxed));
        let output_errors = self.driver.output_errors;
        self.driver.finish();
        RunSummary { status, log_path, log_dropped, input_dropped, output_errors }
    }
}
