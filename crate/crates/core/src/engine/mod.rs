//! Call-and-response engine.
//!
//! [`Engine`] is a deterministic state machine over monotonic time in
//! seconds: feed it human events and ticks, collect the [`Effects`]. The
//! threaded [`runtime`] wires it to devices, logging and the network.

mod dataset;
mod log;
pub mod runtime;

pub use self::dataset::{
    build_dataset, read_session, records_to_sequence, session_files, BuildStats, Dataset, Sequence, DATASET_MAGIC,
    DATASET_VERSION,
};
pub use self::log::{
    header_line, parse_header, session_file_name, to_millis, LogRecord, LogStats, LogWriter, SessionLog, Source,
};

use std::collections::VecDeque;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, InteractionMode};
use crate::frame::{clamp_frame, ContinuousFrame};
use crate::mapping::{Inbound, InboundCounters, InboundRouter, Outbound, OutboundRouter};
use crate::mdrnn::{self, MdrnnParams, MdrnnState, MixtureParams};
use crate::midi::{MessageKind, MidiMessage, TimedMidi};

/// Slack for comparing accumulated floating-point times against thresholds.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lead {
    Human,
    Ai,
}

/// A frame that became audible, for logging and network mirroring.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFrame {
    pub at: f64,
    pub source: Source,
    pub frame: ContinuousFrame,
}

/// Everything a call produced. Callers forward these to devices, the log
/// writer and network sinks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Effects {
    pub midi: Vec<Outbound>,
    pub logs: Vec<LogRecord>,
    pub frames: Vec<EmittedFrame>,
    pub lead_changed: Option<Lead>,
}

impl Effects {
    fn append(&mut self, mut other: Effects) {
        self.midi.append(&mut other.midi);
        self.logs.append(&mut other.logs);
        self.frames.append(&mut other.frames);
        if other.lead_changed.is_some() {
            self.lead_changed = other.lead_changed;
        }
    }
}

#[derive(Debug, Clone)]
struct PendingFrame {
    due: f64,
    frame: ContinuousFrame,
}

#[derive(Debug, Clone)]
struct Release {
    due: f64,
    route: usize,
    device: String,
    message: MidiMessage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub human_events: u64,
    pub ai_frames: u64,
    pub midi_out: u64,
    pub cancelled: u64,
    pub generation_errors: u64,
}

/// Snapshot served by the status endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Status {
    pub state: &'static str,
    pub lead: Lead,
    pub mode: InteractionMode,
    pub dimension: usize,
    pub model_file: String,
    pub uptime_s: f64,
    pub switchover_s: f64,
    pub counters: Counters,
    pub inbound: InboundCounters,
    /// Events in the last second.
    pub recent: RecentCounts,
    pub pending: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RecentCounts {
    pub human: u64,
    pub ai: u64,
}

pub struct Engine {
    config: EngineConfig,
    model: Arc<MdrnnParams>,
    model_name: String,
    state: MdrnnState,
    /// Prediction from the last human conditioning step, used for the
    /// first AI frame after a takeover.
    primed: Option<MixtureParams>,
    rng: ChaCha8Rng,
    lead: Lead,
    last_human_at: f64,
    last_event_at: Option<f64>,
    composite: Vec<f64>,
    pending: VecDeque<PendingFrame>,
    releases: Vec<Release>,
    inbound: InboundRouter,
    outbound: OutboundRouter,
    counters: Counters,
    recent: VecDeque<(f64, Source)>,
    wall_origin: DateTime<Utc>,
    now: f64,
}

impl Engine {
    /// `wall_origin` is the wall-clock instant corresponding to monotonic
    /// time zero; log timestamps are derived from it.
    pub fn new(config: EngineConfig, model: Arc<MdrnnParams>, model_name: String, wall_origin: DateTime<Utc>) -> Self {
        assert_eq!(config.dimension, model.shape.dimension, "model dimension checked by caller");
        let rng = match config.rng_seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_os_rng(),
        };
        let lead = match config.interaction.mode {
            InteractionMode::AiOnly => Lead::Ai,
            _ => Lead::Human,
        };
        Self {
            state: model.new_state(),
            composite: vec![0.5; config.dimension],
            outbound: OutboundRouter::new(&config),
            config,
            model,
            model_name,
            primed: None,
            rng,
            lead,
            last_human_at: 0.0,
            last_event_at: None,
            pending: VecDeque::new(),
            releases: Vec::new(),
            inbound: InboundRouter::new(),
            counters: Counters::default(),
            recent: VecDeque::new(),
            wall_origin,
            now: 0.0,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn lead(&self) -> Lead {
        self.lead
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn inbound_counters(&self) -> InboundCounters {
        self.inbound.counters
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn composite(&self) -> &[f64] {
        &self.composite
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    fn wall(&self, at: f64) -> DateTime<Utc> {
        self.wall_origin + chrono::Duration::nanoseconds((at * 1e9).round() as i64)
    }

    fn note_recent(&mut self, at: f64, source: Source) {
        self.recent.push_back((at, source));
        while self.recent.front().is_some_and(|(t, _)| *t < at - 1.0) {
            self.recent.pop_front();
        }
    }

    /// Route one incoming message; human input on a mapped control becomes
    /// a human event, anything else may be passed through.
    pub fn on_midi(&mut self, device: &str, t: &TimedMidi) -> Effects {
        match self.inbound.route(device, t, &self.config) {
            Inbound::Routed { dim, value, at } => self.on_human_event(dim, value, at),
            Inbound::Passthrough { device, message } => {
                Effects { midi: vec![Outbound { device, route: None, midi: message }], ..Default::default() }
            }
            Inbound::Dropped => Effects::default(),
        }
    }

    /// The human moved control `dim` to `value` at time `at`.
    pub fn on_human_event(&mut self, dim: usize, value: f64, at: f64) -> Effects {
        let mut fx = Effects::default();
        if dim >= self.composite.len() {
            return fx;
        }
        self.composite[dim] = value.clamp(0.0, 1.0);
        let dt_max = self.config.interaction.dt_max;
        let dt = self.last_event_at.map_or(0.0, |prev| (at - prev).clamp(0.0, dt_max));
        self.last_event_at = Some(at);
        let frame = ContinuousFrame { values: self.composite.clone(), dt };

        self.counters.human_events += 1;
        self.note_recent(at, Source::Human);
        fx.logs.push(LogRecord::new(self.wall(at), Source::Human, frame.values.clone()));
        fx.frames.push(EmittedFrame { at, source: Source::Human, frame: frame.clone() });

        match mdrnn::forward_step(&self.model, &self.state, &frame.to_model_vector()) {
            Ok((mix, mut next)) => {
                next.last_frame = frame;
                self.state = next;
                self.primed = Some(mix);
            }
            Err(e) => {
                ::log::warn!("conditioning on human input failed: {e}");
                self.counters.generation_errors += 1;
            }
        }

        if self.config.interaction.mode != InteractionMode::AiOnly {
            self.last_human_at = at;
            self.counters.cancelled += self.pending.len() as u64;
            self.pending.clear();
            if self.lead != Lead::Human {
                self.lead = Lead::Human;
                fx.lead_changed = Some(Lead::Human);
            }
        }
        fx
    }

    /// Advance to `now`: hand over the lead if the human has been quiet
    /// long enough, emit everything due, and generate the next AI frame
    /// when nothing is pending.
    pub fn tick(&mut self, now: f64) -> Effects {
        self.now = now;
        let mut fx = Effects::default();
        let ic = &self.config.interaction;
        if ic.mode == InteractionMode::CallAndResponse
            && self.lead == Lead::Human
            && now - self.last_human_at >= ic.switchover_s - TIME_EPS
        {
            self.lead = Lead::Ai;
            fx.lead_changed = Some(Lead::Ai);
        }
        fx.append(self.emit_due(now));
        if self.lead == Lead::Ai && self.pending.is_empty() {
            match self.generate() {
                Ok(frame) => self.pending.push_back(PendingFrame { due: now + frame.dt, frame }),
                Err(e) => {
                    ::log::warn!("generation failed, retrying next tick: {e}");
                    self.counters.generation_errors += 1;
                }
            }
            fx.append(self.emit_due(now));
        }
        fx
    }

    fn generate(&mut self) -> Result<ContinuousFrame, crate::Error> {
        let ic = &self.config.interaction;
        let (frame, next) = match self.primed.take() {
            Some(mix) => {
                let draw = mdrnn::sample(&mix, ic.pi_temp, ic.sigma_temp, &mut self.rng);
                let frame = clamp_frame(ContinuousFrame::from_model_vector(&draw), ic.dt_max);
                let mut next = self.state.clone();
                next.last_frame = frame.clone();
                (frame, next)
            }
            None => mdrnn::predict_next(
                &self.model,
                &self.state,
                &self.state.last_frame,
                ic.pi_temp,
                ic.sigma_temp,
                ic.dt_max,
                &mut self.rng,
            )?,
        };
        self.state = next;
        Ok(frame)
    }

    fn emit_due(&mut self, now: f64) -> Effects {
        let mut fx = Effects::default();
        let mut i = 0;
        while i < self.releases.len() {
            if self.releases[i].due <= now + TIME_EPS {
                let r = self.releases.remove(i);
                fx.midi.push(Outbound { device: r.device, route: Some(r.route), midi: TimedMidi { message: r.message, at: now } });
            } else {
                i += 1;
            }
        }
        while self.pending.front().is_some_and(|p| p.due <= now + TIME_EPS) {
            let p = self.pending.pop_front().unwrap();
            self.emit_frame(p.frame, now, &mut fx);
        }
        self.counters.midi_out += fx.midi.len() as u64;
        fx
    }

    fn emit_frame(&mut self, frame: ContinuousFrame, now: f64, fx: &mut Effects) {
        let gate = self.config.interaction.gate_s;
        for out in self.outbound.route(&frame, &self.config, now) {
            if out.midi.message.kind == MessageKind::NoteOn {
                let route = out.route.expect("routed output");
                // one sounding note per route: release the previous one first
                if let Some(pos) = self.releases.iter().position(|r| r.route == route) {
                    let r = self.releases.remove(pos);
                    fx.midi.push(Outbound { device: r.device, route: Some(route), midi: TimedMidi { message: r.message, at: now } });
                }
                let m = &out.midi.message;
                self.releases.push(Release {
                    due: now + gate,
                    route,
                    device: out.device.clone(),
                    message: MidiMessage::note_off(m.channel, m.data1, 0),
                });
            }
            fx.midi.push(out);
        }
        self.composite.clone_from(&frame.values);
        self.last_event_at = Some(now);
        self.counters.ai_frames += 1;
        self.note_recent(now, Source::Ai);
        fx.logs.push(LogRecord::new(self.wall(now), Source::Ai, frame.values.clone()));
        fx.frames.push(EmittedFrame { at: now, source: Source::Ai, frame });
    }

    /// Replace the configuration between ticks. The model must already
    /// match the new dimension.
    pub fn apply_config(&mut self, config: EngineConfig) {
        assert_eq!(config.dimension, self.model.shape.dimension, "dimension checked by caller");
        if config.outputs != self.config.outputs {
            self.outbound = OutboundRouter::new(&config);
        }
        match config.interaction.mode {
            InteractionMode::AiOnly => self.lead = Lead::Ai,
            InteractionMode::HumanOnly => {
                self.lead = Lead::Human;
                self.pending.clear();
            }
            InteractionMode::CallAndResponse => {}
        }
        self.config = config;
    }

    /// Swap in a new model (and matching config) and start from a fresh
    /// recurrent state.
    pub fn swap_model(&mut self, model: Arc<MdrnnParams>, name: String, config: EngineConfig) {
        assert_eq!(config.dimension, model.shape.dimension, "dimension checked by caller");
        self.state = model.new_state();
        self.model = model;
        self.model_name = name;
        self.primed = None;
        self.pending.clear();
        if self.composite.len() != config.dimension {
            self.composite = vec![0.5; config.dimension];
        }
        self.outbound = OutboundRouter::new(&config);
        self.apply_config(config);
    }

    pub fn status(&self, now: f64) -> Status {
        let mut recent = RecentCounts::default();
        for (t, s) in &self.recent {
            if *t >= now - 1.0 {
                match s {
                    Source::Human => recent.human += 1,
                    Source::Ai => recent.ai += 1,
                }
            }
        }
        Status {
            state: "running",
            lead: self.lead,
            mode: self.config.interaction.mode,
            dimension: self.config.dimension,
            model_file: self.model_name.clone(),
            uptime_s: now,
            switchover_s: self.config.interaction.switchover_s,
            counters: self.counters,
            inbound: self.inbound.counters,
            recent,
            pending: self.pending.len(),
        }
    }
}
