//! Translation between MIDI events and model dimensions.

use serde::Serialize;

use crate::config::{EngineConfig, RouteIn, RouteKind, RouteOut};
use crate::midi::{MessageKind, MidiMessage, TimedMidi};
use crate::{ContinuousFrame, Error};

/// Does `selector` pick out `device`? Exact name or case-insensitive
/// substring, mirroring device selection.
pub fn device_matches(selector: &str, device: &str) -> bool {
    selector == device || device.to_lowercase().contains(&selector.to_lowercase())
}

fn message_matches(route: &RouteIn, m: &MidiMessage) -> bool {
    if m.channel != route.channel {
        return false;
    }
    match route.kind {
        RouteKind::NoteOn => m.kind == MessageKind::NoteOn,
        RouteKind::ControlChange => m.kind == MessageKind::ControlChange && m.data1 == route.number,
    }
}

/// Map a matching message onto its dimension: the note number for note-on
/// routes, the controller value for CC routes, both divided by 127.
pub fn scale_in(m: &MidiMessage, route: &RouteIn) -> Result<(usize, f64), Error> {
    if !message_matches(route, m) {
        return Err(Error::RouteMismatch(format!("{m:?} vs {route:?}")));
    }
    let data = match route.kind {
        RouteKind::NoteOn => m.data1,
        RouteKind::ControlChange => m.data2,
    };
    Ok((route.dim, data as f64 / 127.0))
}

/// Data byte for `value` in the route's output range, rounding half up.
pub fn scale_out_data(value: f64, route: &RouteOut) -> u8 {
    let (lo, hi) = (route.out_lo as f64, route.out_hi as f64);
    let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
    (lo + v * (hi - lo) + 0.5).floor().clamp(lo, hi) as u8
}

pub fn scale_out(value: f64, route: &RouteOut) -> MidiMessage {
    let data = scale_out_data(value, route);
    match route.kind {
        RouteKind::NoteOn => MidiMessage::note_on(route.channel, data, route.velocity),
        RouteKind::ControlChange => MidiMessage::control_change(route.channel, route.number, data),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    /// Human input on a model dimension.
    Routed { dim: usize, value: f64, at: f64 },
    /// Unrouted message to forward verbatim to the passthrough device.
    Passthrough { device: String, message: TimedMidi },
    Dropped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InboundCounters {
    pub matched: u64,
    pub passed: u64,
    pub dropped: u64,
}

impl InboundCounters {
    pub fn total(&self) -> u64 {
        self.matched + self.passed + self.dropped
    }
}

/// First matching input route wins; every message is counted exactly once
/// as matched, passed through, or dropped.
#[derive(Debug, Clone, Default)]
pub struct InboundRouter {
    pub counters: InboundCounters,
}

impl InboundRouter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(&mut self, device: &str, t: &TimedMidi, config: &EngineConfig) -> Inbound {
        let hit = config
            .inputs
            .iter()
            .find(|r| device_matches(&r.device, device) && message_matches(r, &t.message));
        if let Some(route) = hit {
            let (dim, value) = scale_in(&t.message, route).expect("route matched");
            self.counters.matched += 1;
            return Inbound::Routed { dim, value, at: t.at };
        }
        match &config.passthrough {
            Some(out) => {
                self.counters.passed += 1;
                Inbound::Passthrough { device: out.clone(), message: t.clone() }
            }
            None => {
                self.counters.dropped += 1;
                Inbound::Dropped
            }
        }
    }
}

/// A message addressed to an output device selector.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub device: String,
    /// Index of the output route that produced it, if any.
    pub route: Option<usize>,
    pub midi: TimedMidi,
}

/// Turns frames into output messages, suppressing control changes whose
/// value has not changed since the last emission on that route.
#[derive(Debug, Clone, Default)]
pub struct OutboundRouter {
    last_cc: Vec<Option<u8>>,
}

impl OutboundRouter {
    pub fn new(config: &EngineConfig) -> Self {
        Self { last_cc: vec![None; config.outputs.len()] }
    }

    /// One message per output route, stamped `at`.
    pub fn route(&mut self, frame: &ContinuousFrame, config: &EngineConfig, at: f64) -> Vec<Outbound> {
        if self.last_cc.len() != config.outputs.len() {
            self.last_cc = vec![None; config.outputs.len()];
        }
        let mut out = Vec::with_capacity(config.outputs.len());
        for (i, route) in config.outputs.iter().enumerate() {
            let message = scale_out(frame.values[route.dim], route);
            if route.kind == RouteKind::ControlChange {
                if self.last_cc[i] == Some(message.data2) {
                    continue;
                }
                self.last_cc[i] = Some(message.data2);
            }
            out.push(Outbound { device: route.device.clone(), route: Some(i), midi: TimedMidi { message, at } });
        }
        out
    }
}

/// Stateless form: every route's message for the frame, scheduled `dt`
/// after `base`, without de-duplication.
pub fn route_outbound(frame: &ContinuousFrame, config: &EngineConfig, base: f64) -> Vec<Outbound> {
    OutboundRouter::new(config).route(frame, config, base + frame.dt)
}
