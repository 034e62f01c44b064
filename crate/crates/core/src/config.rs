//! Engine configuration schema and validation.
//!
//! The configuration file is a strict JSON document: unknown keys are
//! rejected so that typos surface at load time instead of silently falling
//! back to defaults.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Which MIDI channel voice message a route listens for or emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    NoteOn,
    ControlChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    CallAndResponse,
    AiOnly,
    HumanOnly,
}

/// Maps one physical control to one model dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteIn {
    pub device: String,
    pub kind: RouteKind,
    pub channel: u8,
    /// CC number; ignored for `note_on` routes.
    #[serde(default)]
    pub number: u8,
    pub dim: usize,
}

/// Maps one model dimension to one MIDI output, restricted to
/// `[out_lo, out_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteOut {
    pub device: String,
    pub kind: RouteKind,
    pub channel: u8,
    #[serde(default)]
    pub number: u8,
    pub dim: usize,
    #[serde(default = "default_out_lo")]
    pub out_lo: u8,
    #[serde(default = "default_out_hi")]
    pub out_hi: u8,
    /// Note-on velocity; unused for control changes.
    #[serde(default = "default_velocity")]
    pub velocity: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionConfig {
    #[serde(default = "default_mode")]
    pub mode: InteractionMode,
    /// Seconds of human silence before the AI takes the lead.
    #[serde(default = "default_switchover")]
    pub switchover_s: f64,
    #[serde(default = "default_tick_hz")]
    pub tick_hz: f64,
    /// Upper bound on a frame's time delta.
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    /// Delay between an AI note-on and its generated note-off.
    #[serde(default = "default_gate")]
    pub gate_s: f64,
    #[serde(default = "default_temp")]
    pub pi_temp: f64,
    #[serde(default = "default_temp")]
    pub sigma_temp: f64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            switchover_s: default_switchover(),
            tick_hz: default_tick_hz(),
            dt_max: default_dt_max(),
            gate_s: default_gate(),
            pi_temp: default_temp(),
            sigma_temp: default_temp(),
        }
    }
}

impl InteractionConfig {
    pub fn tick_period(&self) -> f64 {
        1.0 / self.tick_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default)]
    pub osc_enabled: bool,
    /// `host:port` of the OSC receiver.
    #[serde(default = "default_osc_target")]
    pub osc_target: String,
    /// Serve the WebSocket frame feed on the HTTP service.
    #[serde(default)]
    pub ws_enabled: bool,
    /// Bind address of the HTTP configuration service.
    #[serde(default = "default_http_bind")]
    pub http_bind: String,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            osc_enabled: false,
            osc_target: default_osc_target(),
            ws_enabled: false,
            http_bind: default_http_bind(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub dimension: usize,
    /// Weight file, relative paths resolve against the config file's folder.
    pub model_file: PathBuf,
    #[serde(default)]
    pub inputs: Vec<RouteIn>,
    #[serde(default)]
    pub outputs: Vec<RouteOut>,
    #[serde(default)]
    pub interaction: InteractionConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default = "default_log_dir")]
    pub log_dir: PathBuf,
    #[serde(default)]
    pub rng_seed: Option<u64>,
    /// Output device receiving unrouted input messages verbatim.
    #[serde(default)]
    pub passthrough: Option<String>,
}

fn default_out_lo() -> u8 {
    0
}
fn default_out_hi() -> u8 {
    127
}
fn default_velocity() -> u8 {
    100
}
fn default_mode() -> InteractionMode {
    InteractionMode::CallAndResponse
}
fn default_switchover() -> f64 {
    2.0
}
fn default_tick_hz() -> f64 {
    100.0
}
fn default_dt_max() -> f64 {
    5.0
}
fn default_gate() -> f64 {
    0.25
}
fn default_temp() -> f64 {
    1.0
}
fn default_osc_target() -> String {
    "127.0.0.1:5005".into()
}
fn default_http_bind() -> String {
    "127.0.0.1:4000".into()
}
fn default_log_dir() -> PathBuf {
    PathBuf::from("logs")
}

/// Human-readable list of everything wrong with a config document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.violations.join("; "))
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn single(msg: impl Into<String>) -> Self {
        Self { violations: vec![msg.into()] }
    }
}

/// Parse and validate a structured config document, filling defaults.
pub fn validate_config(raw: &serde_json::Value) -> Result<EngineConfig, ConfigError> {
    let cfg: EngineConfig =
        serde_json::from_value(raw.clone()).map_err(|e| ConfigError::single(e.to_string()))?;
    let violations = check(&cfg);
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { violations })
    }
}

/// Parse JSON text and validate it.
pub fn parse_config(text: &str) -> Result<EngineConfig, ConfigError> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ConfigError::single(format!("malformed JSON: {e}")))?;
    validate_config(&raw)
}

fn check(cfg: &EngineConfig) -> Vec<String> {
    let mut v = Vec::new();
    let d = cfg.dimension;
    if d == 0 {
        v.push("dimension must be at least 1".to_string());
    }
    let mut seen = HashSet::new();
    for (i, r) in cfg.inputs.iter().enumerate() {
        if r.dim >= d {
            v.push(format!("inputs[{i}]: dimension out of range ({} not in 0..{d})", r.dim));
        }
        if r.channel > 15 {
            v.push(format!("inputs[{i}]: channel {} not in 0..=15", r.channel));
        }
        if r.number > 127 {
            v.push(format!("inputs[{i}]: number {} not in 0..=127", r.number));
        }
        let number = match r.kind {
            RouteKind::NoteOn => 0,
            RouteKind::ControlChange => r.number,
        };
        if !seen.insert((r.device.as_str(), r.kind, r.channel, number)) {
            v.push(format!(
                "inputs[{i}]: duplicate input route ({}, {:?}, channel {}, number {})",
                r.device, r.kind, r.channel, number
            ));
        }
    }
    for (i, r) in cfg.outputs.iter().enumerate() {
        if r.dim >= d {
            v.push(format!("outputs[{i}]: dimension out of range ({} not in 0..{d})", r.dim));
        }
        if r.channel > 15 {
            v.push(format!("outputs[{i}]: channel {} not in 0..=15", r.channel));
        }
        if r.number > 127 {
            v.push(format!("outputs[{i}]: number {} not in 0..=127", r.number));
        }
        if r.out_hi > 127 {
            v.push(format!("outputs[{i}]: out_hi {} not in 0..=127", r.out_hi));
        }
        if r.out_lo > r.out_hi {
            v.push(format!("outputs[{i}]: out_lo {} > out_hi {}", r.out_lo, r.out_hi));
        }
        if r.velocity == 0 || r.velocity > 127 {
            v.push(format!("outputs[{i}]: velocity {} not in 1..=127", r.velocity));
        }
    }
    let ic = &cfg.interaction;
    let positive = [
        ("switchover_s", ic.switchover_s),
        ("tick_hz", ic.tick_hz),
        ("dt_max", ic.dt_max),
        ("pi_temp", ic.pi_temp),
    ];
    for (name, value) in positive {
        if !(value.is_finite() && value > 0.0) {
            v.push(format!("interaction.{name} must be a positive number, got {value}"));
        }
    }
    for (name, value) in [("gate_s", ic.gate_s), ("sigma_temp", ic.sigma_temp)] {
        if !(value.is_finite() && value >= 0.0) {
            v.push(format!("interaction.{name} must be non-negative, got {value}"));
        }
    }
    if cfg.net.osc_enabled && cfg.net.osc_target.parse::<std::net::SocketAddr>().is_err() {
        v.push(format!("net.osc_target {:?} is not a host:port address", cfg.net.osc_target));
    }
    v
}

impl EngineConfig {
    /// Read, parse and validate a config file. Does not touch the model file.
    pub fn from_file(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::Io(format!("reading {}: {e}", path.display())))?;
        Ok(parse_config(&text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn model_path(&self, base: &Path) -> PathBuf {
        self.resolve(base, &self.model_file)
    }

    pub fn log_path(&self, base: &Path) -> PathBuf {
        self.resolve(base, &self.log_dir)
    }

    /// Check that the model file exists and its header agrees with `dimension`.
    pub fn check_model(&self, base: &Path) -> Result<crate::mdrnn::ModelShape, crate::Error> {
        let path = self.model_path(base);
        let shape = crate::mdrnn::read_shape(&path)?;
        if shape.dimension != self.dimension {
            return Err(crate::Error::DimensionMismatch { expected: self.dimension, found: shape.dimension });
        }
        Ok(shape)
    }

    /// Distinct device selectors referenced by input routes.
    pub fn input_devices(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.inputs {
            if !out.contains(&r.device) {
                out.push(r.device.clone());
            }
        }
        out
    }

    /// Distinct device selectors referenced by output routes and passthrough.
    pub fn output_devices(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for d in self.outputs.iter().map(|r| &r.device).chain(self.passthrough.iter()) {
            if !out.contains(d) {
                out.push(d.clone());
            }
        }
        out
    }
}

/// Ready-made configurations for the documented performance setups.
pub mod presets {
    use super::*;

    fn base(dimension: usize, model_file: &str) -> EngineConfig {
        EngineConfig {
            dimension,
            model_file: PathBuf::from(model_file),
            inputs: Vec::new(),
            outputs: Vec::new(),
            interaction: InteractionConfig::default(),
            net: NetConfig::default(),
            log_dir: default_log_dir(),
            rng_seed: None,
            passthrough: None,
        }
    }

    /// One knob in, one synth pitch out: the model value becomes a note
    /// number on the synthesiser.
    pub fn volca(model_file: &str) -> EngineConfig {
        let mut c = base(1, model_file);
        c.inputs.push(RouteIn {
            device: "volca".into(),
            kind: RouteKind::ControlChange,
            channel: 0,
            number: 1,
            dim: 0,
        });
        c.outputs.push(RouteOut {
            device: "volca".into(),
            kind: RouteKind::NoteOn,
            channel: 0,
            number: 0,
            dim: 0,
            out_lo: 0,
            out_hi: 127,
            velocity: 100,
        });
        c
    }

    /// Fast interleaving: the AI answers after a tenth of a second of silence.
    pub fn fast_interleave(model_file: &str) -> EngineConfig {
        let mut c = volca(model_file);
        c.interaction.switchover_s = 0.1;
        c
    }

    /// DAW setup: eight CC inputs, four note channels and four CC channels out.
    pub fn daw(model_file: &str) -> EngineConfig {
        let mut c = base(8, model_file);
        for dim in 0..8 {
            c.inputs.push(RouteIn {
                device: "controller".into(),
                kind: RouteKind::ControlChange,
                channel: 0,
                number: 1 + dim as u8,
                dim,
            });
        }
        for dim in 0..4 {
            c.outputs.push(RouteOut {
                device: "daw".into(),
                kind: RouteKind::NoteOn,
                channel: dim as u8,
                number: 0,
                dim,
                out_lo: 0,
                out_hi: 127,
                velocity: 100,
            });
        }
        for dim in 4..8 {
            c.outputs.push(RouteOut {
                device: "daw".into(),
                kind: RouteKind::ControlChange,
                channel: 4 + (dim - 4) as u8,
                number: 1,
                dim,
                out_lo: 0,
                out_hi: 127,
                velocity: 100,
            });
        }
        c
    }

    /// Two controllers on disjoint dimensions; CC feedback to the first
    /// controller's LED rings is restricted to a narrow range.
    pub fn multi_device(model_file: &str) -> EngineConfig {
        let mut c = base(4, model_file);
        for dim in 0..2 {
            c.inputs.push(RouteIn {
                device: "x-touch".into(),
                kind: RouteKind::ControlChange,
                channel: 0,
                number: 10 + dim as u8,
                dim,
            });
            c.outputs.push(RouteOut {
                device: "x-touch".into(),
                kind: RouteKind::ControlChange,
                channel: 0,
                number: 10 + dim as u8,
                dim,
                out_lo: 10,
                out_hi: 20,
                velocity: 100,
            });
        }
        for dim in 2..4 {
            c.inputs.push(RouteIn {
                device: "s-1".into(),
                kind: RouteKind::ControlChange,
                channel: 1,
                number: 70 + dim as u8,
                dim,
            });
            c.outputs.push(RouteOut {
                device: "s-1".into(),
                kind: RouteKind::ControlChange,
                channel: 1,
                number: 70 + dim as u8,
                dim,
                out_lo: 0,
                out_hi: 127,
                velocity: 100,
            });
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> serde_json::Value {
        json!({
            "dimension": 1,
            "model_file": "model.mdrn",
            "inputs": [{"device": "in", "kind": "control_change", "channel": 0, "number": 7, "dim": 0}],
            "outputs": [{"device": "out", "kind": "note_on", "channel": 0, "dim": 0}]
        })
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = validate_config(&minimal()).unwrap();
        assert_eq!(cfg.interaction, InteractionConfig::default());
        assert_eq!(cfg.interaction.switchover_s, 2.0);
        assert_eq!(cfg.interaction.tick_hz, 100.0);
        assert_eq!(cfg.interaction.dt_max, 5.0);
        assert_eq!(cfg.outputs[0].out_lo, 0);
        assert_eq!(cfg.outputs[0].out_hi, 127);
        assert_eq!(cfg.outputs[0].velocity, 100);
        assert_eq!(cfg.log_dir, PathBuf::from("logs"));
        assert_eq!(cfg.rng_seed, None);
    }

    #[test]
    fn output_dim_equal_to_dimension_is_out_of_range() {
        let mut raw = presets::daw("m.mdrn");
        raw.outputs[0].dim = 8;
        let err = validate_config(&serde_json::to_value(&raw).unwrap()).unwrap_err();
        assert_eq!(err.violations.len(), 1);
        assert!(err.violations[0].contains("dimension out of range"), "{err}");
    }

    #[test]
    fn daw_preset_is_valid() {
        let cfg = validate_config(&serde_json::to_value(presets::daw("m.mdrn")).unwrap()).unwrap();
        assert_eq!(cfg.inputs.len(), 8);
        assert_eq!(cfg.outputs.len(), 8);
        let notes = cfg.outputs.iter().filter(|r| r.kind == RouteKind::NoteOn).count();
        assert_eq!(notes, 4);
    }

    #[test]
    fn every_preset_validates() {
        for cfg in [
            presets::volca("m"),
            presets::fast_interleave("m"),
            presets::daw("m"),
            presets::multi_device("m"),
        ] {
            validate_config(&serde_json::to_value(&cfg).unwrap()).unwrap();
        }
    }

    #[test]
    fn duplicate_input_route_rejected() {
        let mut raw = minimal();
        let dup = raw["inputs"][0].clone();
        raw["inputs"].as_array_mut().unwrap().push(dup);
        let err = validate_config(&raw).unwrap_err();
        assert!(err.violations.iter().any(|v| v.contains("duplicate input route")));
    }

    #[test]
    fn note_on_routes_ignore_number_for_duplicates() {
        let mut raw = minimal();
        raw["inputs"] = json!([
            {"device": "in", "kind": "note_on", "channel": 0, "number": 1, "dim": 0},
            {"device": "in", "kind": "note_on", "channel": 0, "number": 2, "dim": 0}
        ]);
        assert!(validate_config(&raw).is_err());
    }

    #[test]
    fn inverted_output_range_rejected() {
        let mut raw = minimal();
        raw["outputs"][0]["out_lo"] = json!(30);
        raw["outputs"][0]["out_hi"] = json!(20);
        let err = validate_config(&raw).unwrap_err();
        assert!(err.violations[0].contains("out_lo 30 > out_hi 20"));
    }

    #[test]
    fn unknown_enum_value_rejected() {
        let mut raw = minimal();
        raw["inputs"][0]["kind"] = json!("pitch_bend");
        let err = validate_config(&raw).unwrap_err();
        assert!(err.violations[0].contains("unknown variant"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let mut raw = minimal();
        raw["interaction"] = json!({"switchover": 0.1});
        assert!(validate_config(&raw).is_err());
    }

    #[test]
    fn collects_several_violations() {
        let mut raw = minimal();
        raw["inputs"][0]["channel"] = json!(16);
        raw["outputs"][0]["dim"] = json!(3);
        raw["interaction"] = json!({"switchover_s": 0.0});
        let err = validate_config(&raw).unwrap_err();
        assert_eq!(err.violations.len(), 3, "{err}");
    }

    #[test]
    fn validation_is_idempotent_and_round_trips() {
        for cfg in [presets::daw("a"), presets::multi_device("b")] {
            let once = validate_config(&serde_json::to_value(&cfg).unwrap()).unwrap();
            let text = once.to_json_pretty();
            let twice = parse_config(&text).unwrap();
            assert_eq!(once, twice);
            assert_eq!(once, cfg);
        }
    }
}
