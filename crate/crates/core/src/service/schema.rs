//! JSON Schema documents for the API, served at `/api/schema`.

use serde_json::{json, Value};

use crate::netio::FEED_VERSION;

pub const API_VERSION: u32 = 1;

fn route_in() -> Value {
    json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["device", "kind", "channel", "dim"],
        "properties": {
            "device": { "type": "string" },
            "kind": { "enum": ["note_on", "control_change"] },
            "channel": { "type": "integer", "minimum": 0, "maximum": 15 },
            "number": { "type": "integer", "minimum": 0, "maximum": 127, "default": 0 },
            "dim": { "type": "integer", "minimum": 0 }
        }
    })
}

fn route_out() -> Value {
    let mut v = route_in();
    let props = v["properties"].as_object_mut().unwrap();
    props.insert("out_lo".into(), json!({ "type": "integer", "minimum": 0, "maximum": 127, "default": 0 }));
    props.insert("out_hi".into(), json!({ "type": "integer", "minimum": 0, "maximum": 127, "default": 127 }));
    props.insert("velocity".into(), json!({ "type": "integer", "minimum": 1, "maximum": 127, "default": 100 }));
    v
}

pub fn config_schema() -> Value {
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "EngineConfig",
        "type": "object",
        "additionalProperties": false,
        "required": ["dimension", "model_file"],
        "properties": {
            "dimension": { "type": "integer", "minimum": 1 },
            "model_file": { "type": "string" },
            "inputs": { "type": "array", "items": route_in(), "default": [] },
            "outputs": { "type": "array", "items": route_out(), "default": [] },
            "interaction": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "mode": { "enum": ["call_and_response", "ai_only", "human_only"] },
                    "switchover_s": { "type": "number", "exclusiveMinimum": 0, "default": 2.0 },
                    "tick_hz": { "type": "number", "exclusiveMinimum": 0, "default": 100 },
                    "dt_max": { "type": "number", "exclusiveMinimum": 0, "default": 5.0 },
                    "gate_s": { "type": "number", "minimum": 0, "default": 0.25 },
                    "pi_temp": { "type": "number", "exclusiveMinimum": 0, "default": 1.0 },
                    "sigma_temp": { "type": "number", "exclusiveMinimum": 0, "default": 1.0 }
                }
            },
            "net": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "osc_enabled": { "type": "boolean", "default": false },
                    "osc_target": { "type": "string", "default": "127.0.0.1:5005" },
                    "ws_enabled": { "type": "boolean", "default": false },
                    "http_bind": { "type": "string", "default": "127.0.0.1:4000" }
                }
            },
            "log_dir": { "type": "string", "default": "logs" },
            "rng_seed": { "type": ["integer", "null"], "minimum": 0 },
            "passthrough": { "type": ["string", "null"] }
        }
    })
}

pub fn status_schema() -> Value {
    let counter = json!({ "type": "integer", "minimum": 0 });
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "Status",
        "type": "object",
        "required": ["state", "lead", "mode", "dimension", "model_file", "uptime_s", "switchover_s", "counters", "inbound", "recent", "pending"],
        "properties": {
            "state": { "type": "string" },
            "lead": { "enum": ["human", "ai"] },
            "mode": { "enum": ["call_and_response", "ai_only", "human_only"] },
            "dimension": { "type": "integer", "minimum": 1 },
            "model_file": { "type": "string" },
            "uptime_s": { "type": "number", "minimum": 0 },
            "switchover_s": { "type": "number" },
            "counters": {
                "type": "object",
                "required": ["human_events", "ai_frames", "midi_out", "cancelled", "generation_errors"],
                "properties": {
                    "human_events": counter, "ai_frames": counter, "midi_out": counter,
                    "cancelled": counter, "generation_errors": counter
                }
            },
            "inbound": {
                "type": "object",
                "required": ["matched", "passed", "dropped"],
                "properties": { "matched": counter, "passed": counter, "dropped": counter }
            },
            "recent": {
                "type": "object",
                "required": ["human", "ai"],
                "properties": { "human": counter, "ai": counter }
            },
            "pending": counter
        }
    })
}

pub fn feed_schema() -> Value {
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "FeedMessage",
        "description": "Clients must ignore unknown fields.",
        "oneOf": [
            {
                "type": "object",
                "required": ["t", "source", "values", "dt"],
                "properties": {
                    "t": { "type": "number" },
                    "source": { "enum": ["human", "ai"] },
                    "values": { "type": "array", "items": { "type": "number", "minimum": 0, "maximum": 1 } },
                    "dt": { "type": "number", "minimum": 0 }
                }
            },
            {
                "type": "object",
                "required": ["t", "lead"],
                "properties": { "t": { "type": "number" }, "lead": { "enum": ["human", "ai"] } }
            }
        ]
    })
}

pub fn api_schema() -> Value {
    json!({
        "version": API_VERSION,
        "feed_version": FEED_VERSION,
        "config": config_schema(),
        "status": status_schema(),
        "feed": feed_schema(),
    })
}
