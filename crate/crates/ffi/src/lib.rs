//! C ABI over the impsy model, MIDI codec and OSC encoder.
//!
//! Conventions:
//! - every fallible call returns an [`ImpsyStatus`]; `IMPSY_STATUS_OK` is zero
//! - on failure, [`impsy_last_error`] describes the most recent error on
//!   the calling thread
//! - objects are opaque handles created by `*_new`/`*_load` functions and
//!   released with the matching `*_free`; freeing NULL is a no-op
//! - output buffers are caller-owned with an explicit capacity; when too
//!   small the call fails with `IMPSY_STATUS_BUFFER_TOO_SMALL` and reports the
//!   required length

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use impsy::mdrnn::{self, MdrnnParams, MdrnnState, ModelShape};
use impsy::midi::{MessageKind, MidiMessage, MidiParser};
use impsy::{ContinuousFrame, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpsyStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checksum = 4,
    InvalidWeights = 5,
    DimensionMismatch = 6,
    BufferTooSmall = 7,
    InvalidConfig = 8,
    InvalidOscAddress = 9,
    Internal = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs removed"));
}

fn fail(status: ImpsyStatus, msg: impl Into<String>) -> ImpsyStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> ImpsyStatus {
    let status = match &e {
        Error::Io(_) | Error::ModelNotFound(_) => ImpsyStatus::Io,
        Error::Checksum(_) => ImpsyStatus::Checksum,
        Error::Weights(_) | Error::Shape(_) => ImpsyStatus::InvalidWeights,
        Error::DimensionMismatch { .. } => ImpsyStatus::DimensionMismatch,
        Error::Config(_) => ImpsyStatus::InvalidConfig,
        Error::OscAddress(_) => ImpsyStatus::InvalidOscAddress,
        Error::InvalidFrame(_) => ImpsyStatus::InvalidArgument,
        _ => ImpsyStatus::Internal,
    };
    fail(status, e.to_string())
}

/// Run `f`, turning panics into `IMPSY_STATUS_INTERNAL` so they never unwind
/// across the C boundary.
fn guard(f: impl FnOnce() -> ImpsyStatus) -> ImpsyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == ImpsyStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(ImpsyStatus::Internal, "internal panic"),
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(ImpsyStatus::NullPointer, concat!(stringify!($p), " is NULL"));
        })+
    };
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> &'a [T] {
    if len == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(ptr, len)
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, ImpsyStatus> {
    CStr::from_ptr(p).to_str().map_err(|_| fail(ImpsyStatus::InvalidArgument, "string is not UTF-8"))
}

/// Copy `bytes` into a caller buffer, always reporting the needed length.
unsafe fn write_out(bytes: &[u8], out: *mut u8, cap: usize, out_len: *mut usize) -> ImpsyStatus {
    *out_len = bytes.len();
    if bytes.len() > cap {
        return fail(ImpsyStatus::BufferTooSmall, format!("need {} bytes, have {cap}", bytes.len()));
    }
    if !bytes.is_empty() {
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
    }
    ImpsyStatus::Ok
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn impsy_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn impsy_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- model ----

/// Opaque trained network parameters.
pub struct ImpsyModel {
    params: Arc<MdrnnParams>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ImpsyShape {
    pub dimension: u32,
    pub layers: u32,
    pub hidden: u32,
    pub mixtures: u32,
}

fn boxed_model(params: MdrnnParams) -> *mut ImpsyModel {
    Box::into_raw(Box::new(ImpsyModel { params: Arc::new(params) }))
}

/// Load a weight file.
#[no_mangle]
pub unsafe extern "C" fn impsy_model_load(path: *const c_char, out: *mut *mut ImpsyModel) -> ImpsyStatus {
    guard(|| {
        non_null!(path, out);
        let path = match c_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match mdrnn::load_weights(Path::new(path)) {
            Ok(p) => {
                *out = boxed_model(p);
                ImpsyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Decode weight-file bytes held in memory.
#[no_mangle]
pub unsafe extern "C" fn impsy_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut ImpsyModel) -> ImpsyStatus {
    guard(|| {
        non_null!(bytes, out);
        match mdrnn::weights_from_bytes(slice(bytes, len)) {
            Ok(p) => {
                *out = boxed_model(p);
                ImpsyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// A freshly initialized (untrained) model.
#[no_mangle]
pub unsafe extern "C" fn impsy_model_random(shape: ImpsyShape, seed: u64, out: *mut *mut ImpsyModel) -> ImpsyStatus {
    guard(|| {
        non_null!(out);
        let shape = match ModelShape::new(
            shape.dimension as usize,
            shape.layers as usize,
            shape.hidden as usize,
            shape.mixtures as usize,
        ) {
            Ok(s) => s,
            Err(e) => return fail(ImpsyStatus::InvalidArgument, e.to_string()),
        };
        *out = boxed_model(MdrnnParams::init(shape, &mut ChaCha8Rng::seed_from_u64(seed)));
        ImpsyStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn impsy_model_save(model: *const ImpsyModel, path: *const c_char) -> ImpsyStatus {
    guard(|| {
        non_null!(model, path);
        let path = match c_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match mdrnn::save_weights(&(&*model).params, Path::new(path)) {
            Ok(()) => ImpsyStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn impsy_model_shape(model: *const ImpsyModel, out: *mut ImpsyShape) -> ImpsyStatus {
    guard(|| {
        non_null!(model, out);
        let s = (&*model).params.shape;
        *out = ImpsyShape {
            dimension: s.dimension as u32,
            layers: s.layers as u32,
            hidden: s.hidden as u32,
            mixtures: s.mixtures as u32,
        };
        ImpsyStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn impsy_model_free(model: *mut ImpsyModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---- generator ----

/// Recurrent state plus sampling settings over a shared model. Safe to
/// free the model while generators are alive.
pub struct ImpsyGenerator {
    params: Arc<MdrnnParams>,
    state: MdrnnState,
    rng: ChaCha8Rng,
    pi_temp: f64,
    sigma_temp: f64,
    dt_max: f64,
}

#[no_mangle]
pub unsafe extern "C" fn impsy_generator_new(
    model: *const ImpsyModel,
    seed: u64,
    pi_temp: f64,
    sigma_temp: f64,
    dt_max: f64,
    out: *mut *mut ImpsyGenerator,
) -> ImpsyStatus {
    guard(|| {
        non_null!(model, out);
        if !(pi_temp > 0.0 && sigma_temp > 0.0 && dt_max > 0.0) {
            return fail(ImpsyStatus::InvalidArgument, "temperatures and dt_max must be positive");
        }
        let params = (&*model).params.clone();
        *out = Box::into_raw(Box::new(ImpsyGenerator {
            state: params.new_state(),
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pi_temp,
            sigma_temp,
            dt_max,
        }));
        ImpsyStatus::Ok
    })
}

/// Feed an observed frame (`dim` values in [0, 1] and its dt) to the
/// network without sampling.
#[no_mangle]
pub unsafe extern "C" fn impsy_generator_observe(
    gen: *mut ImpsyGenerator,
    values: *const f64,
    dim: usize,
    dt: f64,
) -> ImpsyStatus {
    guard(|| {
        non_null!(gen, values);
        let g = &mut *gen;
        let d = g.params.shape.dimension;
        if dim != d {
            return from_error(Error::DimensionMismatch { expected: d, found: dim });
        }
        let frame = match ContinuousFrame::new(slice(values, dim).to_vec(), dt, g.dt_max) {
            Ok(f) => f,
            Err(e) => return from_error(e),
        };
        match mdrnn::forward_step(&g.params, &g.state, &frame.to_model_vector()) {
            Ok((_, mut next)) => {
                next.last_frame = frame;
                g.state = next;
                ImpsyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Sample the next frame into `values` (capacity `cap`) and `dt`.
#[no_mangle]
pub unsafe extern "C" fn impsy_generator_next(
    gen: *mut ImpsyGenerator,
    values: *mut f64,
    cap: usize,
    dt: *mut f64,
) -> ImpsyStatus {
    guard(|| {
        non_null!(gen, values, dt);
        let g = &mut *gen;
        let d = g.params.shape.dimension;
        if cap < d {
            return fail(ImpsyStatus::BufferTooSmall, format!("need {d} values, have {cap}"));
        }
        let prev = g.state.last_frame.clone();
        match mdrnn::predict_next(&g.params, &g.state, &prev, g.pi_temp, g.sigma_temp, g.dt_max, &mut g.rng) {
            Ok((frame, next)) => {
                g.state = next;
                std::ptr::copy_nonoverlapping(frame.values.as_ptr(), values, d);
                *dt = frame.dt;
                ImpsyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Back to the zero state; the random stream continues.
#[no_mangle]
pub unsafe extern "C" fn impsy_generator_reset(gen: *mut ImpsyGenerator) -> ImpsyStatus {
    guard(|| {
        non_null!(gen);
        (&mut *gen).state.reset();
        ImpsyStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn impsy_generator_free(gen: *mut ImpsyGenerator) {
    if !gen.is_null() {
        drop(Box::from_raw(gen));
    }
}

// ---- MIDI ----

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpsyMidiKind {
    NoteOn = 0,
    NoteOff = 1,
    ControlChange = 2,
    Other = 3,
}

/// One decoded MIDI message. `raw` holds the canonical bytes (running
/// status expanded); MIDI 1.0 messages the parser emits fit in three.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImpsyMidiMessage {
    pub kind: ImpsyMidiKind,
    pub channel: u8,
    pub data1: u8,
    pub data2: u8,
    pub raw_len: u8,
    pub raw: [u8; 3],
}

impl From<&MidiMessage> for ImpsyMidiMessage {
    fn from(m: &MidiMessage) -> Self {
        let kind = match m.kind {
            MessageKind::NoteOn => ImpsyMidiKind::NoteOn,
            MessageKind::NoteOff => ImpsyMidiKind::NoteOff,
            MessageKind::ControlChange => ImpsyMidiKind::ControlChange,
            MessageKind::Other => ImpsyMidiKind::Other,
        };
        let mut raw = [0u8; 3];
        let n = m.raw.len().min(3);
        raw[..n].copy_from_slice(&m.raw[..n]);
        Self { kind, channel: m.channel, data1: m.data1, data2: m.data2, raw_len: n as u8, raw }
    }
}

impl ImpsyMidiMessage {
    fn to_message(self) -> Result<MidiMessage, ImpsyStatus> {
        if self.channel > 15 || self.data1 > 127 || self.data2 > 127 {
            return Err(fail(ImpsyStatus::InvalidArgument, "channel or data byte out of range"));
        }
        Ok(match self.kind {
            ImpsyMidiKind::NoteOn => MidiMessage::note_on(self.channel, self.data1, self.data2),
            ImpsyMidiKind::NoteOff => MidiMessage::note_off(self.channel, self.data1, self.data2),
            ImpsyMidiKind::ControlChange => MidiMessage::control_change(self.channel, self.data1, self.data2),
            ImpsyMidiKind::Other => {
                let n = (self.raw_len as usize).min(3);
                if n == 0 || self.raw[0] < 0x80 {
                    return Err(fail(ImpsyStatus::InvalidArgument, "raw message must start with a status byte"));
                }
                MidiMessage::other(self.raw[..n].to_vec())
            }
        })
    }
}

/// Streaming MIDI byte parser with an internal queue of decoded messages.
pub struct ImpsyParser {
    parser: MidiParser,
    queue: VecDeque<MidiMessage>,
}

#[no_mangle]
pub unsafe extern "C" fn impsy_parser_new(out: *mut *mut ImpsyParser) -> ImpsyStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(ImpsyParser { parser: MidiParser::new(), queue: VecDeque::new() }));
        ImpsyStatus::Ok
    })
}

/// Push raw bytes; any chunking of a stream yields the same messages.
#[no_mangle]
pub unsafe extern "C" fn impsy_parser_feed(p: *mut ImpsyParser, bytes: *const u8, len: usize) -> ImpsyStatus {
    guard(|| {
        non_null!(p);
        if len > 0 {
            non_null!(bytes);
        }
        let p = &mut *p;
        let mut out = Vec::new();
        p.parser.feed(slice(bytes, len), &mut out);
        p.queue.extend(out);
        ImpsyStatus::Ok
    })
}

/// Pop the next decoded message. `*has_message` is set to 0 when the
/// queue is empty.
#[no_mangle]
pub unsafe extern "C" fn impsy_parser_next(
    p: *mut ImpsyParser,
    out: *mut ImpsyMidiMessage,
    has_message: *mut u8,
) -> ImpsyStatus {
    guard(|| {
        non_null!(p, out, has_message);
        match (&mut *p).queue.pop_front() {
            Some(m) => {
                *out = ImpsyMidiMessage::from(&m);
                *has_message = 1;
            }
            None => *has_message = 0,
        }
        ImpsyStatus::Ok
    })
}

/// Stray data bytes discarded so far.
#[no_mangle]
pub unsafe extern "C" fn impsy_parser_dropped(p: *const ImpsyParser) -> u64 {
    if p.is_null() {
        0
    } else {
        (&*p).parser.dropped
    }
}

#[no_mangle]
pub unsafe extern "C" fn impsy_parser_free(p: *mut ImpsyParser) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Serialize with an explicit status byte.
#[no_mangle]
pub unsafe extern "C" fn impsy_midi_serialize(
    msg: *const ImpsyMidiMessage,
    out: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> ImpsyStatus {
    guard(|| {
        non_null!(msg, out, out_len);
        match (*msg).to_message() {
            Ok(m) => write_out(&impsy::midi::serialize(&m), out, cap, out_len),
            Err(s) => s,
        }
    })
}

// ---- OSC and config ----

#[no_mangle]
pub unsafe extern "C" fn impsy_osc_encode(
    address: *const c_char,
    args: *const f32,
    n_args: usize,
    out: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> ImpsyStatus {
    guard(|| {
        non_null!(address, out, out_len);
        if n_args > 0 {
            non_null!(args);
        }
        let address = match c_str(address) {
            Ok(a) => a,
            Err(s) => return s,
        };
        match impsy::netio::osc_encode(address, slice(args, n_args)) {
            Ok(bytes) => write_out(&bytes, out, cap, out_len),
            Err(e) => from_error(e),
        }
    })
}

/// Validate a JSON config document. On failure the last error lists
/// every violation, one per line.
#[no_mangle]
pub unsafe extern "C" fn impsy_config_validate(json: *const c_char) -> ImpsyStatus {
    guard(|| {
        non_null!(json);
        let text = match c_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match impsy::config::parse_config(text) {
            Ok(_) => ImpsyStatus::Ok,
            Err(e) => fail(ImpsyStatus::InvalidConfig, e.violations.join("\n")),
        }
    })
}
