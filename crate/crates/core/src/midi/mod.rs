//! MIDI 1.0 channel-message codec and device streams.

mod device;
mod message;
mod parser;

pub use device::{
    select_device, Clock, DeviceEvent, InputEvent, MidiBackend, MidiInput, MidiOutput, SystemMidi, VirtualMidi,
    VirtualPort,
};
pub use message::{serialize, MessageKind, MidiMessage, TimedMidi};
pub use parser::{parse_stream, MidiParser};
