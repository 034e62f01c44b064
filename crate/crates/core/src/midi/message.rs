use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    NoteOn,
    NoteOff,
    ControlChange,
    /// Anything else: other channel voice messages, system common and
    /// real-time bytes. Carried verbatim in `raw`.
    Other,
}

/// A decoded message. `raw` always holds the bytes as they appeared on the
/// wire with an explicit status byte, so unrouted messages can be forwarded
/// unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MidiMessage {
    pub kind: MessageKind,
    pub channel: u8,
    pub data1: u8,
    pub data2: u8,
    pub raw: Vec<u8>,
}

impl MidiMessage {
    fn voice(kind: MessageKind, status: u8, channel: u8, data1: u8, data2: u8) -> Self {
        let channel = channel & 0x0F;
        let (data1, data2) = (data1 & 0x7F, data2 & 0x7F);
        Self { kind, channel, data1, data2, raw: vec![status | channel, data1, data2] }
    }

    pub fn note_on(channel: u8, note: u8, velocity: u8) -> Self {
        Self::voice(MessageKind::NoteOn, 0x90, channel, note, velocity)
    }

    pub fn note_off(channel: u8, note: u8, velocity: u8) -> Self {
        Self::voice(MessageKind::NoteOff, 0x80, channel, note, velocity)
    }

    pub fn control_change(channel: u8, controller: u8, value: u8) -> Self {
        Self::voice(MessageKind::ControlChange, 0xB0, channel, controller, value)
    }

    /// Wrap arbitrary complete message bytes (status first).
    pub fn other(raw: Vec<u8>) -> Self {
        let status = raw.first().copied().unwrap_or(0);
        let channel = if (0x80..0xF0).contains(&status) { status & 0x0F } else { 0 };
        Self {
            kind: MessageKind::Other,
            channel,
            data1: raw.get(1).copied().unwrap_or(0),
            data2: raw.get(2).copied().unwrap_or(0),
            raw,
        }
    }

    /// Build from a complete channel voice message.
    pub(crate) fn from_channel_bytes(raw: Vec<u8>) -> Self {
        let status = raw[0];
        let channel = status & 0x0F;
        let d1 = raw.get(1).copied().unwrap_or(0);
        let d2 = raw.get(2).copied().unwrap_or(0);
        let kind = match status & 0xF0 {
            0x90 if d2 == 0 => MessageKind::NoteOff,
            0x90 => MessageKind::NoteOn,
            0x80 => MessageKind::NoteOff,
            0xB0 => MessageKind::ControlChange,
            _ => return Self::other(raw),
        };
        Self { kind, channel, data1: d1, data2: d2, raw }
    }
}

/// Canonical encoding with an explicit status byte on every message.
pub fn serialize(m: &MidiMessage) -> Vec<u8> {
    let status = match m.kind {
        MessageKind::NoteOn => 0x90,
        MessageKind::NoteOff => 0x80,
        MessageKind::ControlChange => 0xB0,
        MessageKind::Other => return m.raw.clone(),
    };
    vec![status | (m.channel & 0x0F), m.data1 & 0x7F, m.data2 & 0x7F]
}

/// A message stamped with the monotonic time (seconds) it was received or
/// is due.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedMidi {
    pub message: MidiMessage,
    pub at: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serializes_note_on() {
        assert_eq!(serialize(&MidiMessage::note_on(0, 60, 100)), vec![0x90, 0x3C, 0x64]);
    }

    #[test]
    fn serializes_control_change() {
        assert_eq!(serialize(&MidiMessage::control_change(9, 1, 0)), vec![0xB9, 0x01, 0x00]);
    }

    #[test]
    fn other_is_verbatim() {
        assert_eq!(serialize(&MidiMessage::other(vec![0xC3, 0x05])), vec![0xC3, 0x05]);
        assert_eq!(serialize(&MidiMessage::other(vec![0xF8])), vec![0xF8]);
    }

    #[test]
    fn constructors_fill_raw_with_canonical_bytes() {
        let m = MidiMessage::control_change(2, 7, 127);
        assert_eq!(m.raw, serialize(&m));
    }
}
