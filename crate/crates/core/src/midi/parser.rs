use super::message::MidiMessage;

/// Streaming MIDI 1.0 byte parser.
///
/// Bytes may arrive in arbitrary chunks; all state needed to resume
/// mid-message lives here. Running status is honoured, real-time bytes
/// (`0xF8..=0xFF`) are emitted immediately without disturbing it, and
/// system-exclusive payloads are skipped.
#[derive(Debug, Clone, Default)]
pub struct MidiParser {
    running: Option<u8>,
    /// Pending system common status, which never becomes running status.
    common: Option<u8>,
    data: Vec<u8>,
    in_sysex: bool,
    /// Data bytes that arrived with no status to attach them to.
    pub dropped: u64,
    /// Sysex payload bytes skipped.
    pub sysex_skipped: u64,
}

fn data_len(status: u8) -> usize {
    match status {
        0x80..=0xBF | 0xE0..=0xEF => 2,
        0xC0..=0xDF => 1,
        0xF1 | 0xF3 => 1,
        0xF2 => 2,
        _ => 0,
    }
}

impl MidiParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8], out: &mut Vec<MidiMessage>) {
        for &b in bytes {
            self.push(b, out);
        }
    }

    fn push(&mut self, b: u8, out: &mut Vec<MidiMessage>) {
        match b {
            0xF8..=0xFF => out.push(MidiMessage::other(vec![b])),
            0xF0 => {
                self.in_sysex = true;
                self.running = None;
                self.common = None;
                self.data.clear();
            }
            0xF7 => self.in_sysex = false,
            0xF1..=0xF6 => {
                self.in_sysex = false;
                self.running = None;
                self.data.clear();
                if b == 0xF6 {
                    self.common = None;
                    out.push(MidiMessage::other(vec![b]));
                } else if b == 0xF4 || b == 0xF5 {
                    self.common = None;
                } else {
                    self.common = Some(b);
                }
            }
            0x80..=0xEF => {
                self.in_sysex = false;
                self.running = Some(b);
                self.common = None;
                self.data.clear();
            }
            _ => {
                if self.in_sysex {
                    self.sysex_skipped += 1;
                    return;
                }
                let Some(status) = self.common.or(self.running) else {
                    self.dropped += 1;
                    return;
                };
                self.data.push(b);
                if self.data.len() == data_len(status) {
                    let mut raw = Vec::with_capacity(3);
                    raw.push(status);
                    raw.append(&mut self.data);
                    if self.common.take().is_some() {
                        out.push(MidiMessage::other(raw));
                    } else {
                        out.push(MidiMessage::from_channel_bytes(raw));
                    }
                }
            }
        }
    }
}

/// Parse one chunk, continuing from `state`.
pub fn parse_stream(bytes: &[u8], mut state: MidiParser) -> (Vec<MidiMessage>, MidiParser) {
    let mut out = Vec::new();
    state.feed(bytes, &mut out);
    (out, state)
}
