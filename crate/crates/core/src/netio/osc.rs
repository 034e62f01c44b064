//! Minimal OSC 1.0 encoder for float messages.

use crate::Error;

fn push_padded_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(s.as_bytes());
    // at least one NUL, then pad to a multiple of four
    let pad = 4 - s.len() % 4;
    buf.extend(std::iter::repeat_n(0u8, pad));
}

/// Encode one OSC message whose arguments are all 32-bit floats.
pub fn osc_encode(address: &str, args: &[f32]) -> Result<Vec<u8>, Error> {
    if !address.starts_with('/') || address.contains(['\0', ' ', '#', ',']) {
        return Err(Error::OscAddress(address.to_string()));
    }
    let mut buf = Vec::with_capacity(address.len() + args.len() * 5 + 8);
    push_padded_str(&mut buf, address);
    let tags: String = std::iter::once(',').chain(std::iter::repeat_n('f', args.len())).collect();
    push_padded_str(&mut buf, &tags);
    for a in args {
        buf.extend_from_slice(&a.to_be_bytes());
    }
    Ok(buf)
}
