//! Independent reference implementations used as test oracles. None of
//! these call into the code paths they check.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use impsy::mdrnn::{self, MdrnnParams, MdrnnState};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// One step of a single-unit LSTM written out gate by gate.
/// `w_x` is 4 rows (i, f, g, o) of `x.len()` columns.
pub fn scalar_lstm_step(w_x: &[f64], w_h: &[f64], b: &[f64], x: &[f64], h: f64, c: f64) -> (f64, f64) {
    let n = x.len();
    let pre = |gate: usize| {
        let mut s = b[gate] + w_h[gate] * h;
        for k in 0..n {
            s += w_x[gate * n + k] * x[k];
        }
        s
    };
    let i = sigmoid(pre(0));
    let f = sigmoid(pre(1));
    let g = pre(2).tanh();
    let o = sigmoid(pre(3));
    let c2 = f * c + i * g;
    (o * c2.tanh(), c2)
}

/// Diagonal Gaussian mixture negative log likelihood, computed in the
/// plain (non log-space) form. Fine for well-conditioned test inputs.
pub fn naive_nll(pi: &[f64], mu: &[f64], sigma: &[f64], target: &[f64]) -> f64 {
    let m = target.len();
    let mut total = 0.0;
    for k in 0..pi.len() {
        let mut dens = pi[k];
        for j in 0..m {
            let s = sigma[k * m + j];
            let z = (target[j] - mu[k * m + j]) / s;
            dens *= (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        }
        total += dens;
    }
    -total.ln()
}

/// Summed loss over a sequence using only the public single-step API.
pub fn stepwise_loss(params: &MdrnnParams, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut state = MdrnnState::new(&params.shape);
    let mut loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let (mix, next) = mdrnn::forward_step(params, &state, x).unwrap();
        loss += mdrnn::nll(&mix, t);
        state = next;
    }
    loss
}

/// Reference OSC 1.0 decoder for float-only messages.
pub fn osc_decode(bytes: &[u8]) -> Option<(String, Vec<f32>)> {
    fn read_str(b: &[u8], pos: &mut usize) -> Option<String> {
        let start = *pos;
        let end = start + b[start..].iter().position(|&c| c == 0)?;
        let s = std::str::from_utf8(&b[start..end]).ok()?.to_string();
        // skip the terminator and padding up to the next multiple of 4
        *pos = (end + 4) & !3;
        Some(s)
    }
    if bytes.len() % 4 != 0 {
        return None;
    }
    let mut pos = 0;
    let addr = read_str(bytes, &mut pos)?;
    let tags = read_str(bytes, &mut pos)?;
    let tags = tags.strip_prefix(',')?;
    let mut args = Vec::new();
    for t in tags.chars() {
        if t != 'f' {
            return None;
        }
        let w: [u8; 4] = bytes.get(pos..pos + 4)?.try_into().ok()?;
        args.push(f32::from_bits(u32::from_be_bytes(w)));
        pos += 4;
    }
    (pos == bytes.len()).then_some((addr, args))
}

/// What a 3-byte channel voice message means, decoded by hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Voice {
    NoteOn { ch: u8, note: u8, vel: u8 },
    NoteOff { ch: u8, note: u8, vel: u8 },
    Cc { ch: u8, num: u8, val: u8 },
    Other([u8; 3]),
}

pub fn decode_voice(b: [u8; 3]) -> Voice {
    let ch = b[0] & 0x0F;
    match b[0] >> 4 {
        0x9 if b[2] > 0 => Voice::NoteOn { ch, note: b[1], vel: b[2] },
        0x9 => Voice::NoteOff { ch, note: b[1], vel: 0 },
        0x8 => Voice::NoteOff { ch, note: b[1], vel: b[2] },
        0xB => Voice::Cc { ch, num: b[1], val: b[2] },
        _ => Voice::Other(b),
    }
}

/// Content of every regular file under `dir`, keyed by relative path.
pub fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Largest relative error between two gradient tensors, measured on the
/// whole tensor: |a - b| / max(|a|, |b|) in the Euclidean norm.
pub fn tensor_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
