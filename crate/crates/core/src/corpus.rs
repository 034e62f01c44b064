//! Synthetic one-dimensional gesture corpus: sinusoidal sweeps with timing
//! and value jitter, cut into separate gestures. Useful for smoke-testing
//! training without recorded performances.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::{Dataset, Sequence, Source};
use crate::ContinuousFrame;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    /// Total length of all gestures, in seconds of event time.
    pub total_s: f64,
    /// Mean gap between events.
    pub mean_dt: f64,
    /// Gesture length range, seconds.
    pub gesture_s: (f64, f64),
    /// Sweep frequency range, Hz.
    pub freq_hz: (f64, f64),
    pub value_jitter: f64,
    pub dt_jitter: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            total_s: 300.0,
            mean_dt: 0.05,
            gesture_s: (5.0, 20.0),
            freq_hz: (0.2, 1.0),
            value_jitter: 0.02,
            dt_jitter: 0.01,
        }
    }
}

/// Generate gestures until `spec.total_s` of event time is covered.
pub fn gesture_corpus<R: Rng + ?Sized>(spec: &CorpusSpec, rng: &mut R) -> Dataset {
    let value_noise = Normal::new(0.0, spec.value_jitter.max(0.0)).expect("finite jitter");
    let dt_noise = Normal::new(0.0, spec.dt_jitter.max(0.0)).expect("finite jitter");
    let mut sequences = Vec::new();
    let mut covered = 0.0;
    while covered < spec.total_s {
        let len = rng.random_range(spec.gesture_s.0..=spec.gesture_s.1).min(spec.total_s - covered).max(spec.mean_dt * 2.0);
        let freq = rng.random_range(spec.freq_hz.0..=spec.freq_hz.1);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.2..0.45);
        let mut t = 0.0;
        let mut frames = Vec::new();
        while t < len {
            let dt = if frames.is_empty() { 0.0 } else { (spec.mean_dt + dt_noise.sample(rng)).max(0.005) };
            t += dt;
            let v = 0.5 + amp * (std::f64::consts::TAU * freq * t + phase).sin() + value_noise.sample(rng);
            frames.push(ContinuousFrame { values: vec![v.clamp(0.0, 1.0)], dt });
        }
        covered += len;
        let sources = vec![Source::Human; frames.len()];
        sequences.push(Sequence { frames, sources });
    }
    Dataset { dimension: 1, sequences }
}
