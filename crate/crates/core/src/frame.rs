use serde::{Deserialize, Serialize};

use crate::Error;

/// One generated (or performed) step: `D` values in `[0, 1]` plus the time
/// delta in seconds until the step takes effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousFrame {
    pub values: Vec<f64>,
    pub dt: f64,
}

impl ContinuousFrame {
    /// Checked constructor. Rejects empty vectors, values outside `[0, 1]`
    /// and time deltas outside `[0, dt_max]`.
    pub fn new(values: Vec<f64>, dt: f64, dt_max: f64) -> Result<Self, Error> {
        if values.is_empty() {
            return Err(Error::InvalidFrame("frame must have at least one value".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidFrame(format!("value {v} outside [0, 1]")));
        }
        if !(0.0..=dt_max).contains(&dt) {
            return Err(Error::InvalidFrame(format!("dt {dt} outside [0, {dt_max}]")));
        }
        Ok(Self { values, dt })
    }

    /// The neutral frame used after a reset: every value at 0.5, no delay.
    pub fn neutral(dimension: usize) -> Self {
        Self { values: vec![0.5; dimension], dt: 0.0 }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    /// Encode as a model input vector: dt first, then the values.
    pub fn to_model_vector(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.values.len() + 1);
        x.push(self.dt);
        x.extend_from_slice(&self.values);
        x
    }

    /// Inverse of [`to_model_vector`](Self::to_model_vector). No clamping is
    /// applied; see [`clamp_frame`].
    pub fn from_model_vector(x: &[f64]) -> Self {
        Self { values: x[1..].to_vec(), dt: x[0] }
    }

    pub fn is_valid(&self, dt_max: f64) -> bool {
        !self.values.is_empty()
            && self.values.iter().all(|v| (0.0..=1.0).contains(v))
            && (0.0..=dt_max).contains(&self.dt)
    }
}

/// Clip every value to `[0, 1]` and the time delta to `[0, dt_max]`.
/// NaN inputs map to the lower bound.
pub fn clamp_frame(frame: ContinuousFrame, dt_max: f64) -> ContinuousFrame {
    let values = frame.values.into_iter().map(|v| clip(v, 0.0, 1.0)).collect();
    ContinuousFrame { values, dt: clip(frame.dt, 0.0, dt_max) }
}

fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    if v.is_nan() {
        lo
    } else {
        v.clamp(lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clamps_out_of_range_values_and_negative_dt() {
        let f = clamp_frame(ContinuousFrame { values: vec![1.3], dt: -0.2 }, 5.0);
        assert_eq!(f.values, vec![1.0]);
        assert_eq!(f.dt, 0.0);
    }

    #[test]
    fn leaves_in_range_frame_unchanged() {
        let f = ContinuousFrame { values: vec![0.5], dt: 0.5 };
        assert_eq!(clamp_frame(f.clone(), 5.0), f);
    }

    #[test]
    fn caps_dt_at_dt_max() {
        let f = clamp_frame(ContinuousFrame { values: vec![0.2], dt: 60.0 }, 5.0);
        assert_eq!(f.dt, 5.0);
    }

    #[test]
    fn nan_clamps_to_lower_bound() {
        let f = clamp_frame(ContinuousFrame { values: vec![f64::NAN], dt: f64::NAN }, 5.0);
        assert_eq!(f.values, vec![0.0]);
        assert_eq!(f.dt, 0.0);
    }

    #[test]
    fn checked_constructor_rejects_bad_frames() {
        assert!(ContinuousFrame::new(vec![], 0.0, 5.0).is_err());
        assert!(ContinuousFrame::new(vec![1.01], 0.0, 5.0).is_err());
        assert!(ContinuousFrame::new(vec![0.3], 5.5, 5.0).is_err());
        assert!(ContinuousFrame::new(vec![0.0, 1.0], 5.0, 5.0).is_ok());
    }

    #[test]
    fn model_vector_puts_dt_first() {
        let f = ContinuousFrame { values: vec![0.1, 0.9], dt: 0.25 };
        assert_eq!(f.to_model_vector(), vec![0.25, 0.1, 0.9]);
        assert_eq!(ContinuousFrame::from_model_vector(&f.to_model_vector()), f);
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(values in prop::collection::vec(-2.0f64..3.0, 1..8), dt in -10.0f64..10.0) {
            let once = clamp_frame(ContinuousFrame { values, dt }, 5.0);
            prop_assert!(once.is_valid(5.0));
            prop_assert_eq!(clamp_frame(once.clone(), 5.0), once);
        }

        #[test]
        fn clamp_is_monotone(a in -2.0f64..3.0, b in -2.0f64..3.0, da in -10.0f64..10.0, db in -10.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (dlo, dhi) = if da <= db { (da, db) } else { (db, da) };
            let x = clamp_frame(ContinuousFrame { values: vec![lo], dt: dlo }, 5.0);
            let y = clamp_frame(ContinuousFrame { values: vec![hi], dt: dhi }, 5.0);
            prop_assert!(x.values[0] <= y.values[0]);
            prop_assert!(x.dt <= y.dt);
        }
    }
}
