//! Truncated backpropagation through time with Adam updates.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{sequence_loss, sequence_loss_and_grad, StepInput};
use super::{MdrnnParams, ModelShape};
use crate::Error;

pub use crate::engine::{Dataset, Sequence, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub seq_len: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    pub validation_split: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { seq_len: 50, batch_size: 64, learning_rate: 1e-3, epochs: 10, clip_norm: 1.0, validation_split: 0.1 }
    }
}

impl TrainHyper {
    fn check(&self) -> Result<(), Error> {
        let ok = self.seq_len > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.clip_norm > 0.0
            && (0.0..1.0).contains(&self.validation_split);
        if ok {
            Ok(())
        } else {
            Err(Error::Training(format!("invalid hyperparameters {self:?}")))
        }
    }
}

/// Mean per-step NLL after an epoch. Epoch 0 is the initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters from the epoch with the lowest validation loss (training
    /// loss when there is no validation set).
    pub params: MdrnnParams,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

struct Window {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

fn windows(dataset: &Dataset, seq_len: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for seq in &dataset.sequences {
        let vectors: Vec<Vec<f64>> = seq.frames.iter().map(|f| f.to_model_vector()).collect();
        let n = vectors.len();
        let mut start = 0;
        while start + 1 < n {
            let end = (start + seq_len).min(n - 1);
            out.push(Window { inputs: vectors[start..end].to_vec(), targets: vectors[start + 1..end + 1].to_vec() });
            start = end;
        }
    }
    out
}

fn mean_loss(params: &MdrnnParams, windows: &[Window], idx: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut steps = 0;
    for &i in idx {
        let w = &windows[i];
        total += sequence_loss(params, StepInput { inputs: &w.inputs, targets: &w.targets });
        steps += w.inputs.len();
    }
    total / steps as f64
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &MdrnnParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn update(&mut self, params: &mut MdrnnParams, grad: &MdrnnParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (ti, (p, g)) in params.tensors_mut().into_iter().zip(grad.tensors()).enumerate() {
            let (m, v) = (&mut self.m[ti], &mut self.v[ti]);
            for j in 0..p.len() {
                m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * g[j];
                v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn scale_in_place(grad: &mut MdrnnParams, factor: f64) {
    for t in grad.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= factor);
    }
}

fn add_in_place(acc: &mut MdrnnParams, other: &MdrnnParams) {
    for (a, b) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

fn global_norm(grad: &MdrnnParams) -> f64 {
    grad.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Fit a model to next-frame prediction over the dataset.
///
/// Sequences are cut into windows of `seq_len` steps, each starting from a
/// zero recurrent state. `init` seeds training; otherwise a fresh model of
/// `shape` is drawn from `rng`.
pub fn train<R: Rng + ?Sized>(
    dataset: &Dataset,
    shape: ModelShape,
    hyper: &TrainHyper,
    init: Option<MdrnnParams>,
    rng: &mut R,
) -> Result<TrainReport, Error> {
    hyper.check()?;
    if dataset.dimension != shape.dimension {
        return Err(Error::DimensionMismatch { expected: shape.dimension, found: dataset.dimension });
    }
    let mut params = match init {
        Some(p) if p.shape != shape => {
            return Err(Error::Shape(format!("initial params {:?} do not match {shape:?}", p.shape)))
        }
        Some(p) => p,
        None => MdrnnParams::init(shape, rng),
    };
    let all = windows(dataset, hyper.seq_len);
    if all.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(rng);
    let n_val = ((all.len() as f64 * hyper.validation_split).floor() as usize).min(all.len() - 1);
    let val_idx: Vec<usize> = order[..n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();

    // stable order so evaluation does not depend on the per-epoch shuffle
    let mut train_eval_idx = train_idx.clone();
    train_eval_idx.sort_unstable();
    let evaluate = |p: &MdrnnParams| {
        let train_loss = mean_loss(p, &all, &train_eval_idx);
        let val_loss = (!val_idx.is_empty()).then(|| mean_loss(p, &all, &val_idx));
        (train_loss, val_loss)
    };

    let (tl, vl) = evaluate(&params);
    if !tl.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    let mut history = vec![EpochLoss { epoch: 0, train_loss: tl, val_loss: vl }];
    let mut best = (vl.unwrap_or(tl), 0usize, params.clone());
    let mut adam = Adam::new(&params);

    for epoch in 1..=hyper.epochs {
        train_idx.shuffle(rng);
        for batch in train_idx.chunks(hyper.batch_size) {
            let mut grad = MdrnnParams::zeros(shape);
            let mut loss = 0.0;
            let mut steps = 0;
            for &i in batch {
                let w = &all[i];
                let (l, g) = sequence_loss_and_grad(&params, StepInput { inputs: &w.inputs, targets: &w.targets });
                loss += l;
                steps += w.inputs.len();
                add_in_place(&mut grad, &g);
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            scale_in_place(&mut grad, 1.0 / steps as f64);
            let norm = global_norm(&grad);
            if norm > hyper.clip_norm {
                scale_in_place(&mut grad, hyper.clip_norm / norm);
            }
            adam.update(&mut params, &grad, hyper.learning_rate);
        }
        let (tl, vl) = evaluate(&params);
        if !tl.is_finite() || vl.is_some_and(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log::debug!("epoch {epoch}: train {tl:.5} val {vl:?}");
        history.push(EpochLoss { epoch, train_loss: tl, val_loss: vl });
        let score = vl.unwrap_or(tl);
        if score < best.0 {
            best = (score, epoch, params.clone());
        }
    }
    Ok(TrainReport { params: best.2, history, best_epoch: best.1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ContinuousFrame;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sine_sweep(steps: usize) -> Dataset {
        let frames = (0..steps)
            .map(|t| {
                let phase = t as f64 * 0.15 * (1.0 + t as f64 / steps as f64);
                ContinuousFrame { values: vec![0.5 + 0.4 * phase.sin()], dt: 0.05 + 0.02 * (t % 3) as f64 }
            })
            .collect::<Vec<_>>();
        let sources = vec![Source::Human; frames.len()];
        Dataset { dimension: 1, sequences: vec![Sequence { frames, sources }] }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let shape = ModelShape::new(1, 2, 8, 3).unwrap();
        let init = MdrnnParams::init(shape, &mut ChaCha8Rng::seed_from_u64(1));
        let hyper = TrainHyper { epochs: 0, ..Default::default() };
        let report = train(&sine_sweep(40), shape, &hyper, Some(init.clone()), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(report.params, init);
        assert_eq!(report.history.len(), 1);
    }

    #[test]
    fn zero_epochs_without_init_matches_fresh_init() {
        let shape = ModelShape::new(1, 1, 4, 2).unwrap();
        let hyper = TrainHyper { epochs: 0, ..Default::default() };
        let report = train(&sine_sweep(10), shape, &hyper, None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(report.params, MdrnnParams::init(shape, &mut ChaCha8Rng::seed_from_u64(5)));
    }

    #[test]
    fn sine_sweep_loss_improves() {
        let shape = ModelShape::new(1, 2, 16, 5).unwrap();
        let hyper = TrainHyper { epochs: 30, seq_len: 20, batch_size: 4, learning_rate: 1e-2, ..Default::default() };
        let report = train(&sine_sweep(200), shape, &hyper, None, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let initial = report.history[0].train_loss;
        let last = report.history.last().unwrap().train_loss;
        assert!(last < initial, "{initial} -> {last}");
        let mut best = f64::INFINITY;
        let mut improvements = 0;
        for e in &report.history {
            if e.train_loss < best {
                best = e.train_loss;
                improvements += 1;
            }
        }
        assert!(improvements > 1);
    }

    #[test]
    fn empty_dataset_rejected() {
        let shape = ModelShape::new(1, 1, 4, 2).unwrap();
        let ds = Dataset { dimension: 1, sequences: vec![] };
        let err = train(&ds, shape, &TrainHyper::default(), None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
        let single = Dataset {
            dimension: 1,
            sequences: vec![Sequence { frames: vec![ContinuousFrame::neutral(1)], sources: vec![Source::Ai] }],
        };
        assert!(train(&single, shape, &TrainHyper::default(), None, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn exploding_learning_rate_aborts_with_diagnostic() {
        let shape = ModelShape::new(1, 1, 4, 2).unwrap();
        let mut init = MdrnnParams::init(shape, &mut ChaCha8Rng::seed_from_u64(0));
        init.head.b_sigma.fill(-800.0);
        init.head.b_mu.fill(1e200);
        let hyper = TrainHyper { epochs: 1, ..Default::default() };
        let err = train(&sine_sweep(30), shape, &hyper, Some(init), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::NonFiniteLoss { .. })), "{err:?}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let shape = ModelShape::new(2, 1, 4, 2).unwrap();
        let err = train(&sine_sweep(10), shape, &TrainHyper::default(), None, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let shape = ModelShape::new(1, 1, 6, 2).unwrap();
        let hyper = TrainHyper { epochs: 3, seq_len: 10, batch_size: 2, ..Default::default() };
        let a = train(&sine_sweep(60), shape, &hyper, None, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = train(&sine_sweep(60), shape, &hyper, None, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }
}
