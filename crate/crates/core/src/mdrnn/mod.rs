//! Mixture density recurrent network: stacked LSTM layers feeding a
//! Gaussian-mixture head over `M = D + 1` outputs (time delta first, then
//! the `D` musical values).

mod fast;
mod lstm;
mod mixture;
mod train;
mod weights;

pub use fast::FastMdrnn;
pub use lstm::{forward_step, predict_next, sequence_loss_and_grad, StepInput};
pub use mixture::{nll, nll_grad, sample, MixtureParams, SIGMA_FLOOR};
pub use train::{train, Dataset, EpochLoss, Sequence, Source, TrainHyper, TrainReport};
pub use weights::{load_weights, read_shape, save_weights, weights_from_bytes, weights_to_bytes, FORMAT_VERSION, MAGIC};

use rand::Rng;
use serde::Serialize;

use crate::{ContinuousFrame, Error};

/// Architecture of a model, as stored in the weight file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelShape {
    /// Musical dimensions `D`.
    pub dimension: usize,
    pub layers: usize,
    pub hidden: usize,
    pub mixtures: usize,
}

impl ModelShape {
    pub fn new(dimension: usize, layers: usize, hidden: usize, mixtures: usize) -> Result<Self, Error> {
        let shape = Self { dimension, layers, hidden, mixtures };
        shape.check()?;
        Ok(shape)
    }

    pub(crate) fn check(&self) -> Result<(), Error> {
        if self.dimension == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::Shape(format!("degenerate model shape {self:?}")));
        }
        if !(1..=16).contains(&self.mixtures) {
            return Err(Error::Shape(format!("mixture count {} not in 1..=16", self.mixtures)));
        }
        Ok(())
    }

    /// Width `M` of the modelled vector.
    pub fn width(&self) -> usize {
        self.dimension + 1
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.width()
        } else {
            self.hidden
        }
    }

    pub fn parameter_count(&self) -> usize {
        let h = self.hidden;
        let layers: usize = (0..self.layers).map(|l| 4 * h * (self.layer_input(l) + h + 1)).sum();
        let km = self.mixtures * self.width();
        layers + self.mixtures * (h + 1) + 2 * km * (h + 1)
    }
}

/// Weights of one LSTM layer. Gate rows are stacked input, forget,
/// candidate, output; matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub input: usize,
    pub hidden: usize,
    /// `4H x input`
    pub w_x: Vec<f64>,
    /// `4H x H`
    pub w_h: Vec<f64>,
    /// `4H`
    pub bias: Vec<f64>,
}

/// Output head mapping the last hidden vector to mixture parameters.
/// Means and scales are indexed `k * M + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureHead {
    pub w_pi: Vec<f64>,
    pub b_pi: Vec<f64>,
    pub w_mu: Vec<f64>,
    pub b_mu: Vec<f64>,
    pub w_sigma: Vec<f64>,
    pub b_sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdrnnParams {
    pub shape: ModelShape,
    pub layers: Vec<LstmLayer>,
    pub head: MixtureHead,
}

impl MdrnnParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(shape: ModelShape) -> Self {
        let h = shape.hidden;
        let layers = (0..shape.layers)
            .map(|l| {
                let input = shape.layer_input(l);
                LstmLayer {
                    input,
                    hidden: h,
                    w_x: vec![0.0; 4 * h * input],
                    w_h: vec![0.0; 4 * h * h],
                    bias: vec![0.0; 4 * h],
                }
            })
            .collect();
        let k = shape.mixtures;
        let km = k * shape.width();
        let head = MixtureHead {
            w_pi: vec![0.0; k * h],
            b_pi: vec![0.0; k],
            w_mu: vec![0.0; km * h],
            b_mu: vec![0.0; km],
            w_sigma: vec![0.0; km * h],
            b_sigma: vec![0.0; km],
        };
        Self { shape, layers, head }
    }

    /// Fresh initialization: Glorot-uniform input and head weights,
    /// `U(-1/sqrt(H), 1/sqrt(H))` recurrent weights, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let h = shape.hidden;
        for layer in &mut p.layers {
            let limit = (6.0 / (layer.input + 4 * h) as f64).sqrt();
            fill_uniform(&mut layer.w_x, limit, rng);
            fill_uniform(&mut layer.w_h, 1.0 / (h as f64).sqrt(), rng);
            layer.bias[h..2 * h].fill(1.0);
        }
        let k = shape.mixtures;
        let km = k * shape.width();
        fill_uniform(&mut p.head.w_pi, (6.0 / (h + k) as f64).sqrt(), rng);
        fill_uniform(&mut p.head.w_mu, (6.0 / (h + km) as f64).sqrt(), rng);
        fill_uniform(&mut p.head.w_sigma, (6.0 / (h + km) as f64).sqrt(), rng);
        p
    }

    /// Every tensor in weight-file order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.layers.len() + 6);
        for l in &self.layers {
            out.push(&l.w_x);
            out.push(&l.w_h);
            out.push(&l.bias);
        }
        let hd = &self.head;
        out.extend([&hd.w_pi[..], &hd.b_pi, &hd.w_mu, &hd.b_mu, &hd.w_sigma, &hd.b_sigma]);
        out
    }

    /// Mutable view of every tensor in weight-file order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 6);
        for l in &mut self.layers {
            out.push(&mut l.w_x);
            out.push(&mut l.w_h);
            out.push(&mut l.bias);
        }
        let hd = &mut self.head;
        out.extend([
            &mut hd.w_pi,
            &mut hd.b_pi,
            &mut hd.w_mu,
            &mut hd.b_mu,
            &mut hd.w_sigma,
            &mut hd.b_sigma,
        ]);
        out
    }

    /// Names matching [`tensors`](Self::tensors), for diagnostics.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.layers.len() {
            out.push(format!("lstm{l}.w_x"));
            out.push(format!("lstm{l}.w_h"));
            out.push(format!("lstm{l}.bias"));
        }
        for n in ["head.w_pi", "head.b_pi", "head.w_mu", "head.b_mu", "head.w_sigma", "head.b_sigma"] {
            out.push(n.to_string());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn new_state(&self) -> MdrnnState {
        MdrnnState::new(&self.shape)
    }
}

fn fill_uniform<R: Rng + ?Sized>(v: &mut [f64], limit: f64, rng: &mut R) {
    for x in v {
        *x = rng.random_range(-limit..limit);
    }
}

/// Recurrent memory plus the last frame fed back as the next input.
#[derive(Debug, Clone, PartialEq)]
pub struct MdrnnState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub last_frame: ContinuousFrame,
}

impl MdrnnState {
    pub fn new(shape: &ModelShape) -> Self {
        Self {
            h: vec![vec![0.0; shape.hidden]; shape.layers],
            c: vec![vec![0.0; shape.hidden]; shape.layers],
            last_frame: ContinuousFrame::neutral(shape.dimension),
        }
    }

    /// Zero the recurrent memory and return the feedback frame to neutral.
    pub fn reset(&mut self) {
        for v in self.h.iter_mut().chain(self.c.iter_mut()) {
            v.fill(0.0);
        }
        let d = self.last_frame.dimension();
        self.last_frame = ContinuousFrame::neutral(d);
    }

    pub(crate) fn matches(&self, shape: &ModelShape) -> bool {
        self.h.len() == shape.layers
            && self.c.len() == shape.layers
            && self.h.iter().chain(self.c.iter()).all(|v| v.len() == shape.hidden)
    }
}
