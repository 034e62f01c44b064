use super::{MdrnnParams, MixtureParams, ModelShape, SIGMA_FLOOR};

struct Layer32 {
    hidden: usize,
    w_x: Vec<f32>,
    w_h: Vec<f32>,
    bias: Vec<f32>,
}

/// Single-precision copy of a model for inference-only use. Agrees with
/// the 64-bit reference path to within 1e-4 per output element on typical
/// inputs.
pub struct FastMdrnn {
    shape: ModelShape,
    layers: Vec<Layer32>,
    w_pi: Vec<f32>,
    b_pi: Vec<f32>,
    w_mu: Vec<f32>,
    b_mu: Vec<f32>,
    w_sigma: Vec<f32>,
    b_sigma: Vec<f32>,
}

/// Per-layer `(h, c)` in single precision.
#[derive(Debug, Clone)]
pub struct FastState {
    pub h: Vec<Vec<f32>>,
    pub c: Vec<Vec<f32>>,
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn mat_vec_acc(w: &[f32], v: &[f32], out: &mut [f32]) {
    let cols = v.len();
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f32>();
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl FastMdrnn {
    pub fn new(params: &MdrnnParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| Layer32 { hidden: l.hidden, w_x: narrow(&l.w_x), w_h: narrow(&l.w_h), bias: narrow(&l.bias) })
            .collect();
        let h = &params.head;
        Self {
            shape: params.shape,
            layers,
            w_pi: narrow(&h.w_pi),
            b_pi: narrow(&h.b_pi),
            w_mu: narrow(&h.w_mu),
            b_mu: narrow(&h.b_mu),
            w_sigma: narrow(&h.w_sigma),
            b_sigma: narrow(&h.b_sigma),
        }
    }

    pub fn new_state(&self) -> FastState {
        FastState {
            h: vec![vec![0.0; self.shape.hidden]; self.shape.layers],
            c: vec![vec![0.0; self.shape.hidden]; self.shape.layers],
        }
    }

    /// Advance `state` in place and return the mixture, widened to f64.
    pub fn step(&self, state: &mut FastState, x: &[f64]) -> MixtureParams {
        assert_eq!(x.len(), self.shape.width(), "input width");
        let mut input: Vec<f32> = narrow(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let hd = layer.hidden;
            let mut z = layer.bias.clone();
            mat_vec_acc(&layer.w_x, &input, &mut z);
            mat_vec_acc(&layer.w_h, &state.h[l], &mut z);
            for j in 0..hd {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[hd + j]);
                let g = z[2 * hd + j].tanh();
                let o = sigmoid(z[3 * hd + j]);
                let c = f * state.c[l][j] + i * g;
                state.c[l][j] = c;
                state.h[l][j] = o * c.tanh();
            }
            input.clone_from(&state.h[l]);
        }
        let mut logits = self.b_pi.clone();
        mat_vec_acc(&self.w_pi, &input, &mut logits);
        let mut mu = self.b_mu.clone();
        mat_vec_acc(&self.w_mu, &input, &mut mu);
        let mut pre = self.b_sigma.clone();
        mat_vec_acc(&self.w_sigma, &input, &mut pre);

        let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let e: Vec<f32> = logits.iter().map(|v| (v - max).exp()).collect();
        let sum: f32 = e.iter().sum();
        MixtureParams {
            width: self.shape.width(),
            pi: e.iter().map(|v| (v / sum) as f64).collect(),
            mu: mu.iter().map(|&v| v as f64).collect(),
            sigma: pre
                .iter()
                .map(|&p| {
                    let sp = if p > 15.0 { p } else { p.exp().ln_1p() };
                    sp as f64 + SIGMA_FLOOR
                })
                .collect(),
        }
    }
}
