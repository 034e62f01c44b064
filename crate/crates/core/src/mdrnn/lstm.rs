use rand::Rng;

use super::mixture::{nll_grad, sample, sigmoid, MixtureParams};
use super::{LstmLayer, MdrnnParams, MdrnnState, MixtureHead};
use crate::frame::{clamp_frame, ContinuousFrame};
use crate::Error;

/// Intermediate values of one layer at one step, kept for backpropagation.
struct LayerCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// `out += W v` for row-major `W` with `out.len()` rows.
fn mat_vec_acc(w: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += W^T d`
fn mat_t_vec_acc(w: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, &dr) in w.chunks_exact(cols).zip(d) {
        if dr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * dr;
        }
    }
}

/// `G += d x^T`
fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &dr) in g.chunks_exact_mut(cols).zip(d) {
        for (gv, xv) in row.iter_mut().zip(x) {
            *gv += dr * xv;
        }
    }
}

fn layer_step(layer: &LstmLayer, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, LayerCache) {
    let h = layer.hidden;
    let mut z = layer.bias.clone();
    mat_vec_acc(&layer.w_x, x, &mut z);
    mat_vec_acc(&layer.w_h, h_prev, &mut z);
    let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
    let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..h).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = (0..h).map(|j| o[j] * tanh_c[j]).collect();
    let cache = LayerCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        tanh_c,
    };
    (h_new, c, cache)
}

struct HeadOut {
    mix: MixtureParams,
    sigma_pre: Vec<f64>,
}

fn head_forward(head: &MixtureHead, width: usize, h: &[f64]) -> HeadOut {
    let mut logits = head.b_pi.clone();
    mat_vec_acc(&head.w_pi, h, &mut logits);
    let mut mu = head.b_mu.clone();
    mat_vec_acc(&head.w_mu, h, &mut mu);
    let mut sigma_pre = head.b_sigma.clone();
    mat_vec_acc(&head.w_sigma, h, &mut sigma_pre);
    let mix = MixtureParams::from_head(width, &logits, mu, &sigma_pre);
    HeadOut { mix, sigma_pre }
}

fn check_inputs(params: &MdrnnParams, state: &MdrnnState, x: &[f64]) -> Result<(), Error> {
    let width = params.shape.width();
    if x.len() != width {
        return Err(Error::Shape(format!("input has {} elements, model expects {width}", x.len())));
    }
    if !state.matches(&params.shape) {
        return Err(Error::Shape("state does not match model shape".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("input contains non-finite values".into()));
    }
    Ok(())
}

/// Advance the network by one step. The input state is left untouched;
/// the successor is returned alongside the mixture prediction.
pub fn forward_step(params: &MdrnnParams, state: &MdrnnState, x: &[f64]) -> Result<(MixtureParams, MdrnnState), Error> {
    check_inputs(params, state, x)?;
    let mut next = state.clone();
    let mut input = x.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let (h, c, _) = layer_step(layer, &input, &state.h[l], &state.c[l]);
        next.h[l] = h;
        next.c[l] = c;
        input = next.h[l].clone();
    }
    let out = head_forward(&params.head, params.shape.width(), &input);
    Ok((out.mix, next))
}

/// Generate the frame following `prev`: feed it to the network, sample the
/// mixture, and clamp the draw into a valid frame. The returned state
/// remembers the generated frame as its feedback input.
pub fn predict_next<R: Rng + ?Sized>(
    params: &MdrnnParams,
    state: &MdrnnState,
    prev: &ContinuousFrame,
    pi_temp: f64,
    sigma_temp: f64,
    dt_max: f64,
    rng: &mut R,
) -> Result<(ContinuousFrame, MdrnnState), Error> {
    let (mix, mut next) = forward_step(params, state, &prev.to_model_vector())?;
    let draw = sample(&mix, pi_temp, sigma_temp, rng);
    let frame = clamp_frame(ContinuousFrame::from_model_vector(&draw), dt_max);
    next.last_frame = frame.clone();
    Ok((frame, next))
}

/// One training window: model inputs and the next-step targets.
pub struct StepInput<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
}

/// Summed NLL over a window, starting from a zero state, and its gradient
/// with respect to every parameter (backpropagation through time).
pub fn sequence_loss_and_grad(params: &MdrnnParams, window: StepInput<'_>) -> (f64, MdrnnParams) {
    let shape = params.shape;
    let n_layers = shape.layers;
    let hd = shape.hidden;
    let width = shape.width();
    let steps = window.inputs.len();

    let mut h = vec![vec![0.0; hd]; n_layers];
    let mut c = vec![vec![0.0; hd]; n_layers];
    let mut caches: Vec<Vec<LayerCache>> = Vec::with_capacity(steps);
    let mut heads: Vec<(HeadOut, Vec<f64>)> = Vec::with_capacity(steps);
    for x in window.inputs {
        let mut input = x.clone();
        let mut step_caches = Vec::with_capacity(n_layers);
        for (l, layer) in params.layers.iter().enumerate() {
            let (hn, cn, cache) = layer_step(layer, &input, &h[l], &c[l]);
            h[l] = hn;
            c[l] = cn;
            step_caches.push(cache);
            input = h[l].clone();
        }
        heads.push((head_forward(&params.head, width, &input), input));
        caches.push(step_caches);
    }

    let mut grad = MdrnnParams::zeros(shape);
    let mut loss = 0.0;
    let mut dh_next = vec![vec![0.0; hd]; n_layers];
    let mut dc_next = vec![vec![0.0; hd]; n_layers];
    for t in (0..steps).rev() {
        let (head, h_top) = &heads[t];
        let g = nll_grad(&head.mix, &window.targets[t]);
        loss += g.loss;
        let d_sigma_pre: Vec<f64> = g.d_sigma.iter().zip(&head.sigma_pre).map(|(d, &p)| d * sigmoid(p)).collect();

        let gh = &mut grad.head;
        outer_acc(&mut gh.w_pi, &g.d_logits, h_top);
        outer_acc(&mut gh.w_mu, &g.d_mu, h_top);
        outer_acc(&mut gh.w_sigma, &d_sigma_pre, h_top);
        for (b, d) in gh.b_pi.iter_mut().zip(&g.d_logits) {
            *b += d;
        }
        for (b, d) in gh.b_mu.iter_mut().zip(&g.d_mu) {
            *b += d;
        }
        for (b, d) in gh.b_sigma.iter_mut().zip(&d_sigma_pre) {
            *b += d;
        }
        let mut d_above = vec![0.0; hd];
        mat_t_vec_acc(&params.head.w_pi, &g.d_logits, &mut d_above);
        mat_t_vec_acc(&params.head.w_mu, &g.d_mu, &mut d_above);
        mat_t_vec_acc(&params.head.w_sigma, &d_sigma_pre, &mut d_above);

        for l in (0..n_layers).rev() {
            let cache = &caches[t][l];
            let layer = &params.layers[l];
            let mut dz = vec![0.0; 4 * hd];
            let mut dc_prev = vec![0.0; hd];
            for j in 0..hd {
                let dh = d_above[j] + dh_next[l][j];
                let (i, f, gg, o, tc) = (cache.i[j], cache.f[j], cache.g[j], cache.o[j], cache.tanh_c[j]);
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[l][j];
                dz[j] = dc * gg * i * (1.0 - i);
                dz[hd + j] = dc * cache.c_prev[j] * f * (1.0 - f);
                dz[2 * hd + j] = dc * i * (1.0 - gg * gg);
                dz[3 * hd + j] = d_o * o * (1.0 - o);
                dc_prev[j] = dc * f;
            }
            let gl = &mut grad.layers[l];
            outer_acc(&mut gl.w_x, &dz, &cache.x);
            outer_acc(&mut gl.w_h, &dz, &cache.h_prev);
            for (b, d) in gl.bias.iter_mut().zip(&dz) {
                *b += d;
            }
            let mut dh_prev = vec![0.0; hd];
            mat_t_vec_acc(&layer.w_h, &dz, &mut dh_prev);
            let mut dx = vec![0.0; layer.input];
            mat_t_vec_acc(&layer.w_x, &dz, &mut dx);
            dh_next[l] = dh_prev;
            dc_next[l] = dc_prev;
            d_above = dx;
        }
    }
    (loss, grad)
}

/// Summed NLL over a window without gradients.
pub(crate) fn sequence_loss(params: &MdrnnParams, window: StepInput<'_>) -> f64 {
    let mut state = params.new_state();
    let mut loss = 0.0;
    for (x, target) in window.inputs.iter().zip(window.targets) {
        let (mix, next) = forward_step(params, &state, x).expect("window shapes checked by caller");
        loss += super::nll(&mix, target);
        state = next;
    }
    loss
}
