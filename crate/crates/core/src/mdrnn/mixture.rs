use rand::Rng;
use rand_distr::StandardNormal;

/// Added to every softplus scale so components never collapse.
pub const SIGMA_FLOOR: f64 = 1e-3;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// One prediction of the mixture head: `K` weights on the simplex plus
/// diagonal Gaussian means and scales, each `K x M` indexed `k * M + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub width: usize,
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MixtureParams {
    pub fn mixtures(&self) -> usize {
        self.pi.len()
    }

    /// Build from raw head activations.
    pub(crate) fn from_head(width: usize, logits: &[f64], mu: Vec<f64>, sigma_pre: &[f64]) -> Self {
        let pi = softmax(logits);
        let sigma = sigma_pre.iter().map(|&s| softplus(s) + SIGMA_FLOOR).collect();
        Self { width, pi, mu, sigma }
    }

    pub fn is_valid(&self) -> bool {
        let k = self.pi.len();
        k > 0
            && self.mu.len() == k * self.width
            && self.sigma.len() == k * self.width
            && (self.pi.iter().sum::<f64>() - 1.0).abs() <= 1e-9
            && self.pi.iter().all(|p| (0.0..=1.0).contains(p))
            && self.sigma.iter().all(|s| *s > 0.0 && s.is_finite())
            && self.mu.iter().all(|m| m.is_finite())
    }

    /// Log density of each component at `target`, including its weight.
    fn weighted_log_densities(&self, target: &[f64]) -> Vec<f64> {
        let m = self.width;
        (0..self.pi.len())
            .map(|k| {
                let mut lp = self.pi[k].ln();
                for j in 0..m {
                    let s = self.sigma[k * m + j];
                    let z = (target[j] - self.mu[k * m + j]) / s;
                    lp -= 0.5 * z * z + s.ln() + LN_SQRT_2PI;
                }
                lp
            })
            .collect()
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Negative log-likelihood of `target` under the mixture.
pub fn nll(mix: &MixtureParams, target: &[f64]) -> f64 {
    -log_sum_exp(&mix.weighted_log_densities(target))
}

/// Loss plus gradients with respect to the head pre-activations: the
/// mixture logits, the means, and the scale pre-activations.
#[derive(Debug, Clone)]
pub struct NllGrad {
    pub loss: f64,
    pub d_logits: Vec<f64>,
    pub d_mu: Vec<f64>,
    /// Gradient with respect to sigma itself; multiply by
    /// `sigmoid(pre)` for the pre-activation.
    pub d_sigma: Vec<f64>,
}

pub fn nll_grad(mix: &MixtureParams, target: &[f64]) -> NllGrad {
    let m = mix.width;
    let k = mix.pi.len();
    let lw = mix.weighted_log_densities(target);
    let lse = log_sum_exp(&lw);
    let resp: Vec<f64> = lw.iter().map(|l| (l - lse).exp()).collect();
    let d_logits = (0..k).map(|i| mix.pi[i] - resp[i]).collect();
    let mut d_mu = vec![0.0; k * m];
    let mut d_sigma = vec![0.0; k * m];
    for i in 0..k {
        for j in 0..m {
            let idx = i * m + j;
            let s = mix.sigma[idx];
            let diff = target[j] - mix.mu[idx];
            d_mu[idx] = -resp[i] * diff / (s * s);
            d_sigma[idx] = resp[i] * (1.0 / s - diff * diff / (s * s * s));
        }
    }
    NllGrad { loss: -lse, d_logits, d_mu, d_sigma }
}

/// Draw one `M`-vector: pick a component from the weights tempered by
/// `pi_temp`, then perturb its mean by `sigma_temp`-scaled Gaussian noise.
///
/// Consumes exactly one uniform and `M` normal draws regardless of the
/// temperatures, so the random stream stays aligned across settings.
pub fn sample<R: Rng + ?Sized>(mix: &MixtureParams, pi_temp: f64, sigma_temp: f64, rng: &mut R) -> Vec<f64> {
    let k = pick_component(&mix.pi, pi_temp, rng.random::<f64>());
    let m = mix.width;
    (0..m)
        .map(|j| {
            let z: f64 = rng.sample(StandardNormal);
            mix.mu[k * m + j] + mix.sigma[k * m + j] * sigma_temp * z
        })
        .collect()
}

fn pick_component(pi: &[f64], temp: f64, u: f64) -> usize {
    let logs: Vec<f64> = pi.iter().map(|p| p.ln() / temp).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    let target = u * total;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if target < acc {
            return i;
        }
    }
    // rounding left the target past the last bucket
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(mu: f64, sigma: f64) -> MixtureParams {
        MixtureParams { width: 1, pi: vec![1.0], mu: vec![mu], sigma: vec![sigma] }
    }

    fn random_mix(rng: &mut ChaCha8Rng, k: usize, m: usize) -> MixtureParams {
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu = (0..k * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pre: Vec<f64> = (0..k * m).map(|_| rng.random_range(-1.5..1.0)).collect();
        MixtureParams::from_head(m, &logits, mu, &pre)
    }

    #[test]
    fn standard_normal_at_mean() {
        let v = nll(&single(0.0, 1.0), &[0.0]);
        assert!((v - 0.918_938_533_204_672_7).abs() < 1e-12, "{v}");
    }

    #[test]
    fn identical_components_match_single() {
        let one = single(0.3, 0.7);
        let two = MixtureParams { width: 1, pi: vec![0.2, 0.8], mu: vec![0.3, 0.3], sigma: vec![0.7, 0.7] };
        for t in [-1.0, 0.0, 0.3, 2.5] {
            assert!((nll(&one, &[t]) - nll(&two, &[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_density_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mix = random_mix(&mut rng, 3, 2);
            let target: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut density = 0.0;
            for k in 0..3 {
                let mut p = mix.pi[k];
                for j in 0..2 {
                    let s = mix.sigma[k * 2 + j];
                    let d = target[j] - mix.mu[k * 2 + j];
                    p *= (-(d * d) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                }
                density += p;
            }
            assert!((nll(&mix, &target) + density.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn nll_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mix = random_mix(&mut rng, 4, 3);
        let order = [2usize, 0, 3, 1];
        let perm = MixtureParams {
            width: 3,
            pi: order.iter().map(|&k| mix.pi[k]).collect(),
            mu: order.iter().flat_map(|&k| mix.mu[k * 3..k * 3 + 3].to_vec()).collect(),
            sigma: order.iter().flat_map(|&k| mix.sigma[k * 3..k * 3 + 3].to_vec()).collect(),
        };
        let t = [0.1, -0.4, 0.9];
        assert!((nll(&mix, &t) - nll(&perm, &t)).abs() < 1e-12);
    }

    #[test]
    fn nll_survives_far_targets() {
        let v = nll(&single(0.0, 1e-3), &[50.0]);
        assert!(v.is_finite() && v > 1e8);
    }

    #[test]
    fn grad_matches_finite_differences_on_head_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, m) = (3, 2);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu: Vec<f64> = (0..k * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pre: Vec<f64> = (0..k * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = [0.2, -0.3];
        let f = |l: &[f64], mu: &[f64], pre: &[f64]| nll(&MixtureParams::from_head(m, l, mu.to_vec(), pre), &t);
        let g = nll_grad(&MixtureParams::from_head(m, &logits, mu.clone(), &pre), &t);
        let eps = 1e-6;
        for i in 0..k {
            let (mut a, mut b) = (logits.clone(), logits.clone());
            a[i] += eps;
            b[i] -= eps;
            let fd = (f(&a, &mu, &pre) - f(&b, &mu, &pre)) / (2.0 * eps);
            assert!((fd - g.d_logits[i]).abs() < 1e-7);
        }
        for i in 0..k * m {
            let (mut a, mut b) = (mu.clone(), mu.clone());
            a[i] += eps;
            b[i] -= eps;
            let fd = (f(&logits, &a, &pre) - f(&logits, &b, &pre)) / (2.0 * eps);
            assert!((fd - g.d_mu[i]).abs() < 1e-7);
            let (mut a, mut b) = (pre.clone(), pre.clone());
            a[i] += eps;
            b[i] -= eps;
            let fd = (f(&logits, &mu, &a) - f(&logits, &mu, &b)) / (2.0 * eps);
            assert!((fd - g.d_sigma[i] * sigmoid(pre[i])).abs() < 1e-7);
        }
    }

    #[test]
    fn degenerate_sample_returns_mean() {
        let mix = MixtureParams { width: 2, pi: vec![1.0], mu: vec![0.25, -3.0], sigma: vec![0.5, 2.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample(&mix, 1.0, 0.0, &mut rng), vec![0.25, -3.0]);
    }

    #[test]
    fn cold_pi_temperature_picks_argmax() {
        let mix = MixtureParams {
            width: 1,
            pi: vec![0.3, 0.45, 0.25],
            mu: vec![0.0, 1.0, 2.0],
            sigma: vec![1.0; 3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            assert_eq!(sample(&mix, 1e-6, 0.0, &mut rng), vec![1.0]);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mix = random_mix(&mut rng, 5, 4);
        let a = sample(&mix, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample(&mix, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }

    #[test]
    fn warm_temperature_flattens_selection() {
        let mix = MixtureParams { width: 1, pi: vec![0.9, 0.1], mu: vec![0.0, 1.0], sigma: vec![1.0; 2] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let hot = (0..n).filter(|_| sample(&mix, 1000.0, 0.0, &mut rng)[0] == 1.0).count();
        let frac = hot as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn standard_normal_sample_moments() {
        let mix = single(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| sample(&mix, 1.0, 1.0, &mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.1);
    }
}
