//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use vprd::mlp::{loss_and_grad, Activation, Dims, LossConfig, LossKind, MlpModel, Reduction};
use vprd::rng::{self, Rng};

pub fn uniform(r: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng::uniform_f64(r)
}

pub fn below(r: &mut Rng, n: usize) -> usize {
    rng::uniform_below(r, n as u64) as usize
}

/// Two-sided exact Wilcoxon p-value by listing all `2ⁿ` sign assignments.
///
/// Ranks are computed here from scratch (average ranks for ties, kept doubled
/// so every sum is an integer). Returns `(min(W⁺, W⁻), p)`.
pub fn wilcoxon_enumeration(diffs: &[f64]) -> (f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let doubled: Vec<u64> = abs
        .iter()
        .map(|a| {
            let less = abs.iter().filter(|b| *b < a).count() as u64;
            let equal = abs.iter().filter(|b| *b == a).count() as u64;
            // average of positions less+1 ..= less+equal, doubled
            2 * less + equal + 1
        })
        .collect();
    let w_plus: u64 = nz.iter().zip(&doubled).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total: u64 = doubled.iter().sum();
    let w = w_plus.min(total - w_plus);
    let mut at_most = 0u64;
    for mask in 0u64..(1 << n) {
        let t: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| doubled[i]).sum();
        if t <= w {
            at_most += 1;
        }
    }
    let p = (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0);
    (w as f64 / 2.0, p)
}

/// Between-class variance for every interior edge of an `n_bins`
/// equal-width histogram, computed from bin-center levels and class
/// probabilities. Index `k` splits bins `< k` from bins `≥ k`; entry 0 is
/// unused.
pub fn otsu_scores(values: &[f64], n_bins: usize) -> (Vec<Option<f64>>, f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / n_bins as f64;
    let mut hist = vec![0.0; n_bins];
    for &v in values {
        let mut b = ((v - min) / width).floor() as isize;
        b = b.clamp(0, n_bins as isize - 1);
        hist[b as usize] += 1.0;
    }
    let total = values.len() as f64;
    let level = |i: usize| min + (i as f64 + 0.5) * width;
    let mut scores = vec![None; n_bins];
    for (k, score) in scores.iter_mut().enumerate().skip(1) {
        let w0: f64 = hist[..k].iter().sum::<f64>() / total;
        let w1 = 1.0 - w0;
        if hist[..k].iter().sum::<f64>() == 0.0 || hist[k..].iter().sum::<f64>() == 0.0 {
            continue;
        }
        let mu0 = hist[..k].iter().enumerate().map(|(i, h)| h * level(i)).sum::<f64>() / hist[..k].iter().sum::<f64>();
        let mu1 = hist[k..].iter().enumerate().map(|(i, h)| h * level(i + k)).sum::<f64>() / hist[k..].iter().sum::<f64>();
        *score = Some(w0 * w1 * (mu0 - mu1) * (mu0 - mu1));
    }
    (scores, min, width)
}

/// A random small network, input batch, dropout mask and loss config whose
/// ReLU pre-activations all sit at least 1e-3 away from the kink.
pub struct GradCase {
    pub model: MlpModel,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub mask: Option<Array2<f64>>,
    pub loss: LossConfig,
}

pub fn grad_case(seed: u64, alpha: f64) -> GradCase {
    let mut r = rng::seeded(seed);
    loop {
        let d_in = 1 + below(&mut r, 6);
        let hidden = 1 + below(&mut r, 8);
        let d_out = 1 + below(&mut r, 5);
        let batch = 1 + below(&mut r, 4);
        let activation = if below(&mut r, 2) == 0 { Activation::Relu } else { Activation::Tanh };
        let mut model = MlpModel::init(Dims::new(d_in, hidden, d_out), activation, r_seed(&mut r));
        model.b1 = (0..hidden).map(|_| uniform(&mut r, -0.5, 0.5)).collect();
        model.b2 = (0..d_out).map(|_| uniform(&mut r, -0.5, 0.5)).collect();
        let x = Array2::from_shape_simple_fn((batch, d_in), || uniform(&mut r, -1.5, 1.5));
        let y = Array2::from_shape_simple_fn((batch, d_out), || uniform(&mut r, -1.0, 1.0));
        let mask = if below(&mut r, 2) == 0 {
            None
        } else {
            let p = 0.3;
            Some(Array2::from_shape_simple_fn((batch, hidden), || {
                if rng::uniform_f64(&mut r) < p {
                    0.0
                } else {
                    1.0 / (1.0 - p)
                }
            }))
        };
        let reduction = if below(&mut r, 2) == 0 { Reduction::Sum } else { Reduction::MeanPerElement };
        let y_hat: Vec<f64> = (0..d_out).map(|_| uniform(&mut r, -0.5, 0.5)).collect();
        let loss = if alpha == 0.0 && below(&mut r, 2) == 0 {
            LossConfig::mse(reduction)
        } else {
            LossConfig::anti_mean(alpha, y_hat, reduction)
        };
        let pre = x.dot(&model.w1) + &model.b1;
        if activation == Activation::Relu && pre.iter().any(|z| z.abs() < 1e-3) {
            continue;
        }
        return GradCase { model, x, y, mask, loss };
    }
}

fn r_seed(r: &mut Rng) -> u64 {
    use rand::RngCore;
    r.next_u64()
}

impl GradCase {
    pub fn loss_value(&self, model: &MlpModel) -> f64 {
        let (out, _) = model.forward_with_mask(self.x.view(), self.mask.clone()).unwrap();
        loss_and_grad(out.view(), self.y.view(), &self.loss).unwrap().0
    }

    /// Largest relative error between analytic and central-difference
    /// gradients over every parameter. Relative error is
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn max_relative_error(&self, eps: f64, floor: f64) -> f64 {
        let (out, cache) = self.model.forward_with_mask(self.x.view(), self.mask.clone()).unwrap();
        let (_, g) = loss_and_grad(out.view(), self.y.view(), &self.loss).unwrap();
        let grads = self.model.backward(&cache, g.view()).unwrap();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let mut worst: f64 = 0.0;
        for (t, tensor) in analytic.iter().enumerate() {
            for (j, a) in tensor.iter().enumerate() {
                let mut plus = self.model.clone();
                plus.with_params_mut(|p| p[t][j] += eps);
                let mut minus = self.model.clone();
                minus.with_params_mut(|p| p[t][j] -= eps);
                let numeric = (self.loss_value(&plus) - self.loss_value(&minus)) / (2.0 * eps);
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(err);
            }
        }
        worst
    }

    pub fn is_anti_mean(&self) -> bool {
        self.loss.kind == LossKind::AntiMean
    }
}
