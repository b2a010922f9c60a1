//! Independent oracles shared by the integration and acceptance tests. None
//! of these reuse library code paths they are meant to check.

#![allow(dead_code)]

use ecc_core::approx::{ApproximatorParams, Architecture, Dims};
use ecc_core::categorical::{Categorical, Support};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Exact `∫ (F_a(x) − F_b(x))² dx` for two finite discrete measures given as
/// `(weight, location)` pairs: sweep the merged, sorted breakpoints and
/// integrate the piecewise-constant CDF difference between them.
pub fn exact_cramer_sq(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .map(|&(w, x)| (x, w))
        .chain(b.iter().map(|&(w, x)| (x, -w)))
        .collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        total += diff * diff * (pair[1].0 - pair[0].0);
    }
    total
}

pub fn pairs_of(c: &Categorical) -> Vec<(f64, f64)> {
    c.probs()
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, c.support().atom(i)))
        .collect()
}

/// Random probability vector with occasional exact zeros.
pub fn random_probs<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() })
        .collect();
    if v.iter().all(|&p| p == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    v
}

pub fn random_support<R: Rng>(rng: &mut R) -> Support {
    let lo = rng.random_range(-20.0..5.0);
    let width = rng.random_range(0.5..30.0);
    Support::new(lo, lo + width, rng.random_range(2..60)).unwrap()
}

pub fn random_categorical<R: Rng>(support: Support, rng: &mut R) -> Categorical {
    Categorical::new(support, random_probs(support.len(), rng)).unwrap()
}

/// Monte Carlo MSE of the mean of k errors `ε_i = σ(√ρ Z_0 + √(1−ρ) Z_i)`,
/// which are N(0, σ²) with pairwise correlation ρ.
pub fn equicorrelated_mse<R: Rng>(k: usize, rho: f64, sigma2: f64, samples: usize, rng: &mut R) -> f64 {
    let sigma = sigma2.sqrt();
    let mut total = 0.0;
    for _ in 0..samples {
        let z0: f64 = StandardNormal.sample(rng);
        let mut sum = 0.0;
        for _ in 0..k {
            let zi: f64 = StandardNormal.sample(rng);
            sum += sigma * (rho.sqrt() * z0 + (1.0 - rho).sqrt() * zi);
        }
        let mean = sum / k as f64;
        total += mean * mean;
    }
    total / samples as f64
}

/// Maximum relative error between the analytic KL gradient and central
/// finite differences on one random instance, with
/// `rel = |a − n| / max(|a|, |n|, 1e−4)`. Instances with a hidden
/// pre-activation within 1e−3 of the ReLU kink are redrawn, since the loss
/// is not differentiable there.
pub fn gradient_check<R: Rng>(arch: Architecture, rng: &mut R) -> f64 {
    let h = 1e-5;
    loop {
        let dims = Dims {
            feature_dim: rng.random_range(1..6),
            hidden_dim: rng.random_range(1..8),
            n_actions: rng.random_range(1..4),
            n_atoms: rng.random_range(2..8),
        };
        let support = Support::new(-1.0, 1.0, dims.n_atoms).unwrap();
        let params = ApproximatorParams::init(arch, dims, support, rng.random()).unwrap();
        let x: Vec<f64> = (0..dims.feature_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        if arch == Architecture::OneHiddenLayer && near_kink(&params, &x) {
            continue;
        }
        let action = rng.random_range(0..dims.n_actions);
        let target = random_categorical(support, rng);
        let smoothing = if rng.random::<bool>() { 0.0 } else { 1e-3 };
        let (_, grad) = params.kl_loss_and_grad(&x, action, &target, smoothing).unwrap();
        let loss_at = |w: Vec<f64>| {
            let p = ApproximatorParams::from_weights(arch, dims, support, 0, w).unwrap();
            p.kl_loss_and_grad(&x, action, &target, smoothing).unwrap().0
        };
        let mut worst: f64 = 0.0;
        for i in 0..grad.len() {
            let mut plus = params.weights().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        return worst;
    }
}

/// Whether any hidden pre-activation `W1 x + b1` is within 1e−3 of zero.
fn near_kink(params: &ApproximatorParams, x: &[f64]) -> bool {
    let d = params.dims();
    let w = params.weights();
    let (w1, b1) = w.split_at(d.hidden_dim * d.feature_dim);
    (0..d.hidden_dim).any(|j| {
        let pre: f64 = b1[j] + (0..d.feature_dim).map(|f| w1[j * d.feature_dim + f] * x[f]).sum::<f64>();
        pre.abs() < 1e-3
    })
}
