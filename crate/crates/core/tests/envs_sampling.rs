//! Sampled transitions of the bundled environments against their kernels.

use std::collections::BTreeMap;

use ecc_core::envs::{built_in_envs, two_path, EnvSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SAMPLES: usize = 100_000;

/// Outcome key: reward bits and next state (equal branches are merged).
type Outcome = (u64, usize);

fn kernel(env: &EnvSpec, x: usize, a: usize) -> BTreeMap<Outcome, f64> {
    let mut k = BTreeMap::new();
    for b in env.mdp.branches(x, a) {
        *k.entry((b.reward.to_bits(), b.next_state)).or_insert(0.0) += b.prob;
    }
    k
}

fn sample_counts(env: &EnvSpec, x: usize, a: usize, n: usize, seed: u64) -> BTreeMap<Outcome, usize> {
    let mut inst = env.instance(seed);
    let mut counts = BTreeMap::new();
    for _ in 0..n {
        inst.reset_to(x).unwrap();
        let out = inst.step(a).unwrap();
        *counts.entry((out.reward.to_bits(), out.observation.state)).or_insert(0) += 1;
    }
    counts
}

#[test]
fn sampled_transitions_match_kernel() {
    for env in built_in_envs().unwrap() {
        for x in (0..env.n_states()).filter(|&x| !env.mdp.is_terminal(x)) {
            for a in 0..env.n_actions() {
                let k = kernel(&env, x, a);
                let n = if k.len() > 1 { SAMPLES } else { 1_000 };
                let counts = sample_counts(&env, x, a, n, (x * 31 + a) as u64);
                for o in counts.keys() {
                    assert!(k.contains_key(o), "{} ({x},{a}): outcome {o:?} not in kernel", env.name);
                }
                if k.len() == 1 {
                    continue;
                }
                let stat: f64 = k
                    .iter()
                    .map(|(o, p)| {
                        let expected = p * n as f64;
                        let observed = *counts.get(o).unwrap_or(&0) as f64;
                        (observed - expected).powi(2) / expected
                    })
                    .sum();
                let critical = ChiSquared::new((k.len() - 1) as f64).unwrap().inverse_cdf(0.99);
                assert!(stat < critical, "{} ({x},{a}): χ² = {stat} ≥ {critical}", env.name);
            }
        }
    }
}

#[test]
fn two_path_risky_payout_has_mean_five() {
    let env = two_path().unwrap();
    let mut inst = env.instance(7);
    let n = SAMPLES;
    let rewards: Vec<f64> = (0..n)
        .map(|_| {
            inst.reset_to(7).unwrap();
            inst.step(0).unwrap().reward
        })
        .collect();
    let mean = rewards.iter().sum::<f64>() / n as f64;
    // Bernoulli payout 0 / 10: σ = 5
    let three_sigma = 3.0 * 5.0 / (n as f64).sqrt();
    assert!((mean - 5.0).abs() < three_sigma, "mean {mean}");
}

#[test]
fn episodes_end_by_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for env in built_in_envs().unwrap() {
        let mut inst = env.instance(11);
        for _ in 0..200 {
            inst.reset();
            let mut steps = 0;
            loop {
                let out = inst.step(rng.random_range(0..env.n_actions())).unwrap();
                steps += 1;
                assert!(steps <= env.episode_cap, "{}", env.name);
                if out.done() {
                    assert_eq!(out.truncated, steps == env.episode_cap && !out.terminal);
                    break;
                }
            }
            assert!(inst.step(0).is_err(), "stepping a finished episode must fail");
        }
    }
}

#[test]
fn reset_to_rejects_terminal_and_unknown_states() {
    let env = two_path().unwrap();
    let mut inst = env.instance(0);
    assert!(inst.reset_to(8).is_err());
    assert!(inst.reset_to(99).is_err());
    assert_eq!(inst.reset_to(3).unwrap().state, 3);
}
