//! Property tests of the categorical primitives against independent oracles.

mod common;

use common::{exact_cramer_sq, pairs_of, random_categorical};
use ecc_core::categorical::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn support_strategy() -> impl Strategy<Value = Support> {
    (-20.0f64..5.0, 0.5f64..30.0, 2usize..60)
        .prop_map(|(lo, w, n)| Support::new(lo, lo + w, n).unwrap())
}

/// A support with a weighted Dirac mixture whose locations straddle it.
fn mixture_strategy() -> impl Strategy<Value = (Support, WeightedDiracMixture)> {
    support_strategy().prop_flat_map(|s| {
        let span = s.z_max() - s.z_min();
        let lo = s.z_min() - 0.3 * span;
        let hi = s.z_max() + 0.3 * span;
        prop::collection::vec((0.01f64..1.0, lo..hi), 1..8).prop_map(move |raw| {
            let total: f64 = raw.iter().map(|p| p.0).sum();
            let pairs = raw.into_iter().map(|(w, x)| (w / total, x)).collect();
            (s, WeightedDiracMixture::new(pairs).unwrap())
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_cramer_optimal((support, mix) in mixture_strategy(), seed in any::<u64>()) {
        let proj = project_mixture(&support, &mix);
        let best = exact_cramer_sq(&pairs_of(&proj), mix.pairs());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let cand = random_categorical(support, &mut rng);
            let d = exact_cramer_sq(&pairs_of(&cand), mix.pairs());
            prop_assert!(best <= d + 1e-12, "candidate beat projection: {} < {}", d, best);
        }
    }

    #[test]
    fn projection_conserves_mass((support, mix) in mixture_strategy()) {
        let proj = project_mixture(&support, &mix);
        prop_assert!((proj.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(proj.probs().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn interior_projection_preserves_mean(support in support_strategy(), u in prop::collection::vec(0.0f64..=1.0, 1..6)) {
        let pairs: Vec<(f64, f64)> = u
            .iter()
            .map(|t| (1.0 / u.len() as f64, support.z_min() + t * (support.z_max() - support.z_min())))
            .collect();
        let mix = WeightedDiracMixture::new(pairs).unwrap();
        let proj = project_mixture(&support, &mix);
        prop_assert!((proj.mean() - mix.mean()).abs() < 1e-9 * (1.0 + mix.mean().abs()));
    }

    #[test]
    fn projection_is_linear((support, mix) in mixture_strategy()) {
        let direct = project_mixture(&support, &mix);
        let parts: Vec<Categorical> = mix.pairs().iter().map(|&(_, x)| project_dirac(&support, x)).collect();
        let weights: Vec<f64> = mix.pairs().iter().map(|p| p.0).collect();
        let mut combined = vec![0.0; support.len()];
        for (p, w) in parts.iter().zip(&weights) {
            for (c, v) in combined.iter_mut().zip(p.probs()) {
                *c += w * v;
            }
        }
        for (a, b) in direct.probs().iter().zip(&combined) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cramer_distance_matches_exact_integral(support in support_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_categorical(support, &mut rng);
        let b = random_categorical(support, &mut rng);
        let exact = exact_cramer_sq(&pairs_of(&a), &pairs_of(&b)).sqrt();
        let d = cramer_distance(&a, &b).unwrap();
        prop_assert!((d - exact).abs() < 1e-9 * (1.0 + exact));
        prop_assert!((d - cramer_distance(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert_eq!(cramer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mixture_mean_is_weighted_mean(support in support_strategy(), seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dists: Vec<Categorical> = (0..k).map(|_| random_categorical(support, &mut rng)).collect();
        let refs: Vec<&Categorical> = dists.iter().collect();
        let m = mix_uniform(&refs).unwrap();
        let avg = dists.iter().map(Categorical::mean).sum::<f64>() / k as f64;
        prop_assert!((m.mean() - avg).abs() < 1e-12 * (1.0 + avg.abs()));
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_self(support in support_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_categorical(support, &mut rng);
        let b = Categorical::new(support, common::random_probs(support.len(), &mut rng)
            .into_iter().map(|p| (p + 0.01) / (1.0 + 0.01 * support.len() as f64)).collect()).unwrap();
        prop_assert!(kl(&a, &b).unwrap() >= 0.0);
        prop_assert!(kl(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn bellman_target_mean_is_affine(support in support_strategy(), seed in any::<u64>(), gamma in 0.0f64..1.0) {
        // keep r + γ z inside the support so projection preserves the mean
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = random_categorical(support, &mut rng);
        let mid = 0.5 * (support.z_min() + support.z_max());
        let r = mid * (1.0 - gamma);
        let target = bellman_target(&support, &nu, r, gamma);
        let expected = r + gamma * nu.mean();
        prop_assert!((target.mean() - expected).abs() < 1e-9 * (1.0 + expected.abs()));
    }
}
