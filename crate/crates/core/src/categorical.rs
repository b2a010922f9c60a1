//! Categorical return distributions on a fixed, equally spaced atom grid.
//!
//! Every distribution in the crate lives on a [`Support`]. The measure-level
//! operations here (projection onto the grid, the affine push-forward of a
//! Bellman backup, mixtures, KL and Cramér distances) are pure functions over
//! immutable values. Reductions always run in ascending atom order so results
//! are bit-reproducible.

use crate::error::{Error, Result};

/// Tolerance for the sum-to-one invariant of probability vectors.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Equally spaced atoms `z_min = z_1 < ... < z_K = z_max`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Support {
    z_min: f64,
    z_max: f64,
    n_atoms: usize,
}

impl Support {
    pub fn new(z_min: f64, z_max: f64, n_atoms: usize) -> Result<Self> {
        if n_atoms < 2 {
            return Err(Error::InvalidSupport(format!(
                "need at least 2 atoms, got {n_atoms}"
            )));
        }
        if !z_min.is_finite() || !z_max.is_finite() || z_min >= z_max {
            return Err(Error::InvalidSupport(format!(
                "need finite z_min < z_max, got [{z_min}, {z_max}]"
            )));
        }
        Ok(Self {
            z_min,
            z_max,
            n_atoms,
        })
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn len(&self) -> usize {
        self.n_atoms
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Gap between neighbouring atoms.
    pub fn delta_z(&self) -> f64 {
        (self.z_max - self.z_min) / (self.n_atoms - 1) as f64
    }

    /// The `i`-th atom (zero based).
    #[inline]
    pub fn atom(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.delta_z()
    }

    pub fn atoms(&self) -> Vec<f64> {
        (0..self.n_atoms).map(|i| self.atom(i)).collect()
    }
}

/// A probability vector over the atoms of a [`Support`].
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    support: Support,
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates non-negativity, length and unit mass.
    pub fn new(support: Support, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != support.len() {
            return Err(Error::DimensionMismatch {
                expected: support.len(),
                actual: probs.len(),
            });
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "probability {} at atom {i} is negative or non-finite",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self { support, probs })
    }

    /// Crate-internal constructor for vectors that are valid by construction.
    pub(crate) fn from_raw(support: Support, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), support.len());
        Self { support, probs }
    }

    pub fn uniform(support: Support) -> Self {
        let k = support.len();
        Self::from_raw(support, vec![1.0 / k as f64; k])
    }

    /// All mass on atom `index`.
    pub fn dirac_atom(support: Support, index: usize) -> Self {
        assert!(index < support.len(), "atom index out of range");
        let mut probs = vec![0.0; support.len()];
        probs[index] = 1.0;
        Self::from_raw(support, probs)
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub(crate) fn probs_mut(&mut self) -> &mut [f64] {
        &mut self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// First moment, `Σ p_i z_i`.
    pub fn mean(&self) -> f64 {
        mean(self)
    }
}

/// A finite mixture of Dirac measures `Σ w_j δ_{y_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDiracMixture {
    pairs: Vec<(f64, f64)>,
}

impl WeightedDiracMixture {
    /// `pairs` are `(weight, location)`.
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidDistribution("empty mixture".into()));
        }
        if let Some(&(w, y)) = pairs
            .iter()
            .find(|(w, y)| !w.is_finite() || *w < 0.0 || !y.is_finite())
        {
            return Err(Error::InvalidDistribution(format!(
                "bad mixture component (weight {w}, location {y})"
            )));
        }
        let total: f64 = pairs.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn mean(&self) -> f64 {
        self.pairs.iter().map(|(w, y)| w * y).sum()
    }
}

/// Adds `weight · Π_z(δ_y)` into `acc`. Returns the mass that was clipped at
/// either edge of the support.
#[inline]
pub(crate) fn accumulate_projection(support: &Support, y: f64, weight: f64, acc: &mut [f64]) -> f64 {
    let k = support.len();
    if y <= support.z_min() {
        acc[0] += weight;
        return if y < support.z_min() { weight } else { 0.0 };
    }
    let last = support.atom(k - 1);
    if y >= last {
        acc[k - 1] += weight;
        return if y > support.z_max() { weight } else { 0.0 };
    }
    let b = (y - support.z_min()) / support.delta_z();
    let lower = (b.floor() as usize).min(k - 2);
    let upper_share = (b - lower as f64).clamp(0.0, 1.0);
    acc[lower] += weight * (1.0 - upper_share);
    acc[lower + 1] += weight * upper_share;
    0.0
}

/// Cramér projection of a single Dirac measure onto the support.
///
/// Mass below `z_1` goes to `z_1`, mass above `z_K` goes to `z_K`, and an
/// interior point is split between its two neighbouring atoms in proportion
/// to proximity.
pub fn project_dirac(support: &Support, y: f64) -> Categorical {
    let mut probs = vec![0.0; support.len()];
    accumulate_projection(support, y, 1.0, &mut probs);
    Categorical::from_raw(*support, probs)
}

/// Cramér projection of a Dirac mixture, linear in the mixture components.
pub fn project_mixture(support: &Support, mixture: &WeightedDiracMixture) -> Categorical {
    let mut probs = vec![0.0; support.len()];
    for &(w, y) in mixture.pairs() {
        accumulate_projection(support, y, w, &mut probs);
    }
    Categorical::from_raw(*support, probs)
}

/// Image of `nu` under `x ↦ r + γx`. With `γ = 0` all mass collapses to `r`.
pub fn pushforward(nu: &Categorical, reward: f64, gamma: f64) -> WeightedDiracMixture {
    debug_assert!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1)");
    if gamma == 0.0 {
        let mass: f64 = nu.probs.iter().sum();
        return WeightedDiracMixture {
            pairs: vec![(mass, reward)],
        };
    }
    let support = nu.support();
    let pairs = nu
        .probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, &p)| (p, reward + gamma * support.atom(i)))
        .collect();
    WeightedDiracMixture { pairs }
}

/// `Π_z (f_{r,γ})_# ν`: one projected distributional Bellman backup.
pub fn bellman_target(support: &Support, nu: &Categorical, reward: f64, gamma: f64) -> Categorical {
    let mut probs = vec![0.0; support.len()];
    accumulate_backup(support, nu, reward, gamma, 1.0, &mut probs);
    Categorical::from_raw(*support, probs)
}

/// Adds `weight · Π_z (f_{r,γ})_# ν` into `acc` without materialising the
/// mixture. Identical arithmetic to [`project_mixture`] over [`pushforward`].
/// Returns clipped mass.
pub(crate) fn accumulate_backup(
    support: &Support,
    nu: &Categorical,
    reward: f64,
    gamma: f64,
    weight: f64,
    acc: &mut [f64],
) -> f64 {
    let mut clipped = 0.0;
    for (w, y) in pushforward(nu, reward, gamma).pairs {
        clipped += accumulate_projection(support, y, weight * w, acc);
    }
    clipped
}

/// Linear pool `Σ w_j ν_j`.
///
/// Evaluated as `ν_0 + Σ_j w_j (ν_j − ν_0)`, which equals the plain weighted
/// sum when the weights sum to one and returns `ν_0` bit-for-bit when every
/// input is identical.
pub fn mix(dists: &[&Categorical], weights: &[f64]) -> Result<Categorical> {
    let first = *dists
        .first()
        .ok_or_else(|| Error::InvalidDistribution("mixture of zero distributions".into()))?;
    if dists.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: dists.len(),
            actual: weights.len(),
        });
    }
    if dists.iter().any(|d| d.support != first.support) {
        return Err(Error::SupportMismatch);
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidDistribution(format!(
            "mixture weights must be non-negative and sum to one (sum {total})"
        )));
    }
    let probs = (0..first.probs.len())
        .map(|i| {
            let base = first.probs[i];
            let mut shift = 0.0;
            for (d, w) in dists.iter().zip(weights).skip(1) {
                shift += w * (d.probs[i] - base);
            }
            (base + shift).max(0.0)
        })
        .collect();
    Ok(Categorical::from_raw(first.support, probs))
}

/// Equal-weight linear pool of `dists`.
pub fn mix_uniform(dists: &[&Categorical]) -> Result<Categorical> {
    let w = 1.0 / dists.len().max(1) as f64;
    mix(dists, &vec![w; dists.len()])
}

/// `KL(target ‖ model)` with `0 · log 0 = 0`. Infinite when the model puts no
/// mass where the target does.
pub fn kl(target: &Categorical, model: &Categorical) -> Result<f64> {
    kl_smoothed(target, model, 0.0)
}

/// KL divergence against the smoothed model `q_i ← (q_i + ε)/(1 + Kε)`.
pub fn kl_smoothed(target: &Categorical, model: &Categorical, epsilon: f64) -> Result<f64> {
    if target.support != model.support {
        return Err(Error::SupportMismatch);
    }
    let norm = 1.0 + target.probs.len() as f64 * epsilon;
    let mut total = 0.0;
    for (&p, &q) in target.probs.iter().zip(&model.probs) {
        if p > 0.0 {
            let q = (q + epsilon) / norm;
            total += p * (p.ln() - q.ln());
        }
    }
    // tiny negative values are rounding noise
    Ok(total.max(0.0))
}

/// Cramér distance: `√Δz · ‖F_a − F_b‖₂` over the cumulative mass vectors.
pub fn cramer_distance(a: &Categorical, b: &Categorical) -> Result<f64> {
    if a.support != b.support {
        return Err(Error::SupportMismatch);
    }
    let mut cdf_a = 0.0;
    let mut cdf_b = 0.0;
    let mut sum_sq = 0.0;
    for (pa, pb) in a.probs.iter().zip(&b.probs) {
        cdf_a += pa;
        cdf_b += pb;
        let d = cdf_a - cdf_b;
        sum_sq += d * d;
    }
    Ok((a.support.delta_z() * sum_sq).sqrt())
}

/// `Σ p_i z_i`.
pub fn mean(nu: &Categorical) -> f64 {
    let support = nu.support();
    nu.probs
        .iter()
        .enumerate()
        .map(|(i, p)| p * support.atom(i))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s3() -> Support {
        Support::new(0.0, 2.0, 3).unwrap()
    }

    fn assert_probs(c: &Categorical, expected: &[f64]) {
        for (a, b) in c.probs().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{:?} != {:?}", c.probs(), expected);
        }
    }

    #[test]
    fn support_rejects_degenerate_grids() {
        assert!(Support::new(0.0, 1.0, 1).is_err());
        assert!(Support::new(1.0, 1.0, 5).is_err());
        assert!(Support::new(2.0, 1.0, 5).is_err());
        assert!(Support::new(f64::NAN, 1.0, 5).is_err());
    }

    #[test]
    fn atoms_equally_spaced() {
        let s = Support::new(-10.0, 15.0, 51).unwrap();
        let atoms = s.atoms();
        let dz = s.delta_z();
        for w in atoms.windows(2) {
            assert!(((w[1] - w[0]) - dz).abs() <= 1e-12 * dz);
        }
        assert_eq!(atoms[0], -10.0);
        assert!((atoms[50] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn categorical_validation() {
        assert!(Categorical::new(s3(), vec![0.5, 0.5]).is_err());
        assert!(Categorical::new(s3(), vec![0.5, 0.6, -0.1]).is_err());
        assert!(Categorical::new(s3(), vec![0.5, 0.5, 0.5]).is_err());
        assert!(Categorical::new(s3(), vec![0.2, 0.3, 0.5]).is_ok());
    }

    #[test]
    fn project_dirac_cases() {
        assert_probs(&project_dirac(&s3(), -5.0), &[1.0, 0.0, 0.0]);
        assert_probs(&project_dirac(&s3(), 0.25), &[0.75, 0.25, 0.0]);
        assert_probs(&project_dirac(&s3(), 1.0), &[0.0, 1.0, 0.0]);
        assert_probs(&project_dirac(&s3(), 7.0), &[0.0, 0.0, 1.0]);
        assert_probs(&project_dirac(&s3(), 2.0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn project_mixture_is_linear() {
        let m = WeightedDiracMixture::new(vec![(0.5, 0.25), (0.5, 1.75)]).unwrap();
        // 0.5·(0.75, 0.25, 0) + 0.5·(0, 0.25, 0.75)
        assert_probs(&project_mixture(&s3(), &m), &[0.375, 0.25, 0.375]);
        let single = WeightedDiracMixture::new(vec![(1.0, 1.3)]).unwrap();
        assert_eq!(project_mixture(&s3(), &single), project_dirac(&s3(), 1.3));
    }

    #[test]
    fn pushforward_examples() {
        let d2 = Categorical::dirac_atom(s3(), 2);
        assert_eq!(pushforward(&d2, 1.0, 0.5).pairs(), &[(1.0, 2.0)]);

        let u = Categorical::uniform(s3());
        let m = pushforward(&u, -1.0, 0.9);
        let expected = [(1.0 / 3.0, -1.0), (1.0 / 3.0, -0.1), (1.0 / 3.0, 0.8)];
        for ((w, y), (ew, ey)) in m.pairs().iter().zip(expected) {
            assert!((w - ew).abs() < 1e-15 && (y - ey).abs() < 1e-12);
        }

        let collapsed = pushforward(&u, 0.0, 0.0);
        assert_eq!(collapsed.pairs().len(), 1);
        assert!((collapsed.pairs()[0].0 - 1.0).abs() < 1e-15);
        assert_eq!(collapsed.pairs()[0].1, 0.0);
    }

    #[test]
    fn bellman_target_examples() {
        let d2 = Categorical::dirac_atom(s3(), 2);
        assert_probs(&bellman_target(&s3(), &d2, 1.0, 0.5), &[0.0, 0.0, 1.0]);
        assert_probs(&bellman_target(&s3(), &d2, 0.0, 0.25), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn mix_examples() {
        let nu = Categorical::new(s3(), vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(mix(&[&nu], &[1.0]).unwrap(), nu);

        let lo = Categorical::dirac_atom(s3(), 0);
        let hi = Categorical::dirac_atom(s3(), 2);
        let m = mix(&[&lo, &hi], &[0.5, 0.5]).unwrap();
        assert_probs(&m, &[0.5, 0.0, 0.5]);

        let other = Categorical::uniform(Support::new(0.0, 3.0, 3).unwrap());
        assert_eq!(mix(&[&nu, &other], &[0.5, 0.5]), Err(Error::SupportMismatch));
    }

    #[test]
    fn mix_of_identical_inputs_is_exact() {
        let nu = Categorical::new(s3(), vec![0.1, 0.7, 0.2]).unwrap();
        let all = vec![&nu; 5];
        assert_eq!(mix_uniform(&all).unwrap(), nu);
    }

    #[test]
    fn kl_examples() {
        let s2 = Support::new(0.0, 1.0, 2).unwrap();
        let nu = Categorical::new(s3(), vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(kl(&nu, &nu).unwrap(), 0.0);
        let p = Categorical::new(s2, vec![1.0, 0.0]).unwrap();
        let q = Categorical::new(s2, vec![0.5, 0.5]).unwrap();
        assert!((kl(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(kl(&q, &p).unwrap().is_infinite());
        assert!(kl_smoothed(&q, &p, 1e-12).unwrap().is_finite());
        assert_eq!(kl(&nu, &p), Err(Error::SupportMismatch));
    }

    #[test]
    fn cramer_examples() {
        let nu = Categorical::new(s3(), vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(cramer_distance(&nu, &nu).unwrap(), 0.0);
        let a = Categorical::dirac_atom(s3(), 0);
        let b = Categorical::dirac_atom(s3(), 1);
        assert!((cramer_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_examples() {
        let s = Support::new(-1.0, 3.0, 9).unwrap();
        for j in 0..9 {
            assert!((Categorical::dirac_atom(s, j).mean() - s.atom(j)).abs() < 1e-15);
        }
        assert!((Categorical::uniform(s3()).mean() - 1.0).abs() < 1e-15);
    }
}
