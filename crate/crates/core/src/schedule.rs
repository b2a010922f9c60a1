//! Exploration and step-size schedules, and seed derivation for independent
//! RNG streams.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear decay from `start` to `end` over `decay_steps`, constant after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(epsilon: f64) -> Self {
        Self {
            start: epsilon,
            end: epsilon,
            decay_steps: 0,
        }
    }

    /// 1.0 → 0.05 over the first tenth of `total_steps`.
    pub fn default_for(total_steps: u64) -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_steps: (total_steps / 10).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for e in [self.start, self.end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidConfig(format!("epsilon {e} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Mixture rate for tabular updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSize {
    Constant { alpha: f64 },
    /// `α_t = initial / (1 + t · decay)`.
    Decaying { initial: f64, decay: f64 },
}

impl StepSize {
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            StepSize::Constant { alpha } => alpha,
            StepSize::Decaying { initial, decay } => initial / (1.0 + step as f64 * decay),
        }
    }

    /// Every `α_t` must lie in `(0, 1)`.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSize::Constant { alpha } => alpha > 0.0 && alpha < 1.0,
            StepSize::Decaying { initial, decay } => {
                initial > 0.0 && initial < 1.0 && decay >= 0.0 && decay.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("step sizes must lie in (0, 1): {self:?}")))
        }
    }
}

/// What a derived RNG stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Init = 1,
    Environment = 2,
    Exploration = 3,
    Replay = 4,
    Evaluation = 5,
}

/// Seed for stream `(purpose, index)` of `master`, via the SplitMix64
/// finaliser so nearby inputs give unrelated seeds.
pub fn derive_seed(master: u64, purpose: StreamPurpose, index: u64) -> u64 {
    let mut z = master
        .wrapping_add((purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
