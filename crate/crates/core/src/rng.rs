// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Seeded Wiener increments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Standard normal samples by Box–Muller on a per-trajectory substream.
#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    /// Substream `seed ⊕ index`.
    pub fn substream(seed: u64, index: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ index),
            spare: None,
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * th.sin());
        r * th.cos()
    }

    /// Wiener increment with variance dt.
    pub fn wiener(&mut self, dt: f64) -> f64 {
        self.standard_normal() * dt.sqrt()
    }
}

/// Independent seed for stream family `label` under `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed.wrapping_add(label.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
