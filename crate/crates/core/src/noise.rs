//! Seeded measurement noise, one independent stream per (vehicle, quantity).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::model::NoiseConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Position,
    Speed,
}

/// Gaussian measurement noise drawn from a counter-based ChaCha stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseStream {
    pub fn new(cfg: &NoiseConfig, vehicle: usize, quantity: Quantity) -> Self {
        let var = match quantity {
            Quantity::Position => cfg.position_var,
            Quantity::Speed => cfg.speed_var,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let q = match quantity {
            Quantity::Position => 0,
            Quantity::Speed => 1,
        };
        rng.set_stream(2 * vehicle as u64 + q);
        let normal = (cfg.enabled && var > 0.0).then(|| Normal::new(0.0, var.sqrt()).expect("finite std"));
        Self { rng, normal }
    }

    /// Measured value for `truth`; passthrough when noise is disabled.
    pub fn apply(&mut self, truth: f64) -> f64 {
        match &self.normal {
            Some(n) => truth + n.sample(&mut self.rng),
            None => truth,
        }
    }
}
