//! Random step-plus-sine regression functions on `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix, Task};
use crate::error::{Error, Result};

pub const JUMPS: usize = 5;
pub const NOISE_SD: f64 = 0.25;

/// `F(x) = sum_i g_i 1{x > t_i} + sin(8 pi x)` with `t_i` in `(0, 0.5)` and
/// `g_i` in `(0, 5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFunction {
    pub jump_locations: [f64; JUMPS],
    pub jump_sizes: [f64; JUMPS],
    pub noise_sd: f64,
    pub seed: u64,
}

fn open_uniform(rng: &mut ChaCha8Rng, hi: f64) -> f64 {
    loop {
        let v = rng.gen_range(0.0..hi);
        if v > 0.0 {
            return v;
        }
    }
}

impl SimFunction {
    /// Draws jump locations and sizes from `seed`.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jump_locations = std::array::from_fn(|_| open_uniform(&mut rng, 0.5));
        let jump_sizes = std::array::from_fn(|_| open_uniform(&mut rng, 5.0));
        Self {
            jump_locations,
            jump_sizes,
            noise_sd: NOISE_SD,
            seed,
        }
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::invalid("noise sd must be nonnegative"));
        }
        self.noise_sd = noise_sd;
        Ok(self)
    }

    /// Noiseless value.
    pub fn value(&self, x: f64) -> f64 {
        let steps: f64 = self
            .jump_locations
            .iter()
            .zip(&self.jump_sizes)
            .filter(|(t, _)| x > **t)
            .map(|(_, g)| g)
            .sum();
        steps + (8.0 * std::f64::consts::PI * x).sin()
    }

    /// `n` rows with `x ~ Unif(0, 1)` and `y = F(x) + N(0, noise_sd^2)`.
    pub fn simulate(&self, n: usize, data_seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("need at least one row"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        let noise = Normal::new(0.0, self.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.gen();
            let eps = noise.sample(&mut rng);
            x.push(xi);
            y.push(self.value(xi) + eps);
        }
        Dataset::new(Matrix::column_vector(x), y, Task::Regression)?.with_feature_names(vec!["x".into()])
    }
}
