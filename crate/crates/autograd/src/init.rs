//! Weight initialization.

use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Arr;

/// He-style normal init: zero-mean Gaussian with std sqrt(2 / fan_in),
/// sampled via Box-Muller so the only dependency is a uniform stream.
pub fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Arr {
    let std = (2.0 / fan_in as f64).sqrt();
    gaussian(rng, shape, 0.0, std)
}

/// Zero-mean Gaussian with the given std.
pub fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], mean: f64, std: f64) -> Arr {
    let n: usize = shape.iter().product();
    let mut vals = Vec::with_capacity(n);
    while vals.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        vals.push(mean + std * r * theta.cos());
        if vals.len() < n {
            vals.push(mean + std * r * theta.sin());
        }
    }
    Arr::from_shape_vec(IxDyn(shape), vals).unwrap()
}
