//! Finite-difference gradient checking.

use crate::Arr;

/// Central-difference numeric gradient of `f` w.r.t. `x`, one coordinate at a
/// time. `f` must be a pure function of `x`.
pub fn numeric_grad(mut f: impl FnMut(&Arr) -> f64, x: &Arr, h: f64) -> Arr {
    let mut g = Arr::zeros(x.raw_dim());
    let mut xp = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = xp[&idx];
        xp[&idx] = orig + h;
        let fp = f(&xp);
        xp[&idx] = orig - h;
        let fm = f(&xp);
        xp[&idx] = orig;
        g[&idx] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Worst relative error between two gradients, with the usual
/// max(|a|, |b|, eps) denominator so near-zero entries compare absolutely.
pub fn max_rel_err(a: &Arr, b: &Arr) -> f64 {
    assert_eq!(a.shape(), b.shape(), "gradient shapes differ");
    let mut worst = 0.0f64;
    for (&ai, &bi) in a.iter().zip(b.iter()) {
        let denom = ai.abs().max(bi.abs()).max(1e-6);
        worst = worst.max((ai - bi).abs() / denom);
    }
    worst
}
