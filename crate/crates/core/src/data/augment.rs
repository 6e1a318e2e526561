//! Label-consistent augmentation. Every geometric transform is applied
//! identically to the image, the part mask, and the joint coordinates, with
//! left/right semantic swaps where the transform mirrors the figure.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::LoadedSample;
use crate::losses::SEG_IGNORE;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineConfig {
    /// Maximum rotation magnitude in degrees.
    pub max_rotate_deg: f64,
    /// Maximum translation as a fraction of each image dimension.
    pub max_translate_frac: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for AffineConfig {
    fn default() -> Self {
        Self {
            max_rotate_deg: 30.0,
            max_translate_frac: 0.10,
            min_scale: 0.75,
            max_scale: 1.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub affine_prob: f64,
    #[serde(default)]
    pub affine: AffineConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            affine_prob: 0.5,
            affine: AffineConfig::default(),
        }
    }
}

impl AugmentConfig {
    /// No-op augmentation, for evaluation pipelines.
    pub fn none() -> Self {
        Self {
            hflip_prob: 0.0,
            affine_prob: 0.0,
            affine: AffineConfig::default(),
        }
    }
}

/// A 2x3 affine map from output pixel coordinates to input pixel
/// coordinates: in = M * [out_x, out_y, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    /// Inverse map (the forward direction for label points).
    pub fn inverse(&self) -> Self {
        let [[a, b, tx], [c, d, ty]] = self.m;
        let det = a * d - b * c;
        assert!(det.abs() > 1e-12, "affine transform is singular");
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Self {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        }
    }
}

/// Samples a similarity transform (rotation, isotropic scale, translation)
/// about the pixel center ((W-1)/2, (H-1)/2), expressed output -> input.
pub fn sample_affine(cfg: &AffineConfig, height: usize, width: usize, rng: &mut ChaCha8Rng) -> Affine {
    let deg = std::f64::consts::PI / 180.0;
    let theta = rng.gen_range(-cfg.max_rotate_deg..=cfg.max_rotate_deg) * deg;
    let scale = rng.gen_range(cfg.min_scale..=cfg.max_scale);
    let tx = rng.gen_range(-cfg.max_translate_frac..=cfg.max_translate_frac) * width as f64;
    let ty = rng.gen_range(-cfg.max_translate_frac..=cfg.max_translate_frac) * height as f64;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    // Forward (input -> output): translate to origin, scale+rotate, translate
    // back, then shift. The sampler returns its inverse (output -> input),
    // built directly: rotate by -theta and divide by scale.
    let (s, c) = theta.sin_cos();
    let inv_s = 1.0 / scale;
    let a = c * inv_s;
    let b = s * inv_s;
    // out = [cx + tx, cy + ty] + s*R*(in - [cx, cy])
    // in  = [cx, cy] + (1/s)*R^T*(out - [cx + tx, cy + ty])
    Affine {
        m: [
            [a, b, cx - a * (cx + tx) - b * (cy + ty)],
            [-b, a, cy + b * (cx + tx) - a * (cy + ty)],
        ],
    }
}

/// Bilinear sample with edge clamping; coordinates are pixel centers.
fn bilinear(image: &Array3<f64>, ch: usize, x: f64, y: f64) -> f64 {
    let h = image.shape()[1] as isize;
    let w = image.shape()[2] as isize;
    let x0 = x.floor() as isize;
    let y0 = y.floor() as isize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let cl = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let p00 = image[(ch, cl(y0, h), cl(x0, w))];
    let p01 = image[(ch, cl(y0, h), cl(x0 + 1, w))];
    let p10 = image[(ch, cl(y0 + 1, h), cl(x0, w))];
    let p11 = image[(ch, cl(y0 + 1, h), cl(x0 + 1, w))];
    p00 * (1.0 - fx) * (1.0 - fy) + p01 * fx * (1.0 - fy) + p10 * (1.0 - fx) * fy + p11 * fx * fy
}

/// Horizontal flip: x' = (W-1) - x on image, mask, and joints; left/right
/// joint pairs and left/right part classes are swapped so labels keep their
/// anatomical meaning. Applying it twice is bit-exact identity.
pub fn hflip(
    sample: &mut LoadedSample,
    joint_lr_pairs: &[(usize, usize)],
    part_lr_pairs: &[(usize, usize)],
) {
    let w = sample.image.shape()[2];
    // Image: reverse each row per channel.
    let mut flipped = sample.image.clone();
    for c in 0..sample.image.shape()[0] {
        for y in 0..sample.image.shape()[1] {
            for x in 0..w {
                flipped[(c, y, x)] = sample.image[(c, y, w - 1 - x)];
            }
        }
    }
    sample.image = flipped;

    if let Some(mask) = &mut sample.mask {
        let (mh, mw) = (mask.shape()[0], mask.shape()[1]);
        let mut out = Array2::zeros((mh, mw));
        for y in 0..mh {
            for x in 0..mw {
                let mut v = mask[(y, mw - 1 - x)];
                for &(l, r) in part_lr_pairs {
                    if v == l as i64 {
                        v = r as i64;
                    } else if v == r as i64 {
                        v = l as i64;
                    }
                }
                out[(y, x)] = v;
            }
        }
        *mask = out;
    }

    if let Some(joints) = &mut sample.joints {
        for mut row in joints.rows_mut() {
            row[0] = (w as f64 - 1.0) - row[0];
        }
        let vis = sample.visible.as_mut().expect("joints imply visibility flags");
        for &(a, b) in joint_lr_pairs {
            for col in 0..2 {
                let tmp = joints[(a, col)];
                joints[(a, col)] = joints[(b, col)];
                joints[(b, col)] = tmp;
            }
            vis.swap(a, b);
        }
    }
}

/// Applies an output->input affine map: image resampled bilinearly with edge
/// clamping, mask resampled nearest with out-of-bounds pixels set to the
/// ignore label, joints mapped through the forward (input->output) transform
/// with joints leaving the canvas marked invisible.
pub fn apply_affine(sample: &mut LoadedSample, affine: &Affine) {
    if *affine == Affine::identity() {
        return;
    }
    let (c, h, w) = (
        sample.image.shape()[0],
        sample.image.shape()[1],
        sample.image.shape()[2],
    );
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for oy in 0..h {
            for ox in 0..w {
                let (ix, iy) = affine.apply(ox as f64, oy as f64);
                out[(ch, oy, ox)] = bilinear(&sample.image, ch, ix, iy);
            }
        }
    }
    sample.image = out;

    if let Some(mask) = &mut sample.mask {
        let (mh, mw) = (mask.shape()[0], mask.shape()[1]);
        let mut out = Array2::zeros((mh, mw));
        for oy in 0..mh {
            for ox in 0..mw {
                let (ix, iy) = affine.apply(ox as f64, oy as f64);
                let nx = ix.round() as isize;
                let ny = iy.round() as isize;
                out[(oy, ox)] = if nx >= 0 && ny >= 0 && (nx as usize) < mw && (ny as usize) < mh {
                    mask[(ny as usize, nx as usize)]
                } else {
                    SEG_IGNORE
                };
            }
        }
        *mask = out;
    }

    if let Some(joints) = &mut sample.joints {
        let fwd = affine.inverse();
        let vis = sample.visible.as_mut().expect("joints imply visibility flags");
        for (j, mut row) in joints.rows_mut().into_iter().enumerate() {
            let (nx, ny) = fwd.apply(row[0], row[1]);
            row[0] = nx;
            row[1] = ny;
            if nx < 0.0 || ny < 0.0 || nx > (w as f64 - 1.0) || ny > (h as f64 - 1.0) {
                vis[j] = false;
            }
        }
        // Scale normalization reference with the isotropic scale factor.
        let det = (fwd.m[0][0] * fwd.m[1][1] - fwd.m[0][1] * fwd.m[1][0]).abs();
        if let Some(hs) = &mut sample.head_size {
            *hs *= det.sqrt();
        }
    }
}

/// Applies the configured augmentations in place, drawing all randomness
/// from `rng`.
pub fn augment(
    sample: &mut LoadedSample,
    cfg: &AugmentConfig,
    joint_lr_pairs: &[(usize, usize)],
    part_lr_pairs: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) {
    if cfg.hflip_prob > 0.0 && rng.gen_bool(cfg.hflip_prob.min(1.0)) {
        hflip(sample, joint_lr_pairs, part_lr_pairs);
    }
    if cfg.affine_prob > 0.0 && rng.gen_bool(cfg.affine_prob.min(1.0)) {
        let (h, w) = (sample.image.shape()[1], sample.image.shape()[2]);
        let affine = sample_affine(&cfg.affine, h, w, rng);
        apply_affine(sample, &affine);
    }
}
