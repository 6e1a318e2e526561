//! Deterministic synthetic person dataset: articulated stick figures with
//! exact joint coordinates, exact part masks, identity-stable appearance,
//! and discrete attributes. Identity is carried by a color palette choice
//! plus body proportions; pose varies per sample within joint-angle limits.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{
    save_manifest, DatasetManifest, JointSpec, PartSpec, SampleRecord, Split, TaskFlags,
};
use crate::error::DataError;
use crate::heads::{Attribute, AttributeSchema};

pub const JOINT_NAMES: [&str; 14] = [
    "head_top", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
];
pub const JOINT_LR_PAIRS: [(usize, usize); 6] = [(2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13)];
pub const PART_NAMES: [&str; 5] = ["background", "head", "upper_body", "lower_body", "shoes"];

pub const PART_BG: i64 = 0;
pub const PART_HEAD: i64 = 1;
pub const PART_UPPER: i64 = 2;
pub const PART_LOWER: i64 = 3;
pub const PART_SHOES: i64 = 4;

/// Part classes each joint may legitimately land on in the rendered mask
/// (joints on region boundaries admit both neighbors).
pub fn allowed_parts(joint: usize) -> &'static [i64] {
    match joint {
        0 => &[PART_HEAD],
        1 => &[PART_HEAD, PART_UPPER],
        2..=7 => &[PART_UPPER],
        8 | 11 => &[PART_LOWER, PART_UPPER],
        9 | 12 => &[PART_LOWER],
        10 | 13 => &[PART_SHOES, PART_LOWER],
        _ => panic!("joint index out of range"),
    }
}

const SHIRT_COLORS: [[f64; 3]; 8] = [
    [0.85, 0.15, 0.15], // red
    [0.15, 0.25, 0.85], // blue
    [0.15, 0.70, 0.20], // green
    [0.90, 0.85, 0.15], // yellow
    [0.80, 0.20, 0.80], // magenta
    [0.15, 0.75, 0.80], // cyan
    [0.95, 0.55, 0.10], // orange
    [0.50, 0.20, 0.70], // purple
];
const PANTS_COLORS: [[f64; 3]; 6] = [
    [0.10, 0.10, 0.10], // black
    [0.12, 0.15, 0.40], // navy
    [0.45, 0.30, 0.15], // brown
    [0.45, 0.45, 0.45], // gray
    [0.35, 0.40, 0.15], // olive
    [0.10, 0.45, 0.45], // teal
];
const SKIN_COLORS: [[f64; 3]; 4] = [
    [0.96, 0.80, 0.68],
    [0.87, 0.67, 0.53],
    [0.65, 0.48, 0.35],
    [0.45, 0.31, 0.22],
];
const SHOE_COLORS: [[f64; 3]; 4] = [
    [0.05, 0.05, 0.05],
    [0.92, 0.92, 0.92],
    [0.75, 0.10, 0.10],
    [0.40, 0.25, 0.12],
];
const HAT_COLOR: [f64; 3] = [0.20, 0.20, 0.22];

/// Limb thickness classes (the "build" attribute), as fractions of height.
const BUILD_THICKNESS: [f64; 3] = [0.020, 0.030, 0.040];

pub fn attribute_schema() -> AttributeSchema {
    AttributeSchema(vec![
        Attribute { name: "shirt_color".into(), classes: SHIRT_COLORS.len() },
        Attribute { name: "pants_color".into(), classes: PANTS_COLORS.len() },
        Attribute { name: "hat_present".into(), classes: 2 },
        Attribute { name: "build".into(), classes: BUILD_THICKNESS.len() },
    ])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_ids: usize,
    pub samples_per_id: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Extra identities rendered as a held-out validation split.
    pub val_ids: usize,
    pub val_samples_per_id: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_ids: 32,
            samples_per_id: 8,
            height: 128,
            width: 64,
            seed: 1,
            val_ids: 8,
            val_samples_per_id: 6,
        }
    }
}

/// Identity-stable appearance parameters.
struct IdentityParams {
    shirt: usize,
    pants: usize,
    skin: usize,
    shoe: usize,
    hat: bool,
    build: usize,
    head_r: f64,
    shoulder_half: f64,
    hip_half: f64,
    torso_len: f64,
    arm_seg: f64,
    leg_seg: f64,
}

fn identity_params(seed: u64, id: u64, h: f64, w: f64) -> IdentityParams {
    let mut rng = stream(seed, &[0x1d, id]);
    IdentityParams {
        shirt: rng.gen_range(0..SHIRT_COLORS.len()),
        pants: rng.gen_range(0..PANTS_COLORS.len()),
        skin: rng.gen_range(0..SKIN_COLORS.len()),
        shoe: rng.gen_range(0..SHOE_COLORS.len()),
        hat: rng.gen_bool(0.5),
        build: rng.gen_range(0..BUILD_THICKNESS.len()),
        head_r: h * rng.gen_range(0.055..0.075),
        shoulder_half: w * rng.gen_range(0.16..0.22),
        hip_half: w * rng.gen_range(0.11..0.15),
        torso_len: h * rng.gen_range(0.26..0.32),
        arm_seg: h * rng.gen_range(0.12..0.15),
        leg_seg: h * rng.gen_range(0.15..0.18),
    }
}

/// Independent deterministic RNG stream derived from a seed and tags.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        x ^= t.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 27;
    }
    ChaCha8Rng::seed_from_u64(x)
}

/// A rendered sample: image in [0,1] RGB, part mask, joints, metadata.
pub struct Rendered {
    pub rgb: Vec<[f64; 3]>, // row-major H*W
    pub mask: Array2<i64>,
    pub joints: Vec<[f64; 3]>,
    pub head_size: f64,
    pub attributes: Vec<Option<usize>>,
}

struct Canvas {
    h: usize,
    w: usize,
    rgb: Vec<[f64; 3]>,
    mask: Array2<i64>,
}

impl Canvas {
    fn new(h: usize, w: usize, bg: [f64; 3]) -> Self {
        Self {
            h,
            w,
            rgb: vec![bg; h * w],
            mask: Array2::zeros((h, w)),
        }
    }

    fn paint(&mut self, x: usize, y: usize, color: [f64; 3], class: i64) {
        self.rgb[y * self.w + x] = color;
        self.mask[(y, x)] = class;
    }

    /// Filled disk.
    fn disk(&mut self, cx: f64, cy: f64, r: f64, color: [f64; 3], class: i64) {
        let x0 = ((cx - r).floor().max(0.0)) as usize;
        let x1 = ((cx + r).ceil().min(self.w as f64 - 1.0)) as usize;
        let y0 = ((cy - r).floor().max(0.0)) as usize;
        let y1 = ((cy + r).ceil().min(self.h as f64 - 1.0)) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r * r {
                    self.paint(x, y, color, class);
                }
            }
        }
    }

    /// Capsule: all pixels within `t` of the segment (a -> b).
    fn capsule(&mut self, a: [f64; 2], b: [f64; 2], t: f64, color: [f64; 3], class: i64) {
        let x0 = ((a[0].min(b[0]) - t).floor().max(0.0)) as usize;
        let x1 = ((a[0].max(b[0]) + t).ceil().min(self.w as f64 - 1.0)) as usize;
        let y0 = ((a[1].min(b[1]) - t).floor().max(0.0)) as usize;
        let y1 = ((a[1].max(b[1]) + t).ceil().min(self.h as f64 - 1.0)) as usize;
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        for y in y0..=y1 {
            for x in x0..=x1 {
                let ap = [x as f64 - a[0], y as f64 - a[1]];
                let s = if len2 > 0.0 {
                    ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let dx = ap[0] - s * ab[0];
                let dy = ap[1] - s * ab[1];
                if dx * dx + dy * dy <= t * t {
                    self.paint(x, y, color, class);
                }
            }
        }
    }

    /// Filled vertical trapezoid: top edge (y_top, ±half_top around cx),
    /// bottom edge (y_bot, ±half_bot).
    fn trapezoid(&mut self, cx: f64, y_top: f64, half_top: f64, y_bot: f64, half_bot: f64, color: [f64; 3], class: i64) {
        let y0 = y_top.floor().max(0.0) as usize;
        let y1 = y_bot.ceil().min(self.h as f64 - 1.0) as usize;
        for y in y0..=y1 {
            let frac = if y_bot > y_top {
                ((y as f64 - y_top) / (y_bot - y_top)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let half = half_top + frac * (half_bot - half_top);
            let x0 = (cx - half).floor().max(0.0) as usize;
            let x1 = (cx + half).ceil().min(self.w as f64 - 1.0) as usize;
            for x in x0..=x1 {
                if (x as f64 - cx).abs() <= half {
                    self.paint(x, y, color, class);
                }
            }
        }
    }
}

/// Renders one sample of one identity. Joints are computed first, clamped
/// into the canvas, and the figure is drawn *through* them, so the joint /
/// mask consistency contract holds by construction.
pub fn render_sample(seed: u64, id: u64, sample: u64, h: usize, w: usize) -> Rendered {
    let idp = identity_params(seed, id, h as f64, w as f64);
    let mut rng = stream(seed, &[0x5a, id, sample]);
    let hf = h as f64;
    let wf = w as f64;
    let thick = (hf * BUILD_THICKNESS[idp.build]).max(1.2);
    let inset = (hf * 0.012).max(1.0);

    // Background with mild per-sample shade variation.
    let shade = rng.gen_range(0.68..0.90);
    let bg = [
        (shade + rng.gen_range(-0.03..0.03_f64)).clamp(0.0, 1.0),
        (shade + rng.gen_range(-0.03..0.03_f64)).clamp(0.0, 1.0),
        (shade + rng.gen_range(-0.03..0.03_f64)).clamp(0.0, 1.0),
    ];

    let clamp_pt = |p: [f64; 2]| -> [f64; 2] {
        [p[0].clamp(2.0, wf - 3.0), p[1].clamp(2.0, hf - 3.0)]
    };

    // Skeleton geometry.
    let cx = wf * 0.5 + rng.gen_range(-wf * 0.06..wf * 0.06);
    let head_top_y = hf * rng.gen_range(0.055..0.085);
    let r = idp.head_r;
    let head_c = [cx, head_top_y + r];
    let neck = [cx, head_top_y + 2.0 * r + 1.5];
    let pelvis_y = neck[1] + idp.torso_len;
    let sh_y = neck[1] + hf * 0.025;

    let r_sh = clamp_pt([cx - (idp.shoulder_half - inset), sh_y]);
    let l_sh = clamp_pt([cx + (idp.shoulder_half - inset), sh_y]);
    let r_hip = clamp_pt([cx - (idp.hip_half - inset * 0.5), pelvis_y]);
    let l_hip = clamp_pt([cx + (idp.hip_half - inset * 0.5), pelvis_y]);

    // Arms: angles measured from straight down; both segments keep a
    // downward component so arm pixels never reach the head, and elbow /
    // wrist joints are clamped strictly above the leg capsules so later
    // drawing passes cannot overwrite them.
    let limb_end = |from: [f64; 2], angle: f64, len: f64| -> [f64; 2] {
        [from[0] + len * angle.sin(), from[1] + len * angle.cos()]
    };
    let deg = std::f64::consts::PI / 180.0;
    let arm_y_max = (pelvis_y - 2.0 * thick).max(2.0).min(hf - 3.0);
    let arm_clamp = |p: [f64; 2]| -> [f64; 2] {
        [p[0].clamp(2.0, wf - 3.0), p[1].clamp(2.0, arm_y_max)]
    };
    let ru_a = rng.gen_range(-40.0..40.0) * deg;
    let rl_a = ru_a + rng.gen_range(-35.0..35.0) * deg;
    let lu_a = rng.gen_range(-40.0..40.0) * deg;
    let ll_a = lu_a + rng.gen_range(-35.0..35.0) * deg;
    let r_elbow = arm_clamp(limb_end(r_sh, ru_a, idp.arm_seg));
    let r_wrist = arm_clamp(limb_end(r_elbow, rl_a, idp.arm_seg));
    let l_elbow = arm_clamp(limb_end(l_sh, lu_a, idp.arm_seg));
    let l_wrist = arm_clamp(limb_end(l_elbow, ll_a, idp.arm_seg));

    // Legs.
    let rk_a = rng.gen_range(-16.0..16.0) * deg;
    let ra_a = rk_a + rng.gen_range(-14.0..14.0) * deg;
    let lk_a = rng.gen_range(-16.0..16.0) * deg;
    let la_a = lk_a + rng.gen_range(-14.0..14.0) * deg;
    let r_knee = clamp_pt(limb_end(r_hip, -rk_a, idp.leg_seg));
    let r_ankle = clamp_pt(limb_end(r_knee, -ra_a, idp.leg_seg));
    let l_knee = clamp_pt(limb_end(l_hip, lk_a, idp.leg_seg));
    let l_ankle = clamp_pt(limb_end(l_knee, la_a, idp.leg_seg));

    // Paint, back to front.
    let mut canvas = Canvas::new(h, w, bg);
    let shirt = SHIRT_COLORS[idp.shirt];
    let pants = PANTS_COLORS[idp.pants];
    canvas.trapezoid(cx, neck[1] - 1.0, idp.shoulder_half, pelvis_y, idp.hip_half, shirt, PART_UPPER);
    canvas.capsule(r_sh, r_elbow, thick, shirt, PART_UPPER);
    canvas.capsule(r_elbow, r_wrist, thick, shirt, PART_UPPER);
    canvas.capsule(l_sh, l_elbow, thick, shirt, PART_UPPER);
    canvas.capsule(l_elbow, l_wrist, thick, shirt, PART_UPPER);
    canvas.capsule(r_hip, r_knee, thick, pants, PART_LOWER);
    canvas.capsule(r_knee, r_ankle, thick, pants, PART_LOWER);
    canvas.capsule(l_hip, l_knee, thick, pants, PART_LOWER);
    canvas.capsule(l_knee, l_ankle, thick, pants, PART_LOWER);
    let shoe_t = (thick * 1.3).max(1.8);
    let shoe = SHOE_COLORS[idp.shoe];
    canvas.capsule(r_ankle, [r_ankle[0] - shoe_t, r_ankle[1] + shoe_t * 0.8], shoe_t, shoe, PART_SHOES);
    canvas.capsule(l_ankle, [l_ankle[0] + shoe_t, l_ankle[1] + shoe_t * 0.8], shoe_t, shoe, PART_SHOES);
    canvas.disk(head_c[0], head_c[1], r, SKIN_COLORS[idp.skin], PART_HEAD);
    if idp.hat {
        canvas.capsule(
            [head_c[0] - r * 0.9, head_c[1] - r * 0.75],
            [head_c[0] + r * 0.9, head_c[1] - r * 0.75],
            r * 0.35,
            HAT_COLOR,
            PART_HEAD,
        );
    }

    let head_top_joint = [head_c[0], head_c[1] - 0.75 * r];
    let order = [
        head_top_joint,
        neck,
        r_sh,
        r_elbow,
        r_wrist,
        l_sh,
        l_elbow,
        l_wrist,
        r_hip,
        r_knee,
        r_ankle,
        l_hip,
        l_knee,
        l_ankle,
    ];
    let joints = order.iter().map(|p| [p[0], p[1], 1.0]).collect();

    Rendered {
        rgb: canvas.rgb,
        mask: canvas.mask,
        joints,
        head_size: 2.0 * r,
        attributes: vec![
            Some(idp.shirt),
            Some(idp.pants),
            Some(idp.hat as usize),
            Some(idp.build),
        ],
    }
}

fn write_png_rgb(path: &Path, rgb: &[[f64; 3]], h: usize, w: usize) -> Result<(), DataError> {
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let p = rgb[y * w + x];
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    (p[0].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (p[1].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (p[2].clamp(0.0, 1.0) * 255.0).round() as u8,
                ]),
            );
        }
    }
    buf.save(path).map_err(|e| DataError::Manifest {
        name: path.display().to_string(),
        reason: format!("png write failed: {e}"),
    })
}

pub fn write_png_mask(path: &Path, mask: &Array2<i64>) -> Result<(), DataError> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Luma([mask[(y, x)] as u8]));
        }
    }
    buf.save(path).map_err(|e| DataError::Manifest {
        name: path.display().to_string(),
        reason: format!("png write failed: {e}"),
    })
}

/// Generates the dataset on disk and returns the manifest path.
pub fn generate_synthetic(out_dir: &Path, cfg: &SynthConfig) -> Result<PathBuf, DataError> {
    if cfg.num_ids < 2 {
        return Err(DataError::Bounds(format!(
            "need at least 2 identities for retrieval, got {}",
            cfg.num_ids
        )));
    }
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("masks"))?;

    let mut records = Vec::new();
    let total_ids = cfg.num_ids + cfg.val_ids;
    for id in 0..total_ids {
        let is_val = id >= cfg.num_ids;
        let n_samples = if is_val { cfg.val_samples_per_id } else { cfg.samples_per_id };
        for s in 0..n_samples {
            let rendered = render_sample(cfg.seed, id as u64, s as u64, cfg.height, cfg.width);
            let img_rel = format!("images/id{id:04}_s{s:02}.png");
            let mask_rel = format!("masks/id{id:04}_s{s:02}.png");
            write_png_rgb(&out_dir.join(&img_rel), &rendered.rgb, cfg.height, cfg.width)?;
            write_png_mask(&out_dir.join(&mask_rel), &rendered.mask)?;
            records.push(SampleRecord {
                image: img_rel,
                person_id: Some(id as i64),
                camera_id: Some((s % 4) as i64),
                attributes: Some(rendered.attributes.clone()),
                joints: Some(rendered.joints.clone()),
                head_size: Some(rendered.head_size),
                mask: Some(mask_rel),
                split: if is_val { Split::Val } else { Split::Train },
            });
        }
    }

    let manifest = DatasetManifest {
        name: format!("synth_{}x{}", cfg.num_ids, cfg.samples_per_id),
        tasks: TaskFlags {
            reid: true,
            attributes: true,
            pose: true,
            segmentation: true,
        },
        attribute_schema: attribute_schema(),
        joints: Some(JointSpec {
            names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            left_right_pairs: JOINT_LR_PAIRS.to_vec(),
        }),
        parts: Some(PartSpec {
            names: PART_NAMES.iter().map(|s| s.to_string()).collect(),
            left_right_pairs: Vec::new(),
        }),
        size: records.len(),
        records,
        root: out_dir.to_path_buf(),
    };
    let path = out_dir.join("manifest.json");
    save_manifest(&manifest, &path)?;
    Ok(path)
}
