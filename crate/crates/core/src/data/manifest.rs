//! Dataset manifests: one JSON document per dataset describing task
//! coverage, label schemas, and every sample record.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::heads::AttributeSchema;

/// Which tasks a dataset carries labels for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFlags {
    #[serde(default)]
    pub reid: bool,
    #[serde(default)]
    pub attributes: bool,
    #[serde(default)]
    pub pose: bool,
    #[serde(default)]
    pub segmentation: bool,
}

/// Joint naming and the left/right pairs swapped under horizontal flips.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSpec {
    pub names: Vec<String>,
    pub left_right_pairs: Vec<(usize, usize)>,
}

/// Part-class naming and left/right pairs (empty for symmetric class sets).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartSpec {
    pub names: Vec<String>,
    pub left_right_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Query,
    Gallery,
    Val,
}

/// One sample. Optional fields are present iff the manifest's task flags
/// require them (checked by [`DatasetManifest::validate`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_id: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<i64>,
    /// One entry per schema attribute; `null` marks a missing label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<Option<usize>>>,
    /// Per joint: [x, y, visibility] in image pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub tasks: TaskFlags,
    #[serde(default = "empty_schema")]
    pub attribute_schema: AttributeSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<JointSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<PartSpec>,
    pub size: usize,
    pub records: Vec<SampleRecord>,
    /// Directory the manifest was loaded from; record paths are relative
    /// to it. Not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

fn empty_schema() -> AttributeSchema {
    AttributeSchema(Vec::new())
}

/// How many record files are checked for existence at load time.
const SPOT_CHECK: usize = 5;

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.root = path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.validate()?;
    for (i, rec) in manifest.records.iter().take(SPOT_CHECK).enumerate() {
        let img = manifest.root.join(&rec.image);
        if !img.exists() {
            return Err(DataError::Record {
                index: i,
                field: "image".to_string(),
                reason: format!("file not found: {}", img.display()),
            });
        }
        if let Some(mask) = &rec.mask {
            let m = manifest.root.join(mask);
            if !m.exists() {
                return Err(DataError::Record {
                    index: i,
                    field: "mask".to_string(),
                    reason: format!("file not found: {}", m.display()),
                });
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text)?;
    Ok(())
}

impl DatasetManifest {
    /// Checks every record against the declared schemas; errors name the
    /// offending record index and field.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.size != self.records.len() {
            return Err(DataError::Manifest {
                name: self.name.clone(),
                reason: format!("size field says {} but {} records present", self.size, self.records.len()),
            });
        }
        self.attribute_schema.validate().map_err(|reason| DataError::Manifest {
            name: self.name.clone(),
            reason,
        })?;
        if self.tasks.attributes && self.attribute_schema.is_empty() {
            return Err(DataError::Manifest {
                name: self.name.clone(),
                reason: "attributes task declared but the attribute schema is empty".to_string(),
            });
        }
        if self.tasks.pose && self.joints.is_none() {
            return Err(DataError::Manifest {
                name: self.name.clone(),
                reason: "pose task declared but no joint specification given".to_string(),
            });
        }
        if self.tasks.segmentation && self.parts.is_none() {
            return Err(DataError::Manifest {
                name: self.name.clone(),
                reason: "segmentation task declared but no part specification given".to_string(),
            });
        }
        if let Some(js) = &self.joints {
            for &(a, b) in &js.left_right_pairs {
                if a >= js.names.len() || b >= js.names.len() {
                    return Err(DataError::Manifest {
                        name: self.name.clone(),
                        reason: format!("joint pair ({a},{b}) out of range for {} joints", js.names.len()),
                    });
                }
            }
        }

        let err = |index: usize, field: &str, reason: String| {
            Err(DataError::Record {
                index,
                field: field.to_string(),
                reason,
            })
        };
        for (i, rec) in self.records.iter().enumerate() {
            if self.tasks.reid {
                if rec.person_id.is_none() {
                    return err(i, "person_id", "required by the reid task flag".into());
                }
                if rec.camera_id.is_none() {
                    return err(i, "camera_id", "required by the reid task flag".into());
                }
            }
            if self.tasks.attributes {
                match &rec.attributes {
                    None => return err(i, "attributes", "required by the attributes task flag".into()),
                    Some(labels) => {
                        if labels.len() != self.attribute_schema.len() {
                            return err(
                                i,
                                "attributes",
                                format!(
                                    "{} labels but the schema has {} attributes",
                                    labels.len(),
                                    self.attribute_schema.len()
                                ),
                            );
                        }
                        for (a, l) in labels.iter().enumerate() {
                            if let Some(l) = l {
                                let classes = self.attribute_schema.0[a].classes;
                                if *l >= classes {
                                    return err(
                                        i,
                                        "attributes",
                                        format!("label {l} out of range for `{}` ({} classes)", self.attribute_schema.0[a].name, classes),
                                    );
                                }
                            }
                        }
                    }
                }
            }
            if self.tasks.pose {
                let n_joints = self.joints.as_ref().unwrap().names.len();
                match &rec.joints {
                    None => return err(i, "joints", "required by the pose task flag".into()),
                    Some(j) if j.len() != n_joints => {
                        return err(i, "joints", format!("{} joints but the spec declares {n_joints}", j.len()));
                    }
                    _ => {}
                }
                match rec.head_size {
                    None => return err(i, "head_size", "pose records must carry head_size".into()),
                    Some(h) if h <= 0.0 => return err(i, "head_size", format!("must be positive, got {h}")),
                    _ => {}
                }
            }
            if self.tasks.segmentation && rec.mask.is_none() {
                return err(i, "mask", "required by the segmentation task flag".into());
            }
        }
        Ok(())
    }

    /// Distinct person ids among records of a split (junk ids excluded).
    pub fn identities(&self, split: Split) -> BTreeSet<i64> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .filter_map(|r| r.person_id)
            .filter(|&p| p >= 0)
            .collect()
    }

    /// Indices of records in a split.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }
}

/// A sample materialized in memory, normalized and augmentation-ready.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    /// (3, H, W), normalized to roughly [-1, 1].
    pub image: Array3<f64>,
    pub person_id: Option<i64>,
    pub camera_id: Option<i64>,
    pub attributes: Option<Vec<Option<usize>>>,
    /// (J, 2) pixel coordinates.
    pub joints: Option<Array2<f64>>,
    pub visible: Option<Vec<bool>>,
    pub head_size: Option<f64>,
    /// (H, W) class labels, -1 never used; 255 = ignore.
    pub mask: Option<Array2<i64>>,
}

/// Input normalization constants (documented; images load as value/255).
pub const NORM_MEAN: f64 = 0.5;
pub const NORM_STD: f64 = 0.5;

/// Loads a single-channel class-index PNG at its stored resolution.
pub fn load_mask_png(path: &Path) -> Result<Array2<i64>, DataError> {
    let m = image::open(path)
        .map_err(|e| DataError::Manifest {
            name: path.display().to_string(),
            reason: format!("mask load failed: {e}"),
        })?
        .to_luma8();
    let (w, h) = (m.width() as usize, m.height() as usize);
    let mut out = Array2::<i64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[(y, x)] = m.get_pixel(x as u32, y as u32)[0] as i64;
        }
    }
    Ok(out)
}

/// Loads and normalizes one record, resizing to `(height, width)` when the
/// stored image differs (bilinear for images, nearest for masks, with joint
/// coordinates and head size rescaled accordingly).
pub fn load_sample(
    manifest: &DatasetManifest,
    index: usize,
    height: usize,
    width: usize,
) -> Result<LoadedSample, DataError> {
    let rec = &manifest.records[index];
    let img_path = manifest.root.join(&rec.image);
    let img = image::open(&img_path)
        .map_err(|e| DataError::Record {
            index,
            field: "image".to_string(),
            reason: format!("{}: {e}", img_path.display()),
        })?
        .to_rgb8();
    let (w0, h0) = (img.width() as usize, img.height() as usize);
    let img = if (h0, w0) == (height, width) {
        img
    } else {
        image::imageops::resize(
            &img,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        )
    };
    let mut arr = Array3::<f64>::zeros((3, height, width));
    for y in 0..height {
        for x in 0..width {
            let p = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                arr[(c, y, x)] = (p[c] as f64 / 255.0 - NORM_MEAN) / NORM_STD;
            }
        }
    }

    let sx = width as f64 / w0 as f64;
    let sy = height as f64 / h0 as f64;
    let (joints, visible) = match &rec.joints {
        Some(list) => {
            let mut coords = Array2::<f64>::zeros((list.len(), 2));
            let mut vis = Vec::with_capacity(list.len());
            for (j, t) in list.iter().enumerate() {
                coords[(j, 0)] = t[0] * sx;
                coords[(j, 1)] = t[1] * sy;
                vis.push(t[2] > 0.5);
            }
            (Some(coords), Some(vis))
        }
        None => (None, None),
    };
    // Head size scales with the diagonal so PCKh thresholds stay consistent.
    let diag_scale = ((width as f64).hypot(height as f64)) / ((w0 as f64).hypot(h0 as f64));
    let head_size = rec.head_size.map(|h| h * diag_scale);

    let mask = match &rec.mask {
        Some(rel) => {
            let mask_path = manifest.root.join(rel);
            let m = image::open(&mask_path)
                .map_err(|e| DataError::Record {
                    index,
                    field: "mask".to_string(),
                    reason: format!("{}: {e}", mask_path.display()),
                })?
                .to_luma8();
            let (mw, mh) = (m.width() as usize, m.height() as usize);
            let mut out = Array2::<i64>::zeros((height, width));
            for y in 0..height {
                for x in 0..width {
                    // Nearest-neighbor lookup in source coordinates.
                    let sxp = ((x as f64 + 0.5) * mw as f64 / width as f64 - 0.5).round();
                    let syp = ((y as f64 + 0.5) * mh as f64 / height as f64 - 0.5).round();
                    let sxp = (sxp.max(0.0) as usize).min(mw - 1);
                    let syp = (syp.max(0.0) as usize).min(mh - 1);
                    out[(y, x)] = m.get_pixel(sxp as u32, syp as u32)[0] as i64;
                }
            }
            Some(out)
        }
        None => None,
    };

    Ok(LoadedSample {
        image: arr,
        person_id: rec.person_id,
        camera_id: rec.camera_id,
        attributes: rec.attributes.clone(),
        joints,
        visible,
        head_size,
        mask,
    })
}
