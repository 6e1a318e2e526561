//! Best-effort converters from common dataset directory layouts into the
//! manifest format. These are plumbing: they validate layout structure and
//! file naming, not dataset contents.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::data::manifest::{
    load_mask_png, save_manifest, DatasetManifest, JointSpec, PartSpec, SampleRecord, Split,
    TaskFlags,
};
use crate::data::ops::{lip_to_five_mapping, merge_classes};
use crate::data::synth;
use crate::error::DataError;
use crate::heads::AttributeSchema;

/// Parses a Market-style filename `0002_c1s1_000451_03.jpg` into
/// (person id, camera id). Distractor images use id -1.
fn parse_market_name(stem: &str) -> Option<(i64, i64)> {
    let mut parts = stem.split('_');
    let pid: i64 = parts.next()?.parse().ok()?;
    let cam_field = parts.next()?;
    let cam_str = cam_field.strip_prefix('c')?;
    let cam_end = cam_str.find(|c: char| !c.is_ascii_digit()).unwrap_or(cam_str.len());
    let cam: i64 = cam_str[..cam_end].parse().ok()?;
    Some((pid, cam))
}

fn listed_images(dir: &Path) -> Result<Vec<String>, DataError> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        let lower = name.to_ascii_lowercase();
        if lower.ends_with(".jpg") || lower.ends_with(".jpeg") || lower.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Converts a Market-layout directory (`bounding_box_train/`, `query/`,
/// `bounding_box_test/`) into a ReID manifest written to
/// `root/manifest.json`.
pub fn convert_market(root: &Path) -> Result<DatasetManifest, DataError> {
    let subdirs = [
        ("bounding_box_train", Split::Train),
        ("query", Split::Query),
        ("bounding_box_test", Split::Gallery),
    ];
    let missing: Vec<&str> = subdirs
        .iter()
        .filter(|(d, _)| !root.join(d).is_dir())
        .map(|(d, _)| *d)
        .collect();
    if !missing.is_empty() {
        return Err(DataError::Manifest {
            name: root.display().to_string(),
            reason: format!(
                "not a Market layout: missing subdirectories {}",
                missing.join(", ")
            ),
        });
    }

    let mut records = Vec::new();
    for (dir, split) in subdirs {
        for name in listed_images(&root.join(dir))? {
            let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(&name);
            let Some((pid, cam)) = parse_market_name(stem) else {
                return Err(DataError::Manifest {
                    name: format!("{dir}/{name}"),
                    reason: "filename does not match <pid>_c<cam>... pattern".into(),
                });
            };
            records.push(SampleRecord {
                image: format!("{dir}/{name}"),
                person_id: Some(pid),
                camera_id: Some(cam),
                attributes: None,
                joints: None,
                head_size: None,
                mask: None,
                split,
            });
        }
    }
    if records.is_empty() {
        return Err(DataError::Manifest {
            name: root.display().to_string(),
            reason: "layout directories contain no images".into(),
        });
    }

    let manifest = DatasetManifest {
        name: "market".into(),
        tasks: TaskFlags { reid: true, attributes: false, pose: false, segmentation: false },
        attribute_schema: AttributeSchema(Vec::new()),
        joints: None,
        parts: None,
        size: records.len(),
        records,
        root: root.to_path_buf(),
    };
    save_manifest(&manifest, &root.join("manifest.json"))?;
    Ok(manifest)
}

/// One entry of the prepared MPII-style index: a JSON list of these objects
/// sits next to an `images/` directory.
#[derive(Debug, Deserialize)]
pub struct PoseIndexEntry {
    pub image: String,
    /// [x, y, visibility] per joint.
    pub joints: Vec<[f64; 3]>,
    pub head_size: f64,
}

/// Converts a prepared pose layout: `root/index.json` (list of
/// `PoseIndexEntry`) plus an `images/` directory. Joint names may be given
/// in `root/joints.json` (list of strings); otherwise generic names are used.
pub fn convert_pose_index(root: &Path) -> Result<DatasetManifest, DataError> {
    let index_path = root.join("index.json");
    if !index_path.is_file() {
        return Err(DataError::Manifest {
            name: root.display().to_string(),
            reason: "not a pose-index layout: missing index.json".into(),
        });
    }
    let text = std::fs::read_to_string(&index_path)?;
    let entries: Vec<PoseIndexEntry> = serde_json::from_str(&text).map_err(|e| {
        DataError::Manifest {
            name: index_path.display().to_string(),
            reason: format!("parse failed: {e}"),
        }
    })?;
    if entries.is_empty() {
        return Err(DataError::Manifest {
            name: index_path.display().to_string(),
            reason: "index.json lists no entries".into(),
        });
    }
    let num_joints = entries[0].joints.len();
    let names: Vec<String> = match std::fs::read_to_string(root.join("joints.json")) {
        Ok(t) => serde_json::from_str(&t).map_err(|e| DataError::Manifest {
            name: "joints.json".into(),
            reason: format!("parse failed: {e}"),
        })?,
        Err(_) => (0..num_joints).map(|j| format!("joint{j}")).collect(),
    };
    let records: Vec<SampleRecord> = entries
        .into_iter()
        .map(|e| SampleRecord {
            image: e.image,
            person_id: None,
            camera_id: None,
            attributes: None,
            joints: Some(e.joints),
            head_size: Some(e.head_size),
            mask: None,
            split: Split::Train,
        })
        .collect();

    let manifest = DatasetManifest {
        name: "pose_index".into(),
        tasks: TaskFlags { reid: false, attributes: false, pose: true, segmentation: false },
        attribute_schema: AttributeSchema(Vec::new()),
        joints: Some(JointSpec { names, left_right_pairs: Vec::new() }),
        parts: None,
        size: records.len(),
        records,
        root: root.to_path_buf(),
    };
    save_manifest(&manifest, &root.join("manifest.json"))?;
    Ok(manifest)
}

/// Converts a LIP-style layout (`images/` plus `masks/` holding 20-class
/// PNGs with matching stems) into a 5-class segmentation manifest. Merged
/// masks are written under `merged_masks/`.
pub fn convert_lip(
    root: &Path,
    mapping: Option<BTreeMap<i64, i64>>,
) -> Result<DatasetManifest, DataError> {
    let images = root.join("images");
    let masks = root.join("masks");
    let missing: Vec<&str> = [("images", &images), ("masks", &masks)]
        .iter()
        .filter(|(_, p)| !p.is_dir())
        .map(|(n, _)| *n)
        .collect();
    if !missing.is_empty() {
        return Err(DataError::Manifest {
            name: root.display().to_string(),
            reason: format!("not a LIP layout: missing subdirectories {}", missing.join(", ")),
        });
    }
    let mapping = mapping.unwrap_or_else(lip_to_five_mapping);
    std::fs::create_dir_all(root.join("merged_masks"))?;

    let mut records = Vec::new();
    for name in listed_images(&images)? {
        let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(&name);
        let mask_name = format!("{stem}.png");
        let mask_path = masks.join(&mask_name);
        if !mask_path.is_file() {
            return Err(DataError::Manifest {
                name: format!("images/{name}"),
                reason: format!("missing matching mask masks/{mask_name}"),
            });
        }
        let mask = load_mask_png(&mask_path)?;
        let merged = merge_classes(&mask, &mapping)?;
        let merged_rel = format!("merged_masks/{mask_name}");
        synth::write_png_mask(&root.join(&merged_rel), &merged)?;
        records.push(SampleRecord {
            image: format!("images/{name}"),
            person_id: None,
            camera_id: None,
            attributes: None,
            joints: None,
            head_size: None,
            mask: Some(merged_rel),
            split: Split::Train,
        });
    }
    if records.is_empty() {
        return Err(DataError::Manifest {
            name: root.display().to_string(),
            reason: "images/ contains no images".into(),
        });
    }

    let manifest = DatasetManifest {
        name: "lip5".into(),
        tasks: TaskFlags { reid: false, attributes: false, pose: false, segmentation: true },
        attribute_schema: AttributeSchema(Vec::new()),
        joints: None,
        parts: Some(PartSpec {
            names: synth::PART_NAMES.iter().map(|s| s.to_string()).collect(),
            left_right_pairs: Vec::new(),
        }),
        size: records.len(),
        records,
        root: root.to_path_buf(),
    };
    save_manifest(&manifest, &root.join("manifest.json"))?;
    Ok(manifest)
}
