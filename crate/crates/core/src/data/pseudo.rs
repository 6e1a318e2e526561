//! Automatic annotation: runs trained pose and segmentation models over a
//! dataset's images and writes their predictions back as training labels,
//! producing a new manifest with the pose and segmentation tasks enabled.

use std::path::Path;

use ndarray::{s, Array2, Array4};

use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::data::manifest::{load_sample, save_manifest, DatasetManifest, JointSpec, PartSpec};
use crate::data::synth::write_png_mask;
use crate::error::{CheckpointError, TrainError};
use crate::model::{Model, TaskSelect};
use crate::trainer::model_from_checkpoint;

/// Batch size for the labeling forward passes.
const CHUNK: usize = 16;

fn require_task(ckpt: &Checkpoint, flag: bool, task: &str) -> Result<(), TrainError> {
    if !flag {
        return Err(TrainError::Checkpoint(CheckpointError::Incompatible(format!(
            "checkpoint trained without a {task} head cannot pseudo-label {task}"
        ))));
    }
    let _ = ckpt;
    Ok(())
}

/// Predicted joints for every record, in each record's own pixel space.
fn predict_joints(
    model: &Model,
    store: &autograd::ParamStore,
    manifest: &DatasetManifest,
    raw_dims: &[(usize, usize)],
) -> Result<Vec<Vec<[f64; 3]>>, TrainError> {
    let h = model.config.backbone.input_height;
    let w = model.config.backbone.input_width;
    let select = TaskSelect {
        pose: true,
        ..TaskSelect::default()
    };
    let indices: Vec<usize> = (0..manifest.records.len()).collect();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(CHUNK) {
        let mut images = Array4::<f64>::zeros((chunk.len(), 3, h, w));
        for (slot, &idx) in chunk.iter().enumerate() {
            let sample = load_sample(manifest, idx, h, w)?;
            images.slice_mut(s![slot, .., .., ..]).assign(&sample.image);
        }
        let mut tape = autograd::Tape::inference();
        let x = tape.constant(images.into_dyn());
        let mut updates = Vec::new();
        let outs = model.forward(&mut tape, store, x, false, select, &mut updates);
        let coords = tape.value(outs.pose_coords.expect("pose selected"));
        for (slot, &idx) in chunk.iter().enumerate() {
            let (rh, rw) = raw_dims[idx];
            let (sx, sy) = (rw as f64 / w as f64, rh as f64 / h as f64);
            let joints = (0..model.config.num_joints)
                .map(|j| [coords[[slot, j, 0]] * sx, coords[[slot, j, 1]] * sy, 1.0])
                .collect();
            out.push(joints);
        }
    }
    Ok(out)
}

/// Predicted class masks for every record, resized (nearest-neighbor) to
/// each record's own resolution.
fn predict_masks(
    model: &Model,
    store: &autograd::ParamStore,
    manifest: &DatasetManifest,
    raw_dims: &[(usize, usize)],
) -> Result<Vec<Array2<i64>>, TrainError> {
    let h = model.config.backbone.input_height;
    let w = model.config.backbone.input_width;
    let select = TaskSelect {
        segmentation: true,
        ..TaskSelect::default()
    };
    let indices: Vec<usize> = (0..manifest.records.len()).collect();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(CHUNK) {
        let mut images = Array4::<f64>::zeros((chunk.len(), 3, h, w));
        for (slot, &idx) in chunk.iter().enumerate() {
            let sample = load_sample(manifest, idx, h, w)?;
            images.slice_mut(s![slot, .., .., ..]).assign(&sample.image);
        }
        let mut tape = autograd::Tape::inference();
        let x = tape.constant(images.into_dyn());
        let mut updates = Vec::new();
        let outs = model.forward(&mut tape, store, x, false, select, &mut updates);
        let logits = tape.value(outs.seg_logits.expect("segmentation selected"));
        let classes = logits.shape()[1];
        for (slot, &idx) in chunk.iter().enumerate() {
            let mut pred = Array2::<i64>::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    let mut best = 0usize;
                    for c in 1..classes {
                        if logits[[slot, c, y, x]] > logits[[slot, best, y, x]] {
                            best = c;
                        }
                    }
                    pred[(y, x)] = best as i64;
                }
            }
            let (rh, rw) = raw_dims[idx];
            let mut resized = Array2::<i64>::zeros((rh, rw));
            for y in 0..rh {
                for x in 0..rw {
                    let sxp = ((x as f64 + 0.5) * w as f64 / rw as f64 - 0.5).round();
                    let syp = ((y as f64 + 0.5) * h as f64 / rh as f64 - 0.5).round();
                    let sxp = (sxp.max(0.0) as usize).min(w - 1);
                    let syp = (syp.max(0.0) as usize).min(h - 1);
                    resized[(y, x)] = pred[(syp, sxp)];
                }
            }
            out.push(resized);
        }
    }
    Ok(out)
}

/// Labels every record of `manifest` with joints predicted by the pose
/// checkpoint and part masks predicted by the segmentation checkpoint,
/// writing mask PNGs and a new manifest (with the pose and segmentation
/// tasks enabled) under `out_dir`. Existing pose/seg annotations are
/// replaced; image paths, identity labels, and attributes carry over.
/// Records keep their original `head_size` (the models do not predict one).
pub fn pseudo_label(
    manifest: &DatasetManifest,
    pose_checkpoint: &Path,
    seg_checkpoint: &Path,
    out_dir: &Path,
) -> Result<DatasetManifest, TrainError> {
    let pose_ckpt = load_checkpoint(pose_checkpoint)?;
    require_task(&pose_ckpt, pose_ckpt.model.tasks.pose, "pose")?;
    let seg_ckpt = load_checkpoint(seg_checkpoint)?;
    require_task(&seg_ckpt, seg_ckpt.model.tasks.segmentation, "segmentation")?;

    let mut raw_dims = Vec::with_capacity(manifest.records.len());
    for (i, rec) in manifest.records.iter().enumerate() {
        let path = manifest.root.join(&rec.image);
        let (w, h) = image::image_dimensions(&path).map_err(|e| {
            TrainError::Data(crate::error::DataError::Record {
                index: i,
                field: "image".to_string(),
                reason: format!("{}: {e}", path.display()),
            })
        })?;
        raw_dims.push((h as usize, w as usize));
    }

    let (pose_model, pose_store) = model_from_checkpoint(&pose_ckpt)?;
    let joints = predict_joints(&pose_model, &pose_store, manifest, &raw_dims)?;
    let (seg_model, seg_store) = model_from_checkpoint(&seg_ckpt)?;
    let masks = predict_masks(&seg_model, &seg_store, manifest, &raw_dims)?;

    std::fs::create_dir_all(out_dir.join("pseudo_masks"))?;
    let mut out = manifest.clone();
    out.name = format!("{}-pseudo", manifest.name);
    out.tasks.pose = true;
    out.tasks.segmentation = true;
    if out.joints.is_none() {
        out.joints = Some(JointSpec {
            names: (0..pose_model.config.num_joints).map(|j| format!("joint_{j:02}")).collect(),
            left_right_pairs: Vec::new(),
        });
    }
    if out.parts.is_none() {
        out.parts = Some(PartSpec {
            names: (0..seg_model.config.seg_classes).map(|c| format!("part_{c}")).collect(),
            left_right_pairs: Vec::new(),
        });
    }
    for (i, rec) in out.records.iter_mut().enumerate() {
        let mask_rel = format!("pseudo_masks/{i:05}.png");
        write_png_mask(&out_dir.join(&mask_rel), &masks[i])?;
        rec.joints = Some(joints[i].clone());
        rec.mask = Some(mask_rel);
        // Point at the original image file from the new manifest's root.
        let abs = manifest.root.join(&rec.image);
        rec.image = abs.to_string_lossy().into_owned();
    }
    out.root = out_dir.to_path_buf();
    save_manifest(&out, &out_dir.join("manifest.json"))?;
    Ok(out)
}
