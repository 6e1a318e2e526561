//! Joint optimization: loads the configured datasets, plans interleaved
//! batches, routes each batch to the losses its dataset supports, sums them
//! with static weights, and steps Adam — plus inference-mode evaluation and
//! checkpoint-scoped initialization for pretrain/fine-tune studies.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use autograd::adam::Adam;
use autograd::nn::apply_buffer_updates;
use autograd::{ParamStore, Tape};
use ndarray::{s, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{init_from_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::augment::{augment, AugmentConfig};
use crate::data::batch::{interleave, make_pk_batches, make_plain_batches};
use crate::data::manifest::{
    load_manifest, load_sample, DatasetManifest, LoadedSample, Split,
};
use crate::data::ops::limit_identities;
use crate::data::synth::stream;
use crate::error::{CheckpointError, ConfigError, DataError, TrainError};
use crate::losses::{
    attribute_ce, batch_hard_triplet, bootstrapped_ce, combine, person_ce, pose_l2, LossBundle,
    LossOutcome, MarginMode, LOSS_NAMES,
};
use crate::metrics::{attribute_eval, pckh, reid_eval, seg_eval, MetricReport, RetrievalSet, JUNK_ID};
use crate::model::{Model, ModelConfig, SizeReport, TaskSelect};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Constant learning rate for the first `constant_frac` of training, then
/// exponential decay reaching `final_factor * base` at the last step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    pub constant_frac: f64,
    pub final_factor: f64,
}

impl ScheduleConfig {
    pub fn with_steps(total_steps: usize) -> Self {
        Self {
            total_steps,
            constant_frac: 2.0 / 3.0,
            final_factor: 0.01,
        }
    }

    pub fn lr_at(&self, base: f64, step: usize) -> f64 {
        let constant = ((self.total_steps as f64) * self.constant_frac).floor() as usize;
        if step < constant || self.total_steps <= constant {
            return base;
        }
        let progress = (step - constant + 1) as f64 / (self.total_steps - constant) as f64;
        base * self.final_factor.powf(progress)
    }
}

fn default_p() -> usize {
    8
}
fn default_k() -> usize {
    4
}
fn default_batch() -> usize {
    32
}

/// One training dataset: its manifest and how to batch and supervise it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub manifest: PathBuf,
    /// Subset of [`LOSS_NAMES`] active for batches from this dataset.
    pub losses: Vec<String>,
    /// Identities per batch (used when `triplet` is active).
    #[serde(default = "default_p")]
    pub p: usize,
    /// Samples per identity.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Batch size for datasets without identity-balanced batching.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "AugmentConfig::none")]
    pub augment: AugmentConfig,
    /// Restrict the training split to this many identities.
    #[serde(default)]
    pub limit_identities: Option<usize>,
}

impl DatasetSpec {
    pub fn new(manifest: PathBuf, losses: &[&str]) -> Self {
        Self {
            manifest,
            losses: losses.iter().map(|s| s.to_string()).collect(),
            p: default_p(),
            k: default_k(),
            batch_size: default_batch(),
            augment: AugmentConfig::none(),
            limit_identities: None,
        }
    }

    fn uses(&self, loss: &str) -> bool {
        self.losses.iter().any(|l| l == loss)
    }

    fn uses_pk(&self) -> bool {
        self.uses("triplet")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub datasets: Vec<DatasetSpec>,
    /// Per-loss weights; anything unlisted weighs 1.0.
    #[serde(default)]
    pub loss_weights: BTreeMap<String, f64>,
    #[serde(default = "default_margin")]
    pub margin: MarginMode,
    /// Hard-pixel fraction for the bootstrapped segmentation loss.
    #[serde(default = "default_keep")]
    pub keep_fraction: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Warm-start checkpoint; `init_scopes` selects which parameter scopes
    /// to copy (empty list = everything).
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub init_scopes: Vec<String>,
}

fn default_margin() -> MarginMode {
    MarginMode::SoftPlus
}
fn default_keep() -> f64 {
    0.25
}

/// One logged training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub dataset: String,
    pub lr: f64,
    pub bundle: LossBundle,
}

/// Step-by-step record of a run, with optional evaluation snapshots.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub evals: Vec<(usize, MetricReport)>,
}

impl RunLog {
    /// CSV with one column per known loss; inactive losses are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,dataset,lr");
        for name in LOSS_NAMES {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",total\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}", row.step, row.dataset, row.lr));
            for name in LOSS_NAMES {
                out.push(',');
                let cell = row
                    .bundle
                    .parts
                    .iter()
                    .find(|(n, _)| n == name)
                    .and_then(|(_, v)| *v);
                if let Some(v) = cell {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push_str(&format!(",{}\n", row.bundle.total));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// A dataset loaded into memory and ready to batch.
struct ActiveDataset {
    name: String,
    spec: DatasetSpec,
    samples: Vec<LoadedSample>,
    /// Person id per sample (junk-free for PK datasets).
    pids: Vec<i64>,
    /// Global classification label per sample, when `person_ce` is active.
    person_labels: Option<Vec<usize>>,
    select: TaskSelect,
    joint_lr: Vec<(usize, usize)>,
    part_lr: Vec<(usize, usize)>,
}

fn invalid(field: &str, reason: String) -> TrainError {
    TrainError::Config(ConfigError::InvalidField {
        field: field.to_string(),
        reason,
    })
}

fn check_dataset_spec(
    spec: &DatasetSpec,
    manifest: &DatasetManifest,
    model: &ModelConfig,
) -> Result<(), TrainError> {
    if spec.losses.is_empty() {
        return Err(invalid("datasets.losses", format!("dataset `{}` has no active losses", manifest.name)));
    }
    for loss in &spec.losses {
        if !LOSS_NAMES.contains(&loss.as_str()) {
            return Err(invalid(
                "datasets.losses",
                format!("unknown loss `{loss}`; known: {}", LOSS_NAMES.join(", ")),
            ));
        }
        let (data_ok, model_ok, task) = match loss.as_str() {
            "triplet" => (manifest.tasks.reid, model.tasks.reid, "reid"),
            "person_ce" => (manifest.tasks.reid, model.tasks.reid, "reid"),
            "attribute_ce" => (manifest.tasks.attributes, model.tasks.attributes, "attributes"),
            "pose_l2" => (manifest.tasks.pose, model.tasks.pose, "pose"),
            "seg_bce" => (manifest.tasks.segmentation, model.tasks.segmentation, "segmentation"),
            _ => unreachable!("loss names checked above"),
        };
        if !data_ok {
            return Err(invalid(
                "datasets.losses",
                format!("dataset `{}` lacks the {task} task needed by loss `{loss}`", manifest.name),
            ));
        }
        if !model_ok {
            return Err(invalid(
                "datasets.losses",
                format!("the model has no {task} task but dataset `{}` activates loss `{loss}`", manifest.name),
            ));
        }
    }
    if spec.uses_pk() && (spec.p < 2 || spec.k < 1) {
        return Err(invalid(
            "datasets.p",
            format!("identity-balanced batching needs p >= 2 and k >= 1, got p={} k={}", spec.p, spec.k),
        ));
    }
    if !spec.uses_pk() && spec.batch_size == 0 {
        return Err(invalid("datasets.batch_size", "must be positive".into()));
    }
    if spec.augment.affine_prob > 0.0 && !(manifest.tasks.pose || manifest.tasks.segmentation) {
        return Err(invalid(
            "datasets.augment.affine_prob",
            format!(
                "dataset `{}` supports neither pose nor segmentation; affine augmentation is reserved for those tasks",
                manifest.name
            ),
        ));
    }
    Ok(())
}

fn select_for(spec: &DatasetSpec) -> TaskSelect {
    TaskSelect {
        reid: spec.uses("triplet") || spec.uses("person_ce"),
        attributes: spec.uses("attribute_ce"),
        pose: spec.uses("pose_l2"),
        segmentation: spec.uses("seg_bce"),
    }
}

/// Loads every training sample of every dataset into memory and resolves the
/// global person-label space. Returns the datasets plus the label count
/// demanded by `person_ce` (0 when unused).
fn prepare_datasets(config: &TrainConfig) -> Result<(Vec<ActiveDataset>, usize), TrainError> {
    let h = config.model.backbone.input_height;
    let w = config.model.backbone.input_width;
    let mut active = Vec::new();
    let mut label_offset = 0usize;
    for spec in &config.datasets {
        let mut manifest = load_manifest(&spec.manifest)?;
        if let Some(n) = spec.limit_identities {
            manifest = limit_identities(&manifest, n, config.seed)?;
        }
        check_dataset_spec(spec, &manifest, &config.model)?;

        let select = select_for(spec);
        let mut indices = manifest.split_indices(Split::Train);
        if select.reid {
            // Identity supervision can't use unlabeled or junk records.
            indices.retain(|&i| matches!(manifest.records[i].person_id, Some(p) if p != JUNK_ID));
        }
        if indices.is_empty() {
            return Err(TrainError::Data(DataError::Composition(format!(
                "dataset `{}` has no usable training records",
                manifest.name
            ))));
        }
        if spec.uses_pk() {
            let ids: BTreeSet<i64> = indices
                .iter()
                .filter_map(|&i| manifest.records[i].person_id)
                .collect();
            if ids.len() < spec.p {
                return Err(TrainError::Data(DataError::Composition(format!(
                    "dataset `{}` has {} identities but batches need p={}",
                    manifest.name,
                    ids.len(),
                    spec.p
                ))));
            }
        }

        let mut samples = Vec::with_capacity(indices.len());
        let mut pids = Vec::with_capacity(indices.len());
        for &i in &indices {
            samples.push(load_sample(&manifest, i, h, w)?);
            pids.push(manifest.records[i].person_id.unwrap_or(JUNK_ID));
        }

        let person_labels = if spec.uses("person_ce") {
            let ids: BTreeSet<i64> = pids.iter().copied().filter(|&p| p != JUNK_ID).collect();
            let map: BTreeMap<i64, usize> = ids
                .iter()
                .enumerate()
                .map(|(l, &pid)| (pid, label_offset + l))
                .collect();
            let labels = pids.iter().map(|pid| map[pid]).collect();
            label_offset += ids.len();
            Some(labels)
        } else {
            None
        };

        active.push(ActiveDataset {
            name: manifest.name.clone(),
            spec: spec.clone(),
            samples,
            pids,
            person_labels,
            select,
            joint_lr: manifest
                .joints
                .as_ref()
                .map(|j| j.left_right_pairs.clone())
                .unwrap_or_default(),
            part_lr: manifest
                .parts
                .as_ref()
                .map(|p| p.left_right_pairs.clone())
                .unwrap_or_default(),
        });
    }
    Ok((active, label_offset))
}

/// What [`train`] hands back besides its on-disk outputs.
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: RunLog,
    pub size: SizeReport,
    /// The model configuration actually trained (person count resolved).
    pub resolved_model: ModelConfig,
}

/// Runs the configured training and writes `config.resolved.json`,
/// `log.csv`, and `checkpoint.ckpt` (plus cadence checkpoints) to `run_dir`.
pub fn train(config: &TrainConfig, run_dir: &Path) -> Result<TrainOutcome, TrainError> {
    std::fs::create_dir_all(run_dir)?;
    let (active, needed_persons) = prepare_datasets(config)?;

    let mut resolved_model = config.model.clone();
    if resolved_model.num_persons == 0 {
        resolved_model.num_persons = needed_persons;
    } else if needed_persons > resolved_model.num_persons {
        return Err(invalid(
            "num_persons",
            format!(
                "model declares {} persons but the datasets label {}",
                resolved_model.num_persons, needed_persons
            ),
        ));
    }

    let mut store = ParamStore::new();
    let model = Model::register(&mut store, &resolved_model, config.seed)?;
    if let Some(ckpt_path) = &config.init_checkpoint {
        let ckpt = load_checkpoint(ckpt_path)?;
        let scopes: Vec<String> = if config.init_scopes.is_empty() {
            vec![String::new()]
        } else {
            config.init_scopes.clone()
        };
        init_from_checkpoint(&mut store, &ckpt, &scopes)?;
    }
    let size = model.size_report(&store);

    let mut resolved = config.clone();
    resolved.model = resolved_model.clone();
    let resolved_json = serde_json::to_string_pretty(&resolved)
        .map_err(|e| TrainError::Eval(format!("config serialization failed: {e}")))?;
    std::fs::write(run_dir.join("config.resolved.json"), resolved_json)?;

    let sizes: Vec<usize> = active.iter().map(|d| d.samples.len()).collect();
    let plan = interleave(&sizes, config.schedule.total_steps, config.seed, |ds, epoch| {
        let d = &active[ds];
        let mut rng = stream(config.seed, &[0x6b, ds as u64, epoch as u64]);
        if d.spec.uses_pk() {
            let recs: Vec<(usize, i64)> = d.pids.iter().copied().enumerate().collect();
            make_pk_batches(&recs, d.spec.p, d.spec.k, &mut rng)
                .expect("PK preconditions checked during preparation")
        } else {
            let idx: Vec<usize> = (0..d.samples.len()).collect();
            make_plain_batches(&idx, d.spec.batch_size, &mut rng)
        }
    });

    let h = resolved_model.backbone.input_height;
    let w = resolved_model.backbone.input_width;
    let normalizer = (h as f64).hypot(w as f64);
    let mut adam = Adam::new(config.optimizer.beta1, config.optimizer.beta2, config.optimizer.eps);
    let mut log = RunLog::default();

    for (step, pb) in plan.iter().enumerate() {
        let d = &active[pb.dataset];
        let b = pb.records.len();

        let mut images = Array4::<f64>::zeros((b, 3, h, w));
        let mut batch: Vec<LoadedSample> = Vec::with_capacity(b);
        for (slot, &rec) in pb.records.iter().enumerate() {
            let mut s = d.samples[rec].clone();
            let mut rng = stream(config.seed, &[0xa9, pb.dataset as u64, step as u64, slot as u64]);
            augment(&mut s, &d.spec.augment, &d.joint_lr, &d.part_lr, &mut rng);
            images.slice_mut(s![slot, .., .., ..]).assign(&s.image);
            batch.push(s);
        }

        let mut tape = Tape::new();
        let x = tape.constant(images.into_dyn());
        let mut updates = Vec::new();
        let out = model.forward(&mut tape, &store, x, true, d.select, &mut updates);

        let weight = |name: &str| config.loss_weights.get(name).copied().unwrap_or(1.0);
        let mut parts: Vec<(String, LossOutcome, f64)> = Vec::new();
        if d.spec.uses("triplet") {
            let emb = out.embedding.expect("reid selected");
            let pids: Vec<i64> = pb.records.iter().map(|&r| d.pids[r]).collect();
            let node = batch_hard_triplet(&mut tape, emb, &pids, config.margin)?;
            parts.push(("triplet".into(), LossOutcome::Value(node), weight("triplet")));
        }
        if d.spec.uses("person_ce") {
            let probs = out.person_probs.expect("classification head registered");
            let all = d.person_labels.as_ref().expect("labels resolved");
            let labels: Vec<usize> = pb.records.iter().map(|&r| all[r]).collect();
            let node = person_ce(&mut tape, probs, &labels)?;
            parts.push(("person_ce".into(), LossOutcome::Value(node), weight("person_ce")));
        }
        if d.spec.uses("attribute_ce") {
            let probs = out.attribute_probs.as_ref().expect("attribute head selected");
            let n_attr = resolved_model.attribute_schema.len();
            let mut labels: Vec<Vec<Option<usize>>> = vec![Vec::with_capacity(b); n_attr];
            for s in &batch {
                for a in 0..n_attr {
                    labels[a].push(s.attributes.as_ref().and_then(|v| v[a]));
                }
            }
            let outcome = attribute_ce(&mut tape, probs, &labels)?;
            parts.push(("attribute_ce".into(), outcome, weight("attribute_ce")));
        }
        if d.spec.uses("pose_l2") {
            let coords = out.pose_coords.expect("pose head selected");
            let j = resolved_model.num_joints;
            let mut gt = Array3::<f64>::zeros((b, j, 2));
            let mut vis = Array2::<bool>::from_elem((b, j), false);
            for (i, s) in batch.iter().enumerate() {
                let joints = s.joints.as_ref().expect("pose dataset records carry joints");
                let v = s.visible.as_ref().expect("joints imply visibility");
                for jj in 0..j {
                    gt[(i, jj, 0)] = joints[(jj, 0)];
                    gt[(i, jj, 1)] = joints[(jj, 1)];
                    vis[(i, jj)] = v[jj];
                }
            }
            let outcome = pose_l2(&mut tape, coords, &gt, &vis, normalizer);
            parts.push(("pose_l2".into(), outcome, weight("pose_l2")));
        }
        if d.spec.uses("seg_bce") {
            let logits = out.seg_logits.expect("segmentation head selected");
            let mut masks = Array3::<i64>::zeros((b, h, w));
            for (i, s) in batch.iter().enumerate() {
                let m = s.mask.as_ref().expect("segmentation dataset records carry masks");
                masks.slice_mut(s![i, .., ..]).assign(m);
            }
            let outcome = bootstrapped_ce(&mut tape, logits, &masks, config.keep_fraction)?;
            parts.push(("seg_bce".into(), outcome, weight("seg_bce")));
        }

        let (total, bundle) = combine(&mut tape, parts);
        for (name, value) in &bundle.parts {
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        step,
                        dataset: d.name.clone(),
                        loss: name.clone(),
                    });
                }
            }
        }
        if !bundle.total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                dataset: d.name.clone(),
                loss: "total".into(),
            });
        }

        let lr = config.schedule.lr_at(config.optimizer.lr, step);
        if let Some(total) = total {
            let grads = tape.backward(total);
            grads.accumulate_into(&tape, &mut store);
            adam.step(&mut store, lr);
            store.zero_grads();
        }
        apply_buffer_updates(&mut store, &updates);

        log.rows.push(LogRow {
            step,
            dataset: d.name.clone(),
            lr,
            bundle,
        });

        if let Some(every) = config.checkpoint_every {
            if every > 0 && (step + 1) % every == 0 && step + 1 < plan.len() {
                let path = run_dir.join(format!("ckpt_step{:06}.ckpt", step + 1));
                save_checkpoint(&path, &resolved_model, &store, Some(&adam))?;
            }
        }
    }

    let ckpt_path = run_dir.join("checkpoint.ckpt");
    save_checkpoint(&ckpt_path, &resolved_model, &store, Some(&adam))?;
    log.write_csv(&run_dir.join("log.csv"))?;

    Ok(TrainOutcome {
        checkpoint: ckpt_path,
        log,
        size,
        resolved_model,
    })
}

/// Rebuilds a model plus parameter store from a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(Model, ParamStore), TrainError> {
    let mut store = ParamStore::new();
    let model = Model::register(&mut store, &ckpt.model, 0)?;
    store
        .copy_scoped(&ckpt.store, &[String::new()])
        .map_err(CheckpointError::Incompatible)?;
    Ok((model, store))
}

/// Per-record outputs retained during an evaluation pass.
#[derive(Default)]
struct EvalRow {
    embedding: Option<Vec<f64>>,
    attr_probs: Option<Vec<Vec<f64>>>,
    pose_pred: Option<Vec<[f64; 2]>>,
    seg_pred: Option<Array2<i64>>,
}

/// Inference-mode evaluation of the selected tasks over one manifest.
///
/// Retrieval uses the manifest's query/gallery splits when present;
/// otherwise, within `split`, the first record of each identity becomes the
/// query and the rest the gallery. All other tasks evaluate every record of
/// `split` carrying the relevant labels.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    manifest: &DatasetManifest,
    split: Split,
    select: TaskSelect,
    batch_size: usize,
) -> Result<MetricReport, TrainError> {
    assert!(batch_size >= 1, "batch_size must be positive");
    for (requested, in_model, in_data, name) in [
        (select.reid, model.config.tasks.reid, manifest.tasks.reid, "reid"),
        (select.attributes, model.config.tasks.attributes, manifest.tasks.attributes, "attributes"),
        (select.pose, model.config.tasks.pose, manifest.tasks.pose, "pose"),
        (select.segmentation, model.config.tasks.segmentation, manifest.tasks.segmentation, "segmentation"),
    ] {
        if requested && !in_model {
            return Err(TrainError::Eval(format!(
                "task `{name}` requested but the checkpoint has no such head"
            )));
        }
        if requested && !in_data {
            return Err(TrainError::Eval(format!(
                "task `{name}` requested but dataset `{}` has no labels for it",
                manifest.name
            )));
        }
    }
    if !(select.reid || select.attributes || select.pose || select.segmentation) {
        return Err(TrainError::Eval("no tasks selected for evaluation".into()));
    }

    let split_idx = manifest.split_indices(split);
    let retrieval = if select.reid {
        let q = manifest.split_indices(Split::Query);
        let g = manifest.split_indices(Split::Gallery);
        let (qi, gi) = if !q.is_empty() && !g.is_empty() {
            (q, g)
        } else {
            let mut seen = BTreeSet::new();
            let mut qi = Vec::new();
            let mut gi = Vec::new();
            for &i in &split_idx {
                match manifest.records[i].person_id {
                    Some(pid) if pid != JUNK_ID => {
                        if seen.insert(pid) {
                            qi.push(i);
                        } else {
                            gi.push(i);
                        }
                    }
                    _ => gi.push(i),
                }
            }
            (qi, gi)
        };
        if qi.is_empty() {
            return Err(TrainError::Eval(
                "retrieval evaluation has zero queries; check the split".into(),
            ));
        }
        if gi.is_empty() {
            return Err(TrainError::Eval("retrieval evaluation has an empty gallery".into()));
        }
        Some((qi, gi))
    } else {
        None
    };

    let mut wanted: BTreeSet<usize> = BTreeSet::new();
    if select.attributes || select.pose || select.segmentation {
        wanted.extend(split_idx.iter().copied());
    }
    if let Some((qi, gi)) = &retrieval {
        wanted.extend(qi.iter().copied());
        wanted.extend(gi.iter().copied());
    }
    if wanted.is_empty() {
        return Err(TrainError::Eval(format!("split {split:?} holds no records to evaluate")));
    }

    let h = model.config.backbone.input_height;
    let w = model.config.backbone.input_width;
    let indices: Vec<usize> = wanted.into_iter().collect();
    let mut rows: BTreeMap<usize, EvalRow> = BTreeMap::new();
    let mut gts: BTreeMap<usize, LoadedSample> = BTreeMap::new();

    for chunk in indices.chunks(batch_size) {
        let b = chunk.len();
        let mut images = Array4::<f64>::zeros((b, 3, h, w));
        for (slot, &idx) in chunk.iter().enumerate() {
            let s = load_sample(manifest, idx, h, w)?;
            images.slice_mut(s![slot, .., .., ..]).assign(&s.image);
            gts.insert(idx, s);
        }
        let mut tape = Tape::inference();
        let x = tape.constant(images.into_dyn());
        let mut updates = Vec::new();
        let out = model.forward(&mut tape, store, x, false, select, &mut updates);
        debug_assert!(updates.is_empty(), "inference must not touch running statistics");

        for (slot, &idx) in chunk.iter().enumerate() {
            let mut row = EvalRow::default();
            if let Some(emb) = out.embedding {
                let v = tape.value(emb);
                row.embedding = Some(v.slice(s![slot, ..]).iter().copied().collect());
            }
            if let Some(probs) = &out.attribute_probs {
                row.attr_probs = Some(
                    probs
                        .iter()
                        .map(|&p| tape.value(p).slice(s![slot, ..]).iter().copied().collect())
                        .collect(),
                );
            }
            if let Some(coords) = out.pose_coords {
                let v = tape.value(coords);
                let j = v.shape()[1];
                row.pose_pred = Some(
                    (0..j)
                        .map(|jj| [v[[slot, jj, 0]], v[[slot, jj, 1]]])
                        .collect(),
                );
            }
            if let Some(logits) = out.seg_logits {
                let v = tape.value(logits);
                let p = v.shape()[1];
                let mut mask = Array2::<i64>::zeros((h, w));
                for y in 0..h {
                    for x in 0..w {
                        let mut best = 0usize;
                        for c in 1..p {
                            if v[[slot, c, y, x]] > v[[slot, best, y, x]] {
                                best = c;
                            }
                        }
                        mask[(y, x)] = best as i64;
                    }
                }
                row.seg_pred = Some(mask);
            }
            rows.insert(idx, row);
        }
    }

    let mut report = MetricReport::default();
    if let Some((qi, gi)) = &retrieval {
        let dim = rows[&qi[0]].embedding.as_ref().expect("reid selected").len();
        let collect = |ids: &[usize]| -> (Array2<f64>, Vec<i64>, Vec<i64>) {
            let mut emb = Array2::<f64>::zeros((ids.len(), dim));
            let mut pid = Vec::with_capacity(ids.len());
            let mut cam = Vec::with_capacity(ids.len());
            for (r, &idx) in ids.iter().enumerate() {
                let e = rows[&idx].embedding.as_ref().expect("reid selected");
                emb.row_mut(r).assign(&ndarray::ArrayView1::from(&e[..]));
                pid.push(manifest.records[idx].person_id.unwrap_or(JUNK_ID));
                cam.push(manifest.records[idx].camera_id.unwrap_or(-1));
            }
            (emb, pid, cam)
        };
        let (query, query_pid, query_cam) = collect(qi);
        let (gallery, gallery_pid, gallery_cam) = collect(gi);
        let rs = RetrievalSet {
            query,
            query_pid,
            query_cam,
            gallery,
            gallery_pid,
            gallery_cam,
        };
        report.reid = Some(reid_eval(&rs).map_err(TrainError::Eval)?);
    }

    if select.pose {
        let usable: Vec<usize> = split_idx
            .iter()
            .copied()
            .filter(|i| gts[i].joints.is_some() && gts[i].head_size.is_some())
            .collect();
        if usable.is_empty() {
            return Err(TrainError::Eval("no records with pose labels to evaluate".into()));
        }
        let j = model.config.num_joints;
        let n = usable.len();
        let mut preds = Array3::<f64>::zeros((n, j, 2));
        let mut gt = Array3::<f64>::zeros((n, j, 2));
        let mut vis = Array2::<bool>::from_elem((n, j), false);
        let mut head = Vec::with_capacity(n);
        for (r, &idx) in usable.iter().enumerate() {
            let p = rows[&idx].pose_pred.as_ref().expect("pose selected");
            let s = &gts[&idx];
            let joints = s.joints.as_ref().expect("filtered above");
            let v = s.visible.as_ref().expect("joints imply visibility");
            for jj in 0..j {
                preds[(r, jj, 0)] = p[jj][0];
                preds[(r, jj, 1)] = p[jj][1];
                gt[(r, jj, 0)] = joints[(jj, 0)];
                gt[(r, jj, 1)] = joints[(jj, 1)];
                vis[(r, jj)] = v[jj];
            }
            head.push(s.head_size.expect("filtered above"));
        }
        report.pose = Some(pckh(&preds, &gt, &vis, &head, 0.5));
    }

    if select.segmentation {
        let mut preds = Vec::new();
        let mut masks = Vec::new();
        for &idx in &split_idx {
            if let Some(gt_mask) = &gts[&idx].mask {
                preds.push(rows[&idx].seg_pred.clone().expect("segmentation selected"));
                masks.push(gt_mask.clone());
            }
        }
        if preds.is_empty() {
            return Err(TrainError::Eval("no records with masks to evaluate".into()));
        }
        report.seg = Some(
            seg_eval(&preds, &masks, model.config.seg_classes, crate::losses::SEG_IGNORE)
                .map_err(TrainError::Eval)?,
        );
    }

    if select.attributes {
        let n_attr = model.config.attribute_schema.len();
        let usable: Vec<usize> = split_idx
            .iter()
            .copied()
            .filter(|i| gts[i].attributes.is_some())
            .collect();
        if usable.is_empty() {
            return Err(TrainError::Eval("no records with attribute labels to evaluate".into()));
        }
        let mut probs: Vec<Array2<f64>> = Vec::with_capacity(n_attr);
        let mut labels: Vec<Vec<Option<usize>>> = vec![Vec::new(); n_attr];
        for a in 0..n_attr {
            let classes = model.config.attribute_schema.0[a].classes;
            let mut m = Array2::<f64>::zeros((usable.len(), classes));
            for (r, &idx) in usable.iter().enumerate() {
                let p = rows[&idx].attr_probs.as_ref().expect("attributes selected");
                m.row_mut(r).assign(&ndarray::ArrayView1::from(&p[a][..]));
                labels[a].push(gts[&idx].attributes.as_ref().expect("filtered above")[a]);
            }
            probs.push(m);
        }
        report.attributes = Some(attribute_eval(&probs, &labels));
    }

    Ok(report)
}
