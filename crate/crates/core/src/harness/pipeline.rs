//! Disk-backed runs: every artifact lands in the configured output
//! directory and carries the run seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::RunConfig;
use super::manifest::{load_manifest, WordSample};
use super::train::{
    decode_batch, prepare_word_image, split_words, train_student, train_teacher, StudentEpoch, TeacherEpoch,
    TeacherSource,
};
use crate::distill::KdMode;
use crate::error::{Error, IoContext, Result};
use crate::grapheme::{Grapheme, GraphemeInventory};
use crate::metrics::EvalReport;
use crate::models::{load_checkpoint, save_checkpoint, Checkpoint, Student, Teacher};
use crate::synthgen::{
    dataset_checksum, generate_teacher_dataset, read_glyph_dataset, renderer_for, write_glyph_dataset, GlyphSample,
    GrayImage,
};

pub const TEACHER_DATA_DIR: &str = "teacher_data";
pub const TEACHER_INVENTORY_FILE: &str = "teacher_inventory.tsv";
pub const TEACHER_CHECKPOINT_FILE: &str = "teacher.ckpt";
pub const TEACHER_LOG_FILE: &str = "teacher_log.json";
pub const STUDENT_CHECKPOINT_FILE: &str = "student.ckpt";
pub const STUDENT_LOG_FILE: &str = "student_log.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.tsv";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    fs::write(path, text).at(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.resolved_output_dir();
    fs::create_dir_all(&dir).at(&dir)?;
    write_text(&dir.join(CONFIG_ECHO_FILE), &cfg.to_toml())?;
    Ok(dir)
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("{what} is not configured")))
}

/// Word samples of a manifest, inverted when configured.
pub fn load_words(path: &Path, invert: bool) -> Result<Vec<WordSample>> {
    let mut samples = load_manifest(path)?.load_samples()?;
    if invert {
        for s in &mut samples {
            s.image.invert();
        }
    }
    Ok(samples)
}

/// The configured teacher inventory, or the training corpus's own.
pub fn teacher_inventory(cfg: &RunConfig) -> Result<GraphemeInventory> {
    match &cfg.data.teacher_inventory {
        Some(p) => GraphemeInventory::load_tsv(p),
        None => Ok(load_manifest(required(&cfg.data.train_manifest, "data.train_manifest")?)?.inventory("train")),
    }
}

fn glyphs_for(cfg: &RunConfig, inventory: &GraphemeInventory) -> Result<Vec<GlyphSample>> {
    match &cfg.data.teacher_data {
        Some(dir) => read_glyph_dataset(dir),
        None => {
            let spec = crate::synthgen::RenderSpec {
                seed: cfg.seed,
                ..cfg.render.clone()
            };
            generate_teacher_dataset(inventory, &spec, renderer_for(&spec)?.as_ref())
        }
    }
}

/// Renders the glyph dataset for the teacher inventory into
/// `<output>/teacher_data`; returns that directory.
pub fn gen_teacher_data(cfg: &RunConfig) -> Result<PathBuf> {
    let out = output_dir(cfg)?;
    let inventory = teacher_inventory(cfg)?;
    let spec = crate::synthgen::RenderSpec {
        seed: cfg.seed,
        ..cfg.render.clone()
    };
    let samples = generate_teacher_dataset(&inventory, &spec, renderer_for(&spec)?.as_ref())?;
    let dir = out.join(TEACHER_DATA_DIR);
    write_glyph_dataset(&dir, &samples)?;
    inventory.save_tsv(&out.join(TEACHER_INVENTORY_FILE))?;
    write_json(
        &dir.join("dataset.json"),
        &json!({"seed": cfg.seed, "classes": inventory.len(), "samples": samples.len(), "checksum": dataset_checksum(&samples)}),
    )?;
    log::info!(
        "wrote {} glyphs for {} classes to {}",
        samples.len(),
        inventory.len(),
        dir.display()
    );
    Ok(dir)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherLog {
    pub seed: u64,
    pub arch: String,
    pub classes: usize,
    pub epochs: Vec<TeacherEpoch>,
}

/// Trains the configured teacher arch; writes the checkpoint and log.
pub fn train_teacher_run(cfg: &RunConfig) -> Result<(PathBuf, TeacherLog)> {
    cfg.check_paths()?;
    let out = output_dir(cfg)?;
    let inventory = teacher_inventory(cfg)?;
    let glyphs = glyphs_for(cfg, &inventory)?;
    let config = cfg.teacher.config(cfg.teacher.arch, inventory.len());
    let run = train_teacher(
        config,
        &inventory,
        &glyphs,
        &cfg.teacher_optim,
        cfg.val_fraction,
        cfg.seed,
    )?;
    let log = TeacherLog {
        seed: cfg.seed,
        arch: cfg.teacher.arch.to_string(),
        classes: inventory.len(),
        epochs: run.log,
    };
    let path = cfg
        .data
        .teacher_checkpoint
        .clone()
        .unwrap_or_else(|| out.join(TEACHER_CHECKPOINT_FILE));
    let meta = BTreeMap::from([
        ("seed".to_string(), json!(cfg.seed)),
        ("arch".to_string(), json!(log.arch)),
        (
            "val_accuracy".to_string(),
            json!(log.epochs.last().map(|e| e.val_accuracy)),
        ),
    ]);
    save_checkpoint(&path, &run.teacher, &inventory, &meta)?;
    write_json(&out.join(TEACHER_LOG_FILE), &log)?;
    Ok((path, log))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentLog {
    pub seed: u64,
    pub kd_mode: KdMode,
    pub trained: usize,
    pub skipped: usize,
    pub teacher_calls: usize,
    pub teacher_fallbacks: usize,
    pub epochs: Vec<StudentEpoch>,
    pub batch_losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Splits {
    seed: u64,
    val_fraction: f64,
    train: Vec<usize>,
    val: Vec<usize>,
}

/// Trains the student under `cfg.distill.kd_mode`; writes the checkpoint,
/// the log and the train/val partition.
pub fn train_student_run(cfg: &RunConfig) -> Result<(PathBuf, StudentLog)> {
    cfg.check_paths()?;
    let out = output_dir(cfg)?;
    let manifest = load_manifest(required(&cfg.data.train_manifest, "data.train_manifest")?)?;
    let inventory = manifest.inventory("train");
    let mut samples = manifest.load_samples()?;
    if cfg.data.invert_images {
        samples.iter_mut().for_each(|s| s.image.invert());
    }
    let (train, val, train_idx, val_idx) = split_words(&samples, cfg.val_fraction, cfg.seed);
    write_json(
        &out.join(SPLITS_FILE),
        &Splits {
            seed: cfg.seed,
            val_fraction: cfg.val_fraction,
            train: train_idx,
            val: val_idx,
        },
    )?;
    let config = cfg.student.config(inventory.len());
    let mode = cfg.distill.kd_mode;
    let character: Option<(Checkpoint<Teacher<f32>>, Vec<GlyphSample>)> = match mode {
        KdMode::Lila | KdMode::Super => {
            let ckpt =
                load_checkpoint::<Teacher<f32>>(required(&cfg.data.teacher_checkpoint, "data.teacher_checkpoint")?)?;
            let glyphs = glyphs_for(cfg, &ckpt.inventory)?;
            Some((ckpt, glyphs))
        }
        _ => None,
    };
    let sequence = match mode {
        KdMode::Conventional => Some(load_checkpoint::<Student<f32>>(required(
            &cfg.data.conventional_teacher,
            "data.conventional_teacher",
        )?)?),
        _ => None,
    };
    let source = match (&character, &sequence) {
        (Some((ckpt, glyphs)), _) => TeacherSource::Character {
            teacher: &ckpt.model,
            inventory: &ckpt.inventory,
            glyphs,
        },
        (_, Some(ckpt)) => {
            if ckpt.inventory.grapheme_set() != inventory.grapheme_set() {
                return Err(Error::InvalidConfig(
                    "conventional teacher was trained on a different grapheme inventory".into(),
                ));
            }
            TeacherSource::Sequence(&ckpt.model)
        }
        _ => TeacherSource::None,
    };
    let run = train_student(
        config,
        &cfg.distill,
        &cfg.student_optim,
        &inventory,
        &train,
        &val,
        source,
        cfg.seed,
    )?;
    let log = StudentLog {
        seed: cfg.seed,
        kd_mode: mode,
        trained: run.trained,
        skipped: run.skipped,
        teacher_calls: run.teacher_calls,
        teacher_fallbacks: run.teacher_fallbacks,
        epochs: run.log,
        batch_losses: run.batch_losses,
    };
    let path = cfg
        .data
        .student_checkpoint
        .clone()
        .unwrap_or_else(|| out.join(STUDENT_CHECKPOINT_FILE));
    let meta = BTreeMap::from([
        ("seed".to_string(), json!(cfg.seed)),
        ("kd_mode".to_string(), json!(mode.as_str())),
        ("alpha".to_string(), json!(cfg.distill.alpha)),
        ("tau".to_string(), json!(cfg.distill.tau)),
    ]);
    save_checkpoint(&path, &run.student, &inventory, &meta)?;
    write_json(&out.join(STUDENT_LOG_FILE), &log)?;
    Ok((path, log))
}

/// Greedy-decodes `samples` and scores them against their labels. The
/// minor/major split comes from `training` supports.
pub fn evaluate_student(
    student: &Student<f32>,
    training: &GraphemeInventory,
    samples: &[WordSample],
) -> Result<EvalReport> {
    let cfg = student.config();
    let images: Vec<GrayImage> = samples
        .iter()
        .map(|s| prepare_word_image(&s.image, cfg.input_height, cfg.input_width, false))
        .collect();
    let refs: Vec<&GrayImage> = images.iter().collect();
    let preds = decode_batch(student, training, &refs)?;
    let pairs: Vec<(Vec<Grapheme>, Vec<Grapheme>)> = preds
        .into_iter()
        .zip(samples)
        .map(|(p, s)| (p, s.graphemes.clone()))
        .collect();
    EvalReport::compute(&pairs, training)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub seed: u64,
    pub kd_mode: Option<String>,
    pub report: EvalReport,
}

/// Loads only the student checkpoint; no teacher is read.
pub fn evaluate_run(cfg: &RunConfig) -> Result<EvaluationRecord> {
    let out = output_dir(cfg)?;
    let ckpt_path = cfg
        .data
        .student_checkpoint
        .clone()
        .unwrap_or_else(|| out.join(STUDENT_CHECKPOINT_FILE));
    let ckpt = load_checkpoint::<Student<f32>>(&ckpt_path)?;
    let samples = load_words(
        required(&cfg.data.test_manifest, "data.test_manifest")?,
        cfg.data.invert_images,
    )?;
    let report = evaluate_student(&ckpt.model, &ckpt.inventory, &samples)?;
    let record = EvaluationRecord {
        seed: ckpt
            .metadata
            .get("seed")
            .and_then(serde_json::Value::as_u64)
            .unwrap_or(cfg.seed),
        kd_mode: ckpt
            .metadata
            .get("kd_mode")
            .and_then(|v| v.as_str())
            .map(str::to_string),
        report,
    };
    write_json(&out.join(REPORT_FILE), &record)?;
    write_text(&out.join(SUMMARY_FILE), &record.report.summary_tsv())?;
    Ok(record)
}
