//! Inter-corpus protocol: train on one corpus, test on the other, in both
//! directions, for every distillation configuration.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{OptimSettings, RunConfig, StudentSettings, TeacherSettings};
use super::manifest::{load_manifest, SplitTag, WordSample};
use super::pipeline::evaluate_student;
use super::train::{split_words, stream_seed, train_student, train_teacher, TeacherSource};
use crate::distill::{DistillConfig, KdMode};
use crate::error::{Error, Result};
use crate::grapheme::{merge_inventories, GraphemeInventory};
use crate::metrics::{EvalReport, SUMMARY_COLUMNS};
use crate::models::{Student, Teacher, TeacherArch};
use crate::synthgen::{generate_teacher_dataset, renderer_for, GlyphSample, RenderSpec};

/// One table row configuration, in table order via [`ProtocolModel::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProtocolModel {
    NoKd,
    ConventionalKd,
    Lila(TeacherArch),
    Super(TeacherArch),
}

impl ProtocolModel {
    pub const ALL: [ProtocolModel; 6] = [
        ProtocolModel::NoKd,
        ProtocolModel::ConventionalKd,
        ProtocolModel::Lila(TeacherArch::Resnet18),
        ProtocolModel::Super(TeacherArch::Resnet18),
        ProtocolModel::Lila(TeacherArch::Conv2),
        ProtocolModel::Super(TeacherArch::Conv2),
    ];

    pub fn kd_mode(self) -> KdMode {
        match self {
            ProtocolModel::NoKd => KdMode::None,
            ProtocolModel::ConventionalKd => KdMode::Conventional,
            ProtocolModel::Lila(_) => KdMode::Lila,
            ProtocolModel::Super(_) => KdMode::Super,
        }
    }
}

impl fmt::Display for ProtocolModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolModel::NoKd => f.write_str("No KD"),
            ProtocolModel::ConventionalKd => f.write_str("Conventional KD"),
            ProtocolModel::Lila(arch) => write!(f, "LILA-BOTI ({arch})"),
            ProtocolModel::Super(arch) => write!(f, "Super Teacher LILA-BOTI ({arch})"),
        }
    }
}

impl std::str::FromStr for ProtocolModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ProtocolModel::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown protocol configuration {s:?}")))
    }
}

/// A corpus with its own training and test words.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: String,
    pub train: Vec<WordSample>,
    pub test: Vec<WordSample>,
}

impl Corpus {
    /// Records tagged `test` form the test part and the rest the training
    /// part; an untagged manifest serves whole as both.
    pub fn from_manifest(name: &str, path: &Path, invert: bool) -> Result<Self> {
        let manifest = load_manifest(path)?;
        let mut samples = manifest.load_samples()?;
        if invert {
            samples.iter_mut().for_each(|s| s.image.invert());
        }
        let tagged = manifest.records.iter().any(|r| r.split == Some(SplitTag::Test));
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (record, sample) in manifest.records.iter().zip(samples) {
            match record.split {
                Some(SplitTag::Test) => test.push(sample),
                _ if tagged => train.push(sample),
                _ => {
                    test.push(sample.clone());
                    train.push(sample);
                }
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "corpus {name} has an empty train or test part"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            train,
            test,
        })
    }

    pub fn train_inventory(&self) -> GraphemeInventory {
        GraphemeInventory::build(self.train.iter().map(|s| s.label.as_str()), self.name.clone())
    }
}

/// Everything a protocol run needs besides the corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSpec {
    pub seed: u64,
    pub val_fraction: f64,
    /// Only `alpha`, `tau`, `kd_weight_mode` and `retry_cap` are read; the
    /// mode comes from each row.
    pub distill: DistillConfig,
    pub render: RenderSpec,
    pub teacher: TeacherSettings,
    pub student: StudentSettings,
    pub teacher_optim: OptimSettings,
    pub student_optim: OptimSettings,
    /// Rows to run; empty means all six.
    pub only: Vec<ProtocolModel>,
}

impl ProtocolSpec {
    pub fn from_run_config(cfg: &RunConfig) -> Result<Self> {
        let only = cfg
            .protocol
            .as_ref()
            .map(|p| p.only.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>())
            .transpose()?
            .unwrap_or_default();
        Ok(Self {
            seed: cfg.seed,
            val_fraction: cfg.val_fraction,
            distill: cfg.distill,
            render: cfg.render.clone(),
            teacher: cfg.teacher.clone(),
            student: cfg.student.clone(),
            teacher_optim: cfg.teacher_optim.clone(),
            student_optim: cfg.student_optim.clone(),
            only,
        })
    }

    fn models(&self) -> Vec<ProtocolModel> {
        ProtocolModel::ALL
            .into_iter()
            .filter(|m| self.only.is_empty() || self.only.contains(m))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub train: String,
    pub test: String,
    pub model: String,
    pub ned: u64,
    pub crr: f64,
    pub wrr: f64,
    pub f1_all: f64,
    pub f1_minor: f64,
    pub f1_major: f64,
}

impl ProtocolRow {
    fn new(train: &str, test: &str, model: ProtocolModel, r: &EvalReport) -> Self {
        Self {
            train: train.to_string(),
            test: test.to_string(),
            model: model.to_string(),
            ned: r.ned_total,
            crr: r.crr,
            wrr: r.wrr,
            f1_all: r.f1_all,
            f1_minor: r.f1_minor,
            f1_major: r.f1_major,
        }
    }

    /// Values in [`SUMMARY_COLUMNS`] order.
    pub fn values(&self) -> [String; 6] {
        [
            self.ned.to_string(),
            format!("{:.2}", self.crr),
            format!("{:.2}", self.wrr),
            format!("{:.2}", self.f1_all),
            format!("{:.2}", self.f1_minor),
            format!("{:.2}", self.f1_major),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub seed: u64,
    pub columns: Vec<String>,
    /// False while rows are still being produced or after an abort.
    pub complete: bool,
    pub rows: Vec<ProtocolRow>,
}

impl ProtocolReport {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            columns: SUMMARY_COLUMNS.iter().map(|c| c.to_string()).collect(),
            complete: false,
            rows: Vec::new(),
        }
    }
}

struct GlyphTeacher {
    teacher: Teacher<f32>,
    inventory: GraphemeInventory,
    glyphs: Vec<GlyphSample>,
}

fn glyph_teacher(
    spec: &ProtocolSpec,
    arch: TeacherArch,
    inventory: &GraphemeInventory,
    tag: &str,
) -> Result<GlyphTeacher> {
    let render = RenderSpec {
        seed: stream_seed(spec.seed, &format!("glyphs-{tag}")),
        image_size: spec.teacher.input_size,
        ..spec.render.clone()
    };
    let glyphs = generate_teacher_dataset(inventory, &render, renderer_for(&render)?.as_ref())?;
    let run = train_teacher(
        spec.teacher.config(arch, inventory.len()),
        inventory,
        &glyphs,
        &spec.teacher_optim,
        spec.val_fraction,
        stream_seed(spec.seed, &format!("teacher-{arch}-{tag}")),
    )?;
    log::info!(
        "{arch} teacher over {tag}: val accuracy {:.3}",
        run.log.last().map_or(0.0, |e| e.val_accuracy)
    );
    Ok(GlyphTeacher {
        teacher: run.teacher,
        inventory: inventory.clone(),
        glyphs,
    })
}

fn wrap(run: String) -> impl FnOnce(Error) -> Error {
    move |e| Error::Protocol {
        run,
        source: Box::new(e),
    }
}

/// Runs both directions for the selected rows. `on_row` sees the table
/// after every row; on failure the partial table is passed to it once more
/// before the error is returned.
pub fn run_protocol(
    spec: &ProtocolSpec,
    a: &Corpus,
    b: &Corpus,
    on_row: &mut dyn FnMut(&ProtocolReport) -> Result<()>,
) -> Result<ProtocolReport> {
    let mut report = ProtocolReport::new(spec.seed);
    match run_rows(spec, a, b, &mut report, on_row) {
        Ok(()) => {
            report.complete = true;
            on_row(&report)?;
            Ok(report)
        }
        Err(e) => {
            on_row(&report)?;
            Err(e)
        }
    }
}

fn run_rows(
    spec: &ProtocolSpec,
    a: &Corpus,
    b: &Corpus,
    report: &mut ProtocolReport,
    on_row: &mut dyn FnMut(&ProtocolReport) -> Result<()>,
) -> Result<()> {
    let models = spec.models();
    let super_inventory = merge_inventories(&a.train_inventory(), &b.train_inventory());
    let mut super_teachers: BTreeMap<TeacherArch, GlyphTeacher> = BTreeMap::new();
    for (train, test) in [(a, b), (b, a)] {
        let direction = format!("{} -> {}", train.name, test.name);
        let inventory = train.train_inventory();
        let seed = stream_seed(spec.seed, &format!("direction-{}", train.name));
        let (train_words, val_words, _, _) = split_words(&train.train, spec.val_fraction, seed);
        let config = spec.student.config(inventory.len());
        let mut lila_teachers: BTreeMap<TeacherArch, GlyphTeacher> = BTreeMap::new();
        let mut no_kd: Option<Student<f32>> = None;
        let needs_no_kd = models.contains(&ProtocolModel::NoKd) || models.contains(&ProtocolModel::ConventionalKd);
        let order = if needs_no_kd && !models.contains(&ProtocolModel::NoKd) {
            std::iter::once(ProtocolModel::NoKd)
                .chain(models.iter().copied())
                .collect()
        } else {
            models.clone()
        };
        for model in order {
            let run_name = format!("{direction}: {model}");
            let teacher_holder;
            let source = match model {
                ProtocolModel::NoKd => TeacherSource::None,
                ProtocolModel::ConventionalKd => {
                    TeacherSource::Sequence(no_kd.as_ref().expect("no-KD student trained first"))
                }
                ProtocolModel::Lila(arch) => {
                    if let Entry::Vacant(slot) = lila_teachers.entry(arch) {
                        slot.insert(
                            glyph_teacher(spec, arch, &inventory, &train.name).map_err(wrap(run_name.clone()))?,
                        );
                    }
                    teacher_holder = &lila_teachers[&arch];
                    TeacherSource::Character {
                        teacher: &teacher_holder.teacher,
                        inventory: &teacher_holder.inventory,
                        glyphs: &teacher_holder.glyphs,
                    }
                }
                ProtocolModel::Super(arch) => {
                    if let Entry::Vacant(slot) = super_teachers.entry(arch) {
                        slot.insert(
                            glyph_teacher(spec, arch, &super_inventory, "super").map_err(wrap(run_name.clone()))?,
                        );
                    }
                    teacher_holder = &super_teachers[&arch];
                    TeacherSource::Character {
                        teacher: &teacher_holder.teacher,
                        inventory: &teacher_holder.inventory,
                        glyphs: &teacher_holder.glyphs,
                    }
                }
            };
            let distill = DistillConfig {
                kd_mode: model.kd_mode(),
                ..spec.distill
            };
            log::info!("protocol run {run_name}");
            let run = train_student(
                config.clone(),
                &distill,
                &spec.student_optim,
                &inventory,
                &train_words,
                &val_words,
                source,
                seed,
            )
            .map_err(wrap(run_name.clone()))?;
            if models.contains(&model) {
                let eval = evaluate_student(&run.student, &inventory, &test.test).map_err(wrap(run_name.clone()))?;
                report
                    .rows
                    .push(ProtocolRow::new(&train.name, &test.name, model, &eval));
                on_row(report)?;
            }
            if model == ProtocolModel::NoKd {
                no_kd = Some(run.student);
            }
        }
    }
    Ok(())
}
