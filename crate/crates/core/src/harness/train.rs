//! Training loops for the character teacher and the word student.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::OptimSettings;
use super::manifest::{split_train_val, WordSample};
use crate::ctc::{ctc_loss_from_logits, min_frames};
use crate::distill::{
    conventional_kd_loss, lila_boti_loss, project_super_teacher, select_verified_teacher_sample, stack_teacher_outputs,
    DistillConfig, GlyphPool, KdMode, PoolCursor,
};
use crate::error::{Error, Result};
use crate::grapheme::{Grapheme, GraphemeInventory};
use crate::metrics::{crr, wrr};
use crate::models::{images_to_batch, LogitSequence, Student, StudentConfig, Teacher, TeacherConfig};
use crate::nn::{clip_grad_norm, Parameterized};
use crate::numeric::argmax;
use crate::synthgen::{GlyphSample, GrayImage};

/// Stream-specific seed so independent consumers never share an RNG.
pub(crate) fn stream_seed(seed: u64, stream: &str) -> u64 {
    crate::synthgen::derive_seed(&[&seed.to_le_bytes(), stream.as_bytes()])
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub teacher: Teacher<f32>,
    pub log: Vec<TeacherEpoch>,
}

fn glyph_for(sample: &GlyphSample, size: usize) -> GrayImage {
    if sample.image.height() == size && sample.image.width() == size {
        sample.image.clone()
    } else {
        sample.image.resize(size, size)
    }
}

/// Fraction of `indices` whose argmax prediction equals the target class.
fn teacher_accuracy(teacher: &Teacher<f32>, images: &[GrayImage], targets: &[usize], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for chunk in indices.chunks(128) {
        let batch: Vec<&GrayImage> = chunk.iter().map(|&i| &images[i]).collect();
        let logits = teacher.logits(&batch)?;
        correct += chunk
            .iter()
            .zip(logits.rows())
            .filter(|(&i, row)| argmax(row.view()) == targets[i])
            .count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Softmax cross-entropy training on isolated glyphs. A seeded
/// `val_fraction` slice is held out and scored after every epoch.
pub fn train_teacher(
    config: TeacherConfig,
    inventory: &GraphemeInventory,
    samples: &[GlyphSample],
    optim: &OptimSettings,
    val_fraction: f64,
    seed: u64,
) -> Result<TeacherRun> {
    optim.validate()?;
    if config.num_classes != inventory.len() {
        return Err(Error::InvalidConfig(format!(
            "teacher has {} classes but the inventory has {}",
            config.num_classes,
            inventory.len()
        )));
    }
    let mut teacher = Teacher::<f32>::new(config, stream_seed(seed, "teacher-init"))?;
    let size = teacher.config().input_size;
    let images: Vec<GrayImage> = samples.iter().map(|s| glyph_for(s, size)).collect();
    let targets = samples
        .iter()
        .map(|s| {
            inventory
                .index_of(&s.label)
                .ok_or_else(|| Error::EmptyPool(s.label.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (train, val) = split_train_val(samples.len(), val_fraction, stream_seed(seed, "teacher-split"));
    let mut optimizer = optim.build();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "teacher-batches"));
    let mut log = Vec::with_capacity(optim.epochs);
    for epoch in 0..optim.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in batches(train.len(), optim.batch_size, &mut rng) {
            let idx: Vec<usize> = batch.iter().map(|&b| train[b]).collect();
            let refs: Vec<&GrayImage> = idx.iter().map(|&i| &images[i]).collect();
            let x = images_to_batch::<f32>(&refs)?;
            let (logits, cache) = teacher.forward_train(x.view())?;
            let n = idx.len() as f32;
            let mut grad = Array2::<f32>::zeros(logits.raw_dim());
            for ((row, mut g), &i) in logits.rows().into_iter().zip(grad.rows_mut()).zip(&idx) {
                let m = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                let exp = row.mapv(|v| (v - m).exp());
                let z = exp.sum();
                let t = targets[i];
                loss_sum += f64::from(z.ln() + m - row[t]);
                if argmax(row.mapv(f64::from).view()) == t {
                    correct += 1;
                }
                g.assign(&(exp / (z * n)));
                g[t] -= 1.0 / n;
            }
            if !loss_sum.is_finite() {
                return Err(Error::Diverged(format!(
                    "teacher loss became {loss_sum} in epoch {epoch}"
                )));
            }
            teacher.backward(&cache, grad.view());
            if let Some(c) = optim.clip_norm {
                clip_grad_norm(&mut teacher, c);
            }
            optimizer.step(&mut teacher);
            teacher.zero_grad();
        }
        let entry = TeacherEpoch {
            epoch: epoch + 1,
            loss: loss_sum / train.len().max(1) as f64,
            train_accuracy: correct as f64 / train.len().max(1) as f64,
            val_accuracy: teacher_accuracy(&teacher, &images, &targets, &val)?,
        };
        log::info!(
            "teacher epoch {}: loss {:.4} train acc {:.3} val acc {:.3}",
            entry.epoch,
            entry.loss,
            entry.train_accuracy,
            entry.val_accuracy
        );
        log.push(entry);
    }
    Ok(TeacherRun { teacher, log })
}

/// Where soft targets come from during student training.
pub enum TeacherSource<'a> {
    None,
    /// A trained word recognizer over the same classes.
    Sequence(&'a Student<f32>),
    /// A character classifier with its inventory and a glyph pool to draw
    /// verification samples from.
    Character {
        teacher: &'a Teacher<f32>,
        inventory: &'a GraphemeInventory,
        glyphs: &'a [GlyphSample],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentEpoch {
    pub epoch: usize,
    /// Mean per-word loss over the epoch.
    pub loss: f64,
    pub ctc: f64,
    pub kl: f64,
    pub val_crr: Option<f64>,
    pub val_wrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    pub student: Student<f32>,
    pub log: Vec<StudentEpoch>,
    /// Mean loss of every optimizer step, in order.
    pub batch_losses: Vec<f64>,
    pub trained: usize,
    /// Words whose label cannot be aligned to the output frames.
    pub skipped: usize,
    pub teacher_calls: usize,
    /// Character-teacher draws that never matched the label.
    pub teacher_fallbacks: usize,
}

/// Resizes (aspect-preserving, padded) and optionally inverts a word image.
pub fn prepare_word_image(image: &GrayImage, height: usize, width: usize, invert: bool) -> GrayImage {
    let mut out = if image.height() == height && image.width() == width {
        image.clone()
    } else {
        image.resize_pad(height, width)
    };
    if invert {
        out.invert();
    }
    out
}

/// Maps each label to class indices, failing on graphemes outside the
/// inventory.
pub fn encode_labels(inventory: &GraphemeInventory, samples: &[WordSample]) -> Result<Vec<Vec<usize>>> {
    samples
        .iter()
        .map(|s| {
            inventory.encode(&s.graphemes).map_err(|g| Error::UnknownGrapheme {
                grapheme: g.to_string(),
                label: s.label.clone(),
            })
        })
        .collect()
}

enum Projection {
    /// Teacher classes are a permutation of the student's.
    Permute,
    /// Teacher classes are a superset; softmax over the selected logits.
    Restrict,
}

struct CharacterTargets<'a> {
    teacher_inventory: &'a GraphemeInventory,
    pool: GlyphPool,
    cursor: PoolCursor,
    cached: HashMap<(Grapheme, usize), Array1<f64>>,
    mapping: Vec<usize>,
    projection: Projection,
    calls: usize,
    fallbacks: usize,
}

impl<'a> CharacterTargets<'a> {
    fn new(
        teacher: &Teacher<f32>,
        teacher_inventory: &'a GraphemeInventory,
        student_inventory: &GraphemeInventory,
        glyphs: &[GlyphSample],
        mode: KdMode,
        seed: u64,
    ) -> Result<Self> {
        let mapping = student_inventory
            .graphemes()
            .map(|g| {
                teacher_inventory.index_of(g).ok_or_else(|| {
                    Error::InvalidConfig(format!("student grapheme {g} is missing from the teacher inventory"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let projection = match mode {
            KdMode::Lila if teacher_inventory.len() == student_inventory.len() => Projection::Permute,
            KdMode::Lila => {
                return Err(Error::InvalidConfig(format!(
                    "lila needs a teacher over the student's {} classes, got {}; use super",
                    student_inventory.len(),
                    teacher_inventory.len()
                )))
            }
            _ => Projection::Restrict,
        };
        let size = teacher.config().input_size;
        let mut cached = HashMap::with_capacity(glyphs.len());
        for chunk in glyphs.chunks(128) {
            let images: Vec<GrayImage> = chunk.iter().map(|s| glyph_for(s, size)).collect();
            let refs: Vec<&GrayImage> = images.iter().collect();
            let logits = teacher.logits(&refs)?;
            for (s, row) in chunk.iter().zip(logits.rows()) {
                cached.insert((s.label.clone(), s.index), row.to_owned());
            }
        }
        Ok(Self {
            teacher_inventory,
            pool: GlyphPool::new(glyphs.to_vec(), stream_seed(seed, "glyph-pool")),
            cursor: PoolCursor::default(),
            cached,
            mapping,
            projection,
            calls: 0,
            fallbacks: 0,
        })
    }

    /// One verified, projected distribution per grapheme of the label.
    fn targets(&mut self, graphemes: &[Grapheme], cfg: &DistillConfig) -> Result<Vec<Array1<f64>>> {
        let cached = &self.cached;
        let scorer = |s: &GlyphSample| {
            cached
                .get(&(s.label.clone(), s.index))
                .cloned()
                .ok_or_else(|| Error::EmptyPool(s.label.to_string()))
        };
        graphemes
            .iter()
            .map(|g| {
                let class = self
                    .teacher_inventory
                    .index_of(g)
                    .ok_or_else(|| Error::EmptyPool(g.to_string()))?;
                let v = select_verified_teacher_sample(
                    g,
                    class,
                    &scorer,
                    &self.pool,
                    &mut self.cursor,
                    cfg.retry_cap,
                    cfg.tau,
                )?;
                self.calls += v.teacher_calls;
                self.fallbacks += usize::from(v.fallback);
                match self.projection {
                    Projection::Permute => Ok(self.mapping.iter().map(|&t| v.probs[t]).collect()),
                    Projection::Restrict => project_super_teacher(v.logits.view(), &self.mapping, cfg.tau),
                }
            })
            .collect()
    }
}

/// Per-frame CRNN training with CTC plus the configured distillation term.
/// Words that cannot fit the output frames are skipped and counted.
#[allow(clippy::too_many_arguments)]
pub fn train_student(
    config: StudentConfig,
    distill: &DistillConfig,
    optim: &OptimSettings,
    inventory: &GraphemeInventory,
    train: &[WordSample],
    val: &[WordSample],
    source: TeacherSource<'_>,
    seed: u64,
) -> Result<StudentRun> {
    distill.validate()?;
    optim.validate()?;
    if config.num_classes != inventory.len() + 1 {
        return Err(Error::InvalidConfig(format!(
            "student has {} classes, inventory needs {} plus blank",
            config.num_classes,
            inventory.len()
        )));
    }
    let mode = distill.kd_mode;
    let mut character = match (&source, mode) {
        (TeacherSource::None, KdMode::None) | (TeacherSource::Sequence(_), KdMode::Conventional) => None,
        (
            TeacherSource::Character {
                teacher,
                inventory: t_inv,
                glyphs,
            },
            KdMode::Lila | KdMode::Super,
        ) => Some(CharacterTargets::new(teacher, t_inv, inventory, glyphs, mode, seed)?),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "kd mode {} does not match the supplied teacher",
                mode.as_str()
            )))
        }
    };
    let sequence_teacher = match source {
        TeacherSource::Sequence(t) => {
            if t.config().num_classes != config.num_classes || t.n_seq() != config.n_seq {
                return Err(Error::ShapeMismatch(
                    "sequence teacher and student shapes differ".into(),
                ));
            }
            Some(t)
        }
        _ => None,
    };

    let targets = encode_labels(inventory, train)?;
    let (h, w, n_seq) = (config.input_height, config.input_width, config.n_seq);
    let feasible: Vec<usize> = (0..train.len())
        .filter(|&i| targets[i].len() <= n_seq && min_frames(&targets[i]) <= n_seq)
        .collect();
    let skipped = train.len() - feasible.len();
    if skipped > 0 {
        log::warn!("skipping {skipped} training words that cannot be aligned to {n_seq} frames");
    }
    let images: Vec<GrayImage> = feasible
        .iter()
        .map(|&i| prepare_word_image(&train[i].image, h, w, false))
        .collect();
    let val_images: Vec<GrayImage> = val.iter().map(|s| prepare_word_image(&s.image, h, w, false)).collect();

    let mut student = Student::<f32>::new(config, stream_seed(seed, "student-init"))?;
    let mut optimizer = optim.build();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "student-batches"));
    let mut log = Vec::with_capacity(optim.epochs);
    let mut batch_losses = Vec::new();
    for epoch in 0..optim.epochs {
        let (mut loss_sum, mut ctc_sum, mut kl_sum) = (0.0, 0.0, 0.0);
        let fallbacks_before = character.as_ref().map_or(0, |c| c.fallbacks);
        for batch in batches(feasible.len(), optim.batch_size, &mut rng) {
            let refs: Vec<&GrayImage> = batch.iter().map(|&b| &images[b]).collect();
            let x = images_to_batch::<f32>(&refs)?;
            let (logits, cache) = student.forward_train(x.view())?;
            let teacher_logits = match sequence_teacher {
                Some(t) => Some(t.forward(x.view())?),
                None => None,
            };
            let n = batch.len() as f64;
            let mut grad = Array3::<f32>::zeros(logits.raw_dim());
            let mut batch_loss = 0.0;
            for (j, &b) in batch.iter().enumerate() {
                let sample = feasible[b];
                let target = &targets[sample];
                let seq = LogitSequence::new(logits.index_axis(Axis(1), j).mapv(f64::from))?;
                let (loss, ctc, kl, g) = match mode {
                    KdMode::None => {
                        let out = ctc_loss_from_logits(seq.scores(), target, seq.blank())?;
                        (out.loss, out.loss, 0.0, out.grad)
                    }
                    KdMode::Conventional => {
                        let t = teacher_logits.as_ref().expect("sequence teacher present");
                        let t = LogitSequence::new(t.index_axis(Axis(1), j).mapv(f64::from))?;
                        let out = conventional_kd_loss(&seq, &t, target, distill)?;
                        (out.total, out.ctc, out.kl, out.grad)
                    }
                    KdMode::Lila | KdMode::Super => {
                        let chars = character.as_mut().expect("character teacher present");
                        let per_grapheme = chars.targets(&train[sample].graphemes, distill)?;
                        let stack = stack_teacher_outputs(&per_grapheme, n_seq)?;
                        let out = lila_boti_loss(&seq, target, &stack, distill)?;
                        (out.total, out.ctc, out.kl, out.grad)
                    }
                };
                batch_loss += loss;
                ctc_sum += ctc;
                kl_sum += kl;
                grad.index_axis_mut(Axis(1), j).assign(&g.mapv(|v| (v / n) as f32));
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "student loss became {batch_loss} in epoch {}",
                    epoch + 1
                )));
            }
            loss_sum += batch_loss;
            batch_losses.push(batch_loss / n);
            student.backward(&cache, grad.view());
            if let Some(c) = optim.clip_norm {
                clip_grad_norm(&mut student, c);
            }
            optimizer.step(&mut student);
            student.zero_grad();
        }
        let fallbacks = character.as_ref().map_or(0, |c| c.fallbacks) - fallbacks_before;
        if fallbacks > 0 {
            log::warn!(
                "epoch {}: {fallbacks} grapheme draws were never confirmed by the teacher within {} tries",
                epoch + 1,
                distill.retry_cap
            );
        }
        let count = feasible.len().max(1) as f64;
        let (val_crr, val_wrr) = if val.is_empty() {
            (None, None)
        } else {
            let refs: Vec<&GrayImage> = val_images.iter().collect();
            let preds = decode_batch(&student, inventory, &refs)?;
            let pairs: Vec<(Vec<Grapheme>, Vec<Grapheme>)> = preds
                .into_iter()
                .zip(val)
                .map(|(p, s)| (p, s.graphemes.clone()))
                .collect();
            let crr_mean = pairs.iter().map(|(p, l)| crr(p, l)).sum::<Result<f64>>()? / pairs.len() as f64;
            (Some(crr_mean), Some(wrr(&pairs)?))
        };
        let entry = StudentEpoch {
            epoch: epoch + 1,
            loss: loss_sum / count,
            ctc: ctc_sum / count,
            kl: kl_sum / count,
            val_crr,
            val_wrr,
        };
        log::info!(
            "student[{}] epoch {}: loss {:.4} ctc {:.4} kl {:.4} val crr {:?}",
            mode.as_str(),
            entry.epoch,
            entry.loss,
            entry.ctc,
            entry.kl,
            entry.val_crr
        );
        log.push(entry);
    }
    let (teacher_calls, teacher_fallbacks) = character.as_ref().map_or((0, 0), |c| (c.calls, c.fallbacks));
    Ok(StudentRun {
        student,
        log,
        batch_losses,
        trained: feasible.len(),
        skipped,
        teacher_calls,
        teacher_fallbacks,
    })
}

/// Greedy transcriptions of prepared images, in batches.
pub fn decode_batch(
    student: &Student<f32>,
    inventory: &GraphemeInventory,
    images: &[&GrayImage],
) -> Result<Vec<Vec<Grapheme>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        for seq in student.logit_sequences(chunk)? {
            out.push(inventory.decode(&seq.decode()));
        }
    }
    Ok(out)
}

/// Splits word samples 90/10 (or `val_fraction`) under `seed`.
pub fn split_words(
    samples: &[WordSample],
    val_fraction: f64,
    seed: u64,
) -> (Vec<WordSample>, Vec<WordSample>, Vec<usize>, Vec<usize>) {
    let (t, v) = split_train_val(samples.len(), val_fraction, stream_seed(seed, "word-split"));
    let train = t.iter().map(|&i| samples[i].clone()).collect();
    let val = v.iter().map(|&i| samples[i].clone()).collect();
    (train, val, t, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::OptimizerKind;
    use crate::models::TeacherArch;
    use crate::synthgen::{generate_teacher_dataset, Augmentations, ProceduralRenderer, RenderSpec};

    fn inventory(n: usize) -> GraphemeInventory {
        let letters = ["ক", "খ", "গ", "ঘ", "চ", "ছ"];
        GraphemeInventory::from_counts(letters[..n].iter().map(|g| (Grapheme::new(*g).unwrap(), 10)), "t")
    }

    #[test]
    fn teacher_learns_and_is_deterministic() {
        let inv = inventory(3);
        let spec = RenderSpec {
            per_class_count: 30,
            image_size: 16,
            augmentations: Augmentations {
                noise: 0.02,
                ..Default::default()
            },
            ..Default::default()
        };
        let glyphs = generate_teacher_dataset(&inv, &spec, &ProceduralRenderer).unwrap();
        let cfg = TeacherConfig {
            width: 4,
            hidden: 16,
            input_size: 16,
            ..TeacherConfig::new(TeacherArch::Conv2, 3)
        };
        let optim = OptimSettings {
            epochs: 20,
            batch_size: 16,
            ..OptimSettings::teacher_default()
        };
        let a = train_teacher(cfg.clone(), &inv, &glyphs, &optim, 0.1, 1).unwrap();
        let b = train_teacher(cfg, &inv, &glyphs, &optim, 0.1, 1).unwrap();
        assert_eq!(a.log, b.log);
        assert!(a.log.last().unwrap().val_accuracy >= 0.9, "{:?}", a.log);
    }

    #[test]
    fn unknown_training_grapheme_is_an_error() {
        let inv = inventory(2);
        let words = vec![WordSample::new(GrayImage::new(16, 64), "কগ")];
        let err = encode_labels(&inv, &words).unwrap_err();
        assert!(matches!(err, Error::UnknownGrapheme { .. }), "{err}");
    }

    #[test]
    fn mismatched_teacher_source_is_rejected() {
        let inv = inventory(2);
        let words = vec![WordSample::new(GrayImage::new(16, 64), "কখ")];
        let cfg = StudentConfig::compact(3, 2, 4);
        let optim = OptimSettings {
            name: OptimizerKind::Adam,
            epochs: 1,
            ..OptimSettings::student_default()
        };
        let distill = DistillConfig {
            kd_mode: KdMode::Lila,
            ..Default::default()
        };
        let r = train_student(cfg, &distill, &optim, &inv, &words, &[], TeacherSource::None, 0);
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }
}
