//! Temperature softening, teacher-sample verification, prediction stacking,
//! super-teacher projection and the two distillation losses.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::ctc_loss_from_logits;
use crate::error::{Error, Result};
use crate::grapheme::Grapheme;
use crate::models::LogitSequence;
use crate::numeric::{log_softmax, softmax};
use crate::synthgen::GlyphSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdMode {
    /// CTC only.
    None,
    /// Same-architecture sequence teacher, time-aligned KL.
    Conventional,
    /// Character teacher over the student's own classes, stacked targets.
    Lila,
    /// Character teacher over a superset of the student's classes.
    Super,
}

impl KdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            KdMode::None => "none",
            KdMode::Conventional => "conventional",
            KdMode::Lila => "lila",
            KdMode::Super => "super",
        }
    }
}

impl std::str::FromStr for KdMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(KdMode::None),
            "conventional" => Ok(KdMode::Conventional),
            "lila" => Ok(KdMode::Lila),
            "super" => Ok(KdMode::Super),
            other => Err(Error::InvalidConfig(format!("unknown kd mode {other:?}"))),
        }
    }
}

/// How the KL term is weighted against CTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdWeightMode {
    /// `(1 - alpha) * CTC + (tau^2 + alpha) * KL`
    Paper,
    /// `(1 - alpha) * CTC + alpha * tau^2 * KL`
    Hinton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub alpha: f64,
    pub tau: f64,
    pub kd_mode: KdMode,
    pub kd_weight_mode: KdWeightMode,
    pub retry_cap: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            tau: 2.0,
            kd_mode: KdMode::None,
            kd_weight_mode: KdWeightMode::Paper,
            retry_cap: 10,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::NonPositiveTemperature(self.tau));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.retry_cap == 0 {
            return Err(Error::InvalidConfig("retry_cap must be at least 1".into()));
        }
        Ok(())
    }

    /// `(ctc weight, kd weight)`.
    pub fn weights(&self) -> (f64, f64) {
        let tau2 = self.tau * self.tau;
        let kd = match self.kd_weight_mode {
            KdWeightMode::Paper => tau2 + self.alpha,
            KdWeightMode::Hinton => self.alpha * tau2,
        };
        (1.0 - self.alpha, kd)
    }
}

/// `softmax(logits / tau)`.
pub fn soften(logits: ArrayView1<f64>, tau: f64) -> Result<Array1<f64>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::NonPositiveTemperature(tau));
    }
    Ok(softmax(logits.mapv(|z| z / tau).view()))
}

/// Stacked per-frame teacher targets; the last column (blank) carries no mass.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStack(Array2<f64>);

impl TeacherStack {
    pub fn n_seq(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// Sizes of maximal runs of identical consecutive rows.
    pub fn block_lengths(&self) -> Vec<usize> {
        let mut blocks: Vec<usize> = Vec::new();
        let mut prev: Option<ArrayView1<f64>> = None;
        for row in self.0.axis_iter(Axis(0)) {
            match (&prev, blocks.last_mut()) {
                (Some(p), Some(n)) if *p == row => *n += 1,
                _ => blocks.push(1),
            }
            prev = Some(row);
        }
        blocks
    }
}

/// Repeats each grapheme's distribution `n_seq / n_x` times in label order and
/// fills the remaining rows with the last distribution, then appends a zero
/// blank column.
pub fn stack_teacher_outputs(per_grapheme: &[Array1<f64>], n_seq: usize) -> Result<TeacherStack> {
    let n_x = per_grapheme.len();
    if n_x == 0 {
        return Err(Error::EmptyLabel);
    }
    if n_x > n_seq {
        return Err(Error::LabelTooLong { n_x, n_seq });
    }
    let classes = per_grapheme[0].len();
    if per_grapheme.iter().any(|v| v.len() != classes) {
        return Err(Error::ShapeMismatch("teacher vectors differ in length".into()));
    }
    let reps = n_seq / n_x;
    let mut stack = Array2::zeros((n_seq, classes + 1));
    let mut row = 0;
    for dist in per_grapheme {
        for _ in 0..reps {
            stack.slice_mut(s![row, ..classes]).assign(dist);
            row += 1;
        }
    }
    let last = &per_grapheme[n_x - 1];
    while row < n_seq {
        stack.slice_mut(s![row, ..classes]).assign(last);
        row += 1;
    }
    Ok(TeacherStack(stack))
}

/// Softens only the teacher logits selected by `mapping` (student index ->
/// teacher index), giving a distribution over the student classes.
pub fn project_super_teacher(teacher_logits: ArrayView1<f64>, mapping: &[usize], tau: f64) -> Result<Array1<f64>> {
    let classes = teacher_logits.len();
    let mut seen = vec![false; classes];
    for &t in mapping {
        if t >= classes {
            return Err(Error::TeacherIndexOutOfRange { index: t, classes });
        }
        if std::mem::replace(&mut seen[t], true) {
            return Err(Error::InvalidConfig(format!("teacher index {t} mapped twice")));
        }
    }
    let sub: Array1<f64> = mapping.iter().map(|&t| teacher_logits[t]).collect();
    soften(sub.view(), tau)
}

/// Scores an isolated glyph image over the teacher's classes.
pub trait TeacherScorer {
    fn score(&self, sample: &GlyphSample) -> Result<Array1<f64>>;
}

impl<F> TeacherScorer for F
where
    F: Fn(&GlyphSample) -> Result<Array1<f64>>,
{
    fn score(&self, sample: &GlyphSample) -> Result<Array1<f64>> {
        self(sample)
    }
}

/// Isolated glyphs grouped by class, each group in a seeded shuffled order.
#[derive(Debug, Clone)]
pub struct GlyphPool {
    samples: Vec<GlyphSample>,
    order: HashMap<Grapheme, Vec<usize>>,
}

impl GlyphPool {
    pub fn new(samples: Vec<GlyphSample>, seed: u64) -> Self {
        let mut groups: BTreeMap<Grapheme, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            groups.entry(s.label.clone()).or_default().push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = groups
            .into_iter()
            .map(|(g, mut idx)| {
                idx.shuffle(&mut rng);
                (g, idx)
            })
            .collect();
        Self { samples, order }
    }

    pub fn samples(&self) -> &[GlyphSample] {
        &self.samples
    }

    pub fn class_len(&self, g: &Grapheme) -> usize {
        self.order.get(g).map_or(0, Vec::len)
    }
}

/// Per-class read positions into a [`GlyphPool`].
#[derive(Debug, Clone, Default)]
pub struct PoolCursor {
    next: HashMap<Grapheme, usize>,
}

#[derive(Debug, Clone)]
pub struct VerifiedSample {
    pub logits: Array1<f64>,
    /// `soften(logits, tau)` over the teacher classes.
    pub probs: Array1<f64>,
    pub pool_index: usize,
    pub teacher_calls: usize,
    /// No candidate within the retry cap was classified correctly.
    pub fallback: bool,
}

/// Draws pool samples of `g` until the teacher's argmax equals
/// `teacher_class`. After `retry_cap` misses (or once the class has been
/// exhausted) the candidate with the most mass on `teacher_class` is returned
/// and flagged.
pub fn select_verified_teacher_sample(
    g: &Grapheme,
    teacher_class: usize,
    teacher: &dyn TeacherScorer,
    pool: &GlyphPool,
    cursor: &mut PoolCursor,
    retry_cap: usize,
    tau: f64,
) -> Result<VerifiedSample> {
    let order = pool
        .order
        .get(g)
        .filter(|o| !o.is_empty())
        .ok_or_else(|| Error::EmptyPool(g.to_string()))?;
    let start = cursor.next.entry(g.clone()).or_insert(0);
    let attempts = retry_cap.max(1).min(order.len());
    let mut best: Option<VerifiedSample> = None;
    for attempt in 0..attempts {
        let pool_index = order[(*start + attempt) % order.len()];
        let logits = teacher.score(&pool.samples[pool_index])?;
        if teacher_class >= logits.len() {
            return Err(Error::TeacherIndexOutOfRange {
                index: teacher_class,
                classes: logits.len(),
            });
        }
        let probs = soften(logits.view(), tau)?;
        let verified = crate::numeric::argmax(logits.view()) == teacher_class;
        let candidate = VerifiedSample {
            logits,
            probs,
            pool_index,
            teacher_calls: attempt + 1,
            fallback: !verified,
        };
        if verified {
            *start = (*start + attempt + 1) % order.len();
            return Ok(candidate);
        }
        let better = best
            .as_ref()
            .is_none_or(|b| candidate.probs[teacher_class] > b.probs[teacher_class]);
        if better {
            best = Some(candidate);
        }
    }
    *start = (*start + attempts) % order.len();
    let mut best = best.expect("at least one attempt");
    best.teacher_calls = attempts;
    log::debug!("teacher never verified grapheme {g:?} within {attempts} draws; using best candidate");
    Ok(best)
}

/// Loss value, its parts, and the gradient with respect to the student logits.
#[derive(Debug, Clone)]
pub struct DistillLoss {
    pub total: f64,
    pub ctc: f64,
    pub kl: f64,
    pub grad: Array2<f64>,
    pub feasible: bool,
}

/// Mean over frames of `KL(target_t || softmax(student_t / tau))` and its
/// gradient. Zero-mass target entries contribute nothing.
fn kl_to_student(targets: ArrayView2<f64>, student: ArrayView2<f64>, tau: f64) -> (f64, Array2<f64>) {
    let frames = student.nrows() as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(student.raw_dim());
    for ((p, z), mut g) in targets
        .axis_iter(Axis(0))
        .zip(student.axis_iter(Axis(0)))
        .zip(grad.axis_iter_mut(Axis(0)))
    {
        let log_q = log_softmax(z.mapv(|v| v / tau).view());
        let mass: f64 = p.sum();
        for k in 0..p.len() {
            if p[k] > 0.0 {
                total += p[k] * (p[k].ln() - log_q[k]);
            }
            g[k] = (log_q[k].exp() * mass - p[k]) / (tau * frames);
        }
    }
    (total / frames, grad)
}

fn combine(
    student: &LogitSequence,
    target: &[usize],
    soft_targets: ArrayView2<f64>,
    cfg: &DistillConfig,
) -> Result<DistillLoss> {
    cfg.validate()?;
    let logits = student.scores();
    let blank = student.blank();
    let ctc = ctc_loss_from_logits(logits, target, blank)?;
    let (w_ctc, w_kd) = cfg.weights();
    if !ctc.feasible {
        return Ok(DistillLoss {
            total: f64::INFINITY,
            ctc: ctc.loss,
            kl: 0.0,
            grad: ctc.grad,
            feasible: false,
        });
    }
    if w_kd == 0.0 {
        return Ok(DistillLoss {
            total: w_ctc * ctc.loss,
            ctc: ctc.loss,
            kl: 0.0,
            grad: ctc.grad * w_ctc,
            feasible: true,
        });
    }
    let (kl, kl_grad) = kl_to_student(soft_targets, logits, cfg.tau);
    Ok(DistillLoss {
        total: w_ctc * ctc.loss + w_kd * kl,
        ctc: ctc.loss,
        kl,
        grad: ctc.grad * w_ctc + kl_grad * w_kd,
        feasible: true,
    })
}

/// CTC against the label plus KL from the stacked character-teacher targets.
pub fn lila_boti_loss(
    student: &LogitSequence,
    target: &[usize],
    stack: &TeacherStack,
    cfg: &DistillConfig,
) -> Result<DistillLoss> {
    if stack.0.dim() != student.scores().dim() {
        return Err(Error::ShapeMismatch(format!(
            "teacher stack {:?} vs student {:?}",
            stack.0.dim(),
            student.scores().dim()
        )));
    }
    combine(student, target, stack.targets(), cfg)
}

/// CTC plus frame-wise KL from a same-shape sequence teacher, both softened
/// at `tau`.
pub fn conventional_kd_loss(
    student: &LogitSequence,
    teacher: &LogitSequence,
    target: &[usize],
    cfg: &DistillConfig,
) -> Result<DistillLoss> {
    if teacher.scores().dim() != student.scores().dim() {
        return Err(Error::ShapeMismatch(format!(
            "teacher logits {:?} vs student {:?}",
            teacher.scores().dim(),
            student.scores().dim()
        )));
    }
    cfg.validate()?;
    let mut soft = teacher.scores().to_owned();
    for mut row in soft.axis_iter_mut(Axis(0)) {
        let p = soften(row.view(), cfg.tau)?;
        row.assign(&p);
    }
    combine(student, target, soft.view(), cfg)
}
