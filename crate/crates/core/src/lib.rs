//! Distilling an isolated-character teacher into a CTC word recognizer.
//!
//! Modules, bottom-up: [`grapheme`] (normalization, segmentation,
//! inventories), [`synthgen`] (glyph and word rendering), [`nn`] and
//! [`models`] (layers, teacher classifiers, CRNN student), [`ctc`],
//! [`distill`] (softening, stacking, KD losses), [`metrics`], and
//! [`harness`] (manifests, training loops, the cross-corpus protocol).

pub mod ctc;
pub mod distill;
pub mod error;
pub mod grapheme;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod numeric;
pub mod synthgen;

pub use ctc::{ctc_greedy_decode, ctc_loss, CtcOutput};
pub use distill::{
    conventional_kd_loss, lila_boti_loss, project_super_teacher, select_verified_teacher_sample, soften,
    stack_teacher_outputs, DistillConfig, DistillLoss, KdMode, KdWeightMode, TeacherStack,
};
pub use error::{Error, Result};
pub use grapheme::{extract_graphemes, merge_inventories, normalize_text, Grapheme, GraphemeInventory};
pub use metrics::{crr, edit_distance, ned, wrr, EvalReport};
pub use models::{LogitSequence, Student, StudentConfig, Teacher, TeacherArch, TeacherConfig};
pub use synthgen::{GlyphSample, GrayImage, RenderSpec};
