//! Manifests, run configuration, training loops and the cross-corpus
//! evaluation protocol.

mod config;
mod manifest;
mod pipeline;
mod protocol;
mod report;
mod toy;
mod train;

pub use config::{
    DataPaths, OptimSettings, OptimizerKind, ProtocolSettings, RunConfig, StudentLayout, StudentSettings,
    TeacherSettings, OUTPUT_ROOT_ENV,
};
pub use manifest::{
    load_manifest, split_train_val, write_split_word_dataset, write_word_dataset, SplitTag, WordDatasetManifest,
    WordRecord, WordSample,
};
pub use pipeline::{
    evaluate_run, evaluate_student, gen_teacher_data, load_words, teacher_inventory, train_student_run,
    train_teacher_run, EvaluationRecord, StudentLog, TeacherLog, CONFIG_ECHO_FILE, REPORT_FILE, SPLITS_FILE,
    STUDENT_CHECKPOINT_FILE, STUDENT_LOG_FILE, SUMMARY_FILE, TEACHER_CHECKPOINT_FILE, TEACHER_DATA_DIR,
    TEACHER_INVENTORY_FILE, TEACHER_LOG_FILE,
};
pub use protocol::{run_protocol, Corpus, ProtocolModel, ProtocolReport, ProtocolRow, ProtocolSpec};
pub use report::{emit_report, write_report, ReportDocument, ReportFormat};
pub use toy::{
    generate_toy_corpus, toy_corpus_pair, toy_weights, ToyCorpus, ToyCorpusSpec, TOY_CLASSES, TOY_MINOR_WEIGHT,
    TOY_SUPER_EXTRA,
};
pub use train::{
    decode_batch, encode_labels, prepare_word_image, split_words, train_student, train_teacher, StudentEpoch,
    StudentRun, TeacherEpoch, TeacherRun, TeacherSource,
};
