use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty inventory")]
    EmptyInventory,

    #[error("unrenderable grapheme {0:?}")]
    UnrenderableGrapheme(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("input too narrow: backbone yields {got} columns, need {need}")]
    InputTooNarrow { got: usize, need: usize },

    #[error("label longer than output sequence ({n_x} > {n_seq})")]
    LabelTooLong { n_x: usize, n_seq: usize },

    #[error("empty label")]
    EmptyLabel,

    #[error("empty evaluation set")]
    EmptyPairs,

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("teacher index {index} out of range for {classes} teacher classes")]
    TeacherIndexOutOfRange { index: usize, classes: usize },

    #[error("no pool sample for grapheme {0:?}")]
    EmptyPool(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unresolvable image paths: {0:?}")]
    MissingImages(Vec<PathBuf>),

    #[error("grapheme {grapheme:?} in training label {label:?} is outside the student inventory")]
    UnknownGrapheme { grapheme: String, label: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown report format {0:?}")]
    UnknownFormat(String),

    #[error("protocol run {run} failed")]
    Protocol {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
