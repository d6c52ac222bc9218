//! Synthetic isolated-glyph datasets for the character teacher, plus the
//! word renderer used to build toy handwriting corpora.

mod dataset;
mod image;
mod render;
mod words;

pub use dataset::{
    dataset_checksum, generate_teacher_dataset, read_glyph_dataset, write_glyph_dataset, GLYPH_MANIFEST,
};
pub use image::GrayImage;
pub(crate) use render::derive_seed;
pub use render::{
    render_glyph, renderer_for, AtlasRenderer, Augmentations, GlyphRenderer, GlyphSample, Placement,
    ProceduralRenderer, RenderSpec,
};
pub use words::{render_word, WriterStyle};
