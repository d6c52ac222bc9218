use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::image::GrayImage;
use super::render::{render_glyph, GlyphRenderer, GlyphSample, RenderSpec};
use crate::error::{Error, IoContext, Result};
use crate::grapheme::{Grapheme, GraphemeInventory};

pub const GLYPH_MANIFEST: &str = "manifest.jsonl";

/// Exactly `per_class_count` samples per class, classes in inventory order.
pub fn generate_teacher_dataset(
    inv: &GraphemeInventory,
    spec: &RenderSpec,
    renderer: &dyn GlyphRenderer,
) -> Result<Vec<GlyphSample>> {
    if inv.is_empty() {
        return Err(Error::EmptyInventory);
    }
    spec.validate()?;
    let mut out = Vec::with_capacity(inv.len() * spec.per_class_count);
    for g in inv.graphemes() {
        for i in 0..spec.per_class_count {
            out.push(render_glyph(renderer, g, spec, i)?);
        }
    }
    Ok(out)
}

/// Hex SHA-256 over labels, seeds, indices and pixel values.
pub fn dataset_checksum(samples: &[GlyphSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.label.as_str().as_bytes());
        h.update([0]);
        h.update(s.seed.to_le_bytes());
        h.update((s.index as u64).to_le_bytes());
        s.image.hash_into(&mut h);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GlyphRecord {
    image_path: String,
    label: String,
    seed: u64,
    index: usize,
}

fn file_stem(g: &Grapheme) -> String {
    g.codepoints()
        .map(|c| format!("u{c:04X}"))
        .collect::<Vec<_>>()
        .join("-")
}

/// Writes 8-bit PNGs under `dir/images` and a JSON-lines manifest.
pub fn write_glyph_dataset(dir: &Path, samples: &[GlyphSample]) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).at(&images)?;
    let manifest_path = dir.join(GLYPH_MANIFEST);
    let mut manifest = fs::File::create(&manifest_path).at(&manifest_path)?;
    for s in samples {
        let rel = format!("images/{}_{:05}.png", file_stem(&s.label), s.index);
        s.image.save_png(&dir.join(&rel))?;
        let record = GlyphRecord {
            image_path: rel,
            label: s.label.to_string(),
            seed: s.seed,
            index: s.index,
        };
        writeln!(manifest, "{}", serde_json::to_string(&record)?).at(&manifest_path)?;
    }
    Ok(manifest_path)
}

pub fn read_glyph_dataset(dir: &Path) -> Result<Vec<GlyphSample>> {
    let manifest_path = dir.join(GLYPH_MANIFEST);
    let file = fs::File::open(&manifest_path).at(&manifest_path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(&manifest_path)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GlyphRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let label = Grapheme::new(record.label).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        out.push(GlyphSample {
            image: GrayImage::load(&dir.join(&record.image_path))?,
            label,
            seed: record.seed,
            index: record.index,
        });
    }
    Ok(out)
}
