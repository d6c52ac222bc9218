use std::collections::HashMap;
use std::fmt::Debug;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::read_glyph_dataset;
use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::grapheme::Grapheme;

/// Mixes integers and byte strings into one 64-bit seed (FNV-1a followed by
/// a splitmix finalizer).
pub(crate) fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augmentations {
    /// Uniform rotation in `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Uniform shift in `[-translation_px, translation_px]` on each axis.
    pub translation_px: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
}

impl Default for Augmentations {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            scale_min: 0.9,
            scale_max: 1.1,
            translation_px: 2.0,
            noise: 0.05,
        }
    }
}

impl Augmentations {
    pub fn none() -> Self {
        Self {
            rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            translation_px: 0.0,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSpec {
    /// `"procedural"` or `"atlas:<dataset dir>"`.
    pub renderer: String,
    pub per_class_count: usize,
    pub augmentations: Augmentations,
    pub seed: u64,
    /// Side of the square output image.
    pub image_size: usize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            renderer: "procedural".into(),
            per_class_count: 160,
            augmentations: Augmentations::default(),
            seed: 0,
            image_size: 32,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        let a = &self.augmentations;
        let finite = [a.rotation_deg, a.scale_min, a.scale_max, a.translation_px, a.noise]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if self.per_class_count == 0 {
            return Err(Error::InvalidConfig("per_class_count must be at least 1".into()));
        }
        if !finite || a.scale_min <= 0.0 || a.scale_min > a.scale_max {
            return Err(Error::InvalidConfig(format!("bad augmentation ranges {a:?}")));
        }
        if self.image_size < 4 {
            return Err(Error::InvalidConfig("image_size must be at least 4".into()));
        }
        Ok(())
    }
}

/// Geometric placement of a glyph inside its canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub rotation_rad: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Placement {
    pub const IDENTITY: Placement = Placement {
        rotation_rad: 0.0,
        scale: 1.0,
        dx: 0.0,
        dy: 0.0,
    };
}

/// Backend that draws a single grapheme.
pub trait GlyphRenderer: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn draw(&self, g: &Grapheme, height: usize, width: usize, placement: &Placement) -> Result<GrayImage>;
}

pub(crate) type Stroke = Vec<(f64, f64)>;

fn is_inkless(c: char) -> bool {
    c.is_whitespace() || c.is_control() || matches!(c, '\u{200B}'..='\u{200F}' | '\u{FEFF}')
}

fn codepoint_strokes(c: char) -> Vec<Stroke> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"glyph", &(c as u32).to_le_bytes()]));
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| {
            let points = rng.random_range(2..=3);
            (0..points)
                .map(|_| (rng.random_range(0.15..0.85), rng.random_range(0.25..0.85)))
                .collect()
        })
        .collect()
}

/// Stroke skeleton of a grapheme in the unit square: the union of per
/// codepoint strokes, plus a shared headline when any codepoint is a
/// consonant.
pub(crate) fn skeleton(g: &Grapheme) -> Result<Vec<Stroke>> {
    let mut strokes = Vec::new();
    let mut headline = false;
    for c in g.as_str().chars().filter(|&c| !is_inkless(c)) {
        headline |= crate::grapheme::segment_class_is_consonant(c);
        strokes.extend(codepoint_strokes(c));
    }
    if strokes.is_empty() {
        return Err(Error::UnrenderableGrapheme(g.to_string()));
    }
    if headline {
        strokes.push(vec![(0.12, 0.18), (0.88, 0.18)]);
    }
    Ok(strokes)
}

/// 2x2 linear map applied to glyph coordinates centred on the glyph box.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Frame {
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    pub m: [[f64; 2]; 2],
    pub thickness: f64,
}

impl Frame {
    pub fn new(cx: f64, cy: f64, size: f64, rotation: f64, scale: f64, shear: f64, thickness: f64) -> Self {
        let (s, c) = rotation.sin_cos();
        // rotate(scale(shear(p)))
        let m = [
            [scale * c, scale * (c * shear - s)],
            [scale * s, scale * (s * shear + c)],
        ];
        Self {
            cx,
            cy,
            size,
            m,
            thickness,
        }
    }

    fn map(&self, (u, v): (f64, f64)) -> (f64, f64) {
        let (x, y) = ((u - 0.5) * self.size, (v - 0.5) * self.size);
        (
            self.cx + self.m[0][0] * x + self.m[0][1] * y,
            self.cy + self.m[1][0] * x + self.m[1][1] * y,
        )
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Anti-aliased stroke rasterization, max-composited onto `canvas`.
pub(crate) fn rasterize(canvas: &mut GrayImage, strokes: &[Stroke], frame: &Frame) {
    let segments: Vec<((f64, f64), (f64, f64))> = strokes
        .iter()
        .flat_map(|s| s.windows(2).map(|w| (frame.map(w[0]), frame.map(w[1]))))
        .collect();
    let reach = frame.thickness / 2.0 + 1.0;
    let (h, w) = (canvas.height(), canvas.width());
    for &(a, b) in &segments {
        let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
        let y1 = ((a.1.max(b.1) + reach).ceil().max(0.0) as usize).min(h);
        let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + reach).ceil().max(0.0) as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                let v = (frame.thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0) as f32;
                if v > canvas.get(y, x) {
                    canvas.set(y, x, v);
                }
            }
        }
    }
}

/// Font-free renderer drawing a fixed stroke pattern per codepoint.
#[derive(Debug, Clone, Default)]
pub struct ProceduralRenderer;

impl GlyphRenderer for ProceduralRenderer {
    fn name(&self) -> &str {
        "procedural"
    }

    fn draw(&self, g: &Grapheme, height: usize, width: usize, p: &Placement) -> Result<GrayImage> {
        let strokes = skeleton(g)?;
        let size = height.min(width) as f64;
        let frame = Frame::new(
            width as f64 / 2.0 + p.dx,
            height as f64 / 2.0 + p.dy,
            size,
            p.rotation_rad,
            p.scale,
            0.0,
            (size * 0.08).max(1.0),
        );
        let mut canvas = GrayImage::new(height, width);
        rasterize(&mut canvas, &strokes, &frame);
        Ok(canvas)
    }
}

/// Renderer backed by one pre-drawn bitmap per grapheme (for example glyphs
/// exported from a font). Graphemes without a bitmap are unrenderable.
#[derive(Debug, Clone, Default)]
pub struct AtlasRenderer {
    glyphs: HashMap<Grapheme, GrayImage>,
}

impl AtlasRenderer {
    pub fn new(glyphs: HashMap<Grapheme, GrayImage>) -> Self {
        Self { glyphs }
    }

    /// Uses the first image of each label in a glyph dataset directory.
    pub fn from_dataset_dir(dir: &Path) -> Result<Self> {
        let mut glyphs = HashMap::new();
        for s in read_glyph_dataset(dir)? {
            glyphs.entry(s.label).or_insert(s.image);
        }
        Ok(Self { glyphs })
    }
}

impl GlyphRenderer for AtlasRenderer {
    fn name(&self) -> &str {
        "atlas"
    }

    fn draw(&self, g: &Grapheme, height: usize, width: usize, p: &Placement) -> Result<GrayImage> {
        let src = self
            .glyphs
            .get(g)
            .ok_or_else(|| Error::UnrenderableGrapheme(g.to_string()))?
            .resize_pad(height, width);
        // inverse affine map with bilinear sampling
        let (s, c) = p.rotation_rad.sin_cos();
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let mut out = GrayImage::new(height, width);
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (x as f64 + 0.5 - cx - p.dx, y as f64 + 0.5 - cy - p.dy);
                let u = (c * px + s * py) / p.scale + cx - 0.5;
                let v = (-s * px + c * py) / p.scale + cy - 0.5;
                out.set(y, x, bilinear(&src, u, v));
            }
        }
        Ok(out)
    }
}

fn bilinear(img: &GrayImage, u: f64, v: f64) -> f32 {
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = ((u - x0) as f32, (v - y0) as f32);
    let px = |x: f64, y: f64| -> f32 {
        if x < 0.0 || y < 0.0 || x >= img.width() as f64 || y >= img.height() as f64 {
            0.0
        } else {
            img.get(y as usize, x as usize)
        }
    };
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1.0, y0) * fx;
    let bottom = px(x0, y0 + 1.0) * (1.0 - fx) + px(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resolves a renderer name from a [`RenderSpec`].
pub fn renderer_for(spec: &RenderSpec) -> Result<Box<dyn GlyphRenderer>> {
    match spec.renderer.as_str() {
        "procedural" => Ok(Box::new(ProceduralRenderer)),
        other => match other.strip_prefix("atlas:") {
            Some(dir) => Ok(Box::new(AtlasRenderer::from_dataset_dir(Path::new(dir))?)),
            None => Err(Error::InvalidConfig(format!("unknown renderer {other:?}"))),
        },
    }
}

pub(crate) fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

pub(crate) fn add_noise(img: &mut GrayImage, rng: &mut impl Rng, sigma: f64) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
        for v in img.pixels_mut() {
            *v = (*v + normal.sample(rng) as f32).clamp(0.0, 1.0);
        }
    }
}

/// One isolated glyph image with its class and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSample {
    pub image: GrayImage,
    pub label: Grapheme,
    pub seed: u64,
    pub index: usize,
}

/// Deterministic in `(g, spec.seed, instance_index)`.
pub fn render_glyph(
    renderer: &dyn GlyphRenderer,
    g: &Grapheme,
    spec: &RenderSpec,
    instance_index: usize,
) -> Result<GlyphSample> {
    spec.validate()?;
    if instance_index >= spec.per_class_count {
        return Err(Error::InvalidConfig(format!(
            "instance {instance_index} beyond per_class_count {}",
            spec.per_class_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        &spec.seed.to_le_bytes(),
        g.as_str().as_bytes(),
        &(instance_index as u64).to_le_bytes(),
    ]));
    let a = &spec.augmentations;
    let placement = Placement {
        rotation_rad: symmetric(&mut rng, a.rotation_deg).to_radians(),
        scale: if a.scale_min == a.scale_max {
            a.scale_min
        } else {
            rng.random_range(a.scale_min..=a.scale_max)
        },
        dx: symmetric(&mut rng, a.translation_px),
        dy: symmetric(&mut rng, a.translation_px),
    };
    let mut image = renderer.draw(g, spec.image_size, spec.image_size, &placement)?;
    add_noise(&mut image, &mut rng, a.noise);
    Ok(GlyphSample {
        image,
        label: g.clone(),
        seed: spec.seed,
        index: instance_index,
    })
}
