//! Synthetic segmentation corpus.
//!
//! Each sample is a square RGB image of 1–4 filled shapes (disk, axis-aligned
//! rectangle, triangle) painted over a low-frequency textured background,
//! plus the per-pixel class mask. Class 0 is background; every shape carries
//! one foreground class and is painted in that class's palette colour.
//! Images are quantized to 8 bits in memory and read back from disk
//! bit-identically.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use waveseg::rng::SeededRng;
use waveseg::Tensor;

use crate::error::{HarnessError, Result};

/// Standard deviation of the additive pixel noise.
pub const NOISE_SIGMA: f64 = 0.05;
pub const MANIFEST: &str = "corpus.toml";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub size: usize,
    pub num_classes: usize,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(16) {
            return Err(HarnessError::config(
                "corpus.size",
                format!("must be a positive multiple of 16, got {}", self.size),
            ));
        }
        if !(2..=255).contains(&self.num_classes) {
            return Err(HarnessError::config(
                "corpus.num_classes",
                format!("must be in 2..=255, got {}", self.num_classes),
            ));
        }
        Ok(())
    }
}

/// One image and its mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub size: usize,
    /// `(3, size, size)` row-major, values in `[0, 1]` on the 1/255 grid.
    pub image: Vec<f64>,
    /// `(size, size)` class ids.
    pub mask: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub train: Vec<SyntheticSample>,
    pub val: Vec<SyntheticSample>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Triangle([(f64, f64); 3]),
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::Triangle(v) => {
                let side = |(ax, ay): (f64, f64), (bx, by): (f64, f64)| {
                    (bx - ax) * (y - ay) - (by - ay) * (x - ax)
                };
                let s = [side(v[0], v[1]), side(v[1], v[2]), side(v[2], v[0])];
                s.iter().all(|&d| d >= 0.0) || s.iter().all(|&d| d <= 0.0)
            }
        }
    }

    fn random(rng: &mut SeededRng, size: f64) -> Self {
        let cx = rng.uniform(size / 8.0, size * 7.0 / 8.0);
        let cy = rng.uniform(size / 8.0, size * 7.0 / 8.0);
        let r = rng.uniform(size / 10.0, size / 4.0);
        match rng.below(3) {
            0 => Shape::Disk { cx, cy, r },
            1 => {
                let hw = r * rng.uniform(0.6, 1.0);
                let hh = r * rng.uniform(0.6, 1.0);
                Shape::Rect {
                    x0: cx - hw,
                    y0: cy - hh,
                    x1: cx + hw,
                    y1: cy + hh,
                }
            }
            _ => {
                let theta = rng.uniform(0.0, 2.0 * PI);
                let mut v = [(0.0, 0.0); 3];
                for (k, p) in v.iter_mut().enumerate() {
                    let t = theta + 2.0 * PI * k as f64 / 3.0 + rng.uniform(-0.3, 0.3);
                    let rr = r * rng.uniform(1.0, 1.3);
                    *p = (cx + rr * t.cos(), cy + rr * t.sin());
                }
                Shape::Triangle(v)
            }
        }
    }
}

/// Base colour of a foreground class: evenly spaced hues.
pub fn class_colour(class: usize, num_classes: usize) -> [f64; 3] {
    let h = 6.0 * (class - 1) as f64 / (num_classes - 1) as f64;
    let (s, v) = (0.75, 0.85);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Sum of a few long-wavelength plane waves, at most two cycles per image.
struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn random(rng: &mut SeededRng) -> Self {
        let waves = (0..3)
            .map(|_| {
                (
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(0.0, 2.0 * PI),
                    rng.uniform(0.02, 0.05),
                )
            })
            .collect();
        Self { waves }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        self.waves
            .iter()
            .map(|&(fx, fy, phase, amp)| amp * (2.0 * PI * (fx * u + fy * v) + phase).sin())
            .sum()
    }
}

pub fn generate_sample(seed: u64, label: &str, size: usize, num_classes: usize) -> SyntheticSample {
    let mut rng = SeededRng::derived(seed, label);
    let s = size as f64;
    let mut mask = vec![0u8; size * size];
    let mut colour_of = vec![[0.0; 3]; num_classes.max(1)];
    let tint = rng.uniform(-0.05, 0.05);
    let grey = rng.uniform(0.35, 0.55);
    colour_of[0] = [grey + tint, grey, grey - tint];
    for (c, slot) in colour_of.iter_mut().enumerate().skip(1) {
        let base = class_colour(c, num_classes);
        for (ch, v) in slot.iter_mut().enumerate() {
            *v = base[ch] + rng.uniform(-0.05, 0.05);
        }
    }
    let shapes = 1 + rng.below(4);
    for _ in 0..shapes {
        let class = 1 + rng.below(num_classes - 1);
        let shape = Shape::random(&mut rng, s);
        for y in 0..size {
            for x in 0..size {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    mask[y * size + x] = class as u8;
                }
            }
        }
    }
    let textures: Vec<Texture> = (0..3).map(|_| Texture::random(&mut rng)).collect();
    let mut image = vec![0.0; 3 * size * size];
    for (ch, tex) in textures.iter().enumerate() {
        for y in 0..size {
            for x in 0..size {
                let p = y * size + x;
                let base = colour_of[mask[p] as usize][ch];
                let v = base + tex.at(x as f64 / s, y as f64 / s) + NOISE_SIGMA * rng.normal();
                image[ch * size * size + p] = quantize(v);
            }
        }
    }
    SyntheticSample { size, image, mask }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Deterministic in `spec.seed`; each sample depends only on the seed, its split and its index.
pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let split = |name: &str, n: usize| {
        (0..n)
            .map(|i| {
                generate_sample(
                    spec.seed,
                    &format!("{name}/{i}"),
                    spec.size,
                    spec.num_classes,
                )
            })
            .collect()
    };
    Ok(Corpus {
        spec: spec.clone(),
        train: split("train", spec.n_train),
        val: split("val", spec.n_val),
    })
}

fn sample_paths(dir: &Path, split: &str, i: usize) -> (PathBuf, PathBuf) {
    let base = dir.join(split);
    (
        base.join(format!("{i:05}.ppm")),
        base.join(format!("{i:05}.pgm")),
    )
}

fn write_pnm(
    path: &Path,
    data: &[u8],
    size: usize,
    colour: ExtendedColorType,
    subtype: PnmSubtype,
) -> Result<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(data, size as u32, size as u32, colour)
        .map_err(|source| HarnessError::Image {
            path: path.to_path_buf(),
            source,
        })
}

impl SyntheticSample {
    /// Interleaved 8-bit RGB.
    pub fn rgb_bytes(&self) -> Vec<u8> {
        let hw = self.size * self.size;
        (0..hw)
            .flat_map(|p| (0..3).map(move |ch| (ch, p)))
            .map(|(ch, p)| (self.image[ch * hw + p] * 255.0).round() as u8)
            .collect()
    }

    pub fn save(&self, image_path: &Path, mask_path: &Path) -> Result<()> {
        write_pnm(
            image_path,
            &self.rgb_bytes(),
            self.size,
            ExtendedColorType::Rgb8,
            PnmSubtype::Pixmap(SampleEncoding::Binary),
        )?;
        write_pnm(
            mask_path,
            &self.mask,
            self.size,
            ExtendedColorType::L8,
            PnmSubtype::Graymap(SampleEncoding::Binary),
        )
    }

    pub fn load(image_path: &Path, mask_path: &Path, num_classes: usize) -> Result<Self> {
        let open = |path: &Path| {
            image::open(path).map_err(|source| HarnessError::Image {
                path: path.to_path_buf(),
                source,
            })
        };
        let rgb = open(image_path)?.into_rgb8();
        let mask = open(mask_path)?.into_luma8();
        if rgb.width() != rgb.height() || mask.dimensions() != rgb.dimensions() {
            return Err(HarnessError::Corpus(format!(
                "{}: image {:?} and mask {:?} must be equal squares",
                image_path.display(),
                rgb.dimensions(),
                mask.dimensions()
            )));
        }
        let size = rgb.width() as usize;
        let hw = size * size;
        let mut image = vec![0.0; 3 * hw];
        for (p, px) in rgb.pixels().enumerate() {
            for ch in 0..3 {
                image[ch * hw + p] = px.0[ch] as f64 / 255.0;
            }
        }
        let mask = mask.into_raw();
        if let Some(&bad) = mask.iter().find(|&&m| m as usize >= num_classes) {
            return Err(HarnessError::Corpus(format!(
                "{}: class id {bad} exceeds {num_classes} classes",
                mask_path.display()
            )));
        }
        Ok(Self { size, image, mask })
    }
}

impl Corpus {
    /// Writes `corpus.toml`, `train/NNNNN.{ppm,pgm}` and `val/NNNNN.{ppm,pgm}`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for split in ["train", "val"] {
            let d = dir.join(split);
            std::fs::create_dir_all(&d).map_err(|e| HarnessError::io(&d, e))?;
        }
        let manifest = dir.join(MANIFEST);
        let text = toml::to_string(&self.spec).expect("corpus spec is always serializable");
        std::fs::write(&manifest, text).map_err(|e| HarnessError::io(&manifest, e))?;
        for (split, samples) in [("train", &self.train), ("val", &self.val)] {
            for (i, s) in samples.iter().enumerate() {
                let (img, mask) = sample_paths(dir, split, i);
                s.save(&img, &mask)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = dir.join(MANIFEST);
        let text =
            std::fs::read_to_string(&manifest).map_err(|e| HarnessError::io(&manifest, e))?;
        let spec: CorpusSpec = toml::from_str(&text).map_err(|e| HarnessError::Config {
            path: Some(manifest.clone()),
            line: None,
            field: None,
            message: e.message().to_string(),
        })?;
        spec.validate()?;
        let split = |name: &str, n: usize| -> Result<Vec<SyntheticSample>> {
            (0..n)
                .map(|i| {
                    let (img, mask) = sample_paths(dir, name, i);
                    let s = SyntheticSample::load(&img, &mask, spec.num_classes)?;
                    if s.size != spec.size {
                        return Err(HarnessError::Corpus(format!(
                            "{}: size {} differs from manifest size {}",
                            img.display(),
                            s.size,
                            spec.size
                        )));
                    }
                    Ok(s)
                })
                .collect()
        };
        Ok(Self {
            train: split("train", spec.n_train)?,
            val: split("val", spec.n_val)?,
            spec,
        })
    }
}

/// Stacks images into a `(b, 3, size, size)` tensor.
pub fn image_batch(samples: &[&SyntheticSample]) -> Tensor {
    let size = samples.first().map_or(0, |s| s.size);
    let data: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.image.iter().copied())
        .collect();
    Tensor::new(&[samples.len(), 3, size, size], data).expect("samples share one size")
}

impl SyntheticSample {
    /// One of the eight symmetries of the square: bit 0 mirrors columns,
    /// bit 1 mirrors rows, bit 2 transposes (applied last).
    pub fn transformed(&self, code: u8) -> SyntheticSample {
        let s = self.size;
        let source = |r: usize, c: usize| {
            let (r, c) = if code & 4 != 0 { (c, r) } else { (r, c) };
            let r = if code & 2 != 0 { s - 1 - r } else { r };
            let c = if code & 1 != 0 { s - 1 - c } else { c };
            r * s + c
        };
        let mut image = vec![0.0; self.image.len()];
        let mut mask = vec![0; self.mask.len()];
        for r in 0..s {
            for c in 0..s {
                let src = source(r, c);
                mask[r * s + c] = self.mask[src];
                for ch in 0..3 {
                    image[ch * s * s + r * s + c] = self.image[ch * s * s + src];
                }
            }
        }
        SyntheticSample {
            size: s,
            image,
            mask,
        }
    }
}

/// Concatenated masks in batch order.
pub fn label_batch(samples: &[&SyntheticSample]) -> Vec<u8> {
    samples
        .iter()
        .flat_map(|s| s.mask.iter().copied())
        .collect()
}
