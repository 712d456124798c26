//! Procedural multi-domain labeled image datasets.
//!
//! Three generators mirror the data regimes the experiments need: styled
//! shapes (PACS-like domains plus the planted shade/texture shortcuts), a
//! two-class color dataset with a tunable spurious color cue, and rotated
//! shapes. Generation is a pure function of `(generator, config, seed)`:
//! every sample draws from its own RNG stream keyed by
//! `(seed, class, domain, index)`, so cells can be produced in any order or
//! in parallel without changing a byte.

pub mod augment;
pub mod glyph;
pub mod style;

pub use augment::{augment, hflip, normalize, AugConfig};
pub use style::Style;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DgError, Result};
use crate::rng::{salt, Stream};
use crate::tensor::Tensor;

use glyph::Glyph;

/// Collection of images carrying class and domain labels, plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    images: Vec<f64>,
    class_ids: Vec<usize>,
    domain_ids: Vec<usize>,
    class_count: usize,
    domain_count: usize,
    height: usize,
    width: usize,
    generator: String,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    generator: String,
    seed: u64,
    class_count: usize,
    domain_count: usize,
    channels: usize,
    height: usize,
    width: usize,
    sample_count: usize,
}

impl DatasetBundle {
    fn with_capacity(
        class_count: usize,
        domain_count: usize,
        height: usize,
        width: usize,
        generator: String,
        seed: u64,
    ) -> Self {
        DatasetBundle {
            images: Vec::new(),
            class_ids: Vec::new(),
            domain_ids: Vec::new(),
            class_count,
            domain_count,
            height,
            width,
            generator,
            seed,
        }
    }

    fn push_sample(&mut self, image: Vec<f64>, class_id: usize, domain_id: usize) {
        debug_assert_eq!(image.len(), self.image_len());
        self.images.extend_from_slice(&image);
        self.class_ids.push(class_id);
        self.domain_ids.push(domain_id);
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn domain_count(&self) -> usize {
        self.domain_count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn generator(&self) -> &str {
        &self.generator
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn image_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn class_of(&self, index: usize) -> usize {
        self.class_ids[index]
    }

    pub fn domain_of(&self, index: usize) -> usize {
        self.domain_ids[index]
    }

    /// Raw `[3, h, w]` pixels of one sample.
    pub fn image_slice(&self, index: usize) -> &[f64] {
        let n = self.image_len();
        &self.images[index * n..(index + 1) * n]
    }

    pub fn image(&self, index: usize) -> Tensor<f64> {
        Tensor::from_vec(
            vec![3, self.height, self.width],
            self.image_slice(index).to_vec(),
        )
        .expect("bundle image shape")
    }

    /// Flat pixel buffer of the whole bundle (samples in manifest order).
    pub fn raw_data(&self) -> &[f64] {
        &self.images
    }

    /// Indices of every sample in cell `(class, domain)`, ascending.
    pub fn cell_indices(&self, class_id: usize, domain_id: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.class_ids[i] == class_id && self.domain_ids[i] == domain_id)
            .collect()
    }

    /// Indices of every sample in `domain`, ascending.
    pub fn domain_indices(&self, domain_id: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.domain_ids[i] == domain_id)
            .collect()
    }

    /// Persists the bundle as `manifest.json` + `data.bin` (raw 64-bit
    /// little-endian floats, row-major, samples in manifest order) +
    /// `labels.csv` (`index,class,domain`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| DgError::io(dir, e))?;
        let manifest = Manifest {
            generator: self.generator.clone(),
            seed: self.seed,
            class_count: self.class_count,
            domain_count: self.domain_count,
            channels: 3,
            height: self.height,
            width: self.width,
            sample_count: self.len(),
        };
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| DgError::Parse {
                path: manifest_path.clone(),
                message: e.to_string(),
            })?;
        fs::write(&manifest_path, json).map_err(|e| DgError::io(&manifest_path, e))?;

        let data_path = dir.join("data.bin");
        let mut bytes = Vec::with_capacity(self.images.len() * 8);
        for v in &self.images {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&data_path, bytes).map_err(|e| DgError::io(&data_path, e))?;

        let labels_path = dir.join("labels.csv");
        let mut out = fs::File::create(&labels_path).map_err(|e| DgError::io(&labels_path, e))?;
        writeln!(out, "index,class,domain").map_err(|e| DgError::io(&labels_path, e))?;
        for i in 0..self.len() {
            writeln!(out, "{},{},{}", i, self.class_ids[i], self.domain_ids[i])
                .map_err(|e| DgError::io(&labels_path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text =
            fs::read_to_string(&manifest_path).map_err(|e| DgError::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DgError::Parse {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
        if manifest.channels != 3 {
            return Err(DgError::Parse {
                path: manifest_path,
                message: format!("expected 3 channels, got {}", manifest.channels),
            });
        }

        let data_path = dir.join("data.bin");
        let mut file = fs::File::open(&data_path).map_err(|e| DgError::io(&data_path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|e| DgError::io(&data_path, e))?;
        let expected = manifest.sample_count * 3 * manifest.height * manifest.width * 8;
        if bytes.len() != expected {
            return Err(DgError::Parse {
                path: data_path,
                message: format!("expected {expected} bytes, got {}", bytes.len()),
            });
        }
        let images: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();

        let labels_path = dir.join("labels.csv");
        let text = fs::read_to_string(&labels_path).map_err(|e| DgError::io(&labels_path, e))?;
        let mut class_ids = Vec::with_capacity(manifest.sample_count);
        let mut domain_ids = Vec::with_capacity(manifest.sample_count);
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                continue; // header
            }
            let mut fields = line.split(',');
            let parse = |field: Option<&str>| -> Result<usize> {
                field
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| DgError::Parse {
                        path: labels_path.clone(),
                        message: format!("bad row {lineno}: {line}"),
                    })
            };
            let _index = parse(fields.next())?;
            class_ids.push(parse(fields.next())?);
            domain_ids.push(parse(fields.next())?);
        }
        if class_ids.len() != manifest.sample_count {
            return Err(DgError::Parse {
                path: labels_path,
                message: format!(
                    "expected {} label rows, got {}",
                    manifest.sample_count,
                    class_ids.len()
                ),
            });
        }

        Ok(DatasetBundle {
            images,
            class_ids,
            domain_ids,
            class_count: manifest.class_count,
            domain_count: manifest.domain_count,
            height: manifest.height,
            width: manifest.width,
            generator: manifest.generator,
            seed: manifest.seed,
        })
    }
}

fn sample_stream(seed: u64, class_id: usize, domain_id: usize, index: usize) -> Stream {
    Stream::from_parts(&[
        seed,
        salt::DATASET_CELL,
        class_id as u64,
        domain_id as u64,
        index as u64,
    ])
}

/// Styled shape dataset: one domain per style, one glyph per class.
///
/// For the `class-shade` / `class-texture` styles the background is a
/// deterministic function of the class id — the planted shortcut. Glyph
/// geometry is jittered per sample (position +-10%, scale +-15%, rotation
/// +-10 degrees).
pub fn generate_style_shapes(
    classes: usize,
    styles: &[Style],
    per_cell: usize,
    image_size: usize,
    seed: u64,
) -> Result<DatasetBundle> {
    if classes == 0 || classes > glyph::GLYPHS.len() {
        return Err(DgError::Config(format!(
            "class count {classes} outside 1..={}",
            glyph::GLYPHS.len()
        )));
    }
    if styles.is_empty() {
        return Err(DgError::Config("styles list is empty".into()));
    }
    if image_size < 16 {
        return Err(DgError::Config(format!(
            "image size {image_size} below minimum 16"
        )));
    }
    let mut bundle = DatasetBundle::with_capacity(
        classes,
        styles.len(),
        image_size,
        image_size,
        "style-shapes".into(),
        seed,
    );
    for (domain_id, &style) in styles.iter().enumerate() {
        for class_id in 0..classes {
            let glyph = Glyph::for_class(class_id).expect("checked above");
            for k in 0..per_cell {
                let mut stream = sample_stream(seed, class_id, domain_id, k);
                let geom = style::jittered_geometry(image_size, image_size, &mut stream);
                let image = style::render(
                    style, class_id, classes, glyph, geom, image_size, image_size, &mut stream,
                );
                bundle.push_sample(image, class_id, domain_id);
            }
        }
    }
    Ok(bundle)
}

/// Two classes (disk vs cross) in two environment domains; the glyph color
/// agrees with the class with probability `correlation`, otherwise takes the
/// other class's color. Domains differ by background level.
pub fn generate_color_two_class(
    correlation: f64,
    per_domain: usize,
    seed: u64,
) -> Result<DatasetBundle> {
    if !(0.0..=1.0).contains(&correlation) {
        return Err(DgError::Config(format!(
            "correlation {correlation} outside [0, 1]"
        )));
    }
    const SIZE: usize = 16;
    const COLORS: [[f64; 3]; 2] = [[1.0, 0.12, 0.12], [0.12, 1.0, 0.12]];
    const BACKGROUNDS: [f64; 2] = [0.05, 0.30];

    let mut bundle =
        DatasetBundle::with_capacity(2, 2, SIZE, SIZE, "color-two-class".into(), seed);
    for domain_id in 0..2 {
        for class_id in 0..2 {
            let glyph = if class_id == 0 { Glyph::Disk } else { Glyph::Cross };
            for k in 0..per_domain {
                let mut stream = sample_stream(seed, class_id, domain_id, k);
                let geom = style::jittered_geometry(SIZE, SIZE, &mut stream);
                let agree = stream.bernoulli(correlation);
                let color = if agree {
                    COLORS[class_id]
                } else {
                    COLORS[1 - class_id]
                };
                let bg = BACKGROUNDS[domain_id];
                let mut image = vec![0.0f64; 3 * SIZE * SIZE];
                let plane = SIZE * SIZE;
                for i in 0..SIZE {
                    for j in 0..SIZE {
                        let a = geom.coverage(glyph, i, j, 3);
                        for c in 0..3 {
                            image[c * plane + i * SIZE + j] =
                                (bg * (1.0 - a) + color[c] * a).clamp(0.0, 1.0);
                        }
                    }
                }
                bundle.push_sample(image, class_id, domain_id);
            }
        }
    }
    Ok(bundle)
}

/// One domain per rotation angle; the glyph is rotated by the domain angle
/// before style-free (plain) rendering. The per-sample jitter stream is keyed
/// by `(seed, class, index)` only, so the k-th sample of a class differs
/// across domains by exactly the rotation.
pub fn generate_rotated_shapes(
    angles_deg: &[f64],
    classes: usize,
    per_cell: usize,
    image_size: usize,
    seed: u64,
) -> Result<DatasetBundle> {
    if classes == 0 || classes > glyph::GLYPHS.len() {
        return Err(DgError::Config(format!(
            "class count {classes} outside 1..={}",
            glyph::GLYPHS.len()
        )));
    }
    if angles_deg.is_empty() {
        return Err(DgError::Config("angles list is empty".into()));
    }
    if image_size < 16 {
        return Err(DgError::Config(format!(
            "image size {image_size} below minimum 16"
        )));
    }
    for (i, a) in angles_deg.iter().enumerate() {
        if angles_deg[..i].contains(a) {
            return Err(DgError::Config(format!("duplicate angle {a}")));
        }
    }
    let mut bundle = DatasetBundle::with_capacity(
        classes,
        angles_deg.len(),
        image_size,
        image_size,
        "rotated-shapes".into(),
        seed,
    );
    for (domain_id, &angle) in angles_deg.iter().enumerate() {
        for class_id in 0..classes {
            let glyph = Glyph::for_class(class_id).expect("checked above");
            for k in 0..per_cell {
                // domain-independent stream: domains differ only by rotation
                let mut stream = Stream::from_parts(&[
                    seed,
                    salt::DATASET_CELL,
                    class_id as u64,
                    k as u64,
                ]);
                let mut geom = style::jittered_geometry(image_size, image_size, &mut stream);
                geom.rot += angle * std::f64::consts::PI / 180.0;
                let image = style::render(
                    Style::Plain,
                    class_id,
                    classes,
                    glyph,
                    geom,
                    image_size,
                    image_size,
                    &mut stream,
                );
                bundle.push_sample(image, class_id, domain_id);
            }
        }
    }
    Ok(bundle)
}
