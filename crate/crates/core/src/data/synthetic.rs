//! Seeded two-class toy images: a bright blob (healthy) versus a ring
//! (glaucoma) on a noisy background. Useful for smoke tests and protocol checks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_ppm, preprocess, DatasetManifest, Label, ManifestEntry, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 200,
            size: 128,
            seed: 0,
        }
    }
}

/// Raw 0..=255 `[3, size, size]` image of the given class.
pub fn raw_image<R: Rng + ?Sized>(label: Label, size: usize, rng: &mut R) -> Tensor {
    let s = size as f64;
    let cx = rng.gen_range(0.35..0.65) * s;
    let cy = rng.gen_range(0.35..0.65) * s;
    let radius = rng.gen_range(0.14..0.22) * s;
    let thickness = (0.22 * radius).max(1.5);
    let background: [f64; 3] = std::array::from_fn(|_| rng.gen_range(25.0..60.0));
    let amplitude: [f64; 3] = std::array::from_fn(|_| rng.gen_range(120.0..180.0));
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
            let shape = match label {
                Label::Healthy => (-(d * d) / (2.0 * (0.6 * radius).powi(2))).exp(),
                Label::Glaucoma => (-((d - radius) / thickness).powi(2)).exp(),
            };
            for c in 0..3 {
                let noise = rng.gen_range(-12.0..12.0);
                data[c * plane + y * size + x] = (background[c] + amplitude[c] * shape + noise).clamp(0.0, 255.0);
            }
        }
    }
    Tensor::from_parts(vec![3, size, size], data)
}

fn labels(count: usize) -> impl Iterator<Item = Label> {
    (0..count).map(|i| if i % 2 == 0 { Label::Healthy } else { Label::Glaucoma })
}

/// `count` preprocessed samples with alternating labels.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    if spec.count < 2 || spec.size == 0 {
        return Err(Error::Config("synthetic set needs count >= 2 and size > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    labels(spec.count)
        .enumerate()
        .map(|(i, label)| {
            let raw = raw_image(label, spec.size, &mut rng);
            Ok(Sample {
                image: preprocess(&raw, (spec.size, spec.size))?,
                label,
                source: PathBuf::from(format!("synthetic/{i:05}")),
            })
        })
        .collect()
}

/// Writes the set as PPM files in the class-folder layout under `root`.
pub fn write_class_folders(spec: &SyntheticSpec, root: &Path) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names = ["healthy", "glaucoma"];
    for n in names {
        let dir = root.join(n);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::new();
    for (i, label) in labels(spec.count).enumerate() {
        let raw = raw_image(label, spec.size, &mut rng);
        let path = root.join(names[label.index()]).join(format!("{i:05}.ppm"));
        std::fs::write(&path, encode_ppm(&raw)?).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry { path, label });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest {
        name: "synthetic".into(),
        class_names: names.map(String::from),
        entries,
    })
}
