//! Image ingestion: decode, resize to the network input, normalize to [-1, 1].

mod image;
mod manifest;
mod preprocess;
pub mod synthetic;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use image::{decode_image, encode_pgm, encode_ppm, load_image};
pub use manifest::{read_manifest_csv, scan_dataset, write_manifest_csv, DatasetManifest, Layout, ManifestEntry};
pub use preprocess::{normalize_channel, normalize_image, resize_bilinear};

/// Binary class label; glaucoma is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Healthy = 0,
    Glaucoma = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Healthy),
            1 => Some(Label::Glaucoma),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Glaucoma
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

/// A preprocessed image ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[3, H, W]`, every channel in [-1, 1].
    pub image: Tensor,
    pub label: Label,
    pub source: PathBuf,
}

/// Decode, resize to `size`, and normalize each channel.
pub fn load_sample(path: &Path, label: Label, size: (usize, usize)) -> Result<Sample> {
    let raw = load_image(path)?;
    Ok(Sample {
        image: preprocess(&raw, size)?,
        label,
        source: path.to_path_buf(),
    })
}

/// Resize first, then normalize; normalization fixes the final range either way.
pub fn preprocess(raw: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    let resized = resize_bilinear(raw, size.0, size.1)?;
    Ok(normalize_image(&resized))
}

/// Loads every manifest entry, in manifest order.
pub fn load_dataset(manifest: &DatasetManifest, size: (usize, usize)) -> Result<Vec<Sample>> {
    manifest
        .entries
        .iter()
        .map(|e| load_sample(&e.path, e.label, size))
        .collect()
}

pub(crate) fn require_both_classes<'a>(labels: impl IntoIterator<Item = &'a Label>) -> Result<()> {
    let mut seen = [false; 2];
    for l in labels {
        seen[l.index()] = true;
    }
    if seen != [true, true] {
        return Err(Error::Dataset("both classes must be present".into()));
    }
    Ok(())
}
