//! Glyph datasets for both domains: directory and IDX ingestion, stratified
//! splitting, a synthetic generator and text manifests.

mod glyphs;
mod idx;
mod manifest;
mod png;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use cycledm_tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::batch::{byte_to_unit, Domain, ImageBatch, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::stream_for;

pub use glyphs::{skeleton, Point, Stroke};
pub use idx::{load_emnist_letters, read_idx, write_idx, IdxArray};
pub use manifest::{parse_manifest, render_manifest, Manifest, ManifestEntry};
pub use png::{decode_glyph, fit_to_resolution, load_image_directory, save_image_directory, DirectoryLoad};
pub use synthetic::{generate_synthetic_domains, rasterize, SyntheticGlyphSpec, FOREGROUND_BAND};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::All => "all",
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Split::All),
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// One 8-bit grayscale glyph, row-major, white on black.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphItem {
    pub pixels: Vec<u8>,
    pub class: u8,
    /// File stem, used to keep outputs name-preserving.
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainDataset {
    pub domain: Domain,
    pub resolution: usize,
    pub items: Vec<GlyphItem>,
    pub split: Split,
    pub provenance: String,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for it in &self.items {
            counts[it.class as usize] += 1;
        }
        counts
    }

    pub fn classes(&self) -> Vec<u8> {
        self.items.iter().map(|it| it.class).collect()
    }

    /// All items as a batch in `[-1, 1]`.
    pub fn to_batch(&self) -> Result<ImageBatch> {
        let r = self.resolution;
        let mut data = Vec::with_capacity(self.items.len() * r * r);
        for it in &self.items {
            if it.pixels.len() != r * r {
                return Err(Error::Shape(format!("item {} has {} pixels, expected {}", it.name, it.pixels.len(), r * r)));
            }
            data.extend(it.pixels.iter().map(|&b| byte_to_unit(b)));
        }
        ImageBatch::new(Tensor::new(vec![self.items.len(), 1, r, r], data), self.domain, self.classes())
    }

    /// First `per_class` items of every class, in dataset order.
    pub fn take_per_class(&self, per_class: usize) -> DomainDataset {
        let mut seen = [0usize; NUM_CLASSES];
        let items = self
            .items
            .iter()
            .filter(|it| {
                let s = &mut seen[it.class as usize];
                *s += 1;
                *s <= per_class
            })
            .cloned()
            .collect();
        DomainDataset { items, provenance: format!("{}|first{per_class}", self.provenance), ..self.clone() }
    }
}

/// Number of training items for a class of `n` items: `round(n * f)` kept
/// inside `1..=n-1` so neither side is empty.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1)
}

/// Per-class stratified shuffle split. Within each side, items keep the
/// order of the input dataset.
pub fn split_dataset(ds: &DomainDataset, train_fraction: f64, seed: u64) -> Result<(DomainDataset, DomainDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} must be in (0, 1)")));
    }
    let mut by_class = vec![Vec::new(); NUM_CLASSES];
    for (i, it) in ds.items.iter().enumerate() {
        by_class[it.class as usize].push(i);
    }
    let mut is_train = vec![false; ds.items.len()];
    for (c, idx) in by_class.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Data(format!("class {} has {} item(s); splitting needs at least 2", (b'A' + c as u8) as char, idx.len())));
        }
        let mut rng = stream_for(seed, &format!("split/{}/{c}", ds.domain.tag()));
        idx.shuffle(&mut rng);
        for &i in &idx[..train_count(idx.len(), train_fraction)] {
            is_train[i] = true;
        }
    }
    let side = |want: bool, split: Split| DomainDataset {
        domain: ds.domain,
        resolution: ds.resolution,
        items: ds.items.iter().zip(&is_train).filter(|(_, &t)| t == want).map(|(it, _)| it.clone()).collect(),
        split,
        provenance: format!("{}|split={split},frac={train_fraction},seed={seed}", ds.provenance),
    };
    Ok((side(true, Split::Train), side(false, Split::Test)))
}
