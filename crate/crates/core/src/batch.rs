//! Domain labels, class tokens and image batches shared by every stage.

use std::fmt;
use std::str::FromStr;

use cycledm_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Capital Latin letters.
pub const NUM_CLASSES: usize = 26;

/// Handwritten (HW) or machine-printed (MP) glyphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "hw")]
    Handwritten,
    #[serde(rename = "mp")]
    Printed,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Handwritten, Domain::Printed];

    pub fn index(self) -> usize {
        match self {
            Domain::Handwritten => 0,
            Domain::Printed => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Domain> {
        Self::ALL.get(i).copied()
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Handwritten => Domain::Printed,
            Domain::Printed => Domain::Handwritten,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Domain::Handwritten => "hw",
            Domain::Printed => "mp",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hw" | "handwritten" => Ok(Domain::Handwritten),
            "mp" | "printed" | "machine-printed" => Ok(Domain::Printed),
            other => Err(Error::InvalidArgument(format!("unknown domain `{other}` (expected hw or mp)"))),
        }
    }
}

/// Conversion direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "hw2mp")]
    HwToMp,
    #[serde(rename = "mp2hw")]
    MpToHw,
}

impl Direction {
    pub fn source(self) -> Domain {
        match self {
            Direction::HwToMp => Domain::Handwritten,
            Direction::MpToHw => Domain::Printed,
        }
    }

    pub fn target(self) -> Domain {
        self.source().other()
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::HwToMp => "HW->MP",
            Direction::MpToHw => "MP->HW",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::HwToMp => "hw2mp",
            Direction::MpToHw => "mp2hw",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hw2mp" | "hw->mp" => Ok(Direction::HwToMp),
            "mp2hw" | "mp->hw" => Ok(Direction::MpToHw),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}` (expected hw2mp or mp2hw)"))),
        }
    }
}

/// Class condition. `Null` is its own learned token (index 26), never class 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassToken {
    Class(u8),
    Null,
}

impl ClassToken {
    /// Number of distinct tokens, including the null token.
    pub const VOCAB: usize = NUM_CLASSES + 1;

    pub fn index(self) -> usize {
        match self {
            ClassToken::Class(c) => c as usize,
            ClassToken::Null => NUM_CLASSES,
        }
    }

    pub fn indices(tokens: &[ClassToken]) -> Vec<usize> {
        tokens.iter().map(|t| t.index()).collect()
    }

    pub fn from_classes(classes: &[u8]) -> Vec<ClassToken> {
        classes.iter().map(|&c| ClassToken::Class(c)).collect()
    }
}

pub fn class_letter(class: u8) -> char {
    (b'A' + class) as char
}

pub fn class_from_letter(s: &str) -> Option<u8> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c @ 'A'..='Z'), None) => Some(c as u8 - b'A'),
        _ => None,
    }
}

/// Conditioning for one batch: a single domain plus a class token per item.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub domain: Domain,
    pub classes: Vec<ClassToken>,
}

impl Conditioning {
    pub fn new(domain: Domain, classes: Vec<ClassToken>) -> Self {
        Self { domain, classes }
    }

    pub fn unconditional(domain: Domain, n: usize) -> Self {
        Self { domain, classes: vec![ClassToken::Null; n] }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Clean glyph images `[N, 1, H, W]` in `[-1, 1]` from a single domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pixels: Tensor,
    domain: Domain,
    classes: Vec<u8>,
}

impl ImageBatch {
    pub fn new(pixels: Tensor, domain: Domain, classes: Vec<u8>) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::Shape(format!("image batch must be [N,1,H,W], got {s:?}")));
        }
        if s[0] != classes.len() {
            return Err(Error::Shape(format!("{} images but {} class labels", s[0], classes.len())));
        }
        if let Some(&c) = classes.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(Error::InvalidArgument(format!("class index {c} out of range")));
        }
        if let Some(v) = pixels.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self { pixels, domain, classes })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        let s = self.pixels.shape();
        (s[2], s[3])
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let (h, w) = self.resolution();
        &self.pixels.data()[i * h * w..(i + 1) * h * w]
    }

    pub fn tokens(&self) -> Vec<ClassToken> {
        ClassToken::from_classes(&self.classes)
    }

    pub fn conditioning(&self) -> Conditioning {
        Conditioning::new(self.domain, self.tokens())
    }

    /// Items `start..start + len` as a new batch.
    pub fn slice(&self, start: usize, len: usize) -> ImageBatch {
        let (h, w) = self.resolution();
        let data = self.pixels.data()[start * h * w..(start + len) * h * w].to_vec();
        ImageBatch {
            pixels: Tensor::new(vec![len, 1, h, w], data),
            domain: self.domain,
            classes: self.classes[start..start + len].to_vec(),
        }
    }

    pub fn concat(parts: &[ImageBatch]) -> Result<ImageBatch> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("empty batch list".into()))?;
        let (h, w) = first.resolution();
        let mut data = Vec::new();
        let mut classes = Vec::new();
        for p in parts {
            if p.domain != first.domain || p.resolution() != (h, w) {
                return Err(Error::Shape("batches differ in domain or resolution".into()));
            }
            data.extend_from_slice(p.pixels.data());
            classes.extend_from_slice(&p.classes);
        }
        let n = classes.len();
        Ok(ImageBatch { pixels: Tensor::new(vec![n, 1, h, w], data), domain: first.domain, classes })
    }
}

/// 8-bit gray level to `[-1, 1]`.
pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// Inverse of [`byte_to_unit`], clamping out-of-range values.
pub fn unit_to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}
