//! Deterministic two-domain glyph generator: thin, jittered, wobbly
//! "handwritten" strokes and clean, thick, optionally serifed "printed" ones.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::glyphs::{skeleton, Point, Stroke};
use super::{DomainDataset, GlyphItem, Split};
use crate::batch::{class_letter, Domain, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::stream_for;

/// Foreground share (pixels at or above mid-gray) every rendered glyph must fall in.
pub const FOREGROUND_BAND: (f64, f64) = (0.01, 0.60);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGlyphSpec {
    pub resolution: usize,
    pub per_class: usize,
    /// Scales vertex jitter, the per-item affine distortion and width variation.
    pub hw_jitter: f64,
    /// Amplitude of the sinusoidal wobble along handwritten strokes.
    pub hw_wobble: f64,
    /// Stroke widths are fractions of the glyph box.
    pub hw_width: f64,
    pub mp_width_min: f64,
    pub mp_width_max: f64,
    pub serif_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticGlyphSpec {
    fn default() -> Self {
        Self {
            resolution: 32,
            per_class: 20,
            hw_jitter: 1.0,
            hw_wobble: 1.0,
            hw_width: 0.06,
            mp_width_min: 0.11,
            mp_width_max: 0.14,
            serif_prob: 0.7,
            seed: 0,
        }
    }
}

impl SyntheticGlyphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::InvalidArgument(format!(
                "resolution {} is too small to render strokes (minimum 8)",
                self.resolution
            )));
        }
        if self.per_class == 0 {
            return Err(Error::InvalidArgument("per_class must be at least 1".into()));
        }
        let widths = [self.hw_width, self.mp_width_min, self.mp_width_max];
        if widths.iter().any(|w| !(*w > 0.0 && *w < 0.5)) || self.mp_width_min > self.mp_width_max {
            return Err(Error::InvalidArgument("stroke widths must lie in (0, 0.5) with min <= max".into()));
        }
        if !(self.hw_jitter >= 0.0 && self.hw_wobble >= 0.0) {
            return Err(Error::InvalidArgument("jitter and wobble must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.serif_prob) {
            return Err(Error::InvalidArgument("serif_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Anti-aliased rendering of `strokes` (white on black) with a given width.
pub fn rasterize(strokes: &[Stroke], width: f64, res: usize) -> Vec<u8> {
    let px = 1.0 / res as f64;
    // never thinner than about one pixel, so small rasters keep their strokes
    let half = (width.max(1.2 * px)) / 2.0;
    let segs: Vec<(Point, Point)> = strokes.iter().flat_map(|s| s.windows(2).map(|w| (w[0], w[1]))).collect();
    let mut out = vec![0u8; res * res];
    for i in 0..res {
        for j in 0..res {
            let p = ((j as f64 + 0.5) * px, (i as f64 + 0.5) * px);
            let d = segs.iter().map(|&(a, b)| dist_to_segment(p, a, b)).fold(f64::INFINITY, f64::min);
            let cover = ((half - d) / px + 0.5).clamp(0.0, 1.0);
            out[i * res + j] = (cover * 255.0).round() as u8;
        }
    }
    out
}

fn foreground_share(img: &[u8]) -> f64 {
    img.iter().filter(|&&v| v >= 128).count() as f64 / img.len() as f64
}

/// Splits every segment into pieces no longer than `step`.
fn subdivide(stroke: &Stroke, step: f64) -> Stroke {
    let mut out = vec![stroke[0]];
    for w in stroke.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / step).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

fn handwritten(class: u8, spec: &SyntheticGlyphSpec, rng: &mut impl Rng) -> (Vec<Stroke>, f64) {
    let j = spec.hw_jitter;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut g = |s: f64| normal.sample(rng) * s;
    // per-item affine about the centre: rotation, shear, scale, shift
    let rot = g(0.08 * j);
    let shear = g(0.12 * j);
    let (sx, sy) = (1.0 + g(0.06 * j), 1.0 + g(0.06 * j));
    let (tx, ty) = (g(0.03 * j), g(0.03 * j));
    let width = spec.hw_width * (1.0 + g(0.15 * j)).clamp(0.6, 1.4);
    let amp = 0.012 * spec.hw_wobble;
    let freq = 9.0 + g(2.0 * spec.hw_wobble.min(1.0)).abs();
    let phase = g(3.0);
    let (c, s) = (rot.cos(), rot.sin());
    let strokes = skeleton(class)
        .into_iter()
        .map(|stroke| {
            let jittered: Stroke = stroke.iter().map(|&(x, y)| (x + g(0.02 * j), y + g(0.02 * j))).collect();
            let fine = if amp > 0.0 { subdivide(&jittered, 0.03) } else { jittered };
            let mut arclen = 0.0;
            let mut prev = fine[0];
            fine.iter()
                .map(|&(x, y)| {
                    arclen += ((x - prev.0).powi(2) + (y - prev.1).powi(2)).sqrt();
                    prev = (x, y);
                    let w = amp * (freq * arclen + phase).sin();
                    let (x, y) = (x + w, y - w);
                    let (u, v) = ((x - 0.5) * sx + shear * (y - 0.5), (y - 0.5) * sy);
                    (0.5 + c * u - s * v + tx, 0.5 + s * u + c * v + ty)
                })
                .collect()
        })
        .collect();
    (strokes, width)
}

fn printed(class: u8, spec: &SyntheticGlyphSpec, rng: &mut impl Rng) -> (Vec<Stroke>, f64) {
    let width = if spec.mp_width_max > spec.mp_width_min {
        rng.gen_range(spec.mp_width_min..=spec.mp_width_max)
    } else {
        spec.mp_width_min
    };
    let mut strokes = skeleton(class);
    if spec.serif_prob > 0.0 && rng.gen_bool(spec.serif_prob) {
        let mut serifs = Vec::new();
        for s in &strokes {
            for &(x, y) in [s[0], s[s.len() - 1]].iter() {
                if !(0.22..=0.78).contains(&y) {
                    serifs.push(vec![(x - 0.07, y), (x + 0.07, y)]);
                }
            }
        }
        strokes.extend(serifs);
    }
    (strokes, width)
}

fn render_domain(spec: &SyntheticGlyphSpec, domain: Domain) -> Result<DomainDataset> {
    let mut items = Vec::with_capacity(spec.per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES as u8 {
        for i in 0..spec.per_class {
            let mut rng = stream_for(spec.seed, &format!("synth/{}/{class}/{i}", domain.tag()));
            let (strokes, width) = match domain {
                Domain::Handwritten => handwritten(class, spec, &mut rng),
                Domain::Printed => printed(class, spec, &mut rng),
            };
            let pixels = rasterize(&strokes, width, spec.resolution);
            let share = foreground_share(&pixels);
            if !(FOREGROUND_BAND.0..=FOREGROUND_BAND.1).contains(&share) {
                return Err(Error::Data(format!(
                    "synthetic {domain} glyph {} #{i} has {:.1}% foreground, outside the sanity band",
                    class_letter(class),
                    share * 100.0
                )));
            }
            items.push(GlyphItem { pixels, class, name: format!("{}_{i:04}", class_letter(class)) });
        }
    }
    Ok(DomainDataset {
        domain,
        resolution: spec.resolution,
        items,
        split: Split::All,
        provenance: format!(
            "synthetic:seed={},res={},per_class={},jitter={},wobble={},hw_width={},mp_width={}..{},serif_prob={}",
            spec.seed,
            spec.resolution,
            spec.per_class,
            spec.hw_jitter,
            spec.hw_wobble,
            spec.hw_width,
            spec.mp_width_min,
            spec.mp_width_max,
            spec.serif_prob
        ),
    })
}

/// Renders `per_class` glyphs of every letter in both styles.
pub fn generate_synthetic_domains(spec: &SyntheticGlyphSpec) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    Ok((render_domain(spec, Domain::Handwritten)?, render_domain(spec, Domain::Printed)?))
}
