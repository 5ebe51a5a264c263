//! Programmatic scores over final images. Higher is always better.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::d3po::{PairRecord, PreferenceLabel};
use crate::diffusion::{ShapeClass, ShapeDatasetSpec};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Negative deflate size of the 8-bit image.
    Compressibility,
    /// Deflate size of the 8-bit image.
    Incompressibility,
    /// Best normalized cross-correlation with the class templates.
    ShapeFidelity,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Compressibility => "compressibility",
            ObjectiveKind::Incompressibility => "incompressibility",
            ObjectiveKind::ShapeFidelity => "shape-fidelity",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ObjectiveKind::Compressibility,
            ObjectiveKind::Incompressibility,
            ObjectiveKind::ShapeFidelity,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::invalid(format!("unknown objective '{s}'")))
    }
}

/// Maps `[-1, 1]` to `0..=255`, clamping outside values; halves round up.
pub fn quantize(v: f64) -> u8 {
    let x = ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0 + 0.5).floor();
    x.clamp(0.0, 255.0) as u8
}

pub fn quantize_image(img: &Tensor) -> Vec<u8> {
    img.data().iter().map(|&v| quantize(v)).collect()
}

/// Raw deflate (level 9) size of the quantized image in bytes.
pub fn deflate_size(img: &Tensor) -> usize {
    let bytes = quantize_image(img);
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(&bytes).expect("in-memory write");
    enc.finish().expect("in-memory deflate").len()
}

/// Zero-mean, unit-norm templates per class.
#[derive(Debug, Clone)]
pub struct TemplateBank {
    per_class: Vec<Vec<Vec<f64>>>,
}

fn normalize(x: &[f64]) -> Option<Vec<f64>> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 1e-12).then(|| centered.into_iter().map(|v| v / norm).collect())
}

impl TemplateBank {
    pub fn new(spec: &ShapeDatasetSpec) -> Self {
        let per_class = ShapeClass::ALL
            .iter()
            .map(|&c| {
                spec.template_bank(c)
                    .iter()
                    .filter_map(|t| normalize(t.data()))
                    .collect()
            })
            .collect();
        Self { per_class }
    }

    /// Maximum normalized cross-correlation of `img` against the templates
    /// of `class`; 0 for a constant image.
    pub fn best_correlation(&self, img: &Tensor, class: usize) -> Result<f64> {
        let bank = self
            .per_class
            .get(class)
            .ok_or_else(|| Error::invalid(format!("no templates for class {class}")))?;
        let Some(x) = normalize(img.data()) else {
            return Ok(0.0);
        };
        let mut best = f64::NEG_INFINITY;
        for t in bank {
            if t.len() != x.len() {
                return Err(Error::shape("template", format!("{} vs {}", t.len(), x.len())));
            }
            let c: f64 = t.iter().zip(&x).map(|(a, b)| a * b).sum();
            best = best.max(c);
        }
        Ok(best.min(1.0))
    }
}

/// A scoring function over final images.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    bank: Option<Arc<TemplateBank>>,
}

impl Objective {
    pub fn new(kind: ObjectiveKind, data: &ShapeDatasetSpec) -> Self {
        let bank = (kind == ObjectiveKind::ShapeFidelity).then(|| Arc::new(TemplateBank::new(data)));
        Self { kind, bank }
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    /// Scores an image produced for `class`. Only shape fidelity uses the
    /// class.
    pub fn score(&self, image: &Tensor, class: usize) -> Result<f64> {
        if !image.is_finite() {
            return Err(Error::NonFinite("image passed to objective".into()));
        }
        Ok(match self.kind {
            ObjectiveKind::Compressibility => -(deflate_size(image) as f64),
            ObjectiveKind::Incompressibility => deflate_size(image) as f64,
            ObjectiveKind::ShapeFidelity => self
                .bank
                .as_ref()
                .expect("bank built for shape fidelity")
                .best_correlation(image, class)?,
        })
    }
}

/// Oracle label for a pair: the higher final-image score wins; equal
/// scores are a tie.
pub fn label_from_objective(obj: &Objective, pair: &PairRecord) -> Result<PreferenceLabel> {
    let a = obj.score(pair.a.final_image(), pair.class)?;
    let b = obj.score(pair.b.final_image(), pair.class)?;
    Ok(match a.partial_cmp(&b) {
        Some(std::cmp::Ordering::Greater) => PreferenceLabel::A,
        Some(std::cmp::Ordering::Less) => PreferenceLabel::B,
        _ => PreferenceLabel::Tie,
    })
}

/// Bradley-Terry probability that A is preferred: `sigmoid(r_a - r_b)`.
pub fn bt_probability(r_a: f64, r_b: f64) -> f64 {
    crate::ndcore::sigmoid(r_a - r_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{gaussian, render, Placement};

    #[test]
    fn quantization_endpoints() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 128);
    }

    #[test]
    fn constant_beats_noise_under_compressibility() {
        let spec = ShapeDatasetSpec::default();
        let obj = Objective::new(ObjectiveKind::Compressibility, &spec);
        let flat = Tensor::filled(&[256], -1.0);
        let noise = gaussian(42, &[256]).map(|v| (v * 0.5).clamp(-1.0, 1.0));
        let (a, b) = (obj.score(&flat, 0).unwrap(), obj.score(&noise, 0).unwrap());
        assert!(a > b, "{a} vs {b}");
    }

    #[test]
    fn incompressibility_is_negation() {
        let spec = ShapeDatasetSpec::default();
        let c = Objective::new(ObjectiveKind::Compressibility, &spec);
        let i = Objective::new(ObjectiveKind::Incompressibility, &spec);
        let img = render(ShapeClass::Ring, 16, &Placement::CENTERED);
        assert_eq!(i.score(&img, 1).unwrap(), -c.score(&img, 1).unwrap());
    }

    #[test]
    fn template_scores_one() {
        let spec = ShapeDatasetSpec::default();
        let obj = Objective::new(ObjectiveKind::ShapeFidelity, &spec);
        for class in ShapeClass::ALL {
            let t = &spec.template_bank(class)[7];
            let s = obj.score(t, class.index()).unwrap();
            assert!((s - 1.0).abs() < 1e-12, "{class}: {s}");
        }
        assert_eq!(obj.score(&Tensor::filled(&[256], 0.2), 0).unwrap(), 0.0);
    }

    #[test]
    fn kinds_parse() {
        for k in ["compressibility", "incompressibility", "shape-fidelity"] {
            assert_eq!(k.parse::<ObjectiveKind>().unwrap().name(), k);
        }
        assert!("aesthetic".parse::<ObjectiveKind>().is_err());
    }
}
