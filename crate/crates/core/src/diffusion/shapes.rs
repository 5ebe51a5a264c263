//! Procedural grayscale shapes: the toy image domain.
//!
//! Pixels lie in `[-1, 1]` with -1 background and +1 foreground; edges are
//! antialiased by one pixel of signed distance.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeClass {
    Disc,
    Ring,
    HBar,
    VBar,
    Cross,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] = [
        ShapeClass::Disc,
        ShapeClass::Ring,
        ShapeClass::HBar,
        ShapeClass::VBar,
        ShapeClass::Cross,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Disc => "disc",
            ShapeClass::Ring => "ring",
            ShapeClass::HBar => "h-bar",
            ShapeClass::VBar => "v-bar",
            ShapeClass::Cross => "cross",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape class '{s}'")))
    }
}

/// Placement of one shape, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
    pub thickness: f64,
}

impl Placement {
    pub const CENTERED: Placement = Placement {
        dx: 0.0,
        dy: 0.0,
        scale: 1.0,
        thickness: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeDatasetSpec {
    pub side: usize,
    /// Maximum center offset in pixels, uniform in `[-shift, shift]`.
    pub shift: f64,
    /// Size factor drawn uniformly from `[1 - scale_jitter, 1 + scale_jitter]`.
    pub scale_jitter: f64,
    pub thickness_jitter: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for ShapeDatasetSpec {
    fn default() -> Self {
        Self {
            side: 16,
            shift: 2.0,
            scale_jitter: 0.2,
            thickness_jitter: 0.2,
            count: 4096,
            seed: 0,
        }
    }
}

fn box_sd(px: f64, py: f64, hx: f64, hy: f64) -> f64 {
    let qx = px.abs() - hx;
    let qy = py.abs() - hy;
    let outside = qx.max(0.0).hypot(qy.max(0.0));
    outside + qx.max(qy).min(0.0)
}

/// Signed distance (negative inside) from pixel offset `(px, py)` relative
/// to the shape center.
fn signed_distance(class: ShapeClass, side: usize, p: &Placement, px: f64, py: f64) -> f64 {
    let unit = side as f64 / 16.0;
    let s = p.scale * unit;
    let th = p.thickness * unit;
    match class {
        ShapeClass::Disc => px.hypot(py) - 4.0 * s,
        ShapeClass::Ring => (px.hypot(py) - 4.5 * s).abs() - 1.1 * th,
        ShapeClass::HBar => box_sd(px, py, 5.5 * s, 1.5 * th),
        ShapeClass::VBar => box_sd(px, py, 1.5 * th, 5.5 * s),
        ShapeClass::Cross => box_sd(px, py, 5.5 * s, 1.3 * th).min(box_sd(px, py, 1.3 * th, 5.5 * s)),
    }
}

/// Renders one shape as a flat `[side * side]` tensor.
pub fn render(class: ShapeClass, side: usize, p: &Placement) -> Tensor {
    let c = side as f64 / 2.0;
    let mut data = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let px = col as f64 + 0.5 - c - p.dx;
            let py = row as f64 + 0.5 - c - p.dy;
            let d = signed_distance(class, side, p, px, py);
            let coverage = (0.5 - d).clamp(0.0, 1.0);
            data.push(2.0 * coverage - 1.0);
        }
    }
    Tensor::new(vec![side * side], data).expect("side*side")
}

impl ShapeDatasetSpec {
    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn random_placement<R: Rng>(&self, rng: &mut R) -> Placement {
        let mut u = |w: f64| if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
        Placement {
            dx: u(self.shift),
            dy: u(self.shift),
            scale: 1.0 + u(self.scale_jitter),
            thickness: 1.0 + u(self.thickness_jitter),
        }
    }

    /// Draws one labelled image.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Tensor, usize) {
        let class = ShapeClass::ALL[rng.random_range(0..ShapeClass::ALL.len())];
        let p = self.random_placement(rng);
        (render(class, self.side, &p), class.index())
    }

    /// The whole dataset, reproducible from `seed`.
    pub fn generate(&self) -> Vec<(Tensor, usize)> {
        let mut rng = crate::seeds::rng(self.seed, "data", 0);
        (0..self.count).map(|_| self.sample(&mut rng)).collect()
    }

    /// Noise-free renderings on a grid of offsets and sizes for one class.
    pub fn template_bank(&self, class: ShapeClass) -> Vec<Tensor> {
        let steps = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let mut out = Vec::new();
        for &sy in &steps {
            for &sx in &steps {
                for &sc in &[-1.0, 0.0, 1.0] {
                    let p = Placement {
                        dx: sx * self.shift,
                        dy: sy * self.shift,
                        scale: 1.0 + sc * self.scale_jitter,
                        thickness: 1.0,
                    };
                    out.push(render(class, self.side, &p));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixels_in_range_and_shapes_differ() {
        let spec = ShapeDatasetSpec::default();
        let imgs: Vec<Tensor> = ShapeClass::ALL
            .iter()
            .map(|&c| render(c, 16, &Placement::CENTERED))
            .collect();
        for img in &imgs {
            assert!(img.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
            assert!(img.data().iter().any(|&v| v > 0.9));
            assert!(img.data().iter().any(|&v| v < -0.9));
        }
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                assert_ne!(imgs[i], imgs[j]);
            }
        }
        let data = ShapeDatasetSpec { count: 50, ..spec }.generate();
        assert_eq!(data.len(), 50);
        assert!(data.iter().all(|(x, c)| x.len() == 256 && *c < 5));
    }

    #[test]
    fn class_names_round_trip() {
        for c in ShapeClass::ALL {
            assert_eq!(c.name().parse::<ShapeClass>().unwrap(), c);
            assert_eq!(ShapeClass::from_index(c.index()).unwrap(), c);
        }
        assert!("blob".parse::<ShapeClass>().is_err());
    }
}
