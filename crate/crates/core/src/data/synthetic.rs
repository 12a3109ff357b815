//! Procedural scenes: a flat background with one disc or bar drawn in an
//! accent colour. Attributes are sampled uniformly from the ranges below and
//! the renderer is a pure function of them, so an image can be rebuilt from
//! its attribute record.
//!
//! | attribute | range |
//! |-----------|-------|
//! | background, per channel | `[-1, 0]` |
//! | accent, per channel | `[0, 1]` |
//! | shape | disc or bar, 1:1 |
//! | centre (x, y), fraction of width/height | `[0.3, 0.7]` |
//! | size, fraction of the shorter side | `[0.15, 0.3]` (disc radius, bar half-length x 2) |
//! | orientation `theta` (bars) | `[0, pi)` |

use std::f32::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const CENTER_RANGE: (f32, f32) = (0.3, 0.7);
pub const SIZE_RANGE: (f32, f32) = (0.15, 0.3);
pub const BACKGROUND_RANGE: (f32, f32) = (-1.0, 0.0);
pub const ACCENT_RANGE: (f32, f32) = (0.0, 1.0);
/// Bar thickness as a fraction of the shorter side.
const BAR_THICKNESS: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Bar,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneAttributes {
    pub background: [f32; 3],
    pub accent: [f32; 3],
    pub shape: ShapeKind,
    pub center: (f32, f32),
    pub size: f32,
    pub theta: f32,
}

impl SceneAttributes {
    pub const CSV_HEADER: &'static str = "bg_r,bg_g,bg_b,accent_r,accent_g,accent_b,shape,cx,cy,size,theta";

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut u = |(lo, hi): (f32, f32)| rng.random_range(lo..hi);
        let background = [u(BACKGROUND_RANGE), u(BACKGROUND_RANGE), u(BACKGROUND_RANGE)];
        let accent = [u(ACCENT_RANGE), u(ACCENT_RANGE), u(ACCENT_RANGE)];
        let center = (u(CENTER_RANGE), u(CENTER_RANGE));
        let size = u(SIZE_RANGE);
        let theta = u((0.0, PI));
        let shape = if rng.random_bool(0.5) { ShapeKind::Disc } else { ShapeKind::Bar };
        Self {
            background,
            accent,
            shape,
            center,
            size,
            theta,
        }
    }
}

impl fmt::Display for SceneAttributes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [br, bg, bb] = self.background;
        let [ar, ag, ab] = self.accent;
        let shape = match self.shape {
            ShapeKind::Disc => "disc",
            ShapeKind::Bar => "bar",
        };
        write!(
            f,
            "{br},{bg},{bb},{ar},{ag},{ab},{shape},{},{},{},{}",
            self.center.0, self.center.1, self.size, self.theta
        )
    }
}

impl FromStr for SceneAttributes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.trim().split(',').collect();
        let bad = |why: String| Error::invalid("SceneAttributes", why);
        if fields.len() != 11 {
            return Err(bad(format!("expected 11 fields, got {}", fields.len())));
        }
        let num = |i: usize| -> Result<f32> {
            fields[i]
                .parse::<f32>()
                .map_err(|e| bad(format!("field {} `{}`: {e}", i + 1, fields[i])))
        };
        let shape = match fields[6] {
            "disc" => ShapeKind::Disc,
            "bar" => ShapeKind::Bar,
            other => return Err(bad(format!("unknown shape `{other}`"))),
        };
        Ok(Self {
            background: [num(0)?, num(1)?, num(2)?],
            accent: [num(3)?, num(4)?, num(5)?],
            shape,
            center: (num(7)?, num(8)?),
            size: num(9)?,
            theta: num(10)?,
        })
    }
}

/// Render into a `(1, 3, h, w)` tensor in `[-1, 1]`. Pixels are tested at
/// their centres, so there is no anti-aliasing.
pub fn render_scene(attrs: &SceneAttributes, h: usize, w: usize) -> Tensor {
    let side = h.min(w) as f32;
    let (cx, cy) = (attrs.center.0 * w as f32, attrs.center.1 * h as f32);
    let (dx, dy) = (attrs.theta.cos(), attrs.theta.sin());
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let px = x as f32 + 0.5 - cx;
            let py = y as f32 + 0.5 - cy;
            let inside = match attrs.shape {
                ShapeKind::Disc => {
                    let r = attrs.size * side;
                    px * px + py * py <= r * r
                }
                ShapeKind::Bar => {
                    let along = px * dx + py * dy;
                    let across = -px * dy + py * dx;
                    along.abs() <= attrs.size * side && across.abs() <= 0.5 * BAR_THICKNESS * side
                }
            };
            let colour = if inside { &attrs.accent } else { &attrs.background };
            for c in 0..3 {
                data[c * plane + y * w + x] = colour[c];
            }
        }
    }
    Tensor::new(Shape::new(1, 3, h, w), data).expect("colours are finite")
}

/// Rendered scenes kept as flat `3 x h x w` buffers plus their attributes.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub images: Vec<Vec<f32>>,
    pub attributes: Vec<SceneAttributes>,
}

impl Dataset {
    /// Wrap existing `(1, 3, h, w)` images; all must share one size.
    pub fn from_images(images: &[Tensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("Dataset", "dataset must be non-empty"))?
            .shape();
        let mut out = Vec::with_capacity(images.len());
        for t in images {
            let s = t.shape();
            if s != Shape::new(1, 3, first.h, first.w) {
                return Err(Error::ShapeMismatch {
                    op: "Dataset",
                    left: Shape::new(1, 3, first.h, first.w),
                    right: s,
                });
            }
            out.push(t.to_vec());
        }
        Ok(Self {
            height: first.h,
            width: first.w,
            images: out,
            attributes: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> Tensor {
        Tensor::new(Shape::new(1, 3, self.height, self.width), self.images[i].clone()).expect("finite")
    }

    /// Stack the given images into `(indices.len(), 3, h, w)`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * 3 * self.height * self.width);
        for &i in indices {
            data.extend_from_slice(&self.images[i]);
        }
        Tensor::new(Shape::new(indices.len(), 3, self.height, self.width), data).expect("finite")
    }
}

/// `n` scenes, each from its own ChaCha stream of `seed`, so any image can be
/// regenerated without the others.
pub fn generate_synthetic_dataset(n: usize, resolution: (usize, usize), seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("generate_synthetic_dataset", "n must be at least 1"));
    }
    let (h, w) = resolution;
    if h == 0 || w == 0 {
        return Err(Error::invalid("generate_synthetic_dataset", "resolution must be positive"));
    }
    let attributes: Vec<SceneAttributes> = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            SceneAttributes::sample(&mut rng)
        })
        .collect();
    let images = attributes.iter().map(|a| render_scene(a, h, w).to_vec()).collect();
    Ok(Dataset {
        height: h,
        width: w,
        images,
        attributes,
    })
}
