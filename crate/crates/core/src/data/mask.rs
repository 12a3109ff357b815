use crate::error::{Error, Result};
use crate::tensor::{Region, Shape, Tensor};

/// Fill value of missing pixels in normalized `[-1, 1]` images.
pub const WHITE: f32 = 1.0;

/// Centered rectangular hole. Odd margins put the extra row/column below and
/// to the right of the hole.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    pub image_h: usize,
    pub image_w: usize,
    pub hole_h: usize,
    pub hole_w: usize,
}

impl MaskSpec {
    pub fn center(image_h: usize, image_w: usize, hole_h: usize, hole_w: usize) -> Result<Self> {
        if hole_h > image_h || hole_w > image_w {
            return Err(Error::invalid(
                "make_center_mask",
                format!("hole {hole_h}x{hole_w} exceeds image {image_h}x{image_w}"),
            ));
        }
        if image_h == 0 || image_w == 0 {
            return Err(Error::invalid("make_center_mask", "image must be non-empty"));
        }
        Ok(Self {
            image_h,
            image_w,
            hole_h,
            hole_w,
        })
    }

    pub fn top(&self) -> usize {
        (self.image_h - self.hole_h) / 2
    }

    pub fn left(&self) -> usize {
        (self.image_w - self.hole_w) / 2
    }

    /// Bounding box of the hole over `channels` channels.
    pub fn region(&self, channels: usize) -> Region {
        Region::spatial(self.top(), self.left(), self.hole_h, self.hole_w, channels)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top()..self.top() + self.hole_h).contains(&y) && (self.left()..self.left() + self.hole_w).contains(&x)
    }

    /// `(1, 1, H, W)` with 0 in the hole and 1 elsewhere.
    pub fn tensor(&self) -> Tensor {
        let (h, w) = (self.image_h, self.image_w);
        let data = (0..h * w)
            .map(|i| if self.contains(i / w, i % w) { 0.0 } else { 1.0 })
            .collect();
        Tensor::new(Shape::new(1, 1, h, w), data).expect("mask values are finite")
    }
}

pub fn make_center_mask(image_h: usize, image_w: usize, hole_h: usize, hole_w: usize) -> Result<Tensor> {
    Ok(MaskSpec::center(image_h, image_w, hole_h, hole_w)?.tensor())
}

/// Known pixels kept, hole pixels set to [`WHITE`].
pub fn apply_mask(image: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    let ms = mask.shape();
    if (ms.h, ms.w) != (s.h, s.w) || ms.c != 1 || (ms.n != 1 && ms.n != s.n) {
        return Err(Error::ShapeMismatch {
            op: "apply_mask",
            left: s,
            right: ms,
        });
    }
    Tensor::select(mask, image, &Tensor::full(s, WHITE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::composite;

    #[test]
    fn center_hole_indices() {
        let m = make_center_mask(128, 128, 64, 64).unwrap().to_vec();
        for y in 0..128 {
            for x in 0..128 {
                let hole = (32..=95).contains(&y) && (32..=95).contains(&x);
                assert_eq!(m[y * 128 + x], if hole { 0.0 } else { 1.0 }, "({y}, {x})");
            }
        }
    }

    #[test]
    fn degenerate_holes() {
        assert!(make_center_mask(4, 5, 4, 5).unwrap().to_vec().iter().all(|&v| v == 0.0));
        let m = make_center_mask(3, 3, 1, 1).unwrap().to_vec();
        assert_eq!(m.iter().filter(|&&v| v == 0.0).count(), 1);
        assert_eq!(m[4], 0.0);
        assert!(make_center_mask(4, 4, 5, 2).is_err());
        // odd margin: extra row goes below
        let s = MaskSpec::center(5, 5, 2, 2).unwrap();
        assert_eq!((s.top(), s.left()), (1, 1));
    }

    #[test]
    fn apply_mask_cases() {
        let img = Tensor::new(Shape::new(1, 3, 4, 4), (0..48).map(|v| v as f32 / 48.0 - 0.5).collect()).unwrap();
        let ones = Tensor::ones(Shape::new(1, 1, 4, 4));
        assert_eq!(apply_mask(&img, &ones).unwrap().to_vec(), img.to_vec());
        let zeros = Tensor::zeros(Shape::new(1, 1, 4, 4));
        assert!(apply_mask(&img, &zeros).unwrap().to_vec().iter().all(|&v| v == WHITE));

        let spec = MaskSpec::center(4, 4, 2, 2).unwrap();
        let masked = apply_mask(&img, &spec.tensor()).unwrap().to_vec();
        let orig = img.to_vec();
        for (i, v) in masked.iter().enumerate() {
            let p = i % 16;
            if spec.contains(p / 4, p % 4) {
                assert_eq!(*v, 1.0);
            } else {
                assert_eq!(v.to_bits(), orig[i].to_bits());
            }
        }
        assert!(apply_mask(&img, &Tensor::ones(Shape::new(1, 1, 4, 2))).is_err());
    }

    #[test]
    fn masking_then_compositing_restores() {
        let img = Tensor::new(Shape::new(2, 3, 8, 8), (0..384).map(|v| (v as f32).sin()).collect()).unwrap();
        let m = make_center_mask(8, 8, 4, 4).unwrap();
        let masked = apply_mask(&img, &m).unwrap();
        assert_eq!(composite(&masked, &img, &m).unwrap().to_vec(), img.to_vec());
    }
}
