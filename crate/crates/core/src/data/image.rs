//! Binary P6 pixmaps (8-bit, max value 255).
//!
//! Normalized values are `v / 127.5 - 1`; [`denormalize`] rounds back to the
//! nearest 8-bit level, clamping to `[0, 255]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Interleaved 8-bit RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn normalize(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn denormalize(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let bad = |why: &str| Error::ImageFormat(why.to_string());
    let mut pos = 0;
    let mut token = || -> Result<String> {
        // whitespace and comments between header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(bad("not a binary P6 pixmap"));
    }
    let mut number = |what: &str| -> Result<usize> {
        token()?
            .parse::<usize>()
            .map_err(|_| Error::ImageFormat(format!("malformed {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("max value")?;
    if maxval != 255 {
        return Err(Error::ImageFormat(format!("unsupported max value {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(bad("empty image"));
    }
    // exactly one whitespace byte separates the header from the payload
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("truncated header"));
    }
    pos += 1;
    let need = width * height * 3;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::ImageFormat(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    Ok(RgbImage {
        width,
        height,
        pixels: payload[..need].to_vec(),
    })
}

impl RgbImage {
    /// `(1, 3, h, w)` normalized tensor.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = normalize(px[c]);
            }
        }
        Tensor::new(Shape::new(1, 3, self.height, self.width), data).expect("finite")
    }

    /// From a `(1, C, h, w)` tensor with `C` of 1 or 3.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || (s.c != 1 && s.c != 3) {
            return Err(Error::invalid(
                "write_image",
                format!("expected one 1- or 3-channel image, got {s:?}"),
            ));
        }
        Ok(Self {
            width: s.w,
            height: s.h,
            pixels: tensor_to_bytes(t),
        })
    }
}

/// Interleaved RGB bytes of a single image; one channel is replicated.
pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let s = t.shape();
    let d = t.data();
    let plane = s.plane();
    let mut out = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            let src = if s.c == 1 { 0 } else { c };
            out.push(denormalize(d[src * plane + i]));
        }
    }
    out
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_ppm(&bytes)?.to_tensor())
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let img = RgbImage::from_tensor(image)?;
    fs::write(path, encode_ppm(&img)).map_err(|e| Error::io(path, e))
}

/// Tile `(1, 3, h, w)` images row-major into a grid with `cols` columns and a
/// one-pixel white gutter.
pub fn image_grid(images: &[Tensor], cols: usize) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("image_grid", "no images"))?
        .shape();
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (h, w) = (first.h, first.w);
    let (gh, gw) = (rows * (h + 1) - 1, cols * (w + 1) - 1);
    let mut data = vec![1.0; 3 * gh * gw];
    for (k, img) in images.iter().enumerate() {
        if img.shape() != Shape::new(1, 3, h, w) {
            return Err(Error::ShapeMismatch {
                op: "image_grid",
                left: Shape::new(1, 3, h, w),
                right: img.shape(),
            });
        }
        let (oy, ox) = ((k / cols) * (h + 1), (k % cols) * (w + 1));
        let d = img.data();
        for c in 0..3 {
            for y in 0..h {
                let dst = c * gh * gw + (oy + y) * gw + ox;
                data[dst..dst + w].copy_from_slice(&d[c * h * w + y * w..][..w]);
            }
        }
    }
    Tensor::new(Shape::new(1, 3, gh, gw), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_exact() {
        let img = RgbImage {
            width: 2,
            height: 1,
            pixels: vec![1, 2, 3, 4, 5, 6],
        };
        let b = encode_ppm(&img);
        assert!(b.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(b.len(), 11 + 6);
        assert_eq!(decode_ppm(&b).unwrap(), img);
    }

    #[test]
    fn header_comments_accepted() {
        let mut b = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        b.extend_from_slice(&[9, 8, 7]);
        assert_eq!(decode_ppm(&b).unwrap().pixels, vec![9, 8, 7]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(Error::ImageFormat(_))));
        assert!(decode_ppm(b"P6\n1 x\n255\n\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n2 2").is_err());
    }

    #[test]
    fn normalization_is_exact_on_lattice() {
        for v in 0..=255u8 {
            assert_eq!(denormalize(normalize(v)), v);
        }
        assert_eq!(normalize(0), -1.0);
        assert_eq!(normalize(255), 1.0);
        assert_eq!(denormalize(7.0), 255);
    }

    #[test]
    fn tensor_round_trip() {
        let img = RgbImage {
            width: 3,
            height: 2,
            pixels: (0..18).map(|v| (v * 14) as u8).collect(),
        };
        let t = img.to_tensor();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 3));
        assert_eq!(RgbImage::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn grid_layout() {
        let a = Tensor::full(Shape::new(1, 3, 2, 2), -1.0);
        let g = image_grid(&[a.clone(), a.clone(), a], 2).unwrap();
        assert_eq!(g.shape(), Shape::new(1, 3, 5, 5));
        let d = g.to_vec();
        assert_eq!(d[0], -1.0);
        assert_eq!(d[2], 1.0);
        assert_eq!(d[3 * 5 + 3], 1.0);
    }
}
