//! Encoder / dilated bottleneck / decoder generator.
//!
//! Input channels are `[masked image, mask, tiled code]`. Two stride-2
//! convolutions reach 1/4 resolution, three dilated convolutions (2, 4, 8)
//! widen the receptive field, two transposed convolutions restore full
//! resolution, and a tanh layer maps to `[-1, 1]`.

use rand::Rng;

use super::layers::{Activation, ConvSpec};
use crate::error::{Error, Result};
use crate::latent::concat_inputs;
use crate::tensor::{NetworkParams, Tensor};

pub const DEFAULT_GENERATOR_WIDTH: usize = 32;
pub const DILATIONS: [usize; 3] = [2, 4, 8];

#[derive(Clone, Debug)]
pub struct GeneratorNet {
    pub params: NetworkParams,
    layers: Vec<ConvSpec>,
    image_channels: usize,
    latent_dim: usize,
}

impl GeneratorNet {
    pub fn new<R: Rng + ?Sized>(image_channels: usize, latent_dim: usize, width: usize, rng: &mut R) -> Result<Self> {
        if width < 2 {
            return Err(Error::invalid("GeneratorNet", "width must be at least 2"));
        }
        let c_in = image_channels + 1 + latent_dim;
        let (w1, w2) = (width, 2 * width);
        let mut layers = vec![
            ConvSpec::conv("enc1", c_in, w1, 3, 1),
            ConvSpec::conv("enc2", w1, w2, 3, 2),
            ConvSpec::conv("enc3", w2, w2, 3, 2),
        ];
        for (i, &d) in DILATIONS.iter().enumerate() {
            layers.push(ConvSpec::conv(&format!("dil{}", i + 1), w2, w2, 3, 1).dilated(d));
        }
        layers.push(ConvSpec::transposed("dec1", w2, w1, 4, 2));
        layers.push(ConvSpec::transposed("dec2", w1, width / 2, 4, 2));
        layers.push(ConvSpec::conv("out", width / 2, image_channels, 3, 1).with_activation(Activation::Tanh));

        let mut params = NetworkParams::new();
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            l.register(&mut params, if i == last { 0.5 } else { 1.0 }, rng)?;
        }
        Ok(Self {
            params,
            layers,
            image_channels,
            latent_dim,
        })
    }

    pub fn image_channels(&self) -> usize {
        self.image_channels
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    /// Full-frame prediction in `[-1, 1]` with the spatial size of the input.
    pub fn forward(&self, masked_image: &Tensor, mask: &Tensor, z_map: &Tensor) -> Result<Tensor> {
        let s = masked_image.shape();
        if s.c != self.image_channels {
            return Err(Error::ChannelMismatch {
                op: "generator_forward",
                expected: self.image_channels,
                actual: s.c,
            });
        }
        let zs = z_map.shape();
        if zs.c != self.latent_dim {
            return Err(Error::ChannelMismatch {
                op: "generator_forward",
                expected: self.latent_dim,
                actual: zs.c,
            });
        }
        let ms = mask.shape();
        if (zs.n, zs.h, zs.w) != (s.n, s.h, s.w) || (ms.n != s.n && ms.n != 1) || (ms.h, ms.w) != (s.h, s.w) {
            return Err(Error::ShapeMismatch {
                op: "generator_forward",
                left: s,
                right: if (zs.h, zs.w) != (s.h, s.w) || zs.n != s.n { zs } else { ms },
            });
        }
        if s.h % 4 != 0 || s.w % 4 != 0 {
            return Err(Error::invalid(
                "generator_forward",
                format!("spatial size {}x{} must be a multiple of 4", s.h, s.w),
            ));
        }
        let mut x = concat_inputs(masked_image, mask, z_map)?;
        for l in &self.layers {
            x = l.forward(&self.params, &x)?;
        }
        Ok(x)
    }

    pub fn detached(&self) -> Self {
        Self {
            params: self.params.detached(),
            ..self.clone()
        }
    }
}
