//! Latent codes: reparameterized posterior samples, prior draws, and tiling
//! of codes into generator input planes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Posterior parameters from the extractor, each `(N, J, 1, 1)`.
#[derive(Clone, Debug)]
pub struct LatentSample {
    pub mu: Tensor,
    pub logvar: Tensor,
    /// Set once a code has been drawn with [`LatentSample::sample`].
    pub z: Option<Tensor>,
}

impl LatentSample {
    pub fn new(mu: Tensor, logvar: Tensor) -> Result<Self> {
        if mu.shape() != logvar.shape() {
            return Err(Error::ShapeMismatch {
                op: "LatentSample",
                left: mu.shape(),
                right: logvar.shape(),
            });
        }
        Ok(Self { mu, logvar, z: None })
    }

    pub fn batch(&self) -> usize {
        self.mu.shape().n
    }

    pub fn dim(&self) -> usize {
        self.mu.shape().sample_len()
    }

    /// `exp(logvar / 2)`.
    pub fn std(&self) -> Tensor {
        self.logvar.scale(0.5).exp()
    }

    /// Draw `z` with the given standard-normal noise and keep it.
    pub fn sample(&mut self, eps: &Tensor) -> Result<&Tensor> {
        let z = reparameterize(self, eps)?;
        Ok(self.z.insert(z))
    }
}

/// `z = mu + exp(logvar / 2) * eps`. Gradients reach `mu` and `logvar`; the
/// noise is treated as a constant.
pub fn reparameterize(sample: &LatentSample, eps: &Tensor) -> Result<Tensor> {
    if eps.shape() != sample.mu.shape() {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            left: sample.mu.shape(),
            right: eps.shape(),
        });
    }
    let noise = eps.detach();
    sample.mu.add(&sample.std().mul(&noise)?)
}

/// Standard-normal tensor drawn from `rng`.
pub fn standard_normal<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::from_vec(shape, data)
}

/// `N x J` i.i.d. standard-normal codes, deterministic per seed.
pub fn sample_prior(n: usize, j: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    standard_normal(Shape::new(n, j, 1, 1), &mut rng)
}

/// Replicate each code over an `h x w` plane: `(N, J, 1, 1) -> (N, J, H, W)`.
pub fn tile_latent(z: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("tile_latent", "spatial size must be positive"));
    }
    let s = z.shape();
    let codes = z.reshape(Shape::new(s.n, s.sample_len(), 1, 1))?;
    codes.expand(Shape::new(s.n, s.sample_len(), h, w))
}

/// Generator input: channels `[masked_image, mask, z_map]`.
pub fn concat_inputs(masked_image: &Tensor, mask: &Tensor, z_map: &Tensor) -> Result<Tensor> {
    let img = masked_image.shape();
    let mask = if mask.shape().n == 1 && img.n > 1 {
        mask.expand(Shape::new(img.n, 1, img.h, img.w))?
    } else {
        mask.clone()
    };
    if mask.shape().c != 1 {
        return Err(Error::ChannelMismatch {
            op: "concat_inputs",
            expected: 1,
            actual: mask.shape().c,
        });
    }
    Tensor::concat_channels(&[masked_image, &mask, z_map])
}
