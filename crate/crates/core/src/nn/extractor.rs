//! Style extractor: four 5x5 ELU convolutions (strides 2, 2, 2, 1), a
//! flatten, and two parallel fully connected heads for the posterior mean and
//! log-variance.

use rand::Rng;

use super::layers::{ConvSpec, DenseSpec};
use crate::error::{Error, Result};
use crate::latent::LatentSample;
use crate::tensor::{NetworkParams, Tensor};

pub const EXTRACTOR_WIDTHS: [usize; 4] = [64, 128, 256, 256];
const STRIDES: [usize; 4] = [2, 2, 2, 1];
const KERNEL: usize = 5;

#[derive(Clone, Debug)]
pub struct ExtractorNet {
    pub params: NetworkParams,
    convs: Vec<ConvSpec>,
    mu_head: DenseSpec,
    logvar_head: DenseSpec,
    resolution: (usize, usize),
}

impl ExtractorNet {
    /// Heads are sized from the flatten width at `resolution`
    /// (`(h/8) * (w/8) * 256`; 4096 at 32x32).
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        resolution: (usize, usize),
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_divisible(resolution.0, resolution.1)?;
        let mut convs = Vec::with_capacity(4);
        let mut c_in = in_channels;
        for (i, (&width, &stride)) in EXTRACTOR_WIDTHS.iter().zip(&STRIDES).enumerate() {
            convs.push(ConvSpec::conv(&format!("conv{}", i + 1), c_in, width, KERNEL, stride));
            c_in = width;
        }
        let flat = Self::flat_dim(resolution);
        let mu_head = DenseSpec::new("mu", flat, latent_dim);
        let logvar_head = DenseSpec::new("logvar", flat, latent_dim);

        let mut params = NetworkParams::new();
        for c in &convs {
            c.register(&mut params, 1.0, rng)?;
        }
        mu_head.register(&mut params, 1.0, rng)?;
        // small log-variance head so the initial posterior is close to unit variance
        logvar_head.register(&mut params, 0.1, rng)?;
        Ok(Self {
            params,
            convs,
            mu_head,
            logvar_head,
            resolution,
        })
    }

    pub fn flat_dim(resolution: (usize, usize)) -> usize {
        (resolution.0 / 8) * (resolution.1 / 8) * EXTRACTOR_WIDTHS[3]
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.d_out
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].c_in
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn conv_layers(&self) -> &[ConvSpec] {
        &self.convs
    }

    /// `(mu head, logvar head)`.
    pub fn heads(&self) -> (&DenseSpec, &DenseSpec) {
        (&self.mu_head, &self.logvar_head)
    }

    /// Flattened output of the convolution stack, `(N, (H/8)(W/8)*256, 1, 1)`.
    /// Accepts any spatial size divisible by 8, not just the training one.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let s = image.shape();
        check_divisible(s.h, s.w)?;
        let mut x = image.clone();
        for c in &self.convs {
            x = c.forward(&self.params, &x)?;
        }
        Ok(x.flatten())
    }

    /// Posterior `(mu, logvar)`, each `(N, J, 1, 1)`; `z` is left unset.
    pub fn forward(&self, image: &Tensor) -> Result<LatentSample> {
        let f = self.features(image)?;
        let mu = self.mu_head.forward(&self.params, &f)?;
        let logvar = self.logvar_head.forward(&self.params, &f)?;
        LatentSample::new(mu, logvar)
    }

    /// Same network with parameters cut from the graph.
    pub fn detached(&self) -> Self {
        Self {
            params: self.params.detached(),
            ..self.clone()
        }
    }
}

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::invalid(
            "extractor_forward",
            format!("spatial size {h}x{w} must be a positive multiple of 8"),
        ));
    }
    Ok(())
}
