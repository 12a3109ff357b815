//! Wasserstein critics: a global one over the whole frame and a local one
//! over the hole crop. No output nonlinearity.

use rand::Rng;

use super::layers::{ConvSpec, DenseSpec};
use crate::error::{Error, Result};
use crate::tensor::{NetworkParams, Tensor};

pub const GLOBAL_CRITIC_LAYERS: usize = 4;
pub const LOCAL_CRITIC_LAYERS: usize = 3;
pub const DEFAULT_CRITIC_WIDTH: usize = 32;

/// Strided 5x5 ELU convolutions followed by a linear score.
#[derive(Clone, Debug)]
pub struct CriticNet {
    pub params: NetworkParams,
    convs: Vec<ConvSpec>,
    head: DenseSpec,
    input: (usize, usize),
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        input: (usize, usize),
        depth: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let down = 1usize << depth;
        if input.0 == 0 || input.1 == 0 || input.0 % down != 0 || input.1 % down != 0 {
            return Err(Error::invalid(
                "CriticNet",
                format!("input {}x{} must be a positive multiple of {down}", input.0, input.1),
            ));
        }
        let mut convs = Vec::with_capacity(depth);
        let mut c_in = in_channels;
        for i in 0..depth {
            let c_out = width * (1 << i.min(1));
            convs.push(ConvSpec::conv(&format!("conv{}", i + 1), c_in, c_out, 5, 2));
            c_in = c_out;
        }
        let flat = c_in * (input.0 / down) * (input.1 / down);
        let head = DenseSpec::new("score", flat, 1);
        let mut params = NetworkParams::new();
        for c in &convs {
            c.register(&mut params, 1.0, rng)?;
        }
        head.register(&mut params, 1.0, rng)?;
        Ok(Self {
            params,
            convs,
            head,
            input,
        })
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input
    }

    pub fn conv_layers(&self) -> &[ConvSpec] {
        &self.convs
    }

    pub fn head(&self) -> &DenseSpec {
        &self.head
    }

    /// Scores `(N, 1, 1, 1)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if (s.h, s.w) != self.input {
            return Err(Error::invalid(
                "critic_forward",
                format!("critic expects {}x{} input, got {}x{}", self.input.0, self.input.1, s.h, s.w),
            ));
        }
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(&self.params, &h)?;
        }
        let score = self.head.forward(&self.params, &h.flatten())?;
        Ok(score)
    }

    pub fn detached(&self) -> Self {
        Self {
            params: self.params.detached(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticNets {
    pub global: CriticNet,
    pub local: CriticNet,
}

impl CriticNets {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        image: (usize, usize),
        hole: (usize, usize),
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hole.0 > image.0 || hole.1 > image.1 {
            return Err(Error::invalid("CriticNets", "hole larger than image"));
        }
        Ok(Self {
            global: CriticNet::new(in_channels, image, GLOBAL_CRITIC_LAYERS, width, rng)?,
            local: CriticNet::new(in_channels, hole, LOCAL_CRITIC_LAYERS, width, rng)?,
        })
    }

    /// `(global, local)` scores, each `(N, 1, 1, 1)`.
    pub fn forward(&self, image: &Tensor, hole_crop: &Tensor) -> Result<(Tensor, Tensor)> {
        let (is, cs) = (image.shape(), hole_crop.shape());
        if cs.h > is.h || cs.w > is.w {
            return Err(Error::invalid(
                "critic_forward",
                format!("crop {}x{} larger than image {}x{}", cs.h, cs.w, is.h, is.w),
            ));
        }
        Ok((self.global.forward(image)?, self.local.forward(hole_crop)?))
    }

    pub fn detached(&self) -> Self {
        Self {
            global: self.global.detached(),
            local: self.local.detached(),
        }
    }
}
