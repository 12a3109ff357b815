use rand::Rng;
use rand_distr::Uniform;

use crate::error::Result;
use crate::tensor::{conv2d, conv2d_transpose, fully_connected, NetworkParams, Padding, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: Tensor) -> Tensor {
        match self {
            Activation::Elu => x.elu(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// `same`-padded correlation.
    Conv,
    /// Upsampling by `stride`.
    Transposed,
}

/// One convolution layer; its tensors are `{name}.weight` and `{name}.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub activation: Activation,
}

impl ConvSpec {
    pub fn conv(name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv,
            c_in,
            c_out,
            kernel,
            stride,
            dilation: 1,
            activation: Activation::Elu,
        }
    }

    pub fn dilated(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn transposed(name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Transposed,
            ..Self::conv(name, c_in, c_out, kernel, stride)
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        let k = self.kernel;
        match self.kind {
            LayerKind::Conv => Shape::new(self.c_out, self.c_in, k, k),
            LayerKind::Transposed => Shape::new(self.c_in, self.c_out, k, k),
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.c_in * self.kernel * self.kernel,
            // each output pixel sees about (k / s)^2 taps per input channel
            LayerKind::Transposed => {
                let per_axis = self.kernel.div_ceil(self.stride);
                self.c_in * per_axis * per_axis
            }
        }
    }

    pub fn register<R: Rng + ?Sized>(&self, params: &mut NetworkParams, gain: f32, rng: &mut R) -> Result<()> {
        let ws = self.weight_shape();
        params.insert(format!("{}.weight", self.name), ws, he_uniform(ws.numel(), self.fan_in(), gain, rng))?;
        params.insert(format!("{}.bias", self.name), Shape::new(1, self.c_out, 1, 1), vec![0.0; self.c_out])?;
        Ok(())
    }

    pub fn forward(&self, params: &NetworkParams, x: &Tensor) -> Result<Tensor> {
        let (w, b) = weight_and_bias(params, &self.name);
        let y = match self.kind {
            LayerKind::Conv => conv2d(
                x,
                w,
                Some(b),
                (self.stride, self.stride),
                (self.dilation, self.dilation),
                Padding::Same,
            )?,
            LayerKind::Transposed => conv2d_transpose(x, w, Some(b), (self.stride, self.stride))?,
        };
        Ok(self.activation.apply(y))
    }
}

/// Fully connected layer `{name}.weight (out, in, 1, 1)`, `{name}.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSpec {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl DenseSpec {
    pub fn new(name: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            name: name.to_string(),
            d_in,
            d_out,
        }
    }

    pub fn register<R: Rng + ?Sized>(&self, params: &mut NetworkParams, gain: f32, rng: &mut R) -> Result<()> {
        let ws = Shape::new(self.d_out, self.d_in, 1, 1);
        // LeCun-style bound 1/sqrt(fan_in), scaled by gain
        let bound = gain / (self.d_in as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = (0..ws.numel()).map(|_| rng.sample(dist)).collect();
        params.insert(format!("{}.weight", self.name), ws, w)?;
        params.insert(format!("{}.bias", self.name), Shape::new(1, self.d_out, 1, 1), vec![0.0; self.d_out])?;
        Ok(())
    }

    pub fn forward(&self, params: &NetworkParams, x: &Tensor) -> Result<Tensor> {
        let (w, b) = weight_and_bias(params, &self.name);
        fully_connected(x, w, Some(b))
    }
}

fn weight_and_bias<'a>(params: &'a NetworkParams, name: &str) -> (&'a Tensor, &'a Tensor) {
    let get = |suffix: &str| {
        params
            .get(&format!("{name}.{suffix}"))
            .unwrap_or_else(|| panic!("layer `{name}` has no {suffix}; params were built for another architecture"))
    };
    (get("weight"), get("bias"))
}

/// Uniform init with variance `gain^2 * 2 / fan_in`.
fn he_uniform<R: Rng + ?Sized>(len: usize, fan_in: usize, gain: f32, rng: &mut R) -> Vec<f32> {
    let bound = gain * (6.0 / fan_in as f32).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..len).map(|_| rng.sample(dist)).collect()
}
