//! The three networks and the composite operation that pastes generated
//! content into the hole.

mod critic;
mod extractor;
mod generator;
mod layers;

pub use critic::{CriticNet, CriticNets, DEFAULT_CRITIC_WIDTH, GLOBAL_CRITIC_LAYERS, LOCAL_CRITIC_LAYERS};
pub use extractor::{ExtractorNet, EXTRACTOR_WIDTHS};
pub use generator::{GeneratorNet, DEFAULT_GENERATOR_WIDTH, DILATIONS};
pub use layers::{Activation, ConvSpec, DenseSpec, LayerKind};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `mask * raw + (1 - mask) * generated`, selecting rather than blending so
/// known pixels are copied bit-exactly. `mask` may have one channel and
/// batch 1; it is broadcast.
pub fn composite(raw: &Tensor, generated: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if raw.shape() != generated.shape() {
        return Err(Error::ShapeMismatch {
            op: "composite",
            left: raw.shape(),
            right: generated.shape(),
        });
    }
    Tensor::select(mask, raw, generated)
}
