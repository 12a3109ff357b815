//! Masks, synthetic scenes and image files.

mod image;
mod mask;
mod synthetic;

pub use image::{
    decode_ppm, denormalize, encode_ppm, image_grid, normalize, read_image, tensor_to_bytes, write_image, RgbImage,
};
pub use mask::{apply_mask, make_center_mask, MaskSpec, WHITE};
pub use synthetic::{generate_synthetic_dataset, render_scene, Dataset, SceneAttributes, ShapeKind};
