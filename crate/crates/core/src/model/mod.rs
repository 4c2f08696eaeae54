//! Segmentation backbone: tensor type, layers, UNet, optimizer and checkpoints.

pub mod checkpoint;
mod kernels;
pub mod layers;
pub mod optim;
pub mod tensor;
pub mod unet;

pub use checkpoint::{ModelCheckpoint, RngState};
pub use optim::Sgd;
pub use tensor::Tensor;
pub use unet::{
    argmax_label, foreground_prob, predictions_from_logits, ForwardCache, ModelConfig, Prediction,
    SegModel,
};
