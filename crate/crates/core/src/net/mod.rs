//! UNet surrogate with hand-written reverse passes.

pub mod checkpoint;
pub mod ops;
pub mod tensor;
pub mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use ops::{Activation, NormKind, PaddingMode};
pub use tensor::{Real, Tensor};
pub use unet::{init_parameters, NetworkConfig, ParamTensor, ParameterSet, PredictionHead, Recording, UNet, Upsample};
