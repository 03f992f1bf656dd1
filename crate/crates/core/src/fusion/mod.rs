//! The fusion segmentation model and its plain-UNet baseline.
//!
//! A [`ModalitySample`] carries the normalized target volume, its mask and
//! the ordered list of crop-sized low-frequency priors (the target's own low
//! part first, then one per donor modality). The proposed model feeds the
//! target's high-frequency image through a UNet backbone, maps each prior
//! through one shared convolution, writes the result into the centered
//! block of the backbone features and predicts once per prior.

mod checkpoint;
mod model;
mod sample;
mod train;

pub use checkpoint::{Checkpoint, CheckpointDescriptor};
pub use model::{
    predict, ArchConfig, BackboneConfig, ForwardOutput, HeadConfig, Model, ModelKind, Prepared,
};
pub use sample::{build_prior_list, ModalitySample};
pub use train::{evaluate_dice, train, EpochLog, TrainConfig, TrainOutcome};

#[cfg(test)]
mod tests;
