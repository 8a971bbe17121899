//! Desk-scale 3D Unet building blocks with reverse-mode automatic
//! differentiation, the progressive K-stage architecture, Adam, patch-based
//! pre-training and physics-based test-time fine-tuning.

pub mod adam;
pub mod checkpoint;
pub mod feature;
pub mod finetune;
pub mod ops;
pub mod prognet;
pub mod train;
pub mod unet;

mod error;

pub use adam::Adam;
pub use error::{NetError, Result};
pub use feature::FeatureMap;
pub use prognet::Prognet;
pub use unet::{Mode, Unet, UnetConfig};
