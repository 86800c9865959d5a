//! File formats and configuration.

pub mod config;
pub mod container;
pub mod image;

pub use config::{load_config, save_config, SimConfig};
pub use container::{load_weights, save_weights, Tensor, TensorSet};
pub use image::{demosaic, load_frame, BayerFrame};
