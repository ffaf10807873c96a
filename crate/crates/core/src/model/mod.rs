//! Detection model: temporal and spatial encoders, attention fusion,
//! and the four output heads, plus checkpoint persistence.

mod checkpoint;
mod config;
mod forward;
mod init;

pub use config::{ArchVariant, ModelConfig};
pub use forward::{
    threshold_decision, ForwardPass, HeadOutputs, Model, BN_MOMENTUM, NORM_EPS,
};
pub use init::init_params;
