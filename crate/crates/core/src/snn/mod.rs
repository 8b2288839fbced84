//! Spiking building blocks: LIF dynamics, surrogate gradients, the block
//! encoder and firing statistics.

pub mod firing;
pub mod lif;
pub mod network;
pub mod surrogate;

pub use firing::firing_rate;
pub use lif::{lif_step, lif_trace, LifParams, LifState, LifTrace};
pub use network::{
    project, Architecture, BlockConfig, EncoderConfig, LayerKind, Mode, Network, ProjectionConfig,
    TemporalOutputs,
};
pub use surrogate::{surrogate_derivative, Surrogate, SurrogateKind};
