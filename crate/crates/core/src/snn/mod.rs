//! Spiking network model: LIF dynamics, layer kernels, topologies and
//! checkpoint storage.

pub mod checkpoint;
pub mod layers;
pub mod lif;
pub mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{apply_dropout, apply_noise, conv2d_forward, dense_forward, LayerSpec, Shape};
pub use lif::{lif_step, LifParams, SpikeFn};
pub use network::{
    architecture_layers, build_network, forward, forward_matrix, predict, Architecture, ForwardOptions, ForwardOutput, InitConfig,
    Layer, LayerTrace, Network, Trace, INPUT_SHAPE, OUTPUT_UNITS,
};
