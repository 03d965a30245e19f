//! Spiking neural networks for lane segmentation.
//!
//! The pipeline runs raw frames through [`preprocess`], rate-codes them with
//! [`encoding`], simulates leaky integrate-and-fire layers in [`snn`], trains
//! them with surrogate gradients in [`training`], scores outputs in
//! [`evaluation`] and emulates fixed-point deployment in [`quantsim`].

pub mod dataset;
pub mod encoding;
pub mod error;
pub mod evaluation;
mod linalg;
pub mod numerics;
pub mod preprocess;
pub mod quantsim;
pub mod snn;
pub mod training;

pub use dataset::{
    generate_synthetic, load_det_layout, DatasetManifest, ManifestEntry, ManifestSource, Sample, SampleSource, Split, SyntheticConfig,
    SyntheticSource,
};
pub use encoding::{encode_batch, rate_encode, SpikeTrainBatch};
pub use error::{Error, Result};
pub use evaluation::{best_threshold, confusion, evaluate, f_measure, iou, PixelConfusion, PrPoint, ThresholdReport};
pub use numerics::{fmt_g6, Grid2D, Rng};
pub use preprocess::{area_resize, process_label, process_sample, process_split, PreprocessConfig};
pub use quantsim::{evaluate_quantized, load_quantized, quant_forward, quantize, save_quantized, QuantReport, QuantizedNetwork};
pub use snn::{build_network, load_checkpoint, save_checkpoint, Architecture, InitConfig, LifParams, Network};
pub use training::{train, TrainConfig, TrainOutcome};
