//! Surrogate-gradient training: joint loss, backpropagation through time,
//! decoupled-decay Adam and the epoch loop.

pub mod backward;
pub mod loss;
pub mod optim;
pub mod surrogate;
pub mod trainer;

pub use backward::{backward_from_rates, stbp_backward, BackwardOptions, Gradients, LayerGrad};
pub use loss::{joint_loss_grad, loss_joint, loss_mse, loss_wce, LossReport, WCE_EPS};
pub use optim::{adamw_step, AdamConfig, AdamW, Moments};
pub use surrogate::surrogate_derivative;
pub use trainer::{
    evaluate_samples, metrics_csv, predict_samples, train, EpochMetrics, TrainConfig, TrainOutcome, METRICS_HEADER,
};
