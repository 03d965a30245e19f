//! Mini-batch training loop.

use std::fmt::Write as _;

use crate::dataset::Sample;
use crate::encoding::encode_batch;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, ThresholdReport};
use crate::numerics::{fmt_g6, Rng};
use crate::snn::lif::LifParams;
use crate::snn::network::{forward, predict, ForwardOptions, Network};
use crate::training::backward::{stbp_backward, BackwardOptions};
use crate::training::optim::{AdamConfig, AdamW};

/// Header of the per-epoch metrics CSV.
pub const METRICS_HEADER: &str = "epoch,loss_total,loss_mse,loss_wce,test_iou,best_threshold";

const EVAL_STREAM: u64 = 0xE7A1;
const EVAL_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Share of the weighted cross-entropy term in the joint loss.
    pub p: f64,
    /// Positive-class weight.
    pub beta: f64,
    pub lr: f64,
    /// Decoupled weight decay per step.
    pub lambda: f64,
    pub v_th: f64,
    /// Half-width of the surrogate pulse; `None` means `v_th`.
    pub a1_half: Option<f64>,
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub reset_term: bool,
    pub train_bias: bool,
    /// Evaluate on the test split every this many epochs (0 disables).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 0.3,
            beta: 4.0,
            lr: 1e-4,
            lambda: 1e-4,
            v_th: 0.2,
            a1_half: None,
            tau: 0.2,
            epochs: 200,
            batch_size: 4,
            steps: 30,
            adam: AdamConfig::default(),
            seed: 0,
            reset_term: true,
            train_bias: false,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if !(self.beta > 0.0) || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::invalid("beta and lr must be positive, lambda in [0, 1)"));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::invalid("batch size and steps must be positive"));
        }
        if self.a1_half.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::invalid("surrogate half-width must be positive"));
        }
        LifParams::new(self.v_th, self.tau).map(|_| ())
    }

    pub fn backward_options(&self) -> BackwardOptions {
        BackwardOptions {
            a1: 2.0 * self.a1_half.unwrap_or(self.v_th),
            reset_term: self.reset_term,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_mse: f64,
    pub loss_wce: f64,
    pub test_iou: Option<f64>,
    pub best_threshold: Option<f64>,
    pub optimizer_steps: u64,
}

impl EpochMetrics {
    /// One CSV row matching [`METRICS_HEADER`]; missing values are empty.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_g6).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            fmt_g6(self.loss_total),
            fmt_g6(self.loss_mse),
            fmt_g6(self.loss_wce),
            opt(self.test_iou),
            opt(self.best_threshold)
        )
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in history {
        let _ = writeln!(s, "{}", m.csv_row());
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Network with the best test IoU seen (the final one when never evaluated).
    pub best: Network,
    pub best_epoch: usize,
    pub best_iou: Option<f64>,
    pub last: Network,
    pub history: Vec<EpochMetrics>,
}

/// Train `net` on `train`, evaluating on `test` every `cfg.eval_every` epochs.
/// Spike trains are re-drawn every epoch. `on_epoch` sees each epoch's metrics
/// as soon as they are known.
pub fn train(
    train: &[Sample],
    test: &[Sample],
    mut net: Network,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let units = net.output_units();
    for s in train.iter().chain(test) {
        if s.label.len() != units {
            return Err(Error::invalid(format!(
                "sample {} has {} label pixels, network emits {units}",
                s.id,
                s.label.len()
            )));
        }
    }
    net.lif = LifParams {
        v_th: cfg.v_th,
        tau: cfg.tau,
        ..net.lif
    };
    let bopts = cfg.backward_options();
    let mut opt = AdamW::new(&net, cfg.lr, cfg.lambda, cfg.adam, cfg.train_bias);
    let root = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network)> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = root.child(epoch as u64);
        rng.shuffle(&mut order);
        let (mut total, mut mse, mut wce) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<_> = chunk.iter().map(|&i| &train[i].input).collect();
            let spikes = encode_batch(&inputs, cfg.steps, &mut rng)?;
            let labels: Vec<f64> = chunk.iter().flat_map(|&i| train[i].label.data().iter().copied()).collect();
            let out = forward(&net, &spikes, &mut rng, ForwardOptions::TRAINING)?;
            let (loss, grads) = stbp_backward(&net, &out.trace, &out.rates, &labels, cfg.p, cfg.beta, &bopts)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {}: loss {} (mse {}, wce {})",
                    batches + 1,
                    loss.total,
                    loss.mse_part,
                    loss.wce_part
                )));
            }
            opt.step(&mut net, &grads)?;
            total += loss.total;
            mse += loss.mse_part;
            wce += loss.wce_part;
            batches += 1;
        }
        let n = batches as f64;
        let mut metrics = EpochMetrics {
            epoch,
            loss_total: total / n,
            loss_mse: mse / n,
            loss_wce: wce / n,
            test_iou: None,
            best_threshold: None,
            optimizer_steps: opt.steps(),
        };
        if cfg.eval_every > 0 && !test.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            let report = evaluate_samples(&net, test, cfg.steps, &mut root.child(EVAL_STREAM))?;
            metrics.test_iou = Some(report.mean_iou);
            metrics.best_threshold = Some(report.mean_best_th);
            if best.as_ref().is_none_or(|(iou, _, _)| report.mean_iou > *iou) {
                best = Some((report.mean_iou, epoch, net.clone()));
            }
        }
        on_epoch(&metrics);
        history.push(metrics);
    }

    let (best_iou, best_epoch, best_net) = match best {
        Some((iou, e, n)) => (Some(iou), e, n),
        None => (None, cfg.epochs, net.clone()),
    };
    Ok(TrainOutcome {
        best: best_net,
        best_epoch,
        best_iou,
        last: net,
        history,
    })
}

/// Inference firing rates for each sample, in order.
pub fn predict_samples(net: &Network, samples: &[Sample], steps: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let units = net.output_units();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let inputs: Vec<_> = chunk.iter().map(|s| &s.input).collect();
        let spikes = encode_batch(&inputs, steps, rng)?;
        let rates = predict(net, &spikes)?;
        out.extend(rates.chunks(units).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Threshold search and IoU over `samples`.
pub fn evaluate_samples(net: &Network, samples: &[Sample], steps: usize, rng: &mut Rng) -> Result<ThresholdReport> {
    let rates = predict_samples(net, samples, steps, rng)?;
    let pairs: Vec<(&[f64], &[f64])> = samples.iter().zip(&rates).map(|(s, r)| (s.label.data(), r.as_slice())).collect();
    evaluate(&pairs, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Grid2D;
    use crate::snn::layers::{LayerSpec, Shape};
    use crate::snn::network::Architecture;

    fn tiny_problem() -> (Vec<Sample>, Network) {
        let mut rng = Rng::new(5);
        let samples = (0..8)
            .map(|i| Sample {
                input: Grid2D::from_fn(2, 4, |_, _| rng.uniform()).unwrap(),
                label: Grid2D::from_fn(1, 3, |_, c| ((c + i) % 2) as f64).unwrap(),
                id: format!("s{i}"),
            })
            .collect();
        let net = Network::new(
            Architecture::Custom,
            Shape::new(1, 2, 4),
            &[LayerSpec::Noise { sigma_r: 0.1 }, LayerSpec::Dense { in_units: 8, out_units: 3 }],
            LifParams::default(),
            &mut rng,
        )
        .unwrap();
        (samples, net)
    }

    #[test]
    fn one_epoch_of_eight_samples_is_two_steps() {
        let (samples, net) = tiny_problem();
        let cfg = TrainConfig {
            epochs: 1,
            steps: 5,
            ..TrainConfig::default()
        };
        let out = train(&samples, &samples, net, &cfg, |_| {}).unwrap();
        assert_eq!(out.history[0].optimizer_steps, 2);
        assert!(out.history[0].test_iou.is_some());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (samples, net) = tiny_problem();
        let cfg = TrainConfig {
            epochs: 3,
            steps: 5,
            lr: 1e-2,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&samples, &samples, net.clone(), &cfg, |_| {}).unwrap();
        let b = train(&samples, &samples, net, &cfg, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.last.layers[1].weights, b.last.layers[1].weights);
        assert_eq!(metrics_csv(&a.history), metrics_csv(&b.history));
    }

    #[test]
    fn label_size_mismatch_is_rejected() {
        let (mut samples, net) = tiny_problem();
        samples[3].label = Grid2D::zeros(2, 2).unwrap();
        assert!(train(&samples, &[], net, &TrainConfig::default(), |_| {}).is_err());
    }
}
