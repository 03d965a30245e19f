//! Network topologies and the time-unrolled forward simulation.

use std::fmt;
use std::str::FromStr;

use crate::encoding::SpikeTrainBatch;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::snn::layers::{apply_dropout, apply_noise, conv_frames, dense_rows, ConvGeom, LayerSpec, Shape};
use crate::snn::lif::{lif_scan, LifParams, SpikeFn};

/// Input frame fed to every architecture: one channel, 20 rows, 80 columns.
pub const INPUT_SHAPE: Shape = Shape::new(1, 20, 80);
/// One output neuron per pixel of the 40x10 lane mask.
pub const OUTPUT_UNITS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// Five 3x3 convolutions, dropout, dense 1600 -> 400.
    Cnn,
    /// 1600 -> 600 -> 400.
    FullyC600,
    /// 1600 -> 800 -> 400.
    FullyC800,
    /// 1600 -> 800 -> 600 -> 400.
    FullyC800600,
    /// Hand-assembled topology (tests, experiments).
    Custom,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Cnn,
        Architecture::FullyC600,
        Architecture::FullyC800,
        Architecture::FullyC800600,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::FullyC600 => "fully-c600",
            Architecture::FullyC800 => "fully-c800",
            Architecture::FullyC800600 => "fully-c800600",
            Architecture::Custom => "custom",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "cnn" => Ok(Architecture::Cnn),
            "fully-c600" | "fullyc600" => Ok(Architecture::FullyC600),
            "fully-c800" | "fullyc800" => Ok(Architecture::FullyC800),
            "fully-c800600" | "fullyc800600" => Ok(Architecture::FullyC800600),
            "custom" => Ok(Architecture::Custom),
            _ => Err(Error::invalid(format!(
                "unknown architecture '{s}' (expected cnn, fully-c600, fully-c800 or fully-c800600)"
            ))),
        }
    }
}

/// Construction-time settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub lif: LifParams,
    /// Std of the Gaussian noise inserted before every weighted layer.
    pub sigma_r: f64,
    /// Dropout before the CNN's dense layer.
    pub drop_prob: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            lif: LifParams::default(),
            sigma_r: 0.1,
            drop_prob: 0.1,
        }
    }
}

/// A layer with its parameters. Non-spiking layers have empty vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub input_shape: Shape,
    pub layers: Vec<Layer>,
    pub lif: LifParams,
}

/// Layer list of a named architecture.
pub fn architecture_layers(arch: Architecture, sigma_r: f64, drop_prob: f64) -> Result<Vec<LayerSpec>> {
    let noise = LayerSpec::Noise { sigma_r };
    let conv = |cin, cout, stride| LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: 3,
        padding: 1,
        stride,
    };
    let dense = |i, o| LayerSpec::Dense {
        in_units: i,
        out_units: o,
    };
    let fully = |hidden: &[usize]| {
        let mut v = Vec::new();
        let mut prev = INPUT_SHAPE.len();
        for &h in hidden.iter().chain(std::iter::once(&OUTPUT_UNITS)) {
            v.push(noise);
            v.push(dense(prev, h));
            prev = h;
        }
        v
    };
    Ok(match arch {
        Architecture::Cnn => vec![
            noise,
            conv(1, 4, 1),
            noise,
            conv(4, 4, 1),
            noise,
            conv(4, 8, 2),
            noise,
            conv(8, 8, 1),
            noise,
            conv(8, 16, 2),
            LayerSpec::Dropout { drop_prob },
            noise,
            dense(1600, OUTPUT_UNITS),
        ],
        Architecture::FullyC600 => fully(&[600]),
        Architecture::FullyC800 => fully(&[800]),
        Architecture::FullyC800600 => fully(&[800, 600]),
        Architecture::Custom => return Err(Error::invalid("custom networks are built with Network::new")),
    })
}

/// Build one of the four named architectures with freshly initialized weights.
pub fn build_network(arch: Architecture, rng: &mut Rng, init: &InitConfig) -> Result<Network> {
    let specs = architecture_layers(arch, init.sigma_r, init.drop_prob)?;
    let net = Network::new(arch, INPUT_SHAPE, &specs, init.lif, rng)?;
    if net.output_shape().len() != OUTPUT_UNITS {
        return Err(Error::State(format!("{arch} ends in {} neurons", net.output_shape().len())));
    }
    Ok(net)
}

impl Network {
    /// Assemble layers and draw weights uniformly in `±1/sqrt(fan_in)`;
    /// biases start at 0.
    pub fn new(arch: Architecture, input_shape: Shape, specs: &[LayerSpec], lif: LifParams, rng: &mut Rng) -> Result<Self> {
        lif.validate()?;
        if !specs.iter().any(LayerSpec::is_spiking) {
            return Err(Error::invalid("a network needs at least one weighted layer"));
        }
        if !specs.last().is_some_and(LayerSpec::is_spiking) {
            return Err(Error::invalid("the last layer must be weighted"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape;
        for spec in specs {
            let out = spec.output_shape(shape)?;
            let (nw, nb) = spec.param_shape();
            let bound = if nw > 0 { 1.0 / (spec.fan_in() as f64).sqrt() } else { 0.0 };
            let weights = (0..nw).map(|_| rng.range(-bound, bound)).collect();
            layers.push(Layer {
                spec: *spec,
                in_shape: shape,
                out_shape: out,
                weights,
                bias: vec![0.0; nb],
            });
            shape = out;
        }
        Ok(Self {
            arch,
            input_shape,
            layers,
            lif,
        })
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map(|l| l.out_shape).unwrap_or(self.input_shape)
    }

    pub fn output_units(&self) -> usize {
        self.output_shape().len()
    }

    /// Stored trainable values (shared convolution kernels counted once).
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters once convolution kernels are unrolled to one synapse per
    /// (neuron, tap), as a neuromorphic mapping stores them, plus biases.
    pub fn synapse_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.spec.is_spiking())
            .map(|l| l.out_shape.len() * l.spec.fan_in() + l.bias.len())
            .sum()
    }

    /// Largest absolute weight over all synapses.
    pub fn max_abs_weight(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Indices of weighted layers, bottom to top.
    pub fn spiking_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.spec.is_spiking())
            .map(|(i, _)| i)
    }
}

/// Forward-pass switches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Enables noise and dropout.
    pub training: bool,
    pub spike: SpikeFn,
}

impl ForwardOptions {
    pub const INFERENCE: ForwardOptions = ForwardOptions {
        training: false,
        spike: SpikeFn::Hard,
    };
    pub const TRAINING: ForwardOptions = ForwardOptions {
        training: true,
        spike: SpikeFn::Hard,
    };
}

/// What the backward pass needs from each layer.
#[derive(Clone, Debug)]
pub enum LayerTrace {
    Noise,
    Dropout {
        mask: Option<Vec<f64>>,
    },
    Spiking {
        /// Layer input after noise/dropout, `(batch*steps) x in`.
        input: Vec<f64>,
        /// Membrane potential after each update.
        u: Vec<f64>,
        /// Spike output.
        o: Vec<f64>,
    },
}

/// Recorded forward pass over a batch. Rows are indexed `b * steps + t`.
#[derive(Clone, Debug)]
pub struct Trace {
    pub batch: usize,
    pub steps: usize,
    pub layers: Vec<LayerTrace>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `batch x output_units` firing rates in `[0, 1]`.
    pub rates: Vec<f64>,
    pub trace: Trace,
}

/// Simulate `batch.steps()` steps and return output firing rates with the trace.
pub fn forward(net: &Network, batch: &SpikeTrainBatch, rng: &mut Rng, opts: ForwardOptions) -> Result<ForwardOutput> {
    run(net, batch.to_matrix(), batch.batch(), batch.steps(), batch.frame_len(), rng, opts, true)
}

/// Forward pass without noise, dropout or trace retention.
pub fn predict(net: &Network, batch: &SpikeTrainBatch) -> Result<Vec<f64>> {
    let mut rng = Rng::new(0);
    let out = run(
        net,
        batch.to_matrix(),
        batch.batch(),
        batch.steps(),
        batch.frame_len(),
        &mut rng,
        ForwardOptions::INFERENCE,
        false,
    )?;
    Ok(out.rates)
}

/// Forward from a dense `(batch*steps) x features` input matrix.
pub fn forward_matrix(
    net: &Network,
    input: Vec<f64>,
    batch: usize,
    steps: usize,
    rng: &mut Rng,
    opts: ForwardOptions,
) -> Result<ForwardOutput> {
    let features = net.input_shape.len();
    run(net, input, batch, steps, features, rng, opts, true)
}

#[allow(clippy::too_many_arguments)]
fn run(
    net: &Network,
    mut act: Vec<f64>,
    batch: usize,
    steps: usize,
    features: usize,
    rng: &mut Rng,
    opts: ForwardOptions,
    keep_trace: bool,
) -> Result<ForwardOutput> {
    if features != net.input_shape.len() {
        return Err(Error::invalid(format!(
            "input frames have {features} features, network expects {}",
            net.input_shape
        )));
    }
    if batch == 0 || steps == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let rows = batch * steps;
    let mut traces = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        match layer.spec {
            LayerSpec::Noise { sigma_r } => {
                apply_noise(&mut act, sigma_r, rng, opts.training);
                traces.push(LayerTrace::Noise);
            }
            LayerSpec::Dropout { drop_prob } => {
                let mask = apply_dropout(&mut act, drop_prob, rng, opts.training);
                traces.push(LayerTrace::Dropout {
                    mask: if keep_trace { mask } else { None },
                });
            }
            LayerSpec::Dense { in_units, out_units } => {
                let mut x = vec![0.0; rows * out_units];
                dense_rows(&act, rows, in_units, &layer.weights, &layer.bias, &mut x);
                let (u, o) = lif_scan(&x, batch, steps, out_units, &net.lif, opts.spike);
                let input = std::mem::replace(&mut act, o.clone());
                traces.push(trace_entry(keep_trace, input, u, o));
            }
            LayerSpec::Conv2d { .. } => {
                let g = ConvGeom::new(&layer.spec, layer.in_shape)?;
                let out_len = layer.out_shape.len();
                let mut x = vec![0.0; rows * out_len];
                conv_frames(&g, &act, rows, &layer.weights, &layer.bias, &mut x);
                let (u, o) = lif_scan(&x, batch, steps, out_len, &net.lif, opts.spike);
                let input = std::mem::replace(&mut act, o.clone());
                traces.push(trace_entry(keep_trace, input, u, o));
            }
        }
    }
    let units = net.output_units();
    let mut rates = vec![0.0; batch * units];
    for b in 0..batch {
        let dst = &mut rates[b * units..(b + 1) * units];
        for t in 0..steps {
            let row = &act[(b * steps + t) * units..][..units];
            for (r, &s) in dst.iter_mut().zip(row) {
                *r += s;
            }
        }
        for r in dst.iter_mut() {
            *r /= steps as f64;
        }
    }
    Ok(ForwardOutput {
        rates,
        trace: Trace {
            batch,
            steps,
            layers: traces,
        },
    })
}

fn trace_entry(keep: bool, input: Vec<f64>, u: Vec<f64>, o: Vec<f64>) -> LayerTrace {
    if keep {
        LayerTrace::Spiking { input, u, o }
    } else {
        LayerTrace::Spiking {
            input: Vec::new(),
            u: Vec::new(),
            o: Vec::new(),
        }
    }
}
