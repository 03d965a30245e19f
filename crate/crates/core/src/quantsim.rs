//! Fixed-point translation of a trained network and integer LIF inference.
//!
//! Weights become signed 8-bit mantissas `round(w * k)` with
//! `k = 15 / max|w|`, the threshold becomes `round(v_th * k)` on 12 bits and
//! the leak becomes the 12-bit decay `delta_v`, applied as
//! `u <- u * (4096 - delta_v) / 4096` (truncating toward zero).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::Sample;
use crate::encoding::{encode_batch, SpikeTrainBatch};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, ThresholdReport};
use crate::numerics::{fmt_g6, Rng};
use crate::snn::checkpoint::{read_spec, write_spec, DecodeResult, Reader, Writer};
use crate::snn::layers::{ConvGeom, LayerSpec, Shape};
use crate::snn::network::{Architecture, Network};

pub const QUANT_MAGIC: &str = "LANESNN-QNT-1\n";
/// Numerator of the scale factor: largest weight maps to this mantissa.
pub const WEIGHT_LEVELS: f64 = 15.0;
pub const DECAY_ONE: i64 = 4096;
pub const WEIGHT_MIN: i16 = -128;
pub const WEIGHT_MAX: i16 = 127;
pub const VTH_MAX: i64 = 4095;
/// Idle steps between consecutive samples.
pub const DEFAULT_BLANK: usize = 10;

/// `15 / max|w|` over every synapse.
pub fn compute_k(weights: &[f64]) -> Result<f64> {
    let max = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if !max.is_finite() {
        return Err(Error::NonFinite("weight magnitude".into()));
    }
    if max == 0.0 {
        return Err(Error::invalid("all weights are zero; nothing to scale"));
    }
    Ok(WEIGHT_LEVELS / max)
}

/// `round(4096 * (1 - tau))`, truncated so that `tau = 0.2` gives 3276.
pub fn decay_mantissa(tau: f64) -> Result<i64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} outside [0, 1]")));
    }
    Ok((DECAY_ONE as f64 * (1.0 - tau)).floor() as i64)
}

/// `round(x)` with halves away from zero.
fn round_half_away(x: f64) -> f64 {
    x.round()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLayer {
    pub spec: LayerSpec,
    pub in_shape: Shape,
    pub out_shape: Shape,
    /// Same layout as the float weights; empty for noise/dropout.
    pub weight_mant: Vec<i16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedNetwork {
    pub arch: Architecture,
    pub input_shape: Shape,
    /// Scale from float to mantissa units.
    pub k: f64,
    pub vth_mant: i64,
    pub delta_v: i64,
    pub delta_i: i64,
    pub bias: i64,
    pub wgt_exp: i64,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedNetwork {
    /// Equality of everything the integer simulator uses (ignores `k`).
    pub fn same_integers(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.input_shape == other.input_shape
            && (self.vth_mant, self.delta_v, self.delta_i, self.bias, self.wgt_exp)
                == (other.vth_mant, other.delta_v, other.delta_i, other.bias, other.wgt_exp)
            && self.layers == other.layers
    }

    pub fn output_units(&self) -> usize {
        self.layers.last().map_or(self.input_shape.len(), |l| l.out_shape.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerQuantStats {
    pub layer: usize,
    pub kind: &'static str,
    pub max_abs_weight: f64,
    pub synapses: usize,
    /// Mantissas clamped to the 8-bit range.
    pub saturated: usize,
    /// Rounding error `|w*k - mant|`, in mantissa units.
    pub round_err_mean: f64,
    pub round_err_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantReport {
    pub k: f64,
    pub layers: Vec<LayerQuantStats>,
    /// Threshold had to be clamped to 12 bits.
    pub vth_saturated: bool,
}

impl QuantReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,max_abs_w,synapses,saturated,round_err_mean,round_err_max\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.layer,
                l.kind,
                fmt_g6(l.max_abs_weight),
                l.synapses,
                l.saturated,
                fmt_g6(l.round_err_mean),
                fmt_g6(l.round_err_max)
            );
        }
        s
    }
}

pub fn quantize(net: &Network) -> Result<(QuantizedNetwork, QuantReport)> {
    net.lif.validate()?;
    let all: Vec<f64> = net.layers.iter().flat_map(|l| l.weights.iter().copied()).collect();
    let max = all.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let k = compute_k(&all)?;
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut stats = Vec::new();
    for (i, l) in net.layers.iter().enumerate() {
        let mut mant = Vec::with_capacity(l.weights.len());
        let (mut saturated, mut err_sum, mut err_max) = (0usize, 0.0f64, 0.0f64);
        for &w in &l.weights {
            // Divide by the shared maximum so a common rescaling cancels exactly.
            let scaled = WEIGHT_LEVELS * (w / max);
            let r = round_half_away(scaled);
            let m = r.clamp(WEIGHT_MIN as f64, WEIGHT_MAX as f64);
            if m != r {
                saturated += 1;
            }
            let e = (scaled - m).abs();
            err_sum += e;
            err_max = err_max.max(e);
            mant.push(m as i16);
        }
        if l.spec.is_spiking() {
            stats.push(LayerQuantStats {
                layer: i,
                kind: l.spec.kind_name(),
                max_abs_weight: l.weights.iter().fold(0.0f64, |m, w| m.max(w.abs())),
                synapses: l.weights.len(),
                saturated,
                round_err_mean: if l.weights.is_empty() { 0.0 } else { err_sum / l.weights.len() as f64 },
                round_err_max: err_max,
            });
        }
        layers.push(QuantizedLayer {
            spec: l.spec,
            in_shape: l.in_shape,
            out_shape: l.out_shape,
            weight_mant: mant,
        });
    }
    let vth = round_half_away(WEIGHT_LEVELS * (net.lif.v_th / max));
    let vth_mant = (vth as i64).clamp(0, VTH_MAX);
    let q = QuantizedNetwork {
        arch: net.arch,
        input_shape: net.input_shape,
        k,
        vth_mant,
        delta_v: decay_mantissa(net.lif.tau)?,
        delta_i: 0,
        bias: 0,
        wgt_exp: 0,
        layers,
    };
    let report = QuantReport {
        k,
        layers: stats,
        vth_saturated: vth_mant as f64 != vth,
    };
    Ok((q, report))
}

/// Sparse fan-out of one weighted layer: for input neuron `i`, targets
/// `targets[offsets[i]..offsets[i + 1]]` with the matching mantissas.
struct FanOut {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    mants: Vec<i16>,
    outputs: usize,
}

impl FanOut {
    fn build(layer: &QuantizedLayer) -> Result<Self> {
        let n_in = layer.in_shape.len();
        let n_out = layer.out_shape.len();
        let mut lists: Vec<Vec<(u32, i16)>> = vec![Vec::new(); n_in];
        match layer.spec {
            LayerSpec::Dense { .. } => {
                for o in 0..n_out {
                    for (i, &m) in layer.weight_mant[o * n_in..(o + 1) * n_in].iter().enumerate() {
                        if m != 0 {
                            lists[i].push((o as u32, m));
                        }
                    }
                }
            }
            LayerSpec::Conv2d { .. } => {
                let g = ConvGeom::new(&layer.spec, layer.in_shape)?;
                for co in 0..g.cout {
                    for ci in 0..g.cin {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let m = layer.weight_mant[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                                if m == 0 {
                                    continue;
                                }
                                for oy in 0..g.ho {
                                    let y = (oy * g.stride + ky) as isize - g.pad as isize;
                                    if y < 0 || y >= g.h as isize {
                                        continue;
                                    }
                                    for ox in 0..g.wo {
                                        let x = (ox * g.stride + kx) as isize - g.pad as isize;
                                        if x < 0 || x >= g.w as isize {
                                            continue;
                                        }
                                        let src = (ci * g.h + y as usize) * g.w + x as usize;
                                        lists[src].push((((co * g.ho + oy) * g.wo + ox) as u32, m));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            _ => return Err(Error::invalid("fan-out requested for a layer without synapses")),
        }
        let mut offsets = Vec::with_capacity(n_in + 1);
        let mut targets = Vec::new();
        let mut mants = Vec::new();
        offsets.push(0);
        for list in lists {
            for (t, m) in list {
                targets.push(t);
                mants.push(m);
            }
            offsets.push(targets.len());
        }
        Ok(Self {
            offsets,
            targets,
            mants,
            outputs: n_out,
        })
    }
}

/// Integer state of a running quantized network.
pub struct QuantSim<'a> {
    qnet: &'a QuantizedNetwork,
    fanouts: Vec<FanOut>,
    u: Vec<Vec<i64>>,
    fired: Vec<Vec<bool>>,
}

impl<'a> QuantSim<'a> {
    pub fn new(qnet: &'a QuantizedNetwork) -> Result<Self> {
        let fanouts = qnet
            .layers
            .iter()
            .filter(|l| l.spec.is_spiking())
            .map(FanOut::build)
            .collect::<Result<Vec<_>>>()?;
        if fanouts.is_empty() {
            return Err(Error::invalid("quantized network has no weighted layer"));
        }
        let u = fanouts.iter().map(|f| vec![0; f.outputs]).collect();
        let fired = fanouts.iter().map(|f| vec![false; f.outputs]).collect();
        Ok(Self { qnet, fanouts, u, fired })
    }

    pub fn reset(&mut self) {
        self.u.iter_mut().for_each(|u| u.fill(0));
        self.fired.iter_mut().for_each(|f| f.fill(false));
    }

    /// Advance one step given the active input neurons; returns the indices of
    /// output neurons that fired.
    pub fn step(&mut self, active_inputs: &[usize]) -> Vec<usize> {
        let retain = DECAY_ONE - self.qnet.delta_v;
        let vth = self.qnet.vth_mant;
        let mut spikes: Vec<usize> = active_inputs.to_vec();
        for (li, fan) in self.fanouts.iter().enumerate() {
            let u = &mut self.u[li];
            let fired = &mut self.fired[li];
            for (v, f) in u.iter_mut().zip(fired.iter()) {
                // Rust's integer division truncates toward zero for both signs.
                *v = if *f { 0 } else { *v * retain / DECAY_ONE };
            }
            for &s in &spikes {
                for e in fan.offsets[s]..fan.offsets[s + 1] {
                    u[fan.targets[e] as usize] += fan.mants[e] as i64;
                }
            }
            spikes.clear();
            for (j, (v, f)) in u.iter().zip(fired.iter_mut()).enumerate() {
                *f = *v > vth;
                if *f {
                    spikes.push(j);
                }
            }
        }
        spikes
    }

    pub fn membrane(&self, layer: usize) -> &[i64] {
        &self.u[layer]
    }
}

/// Present each sample of `batch` in order for its `T` steps, followed by
/// `blank` zero-input steps, without resetting membranes in between. Returns
/// per-sample output spike counts over the active steps (`batch x outputs`).
pub fn quant_forward(qnet: &QuantizedNetwork, batch: &SpikeTrainBatch, blank: usize) -> Result<Vec<u32>> {
    let mut sim = QuantSim::new(qnet)?;
    quant_forward_with(&mut sim, batch, blank)
}

/// As [`quant_forward`], continuing from the current state of `sim`.
pub fn quant_forward_with(sim: &mut QuantSim<'_>, batch: &SpikeTrainBatch, blank: usize) -> Result<Vec<u32>> {
    let qnet = sim.qnet;
    if batch.frame_len() != qnet.input_shape.len() {
        return Err(Error::invalid(format!(
            "input frames have {} features, network expects {}",
            batch.frame_len(),
            qnet.input_shape
        )));
    }
    let units = qnet.output_units();
    let mut counts = vec![0u32; batch.batch() * units];
    for b in 0..batch.batch() {
        let dst = &mut counts[b * units..(b + 1) * units];
        for t in 0..batch.steps() {
            for j in sim.step(&batch.active(b, t)) {
                dst[j] += 1;
            }
        }
        for _ in 0..blank {
            sim.step(&[]);
        }
    }
    Ok(counts)
}

/// Threshold search and IoU on rates `counts / T` from the integer simulator.
pub fn evaluate_quantized(qnet: &QuantizedNetwork, samples: &[Sample], steps: usize, blank: usize, rng: &mut Rng) -> Result<ThresholdReport> {
    let rates = predict_quantized(qnet, samples, steps, blank, rng)?;
    let pairs: Vec<(&[f64], &[f64])> = samples.iter().zip(&rates).map(|(s, r)| (s.label.data(), r.as_slice())).collect();
    evaluate(&pairs, steps)
}

/// Firing rates of the quantized network for each sample, presented as one stream.
pub fn predict_quantized(qnet: &QuantizedNetwork, samples: &[Sample], steps: usize, blank: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let units = qnet.output_units();
    let mut sim = QuantSim::new(qnet)?;
    let mut out = Vec::with_capacity(samples.len());
    // Same chunking as float inference so both see identical spike trains.
    for chunk in samples.chunks(16) {
        let inputs: Vec<_> = chunk.iter().map(|s| &s.input).collect();
        let spikes = encode_batch(&inputs, steps, rng)?;
        let counts = quant_forward_with(&mut sim, &spikes, blank)?;
        out.extend(counts.chunks(units).map(|c| c.iter().map(|&n| n as f64 / steps as f64).collect()));
    }
    Ok(out)
}

pub fn encode_quantized(q: &QuantizedNetwork) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(QUANT_MAGIC.as_bytes());
    w.string(q.arch.name());
    w.f64(q.k);
    for v in [q.vth_mant, q.delta_v, q.delta_i, q.bias, q.wgt_exp] {
        w.bytes(&v.to_le_bytes());
    }
    w.u32(q.input_shape.channels);
    w.u32(q.input_shape.height);
    w.u32(q.input_shape.width);
    w.u32(q.layers.len());
    for l in &q.layers {
        write_spec(&mut w, &l.spec);
        if l.spec.is_spiking() {
            w.i16s(&l.weight_mant);
        }
    }
    w.0
}

pub fn decode_quantized(bytes: &[u8]) -> DecodeResult<QuantizedNetwork> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(QUANT_MAGIC.len(), "header")? != QUANT_MAGIC.as_bytes() {
        return Err(("header", "not a LANESNN-QNT-1 file".into()));
    }
    let arch: Architecture = r.string("arch")?.parse().map_err(|e: Error| ("arch", e.to_string()))?;
    let k = r.f64("k")?;
    if !(k.is_finite() && k > 0.0) {
        return Err(("k", format!("scale {k} is not positive")));
    }
    let mut ints = [0i64; 5];
    for v in &mut ints {
        *v = i64::from_le_bytes(r.take(8, "constants")?.try_into().unwrap());
    }
    let [vth_mant, delta_v, delta_i, bias, wgt_exp] = ints;
    if !(0..=VTH_MAX).contains(&vth_mant) || !(0..DECAY_ONE).contains(&delta_v) {
        return Err(("constants", "threshold or decay outside 12 bits".into()));
    }
    let input_shape = Shape::new(r.u32("input shape")?, r.u32("input shape")?, r.u32("input shape")?);
    let n = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(n.min(1024));
    let mut shape = input_shape;
    for _ in 0..n {
        let spec = read_spec(&mut r)?;
        let out_shape = spec.output_shape(shape).map_err(|e| ("layer shape", e.to_string()))?;
        let weight_mant = if spec.is_spiking() {
            let m = r.i16s("weights")?;
            if m.len() != spec.param_shape().0 {
                return Err(("weights", format!("{} layer has wrong weight count", spec.kind_name())));
            }
            if m.iter().any(|v| !(WEIGHT_MIN..=WEIGHT_MAX).contains(v)) {
                return Err(("weights", "mantissa outside 8 bits".into()));
            }
            m
        } else {
            Vec::new()
        };
        layers.push(QuantizedLayer {
            spec,
            in_shape: shape,
            out_shape,
            weight_mant,
        });
        shape = out_shape;
    }
    if r.pos != bytes.len() {
        return Err(("trailer", format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
    }
    Ok(QuantizedNetwork {
        arch,
        input_shape,
        k,
        vth_mant,
        delta_v,
        delta_i,
        bias,
        wgt_exp,
        layers,
    })
}

pub fn save_quantized(q: &QuantizedNetwork, path: &Path) -> Result<()> {
    fs::write(path, encode_quantized(q)).map_err(|e| Error::io(path, e))
}

pub fn load_quantized(path: &Path) -> Result<QuantizedNetwork> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_quantized(&bytes).map_err(|(field, reason)| Error::parse(path, field, reason))
}
