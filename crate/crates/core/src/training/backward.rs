//! Backpropagation through the unrolled LIF dynamics.
//!
//! For every weighted layer the membrane recurrence is
//! `u[t] = tau * u[t-1] * (1 - o[t-1]) + x[t]`, `o[t] = spike(u[t])`.
//! Walking time backwards, the gradient reaching `u[t]` collects
//!
//! * the spatial path, `dL/do[t] * h(u[t])` with `h` the surrogate pulse,
//! * the leak path, `dL/du[t+1] * tau * (1 - o[t])`,
//! * optionally the reset path, where `o[t]` gates the carry:
//!   `dL/du[t+1] * (-tau * u[t]) * h(u[t])`.
//!
//! Weight gradients are then `sum_t dL/du[t] * input[t]`, bias gradients
//! `sum_t dL/du[t]`.

use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat};
use crate::snn::layers::{ConvGeom, LayerSpec};
use crate::snn::network::{LayerTrace, Network, Trace};
use crate::training::loss::{joint_loss_grad, loss_joint, LossReport};
use crate::training::surrogate::surrogate_derivative;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardOptions {
    /// Surrogate pulse width.
    pub a1: f64,
    /// Differentiate through the `(1 - o)` reset gate.
    pub reset_term: bool,
}

/// Gradients for one layer; empty for noise/dropout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Mean joint loss over the batch and its gradient with respect to every
/// parameter. `labels` is `batch x outputs`, matching `rates`.
pub fn stbp_backward(
    net: &Network,
    trace: &Trace,
    rates: &[f64],
    labels: &[f64],
    p: f64,
    beta: f64,
    opts: &BackwardOptions,
) -> Result<(LossReport, Gradients)> {
    if rates.len() != labels.len() {
        return Err(Error::invalid("labels and rates differ in size"));
    }
    let units = net.output_units();
    let batch = trace.batch;
    if rates.len() != batch * units {
        return Err(Error::State("rates do not match the trace".into()));
    }
    let mut report = LossReport::default();
    let mut grad_rates = Vec::with_capacity(rates.len());
    for b in 0..batch {
        let (y, r) = (&labels[b * units..(b + 1) * units], &rates[b * units..(b + 1) * units]);
        let l = loss_joint(y, r, p, beta)?;
        report.total += l.total / batch as f64;
        report.mse_part += l.mse_part / batch as f64;
        report.wce_part += l.wce_part / batch as f64;
        grad_rates.extend(joint_loss_grad(y, r, p, beta)?.into_iter().map(|g| g / batch as f64));
    }
    let grads = backward_from_rates(net, trace, &grad_rates, opts)?;
    Ok((report, grads))
}

/// Backpropagate `dL/d rate` (`batch x outputs`) through the recorded pass.
pub fn backward_from_rates(net: &Network, trace: &Trace, grad_rates: &[f64], opts: &BackwardOptions) -> Result<Gradients> {
    if trace.layers.len() != net.layers.len() {
        return Err(Error::State("trace does not belong to this network".into()));
    }
    let (batch, steps) = (trace.batch, trace.steps);
    let rows = batch * steps;
    let units = net.output_units();
    if grad_rates.len() != batch * units {
        return Err(Error::invalid("rate gradient has the wrong size"));
    }

    // rate = (1/T) sum_t o[t], so every step's spike receives grad/T.
    let mut d_act = vec![0.0; rows * units];
    for b in 0..batch {
        for t in 0..steps {
            let dst = &mut d_act[(b * steps + t) * units..][..units];
            for (d, g) in dst.iter_mut().zip(&grad_rates[b * units..(b + 1) * units]) {
                *d = g / steps as f64;
            }
        }
    }

    let lowest_spiking = net.spiking_layers().next().expect("network has a weighted layer");
    let mut grads = Gradients::zeros_like(net);
    for (idx, (layer, lt)) in net.layers.iter().zip(&trace.layers).enumerate().rev() {
        match (layer.spec, lt) {
            (LayerSpec::Noise { .. }, LayerTrace::Noise) => {}
            (LayerSpec::Dropout { .. }, LayerTrace::Dropout { mask }) => {
                if let Some(mask) = mask {
                    for (d, m) in d_act.iter_mut().zip(mask) {
                        *d *= m;
                    }
                }
            }
            (spec, LayerTrace::Spiking { input, u, o }) if spec.is_spiking() => {
                let out_len = layer.out_shape.len();
                let in_len = layer.in_shape.len();
                if u.len() != rows * out_len || input.len() != rows * in_len {
                    return Err(Error::State("trace was recorded without retention".into()));
                }
                let dx = membrane_backward(&d_act, u, o, batch, steps, out_len, net.lif.v_th, net.lif.tau, opts);
                let need_input = idx > lowest_spiking;
                let g = &mut grads.layers[idx];
                d_act = match spec {
                    LayerSpec::Dense { .. } => dense_backward(&dx, input, &layer.weights, rows, in_len, out_len, g, need_input),
                    LayerSpec::Conv2d { .. } => {
                        let geom = ConvGeom::new(&spec, layer.in_shape)?;
                        conv_backward(&geom, &dx, input, &layer.weights, rows, g, need_input)
                    }
                    _ => unreachable!(),
                };
                if !need_input {
                    break;
                }
            }
            _ => return Err(Error::State(format!("trace entry {idx} does not match layer kind"))),
        }
    }
    Ok(grads)
}

/// Map `dL/do` (direct, per step) to `dL/dx` through the membrane recurrence.
#[allow(clippy::too_many_arguments)]
fn membrane_backward(
    d_o: &[f64],
    u: &[f64],
    o: &[f64],
    batch: usize,
    steps: usize,
    units: usize,
    v_th: f64,
    tau: f64,
    opts: &BackwardOptions,
) -> Vec<f64> {
    let mut dx = vec![0.0; d_o.len()];
    let mut carry = vec![0.0; units];
    for b in 0..batch {
        carry.iter_mut().for_each(|c| *c = 0.0);
        for t in (0..steps).rev() {
            let row = (b * steps + t) * units;
            for j in 0..units {
                let k = row + j;
                let next = carry[j];
                let mut g_o = d_o[k];
                if opts.reset_term {
                    g_o -= next * tau * u[k];
                }
                let du = g_o * surrogate_derivative(u[k], v_th, opts.a1) + next * tau * (1.0 - o[k]);
                dx[k] = du;
                carry[j] = du;
            }
        }
    }
    dx
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    dx: &[f64],
    input: &[f64],
    weights: &[f64],
    rows: usize,
    in_len: usize,
    out_len: usize,
    g: &mut LayerGrad,
    need_input: bool,
) -> Vec<f64> {
    // dW (out x in) = dx^T (out x rows) * input (rows x in)
    gemm(
        1.0,
        Mat::new(dx, rows, out_len).t(),
        Mat::new(input, rows, in_len),
        1.0,
        &mut g.weights,
    );
    for r in 0..rows {
        for (b, d) in g.bias.iter_mut().zip(&dx[r * out_len..(r + 1) * out_len]) {
            *b += d;
        }
    }
    if !need_input {
        return Vec::new();
    }
    let mut d_in = vec![0.0; rows * in_len];
    gemm(1.0, Mat::new(dx, rows, out_len), Mat::new(weights, out_len, in_len), 0.0, &mut d_in);
    d_in
}

fn conv_backward(
    geom: &ConvGeom,
    dx: &[f64],
    input: &[f64],
    weights: &[f64],
    rows: usize,
    g: &mut LayerGrad,
    need_input: bool,
) -> Vec<f64> {
    let (p, k, cout) = (geom.positions(), geom.patch(), geom.cout);
    let in_len = geom.cin * geom.h * geom.w;
    let out_len = cout * p;
    let group = geom.group_frames().min(rows.max(1));
    let mut cols = vec![0.0; k * group * p];
    let mut d_cols = vec![0.0; k * group * p];
    let mut dx_wide = vec![0.0; cout * group * p];
    let mut d_in = if need_input { vec![0.0; rows * in_len] } else { Vec::new() };
    let mut r0 = 0;
    while r0 < rows {
        let n = group.min(rows - r0);
        let ld = n * p;
        if dx[r0 * out_len..(r0 + n) * out_len].iter().all(|&v| v == 0.0) {
            r0 += n;
            continue;
        }
        for j in 0..n {
            let r = r0 + j;
            geom.im2col(&input[r * in_len..(r + 1) * in_len], &mut cols[j * p..], ld);
            for c in 0..cout {
                dx_wide[c * ld + j * p..][..p].copy_from_slice(&dx[r * out_len + c * p..][..p]);
            }
        }
        let dxw = &dx_wide[..cout * ld];
        // dW (cout x k) += dx (cout x n*p) * cols^T (n*p x k)
        gemm(1.0, Mat::new(dxw, cout, ld), Mat::new(&cols[..k * ld], k, ld).t(), 1.0, &mut g.weights);
        for (c, chunk) in dxw.chunks(ld).enumerate() {
            g.bias[c] += chunk.iter().sum::<f64>();
        }
        if need_input {
            gemm(1.0, Mat::new(weights, cout, k).t(), Mat::new(dxw, cout, ld), 0.0, &mut d_cols[..k * ld]);
            for j in 0..n {
                let r = r0 + j;
                geom.col2im(&d_cols[j * p..], &mut d_in[r * in_len..(r + 1) * in_len], ld);
            }
        }
        r0 += n;
    }
    d_in
}
