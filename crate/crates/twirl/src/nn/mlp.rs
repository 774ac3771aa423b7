//! MLP forward/backward for the fixed topology used everywhere in this crate:
//! per hidden layer `linear -> dropout -> layer norm -> relu`, plain linear
//! output layer. Gradients are exact for the traced computation; the test
//! suite checks them against central finite differences.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;

use super::{MlpParams, MlpSpec, LAYER_NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Cached intermediates for one (possibly batched) forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) spec: MlpSpec,
    pub(crate) params: MlpParams,
    /// Per hidden layer: input, dropout mask (train mode), layer-norm stats.
    pub(crate) hidden: Vec<HiddenTrace>,
    /// Input to the output layer.
    pub(crate) last_input: Mat,
    pub(crate) output: Mat,
}

#[derive(Debug, Clone)]
pub(crate) struct HiddenTrace {
    pub input: Mat,
    /// Scaled keep mask (0 or 1/(1-p)); `None` when dropout was inactive.
    pub mask: Option<Mat>,
    /// Per-row 1/sqrt(var + eps); `None` when layer norm is off.
    pub inv_std: Option<Vec<f64>>,
    /// Normalized pre-activations (before gain/bias).
    pub normalized: Option<Mat>,
    /// Pre-relu values.
    pub pre_act: Mat,
}

impl ForwardTrace {
    pub fn output(&self) -> &Mat {
        &self.output
    }

    /// Pre-relu values per hidden layer, in forward order.
    pub fn pre_activations(&self) -> impl Iterator<Item = &Mat> {
        self.hidden.iter().map(|h| &h.pre_act)
    }
}

/// Batched forward pass; rows of `input` are independent samples.
pub fn mlp_forward_batch<R: Rng>(
    spec: &MlpSpec,
    params: &MlpParams,
    input: &Mat,
    mode: Mode,
    rng: &mut R,
) -> Result<(Mat, ForwardTrace)> {
    spec.validate()?;
    if input.cols() != spec.input_dim {
        return Err(Error::config(format!(
            "input width {} does not match spec input_dim {}",
            input.cols(),
            spec.input_dim
        )));
    }
    if !params.matches_spec(spec) {
        return Err(Error::config("params do not match spec"));
    }
    if !input.is_finite() {
        return Err(Error::numeric("non-finite network input"));
    }

    let n_hidden = spec.hidden_dims.len();
    let mut x = input.clone();
    let mut hidden = Vec::with_capacity(n_hidden);

    for layer in params.layers.iter().take(n_hidden) {
        let input_i = x;
        let mut z = Mat::matmul_nt(&input_i, &layer.w);
        z.add_row_bias(&layer.b);

        let mask = if mode == Mode::Train && spec.dropout_rate > 0.0 {
            let keep = 1.0 - spec.dropout_rate;
            let scale = 1.0 / keep;
            let mut m = Mat::zeros(z.rows(), z.cols());
            for v in m.data_mut() {
                *v = if rng.gen::<f64>() < keep { scale } else { 0.0 };
            }
            for (zv, mv) in z.data_mut().iter_mut().zip(m.data()) {
                *zv *= mv;
            }
            Some(m)
        } else {
            None
        };

        let (inv_std, normalized, mut pre_act) = if spec.use_layer_norm {
            let d = z.cols() as f64;
            let mut inv_std = Vec::with_capacity(z.rows());
            let mut zn = Mat::zeros(z.rows(), z.cols());
            for r in 0..z.rows() {
                let row = z.row(r);
                let mean = row.iter().sum::<f64>() / d;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std.push(is);
                for (o, v) in zn.row_mut(r).iter_mut().zip(row) {
                    *o = (v - mean) * is;
                }
            }
            let gain = layer.ln_gain.as_ref().expect("layer-norm gain");
            let bias = layer.ln_bias.as_ref().expect("layer-norm bias");
            let mut y = zn.clone();
            for r in 0..y.rows() {
                for ((v, g), b) in y.row_mut(r).iter_mut().zip(gain).zip(bias) {
                    *v = *v * g + b;
                }
            }
            (Some(inv_std), Some(zn), y)
        } else {
            (None, None, z.clone())
        };

        let mut h = pre_act.clone();
        for v in h.data_mut() {
            *v = v.max(0.0);
        }
        // keep pre_act as the pre-relu values for the backward pass
        std::mem::swap(&mut pre_act, &mut h);
        let activated = pre_act; // post-relu after swap
        let pre_relu = h;

        hidden.push(HiddenTrace {
            input: input_i,
            mask,
            inv_std,
            normalized,
            pre_act: pre_relu,
        });
        x = activated;
    }

    let out_layer = params.layers.last().expect("at least one layer");
    let mut out = Mat::matmul_nt(&x, &out_layer.w);
    out.add_row_bias(&out_layer.b);

    let trace = ForwardTrace {
        spec: spec.clone(),
        params: params.clone(),
        hidden,
        last_input: x,
        output: out.clone(),
    };
    Ok((out, trace))
}

/// Single-sample forward pass.
pub fn mlp_forward<R: Rng>(
    spec: &MlpSpec,
    params: &MlpParams,
    input: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, ForwardTrace)> {
    let x = Mat::row_vector(input.to_vec());
    let (out, trace) = mlp_forward_batch(spec, params, &x, mode, rng)?;
    Ok((out.row(0).to_vec(), trace))
}

/// Backpropagates `grad_output` through a traced forward pass. Returns
/// parameter gradients (summed over the batch) and the input gradient.
pub fn mlp_backward(trace: &ForwardTrace, grad_output: &Mat) -> Result<(MlpParams, Mat)> {
    if grad_output.rows() != trace.output.rows() || grad_output.cols() != trace.output.cols() {
        return Err(Error::config(format!(
            "grad_output shape {}x{} does not match traced output {}x{}",
            grad_output.rows(),
            grad_output.cols(),
            trace.output.rows(),
            trace.output.cols()
        )));
    }

    let params = &trace.params;
    let mut grads = params.zeros_like();
    let n_hidden = trace.hidden.len();

    // Output layer.
    let out_layer = &params.layers[n_hidden];
    {
        let g = &mut grads.layers[n_hidden];
        g.w = Mat::matmul_tn(grad_output, &trace.last_input);
        g.b = grad_output.col_sums();
    }
    let mut gx = Mat::matmul(grad_output, &out_layer.w);

    for i in (0..n_hidden).rev() {
        let ht = &trace.hidden[i];
        let layer = &params.layers[i];

        // relu
        for (g, p) in gx.data_mut().iter_mut().zip(ht.pre_act.data()) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }

        // layer norm
        let mut gz = if trace.spec.use_layer_norm {
            let gain = layer.ln_gain.as_ref().expect("layer-norm gain");
            let zn = ht.normalized.as_ref().expect("normalized cache");
            let inv_std = ht.inv_std.as_ref().expect("inv_std cache");
            {
                let g = &mut grads.layers[i];
                let ggain = g.ln_gain.as_mut().expect("gain grad slot");
                let gbias = g.ln_bias.as_mut().expect("bias grad slot");
                for r in 0..gx.rows() {
                    for ((gy, z), (gg, gb)) in gx
                        .row(r)
                        .iter()
                        .zip(zn.row(r))
                        .zip(ggain.iter_mut().zip(gbias.iter_mut()))
                    {
                        *gg += gy * z;
                        *gb += gy;
                    }
                }
            }
            let d = gx.cols() as f64;
            let mut gz = Mat::zeros(gx.rows(), gx.cols());
            for r in 0..gx.rows() {
                let gy = gx.row(r);
                let znr = zn.row(r);
                let is = inv_std[r];
                // dzn = gy * gain
                let dzn: Vec<f64> = gy.iter().zip(gain).map(|(g, w)| g * w).collect();
                let mean_dzn = dzn.iter().sum::<f64>() / d;
                let mean_dzn_zn = dzn.iter().zip(znr).map(|(a, b)| a * b).sum::<f64>() / d;
                for ((o, dz), z) in gz.row_mut(r).iter_mut().zip(&dzn).zip(znr) {
                    *o = is * (dz - mean_dzn - z * mean_dzn_zn);
                }
            }
            gz
        } else {
            gx
        };

        // dropout
        if let Some(mask) = &ht.mask {
            for (g, m) in gz.data_mut().iter_mut().zip(mask.data()) {
                *g *= m;
            }
        }

        // linear
        {
            let g = &mut grads.layers[i];
            g.w = Mat::matmul_tn(&gz, &ht.input);
            g.b = gz.col_sums();
        }
        gx = Mat::matmul(&gz, &layer.w);
    }

    Ok((grads, gx))
}
