//! Dense-network machinery: MLP forward/backward with dropout and layer
//! normalization, Adam, a tanh-squashed Gaussian policy head, and the
//! checkpoint file format.

mod adam;
mod checkpoint;
mod gaussian;
mod mlp;

pub use adam::{adam_step, AdamState, ScalarAdam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{load_checkpoint, save_checkpoint, read_checkpoint, write_checkpoint};
pub use gaussian::{
    deterministic_action, sample_squashed_gaussian, squashed_log_prob, SquashedGaussianSample,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{mlp_backward, mlp_forward, mlp_forward_batch, ForwardTrace, Mode};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use rand::Rng;

/// Variance stabilizer for layer normalization; constant inputs normalize to
/// zero instead of erroring.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Network architecture. The spec fully determines the parameter count.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub use_layer_norm: bool,
    pub dropout_rate: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden_dims,
            output_dim,
            use_layer_norm: false,
            dropout_rate: 0.0,
        }
    }

    pub fn with_regularization(mut self, use_layer_norm: bool, dropout_rate: f64) -> Self {
        self.use_layer_norm = use_layer_norm;
        self.dropout_rate = dropout_rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("all network dims must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Layer dims as (fan_in, fan_out) pairs, hidden layers then output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        let n_hidden = self.hidden_dims.len();
        self.layer_dims()
            .iter()
            .enumerate()
            .map(|(i, &(fi, fo))| {
                let ln = if self.use_layer_norm && i < n_hidden { 2 * fo } else { 0 };
                fi * fo + fo + ln
            })
            .sum()
    }
}

/// One dense layer's parameters. Layer-norm gain/bias are present on hidden
/// layers when the spec enables layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Weight matrix, shape (fan_out, fan_in).
    pub w: Mat,
    pub b: Vec<f64>,
    pub ln_gain: Option<Vec<f64>>,
    pub ln_bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
}

impl MlpParams {
    /// Uniform fan-in init (limit = 1/sqrt(fan_in)); the final layer is
    /// additionally scaled by `final_scale` (0.01 for policy heads).
    pub fn init<R: Rng>(spec: &MlpSpec, rng: &mut R, final_scale: f64) -> Self {
        let dims = spec.layer_dims();
        let n_layers = dims.len();
        let layers = dims
            .iter()
            .enumerate()
            .map(|(i, &(fan_in, fan_out))| {
                let limit = 1.0 / (fan_in as f64).sqrt();
                let scale = if i == n_layers - 1 { final_scale } else { 1.0 };
                let mut w = Mat::zeros(fan_out, fan_in);
                for v in w.data_mut() {
                    *v = rng.gen_range(-limit..limit) * scale;
                }
                let is_hidden = i < n_layers - 1;
                LayerParams {
                    w,
                    b: vec![0.0; fan_out],
                    ln_gain: (spec.use_layer_norm && is_hidden).then(|| vec![1.0; fan_out]),
                    ln_bias: (spec.use_layer_norm && is_hidden).then(|| vec![0.0; fan_out]),
                }
            })
            .collect();
        MlpParams { layers }
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                w: Mat::zeros(l.w.rows(), l.w.cols()),
                b: vec![0.0; l.b.len()],
                ln_gain: l.ln_gain.as_ref().map(|g| vec![0.0; g.len()]),
                ln_bias: l.ln_bias.as_ref().map(|g| vec![0.0; g.len()]),
            })
            .collect();
        MlpParams { layers }
    }

    pub fn matches_spec(&self, spec: &MlpSpec) -> bool {
        let dims = spec.layer_dims();
        if self.layers.len() != dims.len() {
            return false;
        }
        let n_hidden = spec.hidden_dims.len();
        self.layers.iter().zip(dims).enumerate().all(|(i, (l, (fi, fo)))| {
            let ln_ok = if spec.use_layer_norm && i < n_hidden {
                l.ln_gain.as_ref().map(|g| g.len()) == Some(fo)
                    && l.ln_bias.as_ref().map(|g| g.len()) == Some(fo)
            } else {
                l.ln_gain.is_none() && l.ln_bias.is_none()
            };
            l.w.rows() == fo && l.w.cols() == fi && l.b.len() == fo && ln_ok
        })
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.w.is_finite()
                && l.b.iter().all(|v| v.is_finite())
                && l.ln_gain.iter().flatten().all(|v| v.is_finite())
                && l.ln_bias.iter().flatten().all(|v| v.is_finite())
        })
    }

    /// Visits every parameter array of `self` paired with the matching array
    /// of `other` (same structure required).
    pub fn for_each_array_pair(&mut self, other: &MlpParams, mut f: impl FnMut(&mut [f64], &[f64])) {
        assert_eq!(self.layers.len(), other.layers.len(), "param structure mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            f(a.w.data_mut(), b.w.data());
            f(&mut a.b, &b.b);
            match (&mut a.ln_gain, &b.ln_gain) {
                (Some(x), Some(y)) => f(x, y),
                (None, None) => {}
                _ => panic!("param structure mismatch (layer-norm gain)"),
            }
            match (&mut a.ln_bias, &b.ln_bias) {
                (Some(x), Some(y)) => f(x, y),
                (None, None) => {}
                _ => panic!("param structure mismatch (layer-norm bias)"),
            }
        }
    }

    /// Flattens all parameters in layer order (weights, bias, gain, bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
            if let Some(g) = &l.ln_gain {
                out.extend_from_slice(g);
            }
            if let Some(g) = &l.ln_bias {
                out.extend_from_slice(g);
            }
        }
        out
    }

    /// Writes a flat vector back into the parameter structure.
    pub fn unflatten_into(&mut self, flat: &[f64]) {
        let mut i = 0;
        for l in &mut self.layers {
            let n = l.w.data().len();
            l.w.data_mut().copy_from_slice(&flat[i..i + n]);
            i += n;
            let n = l.b.len();
            l.b.copy_from_slice(&flat[i..i + n]);
            i += n;
            if let Some(g) = &mut l.ln_gain {
                let n = g.len();
                g.copy_from_slice(&flat[i..i + n]);
                i += n;
            }
            if let Some(g) = &mut l.ln_bias {
                let n = g.len();
                g.copy_from_slice(&flat[i..i + n]);
                i += n;
            }
        }
        assert_eq!(i, flat.len(), "flat parameter length mismatch");
    }
}

/// target' = (1 - rho) * target + rho * online, elementwise.
pub fn ema_update(online: &MlpParams, target: &mut MlpParams, rho: f64) {
    target.for_each_array_pair(online, |t, o| {
        for (tv, ov) in t.iter_mut().zip(o) {
            *tv = (1.0 - rho) * *tv + rho * *ov;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_construction() {
        let spec = MlpSpec::new(7, vec![16, 8], 3).with_regularization(true, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = MlpParams::init(&spec, &mut rng, 1.0);
        assert!(params.matches_spec(&spec));
        assert_eq!(params.flatten().len(), spec.param_count());
    }

    #[test]
    fn flatten_round_trips() {
        let spec = MlpSpec::new(4, vec![5], 2).with_regularization(true, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = MlpParams::init(&spec, &mut rng, 0.01);
        let mut copy = params.zeros_like();
        copy.unflatten_into(&params.flatten());
        assert_eq!(copy, params);
    }

    #[test]
    fn ema_scalar_formula() {
        let spec = MlpSpec::new(1, vec![], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut online = MlpParams::init(&spec, &mut rng, 1.0);
        online.layers[0].w.set(0, 0, 1.0);
        online.layers[0].b[0] = 1.0;
        let mut target = online.zeros_like();
        ema_update(&online, &mut target, 0.005);
        assert_eq!(target.layers[0].w.get(0, 0), 0.005);

        // rho = 1 copies the online params
        let mut target2 = online.zeros_like();
        ema_update(&online, &mut target2, 1.0);
        assert_eq!(target2, online);
    }

    #[test]
    fn ema_geometric_decay() {
        let spec = MlpSpec::new(1, vec![], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut online = MlpParams::init(&spec, &mut rng, 1.0);
        online.layers[0].w.set(0, 0, 1.0);
        let mut target = online.zeros_like();
        let rho = 0.005;
        for _ in 0..100 {
            ema_update(&online, &mut target, rho);
        }
        let gap = 1.0 - target.layers[0].w.get(0, 0);
        let expected = (1.0f64 - rho).powi(100);
        assert!((gap - expected).abs() < 1e-12, "gap {gap} expected {expected}");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(MlpSpec::new(0, vec![4], 1).validate().is_err());
        assert!(MlpSpec::new(2, vec![4], 1)
            .with_regularization(false, 1.0)
            .validate()
            .is_err());
        assert!(MlpSpec::new(2, vec![4], 1).validate().is_ok());
    }
}
