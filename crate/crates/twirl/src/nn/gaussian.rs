//! Tanh-squashed Gaussian policy head.

use rand::Rng;
use rand_distr::StandardNormal;

/// Standard SAC clamp preventing policy collapse/explosion.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;
const MAX_ACTION: f64 = 1.0 - f64::EPSILON;
const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone)]
pub struct SquashedGaussianSample {
    /// Pre-squash sample u = mean + sigma * xi.
    pub pre_squash: Vec<f64>,
    /// a = tanh(u), each component in (-1, 1).
    pub action: Vec<f64>,
    /// The standard-normal draws, kept for reparameterized gradients.
    pub noise: Vec<f64>,
    pub log_prob: f64,
}

pub fn clamp_log_std(log_std: f64) -> f64 {
    log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// ln(1 - tanh(u)^2) computed stably as 2 (ln 2 - u - softplus(-2u)).
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Log density of a = tanh(u) under the squashed Gaussian with the given
/// clamped log_std, including the change-of-variables correction.
pub fn squashed_log_prob(pre_squash: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let mut lp = 0.0;
    for ((u, m), ls) in pre_squash.iter().zip(mean).zip(log_std) {
        let ls = clamp_log_std(*ls);
        let sigma = ls.exp();
        let xi = (u - m) / sigma;
        lp += -0.5 * LN_2PI - ls - 0.5 * xi * xi;
        lp -= log_one_minus_tanh_sq(*u);
    }
    lp
}

pub fn sample_squashed_gaussian<R: Rng>(
    mean: &[f64],
    log_std: &[f64],
    rng: &mut R,
) -> SquashedGaussianSample {
    assert_eq!(mean.len(), log_std.len());
    let d = mean.len();
    let mut pre_squash = Vec::with_capacity(d);
    let mut action = Vec::with_capacity(d);
    let mut noise = Vec::with_capacity(d);
    let mut log_prob = 0.0;
    for i in 0..d {
        let ls = clamp_log_std(log_std[i]);
        let sigma = ls.exp();
        let xi: f64 = rng.sample(StandardNormal);
        let u = mean[i] + sigma * xi;
        // tanh rounds to exactly +-1.0 in f64 for |u| > ~19; keep the action
        // strictly inside the open box
        let a = u.tanh().clamp(-MAX_ACTION, MAX_ACTION);
        log_prob += -0.5 * LN_2PI - ls - 0.5 * xi * xi - log_one_minus_tanh_sq(u);
        pre_squash.push(u);
        action.push(a);
        noise.push(xi);
    }
    SquashedGaussianSample {
        pre_squash,
        action,
        noise,
        log_prob,
    }
}

/// Deterministic evaluation action: the mode of the base Gaussian, squashed.
pub fn deterministic_action(mean: &[f64]) -> Vec<f64> {
    mean.iter().map(|m| m.tanh()).collect()
}
