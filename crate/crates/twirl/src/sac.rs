//! Soft actor-critic with DroQ-style regularized twin critics: dropout +
//! layer-norm critics, clipped double-Q EMA targets, automatic entropy
//! temperature, and a configurable update-to-data ratio. Gradients are
//! hand-rolled through the reparameterized squashed-Gaussian sample.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{
    adam_step, ema_update, mlp_backward, mlp_forward_batch, sample_squashed_gaussian,
    squashed_log_prob, AdamState, MlpParams, MlpSpec, Mode, ScalarAdam, SquashedGaussianSample,
    LOG_STD_MAX, LOG_STD_MIN,
};
use crate::replay::{MixedSampler, OnlineBuffer, SourceBuffer, Transition};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacConfig {
    pub batch_size: usize,
    pub gamma: f64,
    pub lr: f64,
    /// EMA weight rho for the target critics.
    pub target_ema: f64,
    /// Critic updates per environment step; policy/alpha update once.
    pub utd_ratio: usize,
    pub initial_alpha: f64,
    pub hidden_dims: Vec<usize>,
    pub critic_dropout: f64,
    pub critic_layer_norm: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            batch_size: 256,
            gamma: 0.99,
            lr: 3e-4,
            target_ema: 0.005,
            utd_ratio: 20,
            initial_alpha: 1.0,
            hidden_dims: vec![256, 256],
            critic_dropout: 0.01,
            critic_layer_norm: true,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must be in (0,1), got {}", self.gamma)));
        }
        if !(0.0 < self.target_ema && self.target_ema <= 1.0) {
            return Err(Error::config(format!(
                "target_ema must be in (0,1], got {}",
                self.target_ema
            )));
        }
        if self.utd_ratio < 1 {
            return Err(Error::config("utd_ratio must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.initial_alpha <= 0.0 {
            return Err(Error::config("initial_alpha must be > 0"));
        }
        Ok(())
    }
}

pub fn target_entropy(act_dim: usize) -> f64 {
    -(act_dim as f64) / 2.0
}

/// Tanh-squashed Gaussian policy over a plain MLP (regularization lives in
/// the critics). The head outputs [mean | raw log_std] per action dim.
#[derive(Debug, Clone)]
pub struct Policy {
    pub spec: MlpSpec,
    pub params: MlpParams,
    pub adam: AdamState,
    pub act_dim: usize,
}

impl Policy {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let spec = MlpSpec::new(obs_dim, hidden.to_vec(), 2 * act_dim);
        let params = MlpParams::init(&spec, rng, 0.01);
        let adam = AdamState::new(&params);
        Policy { spec, params, adam, act_dim }
    }

    fn head(&self, out_row: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (out_row[..self.act_dim].to_vec(), out_row[self.act_dim..].to_vec())
    }

    /// Stochastic action for data collection.
    pub fn act<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<SquashedGaussianSample> {
        let mut dummy = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = crate::nn::mlp_forward(&self.spec, &self.params, obs, Mode::Eval, &mut dummy)?;
        let (mean, log_std) = self.head(&out);
        Ok(sample_squashed_gaussian(&mean, &log_std, rng))
    }

    /// Deterministic action for evaluation: tanh of the mean.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut dummy = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = crate::nn::mlp_forward(&self.spec, &self.params, obs, Mode::Eval, &mut dummy)?;
        Ok(out[..self.act_dim].iter().map(|m| m.tanh()).collect())
    }
}

use rand::SeedableRng;

#[derive(Debug, Clone)]
pub struct Critic {
    pub spec: MlpSpec,
    pub params: MlpParams,
    pub adam: AdamState,
}

/// Twin online critics plus EMA target copies. Targets are only ever mutated
/// by `ema_step`.
#[derive(Debug, Clone)]
pub struct CriticEnsemble {
    pub q1: Critic,
    pub q2: Critic,
    pub target1: MlpParams,
    pub target2: MlpParams,
}

impl CriticEnsemble {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, config: &SacConfig, rng: &mut R) -> Self {
        let spec = MlpSpec::new(obs_dim + act_dim, config.hidden_dims.clone(), 1)
            .with_regularization(config.critic_layer_norm, config.critic_dropout);
        let mk = |rng: &mut R| {
            let params = MlpParams::init(&spec, rng, 1.0);
            let adam = AdamState::new(&params);
            Critic { spec: spec.clone(), params, adam }
        };
        let q1 = mk(rng);
        let q2 = mk(rng);
        let target1 = q1.params.clone();
        let target2 = q2.params.clone();
        CriticEnsemble { q1, q2, target1, target2 }
    }

    pub fn ema_step(&mut self, rho: f64) {
        ema_update(&self.q1.params, &mut self.target1, rho);
        ema_update(&self.q2.params, &mut self.target2, rho);
    }
}

fn obs_mat(batch: &[Transition], next: bool) -> Mat {
    let dim = if next { batch[0].next_observation.len() } else { batch[0].observation.len() };
    let mut m = Mat::zeros(batch.len(), dim);
    for (r, t) in batch.iter().enumerate() {
        let src = if next { &t.next_observation } else { &t.observation };
        m.row_mut(r).copy_from_slice(src);
    }
    m
}

fn concat_cols(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows(), b.rows());
    let mut m = Mat::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        m.row_mut(r)[..a.cols()].copy_from_slice(a.row(r));
        m.row_mut(r)[a.cols()..].copy_from_slice(b.row(r));
    }
    m
}

/// y_i = r_i + gamma (1 - terminal_i) (min_j Q'_j(s', a') - alpha log pi(a'|s'))
/// with a fresh policy sample a'. Truncated-but-not-terminal transitions
/// bootstrap.
pub fn compute_critic_target<R: Rng>(
    batch: &[Transition],
    ensemble: &CriticEnsemble,
    policy: &Policy,
    alpha: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let next_obs = obs_mat(batch, true);
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    let (out, _) = mlp_forward_batch(&policy.spec, &policy.params, &next_obs, Mode::Eval, &mut dummy)?;

    let d = policy.act_dim;
    let mut actions = Mat::zeros(batch.len(), d);
    let mut log_probs = Vec::with_capacity(batch.len());
    for r in 0..batch.len() {
        let (mean, log_std) = policy.head(out.row(r));
        let s = sample_squashed_gaussian(&mean, &log_std, rng);
        actions.row_mut(r).copy_from_slice(&s.action);
        log_probs.push(s.log_prob);
    }

    let x = concat_cols(&next_obs, &actions);
    let (q1, _) = mlp_forward_batch(&ensemble.q1.spec, &ensemble.target1, &x, Mode::Eval, &mut dummy)?;
    let (q2, _) = mlp_forward_batch(&ensemble.q2.spec, &ensemble.target2, &x, Mode::Eval, &mut dummy)?;

    let mut y = Vec::with_capacity(batch.len());
    for (i, t) in batch.iter().enumerate() {
        let min_q = q1.get(i, 0).min(q2.get(i, 0));
        let bootstrap = if t.terminal { 0.0 } else { 1.0 };
        let yi = t.reward + gamma * bootstrap * (min_q - alpha * log_probs[i]);
        if !yi.is_finite() {
            return Err(Error::numeric(format!("non-finite critic target at batch index {i}")));
        }
        y.push(yi);
    }
    Ok(y)
}

/// One Adam step per critic on the mean-squared Bellman error; returns the
/// summed pre-step loss. Dropout masks are drawn from `rng` (train mode).
pub fn critic_update<R: Rng>(
    batch: &[Transition],
    ensemble: &mut CriticEnsemble,
    y: &[f64],
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    if batch.len() != y.len() {
        return Err(Error::config("target length does not match batch"));
    }
    let obs = obs_mat(batch, false);
    let mut act = Mat::zeros(batch.len(), batch[0].action.len());
    for (r, t) in batch.iter().enumerate() {
        act.row_mut(r).copy_from_slice(&t.action);
    }
    let x = concat_cols(&obs, &act);
    let n = batch.len() as f64;

    let mut total = 0.0;
    for critic in [&mut ensemble.q1, &mut ensemble.q2] {
        let (q, trace) = mlp_forward_batch(&critic.spec, &critic.params, &x, Mode::Train, rng)?;
        let mut grad = Mat::zeros(q.rows(), 1);
        let mut loss = 0.0;
        for i in 0..q.rows() {
            let diff = q.get(i, 0) - y[i];
            loss += diff * diff;
            grad.set(i, 0, 2.0 * diff / n);
        }
        total += loss / n;
        let (grads, _) = mlp_backward(&trace, &grad)?;
        adam_step(&mut critic.params, &grads, &mut critic.adam, lr)?;
    }
    Ok(total)
}

const MAX_ACTION: f64 = 1.0 - f64::EPSILON;

/// Actor loss and policy-parameter gradients for a frozen noise draw:
/// L = E[ alpha log pi(a|s) - min_j Q_j(s, a) ], a = tanh(mean + sigma xi).
/// Critics are treated as fixed. Returns (loss, grads, mean log pi).
fn policy_loss_grads(
    obs: &Mat,
    policy: &Policy,
    critics: &CriticEnsemble,
    alpha: f64,
    noise: &Mat,
) -> Result<(f64, MlpParams, f64)> {
    let b = obs.rows();
    let d = policy.act_dim;
    if noise.rows() != b || noise.cols() != d {
        return Err(Error::config("noise shape does not match batch"));
    }
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    let (out, trace) = mlp_forward_batch(&policy.spec, &policy.params, obs, Mode::Eval, &mut dummy)?;

    let mut actions = Mat::zeros(b, d);
    let mut pre_squash = Mat::zeros(b, d);
    let mut log_probs = Vec::with_capacity(b);
    for r in 0..b {
        let (mean, raw_ls) = policy.head(out.row(r));
        for j in 0..d {
            let sigma = raw_ls[j].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
            let u = mean[j] + sigma * noise.get(r, j);
            pre_squash.set(r, j, u);
            actions.set(r, j, u.tanh().clamp(-MAX_ACTION, MAX_ACTION));
        }
        log_probs.push(squashed_log_prob(pre_squash.row(r), &mean, &raw_ls));
    }

    let x = concat_cols(obs, &actions);
    let (q1, t1) = mlp_forward_batch(&critics.q1.spec, &critics.q1.params, &x, Mode::Eval, &mut dummy)?;
    let (q2, t2) = mlp_forward_batch(&critics.q2.spec, &critics.q2.params, &x, Mode::Eval, &mut dummy)?;

    let nf = b as f64;
    let mut loss = 0.0;
    let mut g1 = Mat::zeros(b, 1);
    let mut g2 = Mat::zeros(b, 1);
    for r in 0..b {
        let (v1, v2) = (q1.get(r, 0), q2.get(r, 0));
        let min_q = v1.min(v2);
        loss += (alpha * log_probs[r] - min_q) / nf;
        // gradient flows through the argmin critic only (ties to q1)
        if v1 <= v2 {
            g1.set(r, 0, -1.0 / nf);
        } else {
            g2.set(r, 0, -1.0 / nf);
        }
    }

    // dL/da via the critics' input gradients (action columns)
    let (_, gx1) = mlp_backward(&t1, &g1)?;
    let (_, gx2) = mlp_backward(&t2, &g2)?;
    let obs_dim = obs.cols();

    let mut grad_out = Mat::zeros(b, 2 * d);
    for r in 0..b {
        let (_, raw_ls) = policy.head(out.row(r));
        for j in 0..d {
            let u = pre_squash.get(r, j);
            let a = actions.get(r, j);
            let th = u.tanh();
            let sigma = raw_ls[j].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
            let xi = noise.get(r, j);
            let ga = gx1.get(r, obs_dim + j) + gx2.get(r, obs_dim + j);
            let da_du = 1.0 - a * a;

            // d log pi / d mean = 2 tanh(u); plus the Q path through a
            let d_mean = (alpha / nf) * 2.0 * th + ga * da_du;
            // d log pi / d log_std = -1 + 2 tanh(u) sigma xi; zero through the
            // clamp when the raw head output is outside [-20, 2]
            let clamp_open = (LOG_STD_MIN..LOG_STD_MAX).contains(&raw_ls[j]);
            let d_ls = if clamp_open {
                (alpha / nf) * (-1.0 + 2.0 * th * sigma * xi) + ga * da_du * sigma * xi
            } else {
                0.0
            };
            grad_out.set(r, j, d_mean);
            grad_out.set(r, d + j, d_ls);
        }
    }

    let (grads, _) = mlp_backward(&trace, &grad_out)?;
    let mean_logp = log_probs.iter().sum::<f64>() / nf;
    Ok((loss, grads, mean_logp))
}

/// One Adam step on the actor objective; returns the pre-step loss.
pub fn policy_update<R: Rng>(
    batch: &[Transition],
    policy: &mut Policy,
    critics: &CriticEnsemble,
    alpha: f64,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let obs = obs_mat(batch, false);
    let mut noise = Mat::zeros(batch.len(), policy.act_dim);
    for v in noise.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    let (loss, grads, _) = policy_loss_grads(&obs, policy, critics, alpha, &noise)?;
    adam_step(&mut policy.params, &grads, &mut policy.adam, lr)?;
    Ok(loss)
}

/// Trainable entropy temperature, log-parameterized so alpha stays positive.
#[derive(Debug, Clone)]
pub struct EntropyTemperature {
    pub log_alpha: f64,
    adam: ScalarAdam,
}

impl EntropyTemperature {
    pub fn new(initial_alpha: f64) -> Self {
        EntropyTemperature {
            log_alpha: initial_alpha.ln(),
            adam: ScalarAdam::default(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// d/d log_alpha of  -log_alpha (E[log pi] + target_entropy), log pi detached.
pub fn alpha_gradient(mean_log_prob: f64, target_entropy: f64) -> f64 {
    -(mean_log_prob + target_entropy)
}

/// Adam step on the temperature loss; returns alpha after the step.
pub fn alpha_update<R: Rng>(
    batch: &[Transition],
    policy: &Policy,
    temp: &mut EntropyTemperature,
    target_entropy: f64,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut mean_logp = 0.0;
    for t in batch {
        mean_logp += policy.act(&t.observation, rng)?.log_prob;
    }
    mean_logp /= batch.len() as f64;
    let grad = alpha_gradient(mean_logp, target_entropy);
    temp.adam.step(&mut temp.log_alpha, grad, lr)?;
    Ok(temp.alpha())
}

/// Everything the DroQ training loop owns for one task.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub policy: Policy,
    pub critics: CriticEnsemble,
    pub temperature: EntropyTemperature,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl SacAgent {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, config: SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let policy = Policy::new(obs_dim, act_dim, &config.hidden_dims, rng);
        let critics = CriticEnsemble::new(obs_dim, act_dim, &config, rng);
        let temperature = EntropyTemperature::new(config.initial_alpha);
        Ok(SacAgent { config, policy, critics, temperature, obs_dim, act_dim })
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepMetrics {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub mean_target_q: f64,
    pub mean_log_prob: f64,
}

/// One training step at the configured UTD ratio: `utd_ratio` critic updates,
/// each on a fresh mixed batch with a fresh target computation and an EMA
/// step, then exactly one policy and one temperature update on the final
/// batch.
pub fn droq_train_step<R: Rng, R2: Rng>(
    sampler: &MixedSampler,
    source: Option<&SourceBuffer>,
    online: &OnlineBuffer,
    agent: &mut SacAgent,
    sample_rng: &mut R,
    net_rng: &mut R2,
) -> Result<StepMetrics> {
    let cfg = agent.config.clone();
    let mut critic_loss = 0.0;
    let mut mean_target_q = 0.0;
    let mut last_batch: Option<Vec<Transition>> = None;
    for _ in 0..cfg.utd_ratio {
        let batch = sampler.sample(source, online, cfg.batch_size, sample_rng)?;
        let y = compute_critic_target(
            &batch,
            &agent.critics,
            &agent.policy,
            agent.temperature.alpha(),
            cfg.gamma,
            net_rng,
        )?;
        critic_loss = critic_update(&batch, &mut agent.critics, &y, cfg.lr, net_rng)?;
        agent.critics.ema_step(cfg.target_ema);
        mean_target_q = y.iter().sum::<f64>() / y.len() as f64;
        last_batch = Some(batch);
    }
    let batch = last_batch.expect("utd_ratio >= 1");
    let policy_loss = policy_update(
        &batch,
        &mut agent.policy,
        &agent.critics,
        agent.temperature.alpha(),
        cfg.lr,
        net_rng,
    )?;
    let obs = obs_mat(&batch, false);
    let mut noise = Mat::zeros(batch.len(), agent.policy.act_dim);
    for v in noise.data_mut() {
        *v = net_rng.sample(StandardNormal);
    }
    let (_, _, mean_logp) =
        policy_loss_grads(&obs, &agent.policy, &agent.critics, 0.0, &noise)?;
    let grad = alpha_gradient(mean_logp, target_entropy(agent.act_dim));
    agent
        .temperature
        .adam
        .step(&mut agent.temperature.log_alpha, grad, cfg.lr)?;

    Ok(StepMetrics {
        critic_loss,
        policy_loss,
        alpha: agent.temperature.alpha(),
        mean_target_q,
        mean_log_prob: mean_logp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::{BufferMetadata, SourceBuffer};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_config() -> SacConfig {
        SacConfig {
            batch_size: 16,
            utd_ratio: 2,
            hidden_dims: vec![32, 32],
            ..SacConfig::default()
        }
    }

    fn vanilla_config() -> SacConfig {
        SacConfig {
            critic_dropout: 0.0,
            critic_layer_norm: false,
            ..small_config()
        }
    }

    fn transition(obs: Vec<f64>, act: Vec<f64>, reward: f64, next: Vec<f64>, terminal: bool) -> Transition {
        Transition {
            observation: obs,
            action: act,
            reward,
            next_observation: next,
            terminal,
            truncated: false,
        }
    }

    fn toy_batch(n: usize, obs_dim: usize, act_dim: usize, seed: u64) -> Vec<Transition> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                transition(
                    (0..obs_dim).map(|_| r.gen_range(-1.0..1.0)).collect(),
                    (0..act_dim).map(|_| r.gen_range(-0.9..0.9)).collect(),
                    r.gen_range(-1.0..1.0),
                    (0..obs_dim).map(|_| r.gen_range(-1.0..1.0)).collect(),
                    false,
                )
            })
            .collect()
    }

    /// Sets a critic to the constant function Q = c (zero weights, output
    /// bias c).
    fn make_constant(params: &mut MlpParams, c: f64) {
        let n = params.flatten().len();
        params.unflatten_into(&vec![0.0; n]);
        // restore layer-norm gains to 1 so the net stays well-formed
        for l in &mut params.layers {
            if let Some(g) = &mut l.ln_gain {
                for v in g.iter_mut() {
                    *v = 1.0;
                }
            }
        }
        let last = params.layers.len() - 1;
        params.layers[last].b[0] = c;
    }

    #[test]
    fn config_validation() {
        assert!(SacConfig::default().validate().is_ok());
        assert!(SacConfig { gamma: 1.0, ..SacConfig::default() }.validate().is_err());
        assert!(SacConfig { target_ema: 0.0, ..SacConfig::default() }.validate().is_err());
        assert!(SacConfig { utd_ratio: 0, ..SacConfig::default() }.validate().is_err());
    }

    #[test]
    fn target_entropy_formula() {
        assert_eq!(target_entropy(12), -6.0);
        assert_eq!(target_entropy(2), -1.0);
    }

    #[test]
    fn terminal_transition_target_is_reward() {
        let mut r = rng(0);
        let agent = SacAgent::new(3, 2, small_config(), &mut r).unwrap();
        let batch = vec![transition(vec![0.0; 3], vec![0.0; 2], 1.0, vec![0.0; 3], true)];
        let y = compute_critic_target(&batch, &agent.critics, &agent.policy, 1.0, 0.99, &mut r).unwrap();
        assert_eq!(y, vec![1.0]);
    }

    #[test]
    fn zero_gamma_target_is_reward() {
        let mut r = rng(1);
        let agent = SacAgent::new(3, 2, small_config(), &mut r).unwrap();
        let batch = toy_batch(8, 3, 2, 2);
        // gamma = 0 is outside the validated config range but fine for the op
        let y = compute_critic_target(&batch, &agent.critics, &agent.policy, 1.0, 0.0, &mut r).unwrap();
        for (yi, t) in y.iter().zip(&batch) {
            assert_eq!(*yi, t.reward);
        }
    }

    #[test]
    fn truncated_transitions_bootstrap() {
        let mut r = rng(3);
        let mut agent = SacAgent::new(2, 1, small_config(), &mut r).unwrap();
        make_constant(&mut agent.critics.target1, 2.0);
        make_constant(&mut agent.critics.target2, 2.0);
        let mut t = transition(vec![0.0; 2], vec![0.0], 0.5, vec![0.0; 2], false);
        t.truncated = true;
        let y = compute_critic_target(&[t], &agent.critics, &agent.policy, 0.0, 0.99, &mut r).unwrap();
        assert!((y[0] - (0.5 + 0.99 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn target_uses_min_over_both_critics() {
        let mut r = rng(4);
        let mut agent = SacAgent::new(2, 1, small_config(), &mut r).unwrap();
        make_constant(&mut agent.critics.target1, 5.0);
        make_constant(&mut agent.critics.target2, 3.0);
        let batch = vec![transition(vec![0.0; 2], vec![0.0], 0.0, vec![0.0; 2], false)];
        let y = compute_critic_target(&batch, &agent.critics, &agent.policy, 0.0, 0.99, &mut r).unwrap();
        assert!((y[0] - 0.99 * 3.0).abs() < 1e-12, "y {}", y[0]);
    }

    #[test]
    fn perfect_critic_has_zero_loss_and_no_update() {
        let mut r = rng(5);
        let mut agent = SacAgent::new(2, 1, vanilla_config(), &mut r).unwrap();
        let batch = toy_batch(8, 2, 1, 6);
        // read off the critics' own predictions and use them as targets
        let obs = obs_mat(&batch, false);
        let mut act = Mat::zeros(batch.len(), 1);
        for (i, t) in batch.iter().enumerate() {
            act.row_mut(i).copy_from_slice(&t.action);
        }
        let x = concat_cols(&obs, &act);
        let mut dummy = rng(0);
        let (q1, _) =
            mlp_forward_batch(&agent.critics.q1.spec, &agent.critics.q1.params, &x, Mode::Eval, &mut dummy)
                .unwrap();
        // make both critics identical so one target fits both
        agent.critics.q2.params = agent.critics.q1.params.clone();
        let y: Vec<f64> = (0..batch.len()).map(|i| q1.get(i, 0)).collect();
        let before = agent.critics.q1.params.clone();
        let loss = critic_update(&batch, &mut agent.critics, &y, 3e-4, &mut r).unwrap();
        assert!(loss < 1e-24, "loss {loss}");
        assert_eq!(agent.critics.q1.params, before);
    }

    #[test]
    fn critic_loss_is_non_negative() {
        let mut r = rng(7);
        let mut agent = SacAgent::new(3, 2, small_config(), &mut r).unwrap();
        let batch = toy_batch(16, 3, 2, 8);
        for _ in 0..5 {
            let y = compute_critic_target(&batch, &agent.critics, &agent.policy, 1.0, 0.99, &mut r).unwrap();
            let loss = critic_update(&batch, &mut agent.critics, &y, 3e-4, &mut r).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn repeated_updates_overfit_fixed_batch() {
        let mut r = rng(9);
        let mut agent = SacAgent::new(2, 1, vanilla_config(), &mut r).unwrap();
        let batch = toy_batch(16, 2, 1, 10);
        let y: Vec<f64> = (0..batch.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut loss = f64::INFINITY;
        for _ in 0..500 {
            loss = critic_update(&batch, &mut agent.critics, &y, 3e-3, &mut r).unwrap();
        }
        assert!(loss < 1e-3, "loss after 500 updates: {loss}");
    }

    #[test]
    fn constant_critics_make_policy_maximize_entropy() {
        let mut r = rng(11);
        let mut agent = SacAgent::new(2, 2, vanilla_config(), &mut r).unwrap();
        make_constant(&mut agent.critics.q1.params, 1.0);
        make_constant(&mut agent.critics.q2.params, 1.0);
        // start with small sigma: squashed-Gaussian entropy peaks at moderate
        // sigma, so growth is only guaranteed from below
        let last = agent.policy.params.layers.len() - 1;
        for b in &mut agent.policy.params.layers[last].b[2..4] {
            *b = -2.0;
        }
        let batch = toy_batch(32, 2, 2, 12);

        let mean_raw_ls = |p: &Policy| -> f64 {
            let obs = obs_mat(&batch, false);
            let mut dummy = rng(0);
            let (out, _) = mlp_forward_batch(&p.spec, &p.params, &obs, Mode::Eval, &mut dummy).unwrap();
            let mut s = 0.0;
            for rr in 0..out.rows() {
                for j in 2..4 {
                    s += out.get(rr, j);
                }
            }
            s / (out.rows() * 2) as f64
        };

        let before = mean_raw_ls(&agent.policy);
        for _ in 0..20 {
            policy_update(&batch, &mut agent.policy, &agent.critics, 1.0, 3e-3, &mut r).unwrap();
        }
        let after = mean_raw_ls(&agent.policy);
        assert!(after > before, "log_std should grow: {before} -> {after}");
    }

    #[test]
    fn bandit_policy_moves_toward_better_action() {
        // 1-D bandit with Q(s, a) = a: the argmax action is +1, so with
        // alpha = 0 the mean must move in the positive direction.
        let mut r = rng(13);
        let mut agent = SacAgent::new(1, 1, vanilla_config(), &mut r).unwrap();
        for critic in [&mut agent.critics.q1, &mut agent.critics.q2] {
            let n = critic.params.flatten().len();
            critic.params.unflatten_into(&vec![0.0; n]);
            // single relu path through every layer: Q = max(a, 0), argmax +1
            critic.params.layers[0].w.set(0, 1, 1.0);
            for l in &mut critic.params.layers[1..] {
                l.w.set(0, 0, 1.0);
            }
        }
        let batch: Vec<Transition> = (0..16)
            .map(|_| transition(vec![0.0], vec![0.0], 0.0, vec![0.0], false))
            .collect();

        let mean_of = |p: &Policy| p.act_deterministic(&[0.0]).unwrap()[0];
        let before = mean_of(&agent.policy);
        for _ in 0..50 {
            policy_update(&batch, &mut agent.policy, &agent.critics, 0.0, 3e-3, &mut r).unwrap();
        }
        let after = mean_of(&agent.policy);
        assert!(after > before + 0.05, "mean should move up: {before} -> {after}");
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut r = rng(15);
        let policy_cfg = vanilla_config();
        let agent = SacAgent::new(3, 2, policy_cfg, &mut r).unwrap();
        let batch = toy_batch(4, 3, 2, 16);
        let obs = obs_mat(&batch, false);
        let mut noise = Mat::zeros(4, 2);
        for v in noise.data_mut() {
            *v = r.sample::<f64, _>(StandardNormal);
        }
        let alpha = 0.7;

        let (_, grads, _) =
            policy_loss_grads(&obs, &agent.policy, &agent.critics, alpha, &noise).unwrap();

        let loss_of = |params: &MlpParams| -> f64 {
            let p = Policy {
                spec: agent.policy.spec.clone(),
                params: params.clone(),
                adam: AdamState::new(params),
                act_dim: 2,
            };
            policy_loss_grads(&obs, &p, &agent.critics, alpha, &noise).unwrap().0
        };

        let flat = agent.policy.params.flatten();
        let analytic = grads.flatten();
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for k in (0..flat.len()).step_by(7) {
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let mut p = agent.policy.params.clone();
            p.unflatten_into(&plus);
            let lp = loss_of(&p);
            p.unflatten_into(&minus);
            let lm = loss_of(&p);
            let numeric = (lp - lm) / (2.0 * h);
            let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max((analytic[k] - numeric).abs() / denom);
        }
        assert!(max_rel <= 1e-4, "max rel err {max_rel}");
    }

    #[test]
    fn alpha_stationary_at_target_entropy() {
        let mut temp = EntropyTemperature::new(1.0);
        let g = alpha_gradient(1.0, -1.0); // E[log pi] = -target_entropy
        assert_eq!(g, 0.0);
        let before = temp.alpha();
        temp.adam.step(&mut temp.log_alpha, g, 3e-4).unwrap();
        assert_eq!(temp.alpha(), before);
    }

    #[test]
    fn alpha_stays_positive() {
        let mut r = rng(17);
        let agent = SacAgent::new(2, 1, small_config(), &mut r).unwrap();
        let batch = toy_batch(8, 2, 1, 18);
        let mut temp = EntropyTemperature::new(1.0);
        for _ in 0..200 {
            let a = alpha_update(&batch, &agent.policy, &mut temp, target_entropy(1), 1e-2, &mut r).unwrap();
            assert!(a > 0.0);
        }
    }

    fn filled_online_buffer(obs_dim: usize, act_dim: usize, n: usize, seed: u64) -> OnlineBuffer {
        let mut buf = OnlineBuffer::new(obs_dim, act_dim, n.max(1));
        for t in toy_batch(n, obs_dim, act_dim, seed) {
            buf.push(t).unwrap();
        }
        buf
    }

    #[test]
    fn droq_step_runs_and_reports_finite_metrics() {
        let mut r = rng(19);
        let mut agent = SacAgent::new(3, 2, small_config(), &mut r).unwrap();
        let online = filled_online_buffer(3, 2, 64, 20);
        let sampler = MixedSampler::new(0.0, 32).unwrap();
        let m = droq_train_step(&sampler, None, &online, &mut agent, &mut r, &mut rng(119)).unwrap();
        assert!(m.critic_loss.is_finite() && m.policy_loss.is_finite());
        assert!(m.alpha > 0.0);
    }

    #[test]
    fn droq_step_underflow_propagates() {
        let mut r = rng(21);
        let mut agent = SacAgent::new(3, 2, small_config(), &mut r).unwrap();
        let online = filled_online_buffer(3, 2, 8, 22);
        let sampler = MixedSampler::new(0.0, 32).unwrap();
        let err = droq_train_step(&sampler, None, &online, &mut agent, &mut r, &mut rng(121)).unwrap_err();
        assert!(matches!(err, Error::NeedMoreData { have: 8, need: 32 }));
    }

    #[test]
    fn droq_consumes_utd_batches_with_mixing() {
        // phi = 0.5 with a tagged source buffer: every sampled batch must mix,
        // which we verify indirectly by requiring the source buffer (reward
        // tag 100) to raise the mean critic target well above the online-only
        // level.
        let mut r = rng(23);
        let cfg = SacConfig { utd_ratio: 3, ..small_config() };
        let mut agent = SacAgent::new(2, 1, cfg, &mut r).unwrap();
        let online = filled_online_buffer(2, 1, 64, 24);
        let mut src_data = toy_batch(32, 2, 1, 25);
        for t in &mut src_data {
            t.reward = 100.0;
        }
        let meta = BufferMetadata {
            policy_id: "test".into(),
            mdp_id: "toy".into(),
            seed: 0,
            obs_dim: 2,
            act_dim: 1,
        };
        let source = SourceBuffer::new(meta, src_data).unwrap();
        let sampler = MixedSampler::new(0.5, 32).unwrap();
        let m = droq_train_step(&sampler, Some(&source), &online, &mut agent, &mut r, &mut rng(123)).unwrap();
        assert!(m.mean_target_q > 20.0, "mean target {}", m.mean_target_q);
    }

    #[test]
    fn targets_never_receive_gradients() {
        let mut r = rng(27);
        let mut agent = SacAgent::new(2, 1, small_config(), &mut r).unwrap();
        let t1 = agent.critics.target1.clone();
        let batch = toy_batch(16, 2, 1, 28);
        let y = compute_critic_target(&batch, &agent.critics, &agent.policy, 1.0, 0.99, &mut r).unwrap();
        critic_update(&batch, &mut agent.critics, &y, 3e-4, &mut r).unwrap();
        policy_update(&batch, &mut agent.policy, &agent.critics, 1.0, 3e-4, &mut r).unwrap();
        assert_eq!(agent.critics.target1, t1, "only ema_step may touch targets");
        agent.critics.ema_step(0.005);
        assert_ne!(agent.critics.target1, t1);
    }

    #[test]
    fn vanilla_reduction_is_deterministic_and_mode_free() {
        // with dropout 0 and layer norm off, train-mode critic forwards match
        // eval mode bit-exactly, and a whole droq step is reproducible
        let mut r = rng(29);
        let agent = SacAgent::new(2, 1, vanilla_config(), &mut r).unwrap();
        let batch = toy_batch(8, 2, 1, 30);
        let obs = obs_mat(&batch, false);
        let mut act = Mat::zeros(8, 1);
        for (i, t) in batch.iter().enumerate() {
            act.row_mut(i).copy_from_slice(&t.action);
        }
        let x = concat_cols(&obs, &act);
        let (qt, _) = mlp_forward_batch(&agent.critics.q1.spec, &agent.critics.q1.params, &x, Mode::Train, &mut rng(31)).unwrap();
        let (qe, _) = mlp_forward_batch(&agent.critics.q1.spec, &agent.critics.q1.params, &x, Mode::Eval, &mut rng(32)).unwrap();
        assert_eq!(qt.data(), qe.data());

        let run = || {
            let mut r = rng(33);
            let mut agent = SacAgent::new(2, 1, vanilla_config(), &mut r).unwrap();
            let online = filled_online_buffer(2, 1, 64, 34);
            let sampler = MixedSampler::new(0.0, 32).unwrap();
            droq_train_step(&sampler, None, &online, &mut agent, &mut r, &mut rng(133)).unwrap();
            agent.policy.params.flatten()
        };
        assert_eq!(run(), run());
    }
}
