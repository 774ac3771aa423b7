//! Experience-transfer orchestration: rolling a source policy in the target
//! task to build a frozen source buffer, the mixed-batch training loop, and
//! the sampling-ratio ablation driver.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{make_env, DynamicsVariant, Env, EnvId};
use crate::error::{Error, Result};
use crate::evaluate::evaluate;
use crate::nn::{load_checkpoint, AdamState, MlpParams, MlpSpec};
use crate::replay::{BufferMetadata, MixedSampler, OnlineBuffer, SourceBuffer, Transition};
use crate::sac::{droq_train_step, Policy, SacAgent, SacConfig, StepMetrics};
use crate::seeding;

/// File names inside a run directory.
pub const POLICY_FILE: &str = "policy.twnn";
pub const CRITIC1_FILE: &str = "critic1.twnn";
pub const CRITIC2_FILE: &str = "critic2.twnn";
pub const REPLAY_FILE: &str = "replay.twrb";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// The sampling-ratio grid used by the ablation study.
pub const PHI_GRID: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

/// Index projection from the target observation layout into the source
/// policy's input layout. Task features present in the target but absent in
/// the source are dropped; every source input must map to a target feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsAdapter {
    indices: Vec<usize>,
    target_dim: usize,
}

impl ObsAdapter {
    pub fn new(indices: Vec<usize>, target_dim: usize) -> Result<Self> {
        for &i in &indices {
            if i >= target_dim {
                return Err(Error::config(format!(
                    "adapter index {i} out of range for target observation of dim {target_dim}"
                )));
            }
        }
        Ok(ObsAdapter { indices, target_dim })
    }

    pub fn identity(dim: usize) -> Self {
        ObsAdapter {
            indices: (0..dim).collect(),
            target_dim: dim,
        }
    }

    /// The standard adapter: the target observation is the source layout with
    /// extra task features prepended, so drop the leading ones.
    pub fn drop_leading(target_dim: usize, source_dim: usize) -> Result<Self> {
        if source_dim > target_dim {
            return Err(Error::config(format!(
                "source input dim {source_dim} exceeds target observation dim {target_dim}"
            )));
        }
        Ok(ObsAdapter {
            indices: (target_dim - source_dim..target_dim).collect(),
            target_dim,
        })
    }

    pub fn source_dim(&self) -> usize {
        self.indices.len()
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn project(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.target_dim {
            return Err(Error::config(format!(
                "adapter built for dim {}, observation has dim {}",
                self.target_dim,
                obs.len()
            )));
        }
        Ok(self.indices.iter().map(|&i| obs[i]).collect())
    }
}

/// Anything that can act in an environment: a trained policy or a scripted
/// stand-in (used for oracle tests and data inspection).
pub trait ActionSource {
    fn input_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn sample_action(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

impl ActionSource for Policy {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn act_dim(&self) -> usize {
        self.act_dim
    }

    fn sample_action(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.act(obs, rng)?.action)
    }
}

/// Uniform actions over the box; input dim is whatever the caller says.
#[derive(Debug, Clone)]
pub struct UniformRandomPolicy {
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl ActionSource for UniformRandomPolicy {
    fn input_dim(&self) -> usize {
        self.obs_dim
    }

    fn act_dim(&self) -> usize {
        self.act_dim
    }

    fn sample_action(&self, _obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        use rand::Rng;
        Ok((0..self.act_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }
}

/// Rolls whole episodes in the target MDP with the source policy acting
/// through the adapter, recording full target observations and target-task
/// rewards. Stops on the first episode boundary at or past `n` transitions.
pub fn collect_source_data(
    source_policy: &dyn ActionSource,
    policy_id: &str,
    env: &mut dyn Env,
    n: usize,
    adapter: &ObsAdapter,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SourceBuffer> {
    if adapter.target_dim() != env.obs_dim() {
        return Err(Error::config(format!(
            "adapter target dim {} does not match environment observation dim {}",
            adapter.target_dim(),
            env.obs_dim()
        )));
    }
    if adapter.source_dim() != source_policy.input_dim() {
        return Err(Error::config(format!(
            "adapter source dim {} does not match policy input dim {}",
            adapter.source_dim(),
            source_policy.input_dim()
        )));
    }
    if source_policy.act_dim() != env.act_dim() {
        return Err(Error::config(format!(
            "policy action dim {} does not match environment action dim {}",
            source_policy.act_dim(),
            env.act_dim()
        )));
    }
    if n == 0 {
        return Err(Error::config("source sample budget must be positive"));
    }

    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let mut obs = env.reset(rng);
        loop {
            let action = source_policy.sample_action(&adapter.project(&obs)?, rng)?;
            let out = env.step(&action)?;
            let done = out.terminal || out.truncated;
            data.push(Transition {
                observation: obs,
                action,
                reward: out.reward,
                next_observation: out.observation.clone(),
                terminal: out.terminal,
                truncated: out.truncated,
            });
            obs = out.observation;
            if done {
                break;
            }
        }
    }
    let metadata = BufferMetadata {
        policy_id: policy_id.to_string(),
        mdp_id: env.mdp_id().to_string(),
        seed,
        obs_dim: env.obs_dim(),
        act_dim: env.act_dim(),
    };
    SourceBuffer::new(metadata, data)
}

/// CRC of the serialized buffer; used to assert source immutability.
pub fn buffer_digest(buffer: &SourceBuffer) -> u32 {
    let mut bytes = Vec::new();
    crate::replay::serialize_buffer(&mut bytes, buffer).expect("in-memory serialize");
    crc32fast::hash(&bytes)
}

/// One metrics line, emitted every `log_interval` environment steps.
/// Wall-clock timing is deliberately not part of the record so that reruns
/// of a frozen config produce byte-identical metrics files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub episodes: usize,
    /// Return of the most recently completed episode (0 until one finishes).
    pub last_return: f64,
    /// Mean return over the last ten completed episodes.
    pub mean_recent_return: f64,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub mean_target_q: f64,
    pub mean_log_prob: f64,
    /// Mean |a| over the most recent exploration action.
    pub mean_abs_action: f64,
}

/// Per-run RNG streams for the training loop; network init is drawn
/// separately from the "policy-init" stream by whoever builds the agent.
#[derive(Debug)]
pub struct TrainStreams {
    pub env: ChaCha8Rng,
    pub sampler: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl TrainStreams {
    pub fn derive(base_seed: u64) -> Self {
        TrainStreams {
            env: seeding::stream(base_seed, seeding::STREAM_ENV),
            sampler: seeding::stream(base_seed, seeding::STREAM_SAMPLER),
            dropout: seeding::stream(base_seed, seeding::STREAM_DROPOUT),
        }
    }
}

/// Knobs shared by every trainer entry point.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub sac: SacConfig,
    pub online_capacity: usize,
    /// Online transitions required before gradient updates begin.
    pub min_online_size: usize,
    /// Environment steps between metrics records.
    pub log_interval: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            sac: SacConfig::default(),
            online_capacity: 1_000_000,
            min_online_size: 1000,
            log_interval: 400,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        if self.online_capacity == 0 || self.log_interval == 0 {
            return Err(Error::config("online_capacity and log_interval must be positive"));
        }
        Ok(())
    }
}

/// The collect -> push -> mixed-sample -> update loop. The same function
/// backs from-scratch training (`phi` 0, no source) and transfer training;
/// the reduction between the two is by construction.
#[allow(clippy::too_many_arguments)]
pub fn run_training<F>(
    env: &mut dyn Env,
    agent: &mut SacAgent,
    source: Option<&SourceBuffer>,
    phi: f64,
    budget: usize,
    opts: &TrainOptions,
    online: &mut OnlineBuffer,
    streams: &mut TrainStreams,
    mut on_record: F,
) -> Result<Vec<MetricsRecord>>
where
    F: FnMut(&MetricsRecord, &SacAgent) -> Result<()>,
{
    opts.validate()?;
    if budget == 0 {
        return Err(Error::config("training budget must be positive"));
    }
    if agent.obs_dim != env.obs_dim() || agent.act_dim != env.act_dim() {
        return Err(Error::config(format!(
            "agent schema ({}, {}) does not match environment ({}, {})",
            agent.obs_dim,
            agent.act_dim,
            env.obs_dim(),
            env.act_dim()
        )));
    }
    if let Some(src) = source {
        if src.metadata().obs_dim != env.obs_dim() || src.metadata().act_dim != env.act_dim() {
            return Err(Error::config(format!(
                "source buffer schema ({}, {}) does not match target environment ({}, {})",
                src.metadata().obs_dim,
                src.metadata().act_dim,
                env.obs_dim(),
                env.act_dim()
            )));
        }
    }
    let sampler = MixedSampler::new(phi, opts.min_online_size)?;

    let mut records = Vec::new();
    let mut obs = env.reset(&mut streams.env);
    let mut episode_return = 0.0;
    let mut episodes = 0usize;
    let mut recent_returns: std::collections::VecDeque<f64> = std::collections::VecDeque::new();
    let mut last_metrics: Option<StepMetrics> = None;

    for step in 1..=budget {
        let sample = agent.policy.act(&obs, &mut streams.env)?;
        let action = sample.action;
        let mean_abs_action =
            action.iter().map(|a| a.abs()).sum::<f64>() / action.len() as f64;
        let out = env.step(&action)?;
        episode_return += out.reward;
        online.push(Transition {
            observation: obs,
            action,
            reward: out.reward,
            next_observation: out.observation.clone(),
            terminal: out.terminal,
            truncated: out.truncated,
        })?;
        if out.terminal || out.truncated {
            episodes += 1;
            recent_returns.push_back(episode_return);
            if recent_returns.len() > 10 {
                recent_returns.pop_front();
            }
            episode_return = 0.0;
            obs = env.reset(&mut streams.env);
        } else {
            obs = out.observation;
        }

        match droq_train_step(
            &sampler,
            source,
            online,
            agent,
            &mut streams.sampler,
            &mut streams.dropout,
        ) {
            Ok(m) => {
                if !(m.critic_loss.is_finite() && m.policy_loss.is_finite() && m.alpha.is_finite())
                {
                    return Err(Error::numeric(format!(
                        "training diverged at step {step}: critic_loss={}, policy_loss={}, alpha={}",
                        m.critic_loss, m.policy_loss, m.alpha
                    )));
                }
                last_metrics = Some(m);
            }
            // warm-up: not enough online data yet
            Err(Error::NeedMoreData { .. }) => {}
            Err(e) => return Err(e),
        }

        if step % opts.log_interval == 0 || step == budget {
            let m = last_metrics.clone().unwrap_or(StepMetrics {
                critic_loss: 0.0,
                policy_loss: 0.0,
                alpha: agent.temperature.alpha(),
                mean_target_q: 0.0,
                mean_log_prob: 0.0,
            });
            let record = MetricsRecord {
                step,
                episodes,
                last_return: recent_returns.back().copied().unwrap_or(0.0),
                mean_recent_return: if recent_returns.is_empty() {
                    0.0
                } else {
                    recent_returns.iter().sum::<f64>() / recent_returns.len() as f64
                },
                critic_loss: m.critic_loss,
                policy_loss: m.policy_loss,
                alpha: m.alpha,
                mean_target_q: m.mean_target_q,
                mean_log_prob: m.mean_log_prob,
                mean_abs_action,
            };
            on_record(&record, agent)?;
            records.push(record);
        }
    }
    Ok(records)
}

/// Full description of one transfer run. Exactly one source-data provenance
/// mode may be set: `source_run` (collect fresh data in the target MDP with
/// that run's policy) or `source_buffer` (reuse a serialized buffer as-is).
/// Weight carry-over needs `weights_from` and identical schemas.
#[derive(Debug, Clone)]
pub struct TransferSpec {
    pub target_env: EnvId,
    pub variant: DynamicsVariant,
    pub phi: f64,
    /// Directory of a source training run whose policy collects fresh data.
    pub source_run: Option<PathBuf>,
    /// Serialized source buffer reused directly (dynamics transfer).
    pub source_buffer: Option<PathBuf>,
    /// Transitions to collect in `source_run` mode.
    pub source_sample_budget: usize,
    /// Run directory whose checkpoints initialize the networks.
    pub weights_from: Option<PathBuf>,
    pub carry_policy_weights: bool,
    pub carry_critic_weights: bool,
    pub training_budget: usize,
    pub seeds: Vec<u64>,
}

impl TransferSpec {
    pub fn from_scratch(target_env: EnvId, variant: DynamicsVariant, budget: usize, seeds: Vec<u64>) -> Self {
        TransferSpec {
            target_env,
            variant,
            phi: 0.0,
            source_run: None,
            source_buffer: None,
            source_sample_budget: 0,
            weights_from: None,
            carry_policy_weights: false,
            carry_critic_weights: false,
            training_budget: budget,
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::config(format!("phi must be in [0,1], got {}", self.phi)));
        }
        let modes = usize::from(self.source_run.is_some()) + usize::from(self.source_buffer.is_some());
        if modes > 1 {
            return Err(Error::config(
                "source_run and source_buffer are mutually exclusive provenance modes",
            ));
        }
        if self.phi > 0.0 && modes == 0 {
            return Err(Error::config("phi > 0 requires a source-data provenance mode"));
        }
        if self.source_run.is_some() && self.source_sample_budget == 0 {
            return Err(Error::config(
                "source_run collection mode requires a positive source_sample_budget",
            ));
        }
        if (self.carry_policy_weights || self.carry_critic_weights) && self.weights_from.is_none() {
            return Err(Error::config("carry_*_weights requires weights_from"));
        }
        if self.training_budget == 0 {
            return Err(Error::config("training budget must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        Ok(())
    }
}

/// Outcome of one training run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub agent: SacAgent,
    pub records: Vec<MetricsRecord>,
}

fn policy_from_checkpoint(spec: MlpSpec, params: MlpParams) -> Result<Policy> {
    if spec.output_dim % 2 != 0 {
        return Err(Error::config(
            "policy checkpoint output dim must be even (mean | log_std)",
        ));
    }
    let adam = AdamState::new(&params);
    Ok(Policy {
        act_dim: spec.output_dim / 2,
        spec,
        params,
        adam,
    })
}

pub fn load_policy_checkpoint(path: &Path) -> Result<Policy> {
    let (spec, params) = load_checkpoint(path)?;
    policy_from_checkpoint(spec, params)
}

/// Builds the agent for a transfer run: fresh networks from the policy-init
/// stream, then carried parameters loaded over them when requested. Optimizer
/// state and the entropy temperature always start fresh.
pub fn init_transfer_agent(
    obs_dim: usize,
    act_dim: usize,
    config: &SacConfig,
    spec: &TransferSpec,
    seed: u64,
) -> Result<SacAgent> {
    let mut init_rng = seeding::stream(seed, seeding::STREAM_POLICY_INIT);
    let mut agent = SacAgent::new(obs_dim, act_dim, config.clone(), &mut init_rng)?;
    let Some(dir) = &spec.weights_from else {
        return Ok(agent);
    };
    if spec.carry_policy_weights {
        let (pspec, pparams) = load_checkpoint(&dir.join(POLICY_FILE))?;
        if pspec != agent.policy.spec {
            return Err(Error::config(format!(
                "carried policy schema (input {}) does not match target ({})",
                pspec.input_dim, agent.policy.spec.input_dim
            )));
        }
        agent.policy.params = pparams;
    }
    if spec.carry_critic_weights {
        for (file, critic) in [
            (CRITIC1_FILE, &mut agent.critics.q1),
            (CRITIC2_FILE, &mut agent.critics.q2),
        ] {
            let (cspec, cparams) = load_checkpoint(&dir.join(file))?;
            if cspec != critic.spec {
                return Err(Error::config(format!(
                    "carried critic schema (input {}) does not match target ({})",
                    cspec.input_dim, critic.spec.input_dim
                )));
            }
            critic.params = cparams;
        }
        agent.critics.target1 = agent.critics.q1.params.clone();
        agent.critics.target2 = agent.critics.q2.params.clone();
    }
    Ok(agent)
}

/// Loads or collects the frozen source buffer for a transfer run.
pub fn acquire_source_buffer(
    spec: &TransferSpec,
    env_obs_dim: usize,
    env_act_dim: usize,
    seed: u64,
) -> Result<Option<SourceBuffer>> {
    if let Some(path) = &spec.source_buffer {
        let buf = crate::replay::load_buffer(path)?;
        if buf.metadata().obs_dim != env_obs_dim || buf.metadata().act_dim != env_act_dim {
            return Err(Error::config(format!(
                "source buffer schema ({}, {}) does not match target environment ({}, {})",
                buf.metadata().obs_dim,
                buf.metadata().act_dim,
                env_obs_dim,
                env_act_dim
            )));
        }
        return Ok(Some(buf));
    }
    if let Some(dir) = &spec.source_run {
        let policy = load_policy_checkpoint(&dir.join(POLICY_FILE))?;
        let adapter = ObsAdapter::drop_leading(env_obs_dim, policy.spec.input_dim)?;
        let mut env = make_env(spec.target_env, spec.variant);
        let mut rng = seeding::stream(seed, seeding::STREAM_COLLECT);
        let policy_id = dir.display().to_string();
        let buf = collect_source_data(
            &policy,
            &policy_id,
            env.as_mut(),
            spec.source_sample_budget,
            &adapter,
            seed,
            &mut rng,
        )?;
        return Ok(Some(buf));
    }
    Ok(None)
}

/// One transfer run: acquire the source buffer, initialize networks, then
/// run the mixed-batch training loop for the configured budget.
pub fn twirl_train<F>(
    spec: &TransferSpec,
    opts: &TrainOptions,
    seed: u64,
    on_record: F,
) -> Result<RunArtifacts>
where
    F: FnMut(&MetricsRecord, &SacAgent) -> Result<()>,
{
    spec.validate()?;
    opts.validate()?;
    let mut env = make_env(spec.target_env, spec.variant);
    let obs_dim = env.obs_dim();
    let act_dim = env.act_dim();
    // schema and checkpoint problems surface before any rollout or collection
    let mut agent = init_transfer_agent(obs_dim, act_dim, &opts.sac, spec, seed)?;
    let source = acquire_source_buffer(spec, obs_dim, act_dim, seed)?;
    let digest_before = source.as_ref().map(buffer_digest);

    let mut streams = TrainStreams::derive(seed);
    let mut online = OnlineBuffer::new(obs_dim, act_dim, opts.online_capacity);
    let records = run_training(
        env.as_mut(),
        &mut agent,
        source.as_ref(),
        spec.phi,
        spec.training_budget,
        opts,
        &mut online,
        &mut streams,
        on_record,
    )?;
    if let (Some(before), Some(src)) = (digest_before, source.as_ref()) {
        assert_eq!(before, buffer_digest(src), "source buffer mutated during training");
    }
    Ok(RunArtifacts { agent, records })
}

/// Plain from-scratch training; the same loop as `twirl_train` with phi 0
/// and no source.
pub fn train_from_scratch<F>(
    target_env: EnvId,
    variant: DynamicsVariant,
    opts: &TrainOptions,
    budget: usize,
    seed: u64,
    on_record: F,
) -> Result<RunArtifacts>
where
    F: FnMut(&MetricsRecord, &SacAgent) -> Result<()>,
{
    let spec = TransferSpec::from_scratch(target_env, variant, budget, vec![seed]);
    twirl_train(&spec, opts, seed, on_record)
}

/// Trains a source policy with standard DroQ and hands back its full replay
/// buffer for dynamics-transfer reuse.
pub fn train_source_policy<F>(
    env_id: EnvId,
    variant: DynamicsVariant,
    opts: &TrainOptions,
    budget: usize,
    seed: u64,
    on_record: F,
) -> Result<(RunArtifacts, SourceBuffer)>
where
    F: FnMut(&MetricsRecord, &SacAgent) -> Result<()>,
{
    opts.validate()?;
    let mut env = make_env(env_id, variant);
    let obs_dim = env.obs_dim();
    let act_dim = env.act_dim();
    let mut init_rng = seeding::stream(seed, seeding::STREAM_POLICY_INIT);
    let mut agent = SacAgent::new(obs_dim, act_dim, opts.sac.clone(), &mut init_rng)?;
    let mut streams = TrainStreams::derive(seed);
    let mut online = OnlineBuffer::new(obs_dim, act_dim, opts.online_capacity);
    let records = run_training(
        env.as_mut(),
        &mut agent,
        None,
        0.0,
        budget,
        opts,
        &mut online,
        &mut streams,
        on_record,
    )?;
    let metadata = BufferMetadata {
        policy_id: format!("{}-seed{}", env_id.name(), seed),
        mdp_id: env.mdp_id().to_string(),
        seed,
        obs_dim,
        act_dim,
    };
    let replay = SourceBuffer::new(metadata, online.iter().cloned().collect())?;
    Ok((RunArtifacts { agent, records }, replay))
}

/// One ablation grid cell: final deterministic-evaluation performance of a
/// single (phi, seed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub phi: f64,
    pub seed: u64,
    pub final_mean_return: f64,
    pub final_std_return: f64,
}

pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    /// Learning curves per run, in the same order as `rows`.
    pub curves: Vec<Vec<MetricsRecord>>,
}

/// Runs the base spec once per grid point per seed and evaluates each final
/// policy. Row count is |grid| x |seeds| by construction.
pub fn run_ablation(
    base: &TransferSpec,
    opts: &TrainOptions,
    phi_grid: &[f64],
    eval_episodes: usize,
) -> Result<AblationOutcome> {
    base.validate()?;
    if phi_grid.is_empty() {
        return Err(Error::config("ablation grid must be non-empty"));
    }
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &phi in phi_grid {
        for &seed in &base.seeds {
            let spec = TransferSpec { phi, ..base.clone() };
            let artifacts = twirl_train(&spec, opts, seed, |_, _| Ok(()))?;
            let mut env = make_env(base.target_env, base.variant);
            let report = evaluate(&artifacts.agent.policy, env.as_mut(), eval_episodes, seed)?;
            rows.push(AblationRow {
                phi,
                seed,
                final_mean_return: report.mean_return,
                final_std_return: report.std_return,
            });
            curves.push(artifacts.records);
        }
    }
    Ok(AblationOutcome { rows, curves })
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("phi,seed,final_mean_return,final_std_return\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.phi, r.seed, r.final_mean_return, r.final_std_return
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EPISODE_HORIZON;
    use crate::envs::{reward_stand, HISTORY_LEN};
    use crate::nn::save_checkpoint;
    use rand::SeedableRng;

    fn tiny_opts() -> TrainOptions {
        TrainOptions {
            sac: SacConfig {
                batch_size: 16,
                utd_ratio: 1,
                hidden_dims: vec![16, 16],
                ..SacConfig::default()
            },
            online_capacity: 10_000,
            min_online_size: 64,
            log_interval: 50,
        }
    }

    fn random_source(n: usize, env_id: EnvId, seed: u64) -> SourceBuffer {
        let mut env = make_env(env_id, DynamicsVariant::None);
        let policy = UniformRandomPolicy {
            obs_dim: env.obs_dim(),
            act_dim: env.act_dim(),
        };
        let adapter = ObsAdapter::identity(env.obs_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        collect_source_data(&policy, "random", env.as_mut(), n, &adapter, seed, &mut rng).unwrap()
    }

    #[test]
    fn adapter_projects_and_drops_leading_features() {
        let id = ObsAdapter::identity(3);
        assert_eq!(id.project(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);

        let drop = ObsAdapter::drop_leading(5, 3).unwrap();
        assert_eq!(
            drop.project(&[9.0, 8.0, 1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(drop.source_dim(), 3);
        assert_eq!(drop.target_dim(), 5);
    }

    #[test]
    fn adapter_rejects_bad_projections() {
        assert!(ObsAdapter::new(vec![0, 5], 5).is_err());
        assert!(ObsAdapter::drop_leading(3, 5).is_err());
        let a = ObsAdapter::identity(3);
        assert!(a.project(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn collect_validates_adapter_before_rollout() {
        let mut env = make_env(EnvId::BalancerStand, DynamicsVariant::None);
        let policy = UniformRandomPolicy { obs_dim: 10, act_dim: 2 };
        let adapter = ObsAdapter::identity(10); // wrong target dim (env is 24)
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = collect_source_data(&policy, "p", env.as_mut(), 10, &adapter, 0, &mut rng)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);

        // matching target dim but policy input mismatch
        let adapter = ObsAdapter::identity(24);
        let err = collect_source_data(&policy, "p", env.as_mut(), 10, &adapter, 0, &mut rng)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn collection_stops_on_an_episode_boundary() {
        let buf = random_source(500, EnvId::BalancerStand, 1);
        assert!(buf.len() >= 500);
        let last = buf.get(buf.len() - 1);
        assert!(last.terminal || last.truncated, "collection must end an episode");
        // no episode boundary strictly between n and the end
        for i in 500..buf.len() - 1 {
            let t = buf.get(i);
            assert!(!(t.terminal || t.truncated), "early boundary at {i}");
        }
    }

    #[test]
    fn collected_rewards_recompute_exactly() {
        // the stand reward is a pure function of the newest post-step frame,
        // which is the head of next_observation on the stand task
        let buf = random_source(900, EnvId::BalancerStand, 2);
        assert_eq!(buf.metadata().obs_dim, 24);
        for t in buf.iter() {
            let frame = &t.next_observation[0..buf.metadata().obs_dim / HISTORY_LEN];
            let expected = reward_stand(frame[1], frame[5]);
            assert!(
                (t.reward - expected).abs() == 0.0,
                "reward {} recomputed {}",
                t.reward,
                expected
            );
        }
    }

    #[test]
    fn random_policy_buffer_matches_monte_carlo() {
        // episode returns recovered from buffer boundaries vs a direct
        // rollout of the same random policy, compared within 2 SE
        let buf = random_source(6000, EnvId::BalancerStand, 3);
        let mut buffer_returns = Vec::new();
        let mut acc = 0.0;
        for t in buf.iter() {
            acc += t.reward;
            if t.terminal || t.truncated {
                buffer_returns.push(acc);
                acc = 0.0;
            }
        }
        assert!(buffer_returns.len() >= 10);

        let mut env = make_env(EnvId::BalancerStand, DynamicsVariant::None);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let policy = UniformRandomPolicy { obs_dim: 24, act_dim: 2 };
        let mut direct_returns = Vec::new();
        for _ in 0..buffer_returns.len() {
            env.reset(&mut rng);
            let mut ret = 0.0;
            loop {
                let a = policy.sample_action(&[], &mut rng).unwrap();
                let out = env.step(&a).unwrap();
                ret += out.reward;
                if out.terminal || out.truncated {
                    break;
                }
            }
            direct_returns.push(ret);
        }

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64], m: f64| {
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let (mb, md) = (mean(&buffer_returns), mean(&direct_returns));
        let se = (var(&buffer_returns, mb) / buffer_returns.len() as f64
            + var(&direct_returns, md) / direct_returns.len() as f64)
            .sqrt();
        assert!(
            (mb - md).abs() <= 2.0 * se.max(1e-9),
            "buffer mean {mb}, direct mean {md}, se {se}"
        );
    }

    #[test]
    fn provenance_modes_are_mutually_exclusive() {
        let mut spec = TransferSpec::from_scratch(
            EnvId::BalancerGoal,
            DynamicsVariant::None,
            100,
            vec![1],
        );
        assert!(spec.validate().is_ok());

        spec.phi = 0.5;
        assert!(spec.validate().is_err(), "phi > 0 without a source");

        spec.source_run = Some(PathBuf::from("a"));
        spec.source_sample_budget = 10;
        assert!(spec.validate().is_ok());

        spec.source_buffer = Some(PathBuf::from("b"));
        assert!(spec.validate().is_err(), "both provenance modes set");

        spec.source_run = None;
        assert!(spec.validate().is_ok());

        spec.carry_policy_weights = true;
        assert!(spec.validate().is_err(), "carry without weights_from");
        spec.weights_from = Some(PathBuf::from("c"));
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn weight_carry_schema_mismatch_rejected_before_compute() {
        // a stand-task policy (24 inputs) cannot seed the goal task (26)
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let policy = Policy::new(24, 2, &[16, 16], &mut rng);
        save_checkpoint(&dir.path().join(POLICY_FILE), &policy.spec, &policy.params).unwrap();

        let spec = TransferSpec {
            weights_from: Some(dir.path().to_path_buf()),
            carry_policy_weights: true,
            ..TransferSpec::from_scratch(EnvId::BalancerGoal, DynamicsVariant::None, 100, vec![1])
        };
        let err = twirl_train(&spec, &tiny_opts(), 1, |_, _| Ok(())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("schema"), "{err}");
    }

    #[test]
    fn carried_weights_load_with_fresh_optimizer_state() {
        let dir = tempfile::tempdir().unwrap();
        let opts = tiny_opts();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let policy = Policy::new(24, 2, &[16, 16], &mut rng);
        save_checkpoint(&dir.path().join(POLICY_FILE), &policy.spec, &policy.params).unwrap();

        let spec = TransferSpec {
            weights_from: Some(dir.path().to_path_buf()),
            carry_policy_weights: true,
            ..TransferSpec::from_scratch(EnvId::BalancerStand, DynamicsVariant::None, 100, vec![1])
        };
        let agent = init_transfer_agent(24, 2, &opts.sac, &spec, 1).unwrap();
        assert_eq!(agent.policy.params.flatten(), policy.params.flatten());
        assert_eq!(agent.temperature.alpha(), opts.sac.initial_alpha);

        // without the flag, weights stay fresh
        let plain = TransferSpec { carry_policy_weights: false, ..spec };
        let agent2 = init_transfer_agent(24, 2, &opts.sac, &plain, 1).unwrap();
        assert_ne!(agent2.policy.params.flatten(), policy.params.flatten());
    }

    #[test]
    fn phi_zero_reduces_to_from_scratch() {
        let opts = tiny_opts();
        let budget = 150;
        let spec = TransferSpec::from_scratch(
            EnvId::BalancerStand,
            DynamicsVariant::None,
            budget,
            vec![11],
        );
        let a = twirl_train(&spec, &opts, 11, |_, _| Ok(())).unwrap();
        let b = train_from_scratch(
            EnvId::BalancerStand,
            DynamicsVariant::None,
            &opts,
            budget,
            11,
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&a.records).unwrap(),
            serde_json::to_string(&b.records).unwrap()
        );
        assert_eq!(a.agent.policy.params.flatten(), b.agent.policy.params.flatten());
    }

    #[test]
    fn source_buffer_file_unchanged_by_training() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("src.twrb");
        let buf = random_source(300, EnvId::BalancerStand, 13);
        crate::replay::save_buffer(&path, &buf).unwrap();
        let bytes_before = std::fs::read(&path).unwrap();

        let spec = TransferSpec {
            phi: 0.5,
            source_buffer: Some(path.clone()),
            ..TransferSpec::from_scratch(EnvId::BalancerStand, DynamicsVariant::None, 120, vec![3])
        };
        twirl_train(&spec, &tiny_opts(), 3, |_, _| Ok(())).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes_before);
    }

    #[test]
    fn buffer_mode_schema_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hopper.twrb");
        let mut env = make_env(EnvId::HopperSource, DynamicsVariant::None);
        let policy = UniformRandomPolicy {
            obs_dim: env.obs_dim(),
            act_dim: env.act_dim(),
        };
        let adapter = ObsAdapter::identity(env.obs_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let buf =
            collect_source_data(&policy, "r", env.as_mut(), 50, &adapter, 17, &mut rng).unwrap();
        crate::replay::save_buffer(&path, &buf).unwrap();

        let spec = TransferSpec {
            phi: 0.5,
            source_buffer: Some(path),
            ..TransferSpec::from_scratch(EnvId::BalancerStand, DynamicsVariant::None, 100, vec![1])
        };
        let err = twirl_train(&spec, &tiny_opts(), 1, |_, _| Ok(())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn source_training_returns_full_replay() {
        let opts = tiny_opts();
        let budget = 120;
        let (artifacts, replay) = train_source_policy(
            EnvId::BalancerStand,
            DynamicsVariant::None,
            &opts,
            budget,
            21,
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(replay.len(), budget);
        assert_eq!(replay.metadata().mdp_id, "balancer_stand");
        assert!(!artifacts.records.is_empty());
        assert!(artifacts.records.last().unwrap().step == budget);
    }

    #[test]
    fn ablation_emits_one_row_per_grid_point_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("src.twrb");
        crate::replay::save_buffer(&path, &random_source(200, EnvId::BalancerStand, 23)).unwrap();

        let base = TransferSpec {
            phi: 0.5,
            source_buffer: Some(path),
            ..TransferSpec::from_scratch(
                EnvId::BalancerStand,
                DynamicsVariant::None,
                100,
                vec![1, 2],
            )
        };
        let out = run_ablation(&base, &tiny_opts(), &[0.0, 0.5], 2).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert_eq!(out.curves.len(), 4);
        let csv = ablation_csv(&out.rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("phi,seed,"));
    }

    #[test]
    fn training_records_are_periodic_and_reproducible() {
        let opts = tiny_opts();
        let run = || {
            train_from_scratch(
                EnvId::BalancerStand,
                DynamicsVariant::None,
                &opts,
                120,
                31,
                |_, _| Ok(()),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.records.len(), 3); // steps 50, 100, 120
        assert_eq!(a.records[0].step, 50);
        assert_eq!(a.records[2].step, 120);
        assert_eq!(
            serde_json::to_string(&a.records).unwrap(),
            serde_json::to_string(&b.records).unwrap()
        );
    }

    #[test]
    fn episode_bookkeeping_in_records() {
        // budget longer than one episode: episodes and returns must appear
        let opts = TrainOptions {
            log_interval: EPISODE_HORIZON,
            ..tiny_opts()
        };
        let a = train_from_scratch(
            EnvId::BalancerStand,
            DynamicsVariant::None,
            &opts,
            EPISODE_HORIZON + 20,
            37,
            |_, _| Ok(()),
        )
        .unwrap();
        let last = a.records.last().unwrap();
        assert!(last.episodes >= 1);
        assert!(last.last_return != 0.0);
    }
}
