//! Run configuration: a TOML tree with defaults applied. Every run
//! directory receives a frozen copy of the fully resolved config before any
//! work begins, so a run can be replayed from its own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{DynamicsVariant, EnvId};
use crate::error::{Error, Result};
use crate::sac::SacConfig;
use crate::transfer::{TrainOptions, TransferSpec, CONFIG_FILE};

/// Environment variable overriding the output root directory.
pub const OUT_ENV_VAR: &str = "TWIRL_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Environment id: hopper_hurdles, hopper_source, balancer_goal,
    /// balancer_stand.
    pub env: String,
    /// Dynamics variant: none, bumpy, icy, weakened, sloped, low_gravity.
    pub variant: String,
    /// Base seeds; one full run per seed.
    pub seeds: Vec<u64>,
    /// Environment steps of training.
    pub training_budget: usize,
    /// Episodes in the final deterministic evaluation.
    pub eval_episodes: usize,
    /// Extra policy checkpoints every this many env steps (0 = final only).
    pub checkpoint_interval: usize,
    pub online_capacity: usize,
    pub min_online_size: usize,
    /// Environment steps between metrics records.
    pub log_interval: usize,
    pub sac: SacSection,
    pub transfer: TransferSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "balancer_stand".into(),
            variant: "none".into(),
            seeds: vec![0],
            training_budget: 100_000,
            eval_episodes: 10,
            checkpoint_interval: 0,
            online_capacity: 1_000_000,
            min_online_size: 1000,
            log_interval: 400,
            sac: SacSection::default(),
            transfer: TransferSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacSection {
    pub batch_size: usize,
    pub gamma: f64,
    pub lr: f64,
    pub target_ema: f64,
    pub utd_ratio: usize,
    pub initial_alpha: f64,
    pub hidden_dims: Vec<usize>,
    pub critic_dropout: f64,
    pub critic_layer_norm: bool,
}

impl Default for SacSection {
    fn default() -> Self {
        let c = SacConfig::default();
        SacSection {
            batch_size: c.batch_size,
            gamma: c.gamma,
            lr: c.lr,
            target_ema: c.target_ema,
            utd_ratio: c.utd_ratio,
            initial_alpha: c.initial_alpha,
            hidden_dims: c.hidden_dims,
            critic_dropout: c.critic_dropout,
            critic_layer_norm: c.critic_layer_norm,
        }
    }
}

impl SacSection {
    pub fn to_sac_config(&self) -> SacConfig {
        SacConfig {
            batch_size: self.batch_size,
            gamma: self.gamma,
            lr: self.lr,
            target_ema: self.target_ema,
            utd_ratio: self.utd_ratio,
            initial_alpha: self.initial_alpha,
            hidden_dims: self.hidden_dims.clone(),
            critic_dropout: self.critic_dropout,
            critic_layer_norm: self.critic_layer_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    /// Source sampling ratio.
    pub phi: f64,
    /// Source run directory whose policy collects fresh data in the target.
    pub source_run: Option<PathBuf>,
    /// Serialized source buffer reused directly.
    pub source_buffer: Option<PathBuf>,
    /// Transitions to collect in source_run mode.
    pub source_sample_budget: usize,
    /// Run directory whose checkpoints initialize the networks.
    pub weights_from: Option<PathBuf>,
    pub carry_policy_weights: bool,
    pub carry_critic_weights: bool,
}

impl RunConfig {
    pub fn parse_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::parse_str(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env_id()?;
        self.variant()?;
        self.to_options().validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.training_budget == 0 {
            return Err(Error::config("training budget must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be positive"));
        }
        Ok(())
    }

    pub fn env_id(&self) -> Result<EnvId> {
        EnvId::parse(&self.env)
    }

    pub fn variant(&self) -> Result<DynamicsVariant> {
        DynamicsVariant::parse(&self.variant)
    }

    pub fn to_options(&self) -> TrainOptions {
        TrainOptions {
            sac: self.sac.to_sac_config(),
            online_capacity: self.online_capacity,
            min_online_size: self.min_online_size,
            log_interval: self.log_interval,
        }
    }

    pub fn to_transfer_spec(&self) -> Result<TransferSpec> {
        let spec = TransferSpec {
            target_env: self.env_id()?,
            variant: self.variant()?,
            phi: self.transfer.phi,
            source_run: self.transfer.source_run.clone(),
            source_buffer: self.transfer.source_buffer.clone(),
            source_sample_budget: self.transfer.source_sample_budget,
            weights_from: self.transfer.weights_from.clone(),
            carry_policy_weights: self.transfer.carry_policy_weights,
            carry_critic_weights: self.transfer.carry_critic_weights,
            training_budget: self.training_budget,
            seeds: self.seeds.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Writes the resolved config into a run directory before work begins.
    pub fn freeze(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), self.to_toml())?;
        Ok(())
    }
}

/// Output root: `TWIRL_OUT` if set, else the given fallback, else "runs".
pub fn output_root(cli_out: Option<&Path>) -> PathBuf {
    if let Ok(v) = std::env::var(OUT_ENV_VAR) {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    cli_out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs"))
}
