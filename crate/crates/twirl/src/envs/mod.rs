//! Deterministic fixed-step toy physics environments: a planar
//! hopper-over-hurdles course, a wheeled inverted-pendulum stand-and-navigate
//! world, PD actuation, Butterworth action filtering, three-step observation
//! histories, and the dynamics variants.

mod balancer;
mod filter;
mod hopper;
mod obs;
mod pd;
mod rewards;
mod variant;

pub use balancer::{sample_goal, BalancerWorld, GOAL_RADIUS_MEAN};
pub use filter::{ButterworthFilter, CONTROL_RATE_HZ, FILTER_CUTOFF_HZ};
pub use hopper::{HopperWorld, HurdleCourse, HURDLE_HALF_WIDTH, HURDLE_HEIGHT};
pub use obs::{ObservationAssembler, HISTORY_LEN};
pub use pd::PdActuator;
pub use rewards::{
    reward_biped_nav, reward_distance, reward_jump, reward_stand, reward_upright, JumpComponents,
};
pub use variant::{
    apply_dynamics_variant, DynamicsParams, DynamicsVariant, Heightfield, BUMPY_MAX_HEIGHT,
    DEFAULT_FRICTION, DEFAULT_GRAVITY, ICY_FRICTION, LOW_GRAVITY, SLOPE_DEGREES,
};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Physics integration: semi-implicit Euler at 200 Hz, 10 substeps per 20 Hz
/// control step.
pub const PHYSICS_DT: f64 = 1.0 / 200.0;
pub const SUBSTEPS_PER_CONTROL: usize = 10;
pub const CONTROL_DT: f64 = PHYSICS_DT * SUBSTEPS_PER_CONTROL as f64;

/// Episode horizon in control steps (20 s) for both tasks.
pub const EPISODE_HORIZON: usize = 400;

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Per-episode task metrics reported by evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct TaskMetrics {
    pub hurdles_cleared: u32,
    /// Control steps spent standing (balancer).
    pub standing_steps: u32,
    /// Minimum distance to the goal reached during the episode (balancer).
    pub min_goal_distance: f64,
}

/// A stepping, resettable environment. Environments are value-like worlds:
/// stepping is deterministic given (state, action, params, rng stream).
pub trait Env {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn mdp_id(&self) -> &str;

    /// Starts a new episode; episode-level randomness (hurdle spacing, goal,
    /// terrain, motor weakening) comes from the provided stream.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// Advances one control step with an action in [-1, 1]^d.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;

    fn metrics(&self) -> TaskMetrics;
}

/// Environment ids accepted by the run config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvId {
    /// Jumping task: random hurdle spacing, hurdle displacement observed.
    HopperHurdles,
    /// Source analog for the jumping task: fixed 2.0 m spacing, no hurdle
    /// displacement in the observation, densely shaped reward.
    HopperSource,
    /// Goal-conditioned navigation with the gated standing reward.
    BalancerGoal,
    /// Source analog: stand-only reward, no goal features observed.
    BalancerStand,
}

impl EnvId {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "hopper_hurdles" => EnvId::HopperHurdles,
            "hopper_source" => EnvId::HopperSource,
            "balancer_goal" => EnvId::BalancerGoal,
            "balancer_stand" => EnvId::BalancerStand,
            other => return Err(Error::config(format!("unknown environment id '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvId::HopperHurdles => "hopper_hurdles",
            EnvId::HopperSource => "hopper_source",
            EnvId::BalancerGoal => "balancer_goal",
            EnvId::BalancerStand => "balancer_stand",
        }
    }
}

/// Builds an environment from its id and dynamics variant.
pub fn make_env(id: EnvId, variant: DynamicsVariant) -> Box<dyn Env> {
    match id {
        EnvId::HopperHurdles => Box::new(HopperWorld::new(true, variant)),
        EnvId::HopperSource => Box::new(HopperWorld::new(false, variant)),
        EnvId::BalancerGoal => Box::new(BalancerWorld::new(true, variant)),
        EnvId::BalancerStand => Box::new(BalancerWorld::new(false, variant)),
    }
}
