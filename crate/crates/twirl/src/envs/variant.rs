//! Dynamics parameter sets and the named environment variants.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRAVITY: f64 = 9.81;
pub const DEFAULT_FRICTION: f64 = 0.8;
pub const LOW_GRAVITY: f64 = 3.7;
pub const ICY_FRICTION: f64 = 0.4;
pub const SLOPE_DEGREES: f64 = 8.0;
pub const BUMPY_MAX_HEIGHT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsVariant {
    None,
    Bumpy,
    Icy,
    Weakened,
    Sloped,
    LowGravity,
}

impl DynamicsVariant {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => DynamicsVariant::None,
            "bumpy" => DynamicsVariant::Bumpy,
            "icy" => DynamicsVariant::Icy,
            "weakened" => DynamicsVariant::Weakened,
            "sloped" => DynamicsVariant::Sloped,
            "low_gravity" => DynamicsVariant::LowGravity,
            other => return Err(Error::config(format!("unknown dynamics variant '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DynamicsVariant::None => "none",
            DynamicsVariant::Bumpy => "bumpy",
            DynamicsVariant::Icy => "icy",
            DynamicsVariant::Weakened => "weakened",
            DynamicsVariant::Sloped => "sloped",
            DynamicsVariant::LowGravity => "low_gravity",
        }
    }

    /// Whether per-episode re-randomization is needed (bumpy heightfield,
    /// weakened motor multipliers).
    pub fn per_episode(&self) -> bool {
        matches!(self, DynamicsVariant::Bumpy | DynamicsVariant::Weakened)
    }
}

/// Piecewise-linear 1-D heightfield used for bumpy terrain.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    pub spacing: f64,
    pub heights: Vec<f64>,
}

impl Heightfield {
    pub fn random(rng: &mut ChaCha8Rng, max_height: f64, extent: f64, spacing: f64) -> Self {
        let n = (extent / spacing).ceil() as usize + 2;
        let heights = (0..n).map(|_| rng.gen_range(0.0..max_height)).collect();
        Heightfield { spacing, heights }
    }

    pub fn height_at(&self, x: f64) -> f64 {
        if self.heights.is_empty() || x <= 0.0 {
            return *self.heights.first().unwrap_or(&0.0);
        }
        let i = (x / self.spacing) as usize;
        if i + 1 >= self.heights.len() {
            return *self.heights.last().unwrap();
        }
        let frac = x / self.spacing - i as f64;
        self.heights[i] * (1.0 - frac) + self.heights[i + 1] * frac
    }

    pub fn slope_at(&self, x: f64) -> f64 {
        if self.heights.is_empty() || x <= 0.0 {
            return 0.0;
        }
        let i = (x / self.spacing) as usize;
        if i + 1 >= self.heights.len() {
            return 0.0;
        }
        (self.heights[i + 1] - self.heights[i]) / self.spacing
    }
}

/// Physics parameter set for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsParams {
    pub gravity: f64,
    pub friction: f64,
    pub slope_rad: f64,
    /// Per-motor strength multipliers; length matches the task's motor count.
    pub motor_strength: Vec<f64>,
    pub terrain: Option<Heightfield>,
    pub variant: DynamicsVariant,
}

impl DynamicsParams {
    pub fn defaults(n_motors: usize) -> Self {
        DynamicsParams {
            gravity: DEFAULT_GRAVITY,
            friction: DEFAULT_FRICTION,
            slope_rad: 0.0,
            motor_strength: vec![1.0; n_motors],
            terrain: None,
            variant: DynamicsVariant::None,
        }
    }

    /// Ground height at planar coordinate x: base slope plus heightfield.
    pub fn ground_height(&self, x: f64) -> f64 {
        let slope = if x > 0.0 { x * self.slope_rad.tan() } else { 0.0 };
        slope + self.terrain.as_ref().map_or(0.0, |t| t.height_at(x))
    }

    /// Local ground slope (dh/dx) at x.
    pub fn ground_slope(&self, x: f64) -> f64 {
        let base = if x > 0.0 { self.slope_rad.tan() } else { 0.0 };
        base + self.terrain.as_ref().map_or(0.0, |t| t.slope_at(x))
    }
}

/// Applies a named variant to a default parameter set. Bumpy terrain and
/// weakened motors draw from the per-episode rng stream.
pub fn apply_dynamics_variant(
    params: &DynamicsParams,
    variant: DynamicsVariant,
    episode_rng: &mut ChaCha8Rng,
) -> DynamicsParams {
    let mut p = params.clone();
    p.variant = variant;
    match variant {
        DynamicsVariant::None => {}
        DynamicsVariant::Icy => p.friction = ICY_FRICTION,
        DynamicsVariant::LowGravity => p.gravity = LOW_GRAVITY,
        DynamicsVariant::Sloped => p.slope_rad = SLOPE_DEGREES.to_radians(),
        DynamicsVariant::Bumpy => {
            p.terrain = Some(Heightfield::random(episode_rng, BUMPY_MAX_HEIGHT, 30.0, 0.25));
        }
        DynamicsVariant::Weakened => {
            for s in &mut p.motor_strength {
                *s = episode_rng.gen_range(0.6..1.0);
            }
        }
    }
    p
}
