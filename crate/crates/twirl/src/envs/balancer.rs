//! Differential-drive wheeled inverted pendulum that must stand up and
//! drive to goals.
//!
//! The robot starts resting backward on a prop stop (a stable pose worth a
//! little reward) and has to swing up to the unstable upright equilibrium to
//! earn the standing reward; the navigation task further scales that reward
//! by facing/progress terms toward a sampled goal, so nothing is earned for
//! scooting around while fallen. Falling forward flat ends the episode.
//!
//! Sagittal dynamics are the standard two-DOF cart-pendulum coupling with the
//! wheel torque both pushing the base and reacting on the body. Yaw is a
//! first-order turret driven by the wheel torque differential.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

use super::obs::ObservationAssembler;
use super::rewards::{reward_biped_nav, reward_stand};
use super::variant::{apply_dynamics_variant, DynamicsParams, DynamicsVariant};
use super::{
    ButterworthFilter, Env, StepOutcome, TaskMetrics, EPISODE_HORIZON, PHYSICS_DT,
    SUBSTEPS_PER_CONTROL,
};

/// Goal radii are exponential with this mean (metres); bearings are uniform.
pub const GOAL_RADIUS_MEAN: f64 = 1.5;

const BODY_MASS: f64 = 2.0;
const BASE_MASS: f64 = 1.0;
const COM_HEIGHT: f64 = 0.5;
const BODY_INERTIA: f64 = 0.05; // about the axle, beyond m l^2
const WHEEL_RADIUS: f64 = 0.1;
const WHEEL_TORQUE_MAX: f64 = 3.0;
const DRIVE_DAMPING: f64 = 1.5;
const PITCH_DAMPING: f64 = 0.08;
const YAW_INERTIA: f64 = 0.05;
const YAW_GAIN: f64 = 1.5; // half-track / wheel radius
const YAW_DAMPING: f64 = 0.3;

/// Resting pitch against the prop stop; positive pitch = leaning backward.
const PROP_STOP_PITCH: f64 = 1.2;
const PROP_STIFFNESS: f64 = 200.0;
const PROP_DAMPING: f64 = 10.0;
/// Fallen forward flat: terminal.
const FORWARD_FALL_PITCH: f64 = -1.5;

const FRAME_DIM: usize = 8;
const STAND_PITCH_BAND: f64 = 0.3;

/// Goal displacement: bearing uniform on [0, 2 pi), radius exponential.
pub fn sample_goal(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let radius: f64 = Exp::new(1.0 / GOAL_RADIUS_MEAN).unwrap().sample(rng);
    (radius * angle.cos(), radius * angle.sin())
}

#[derive(Debug, Clone, Copy, Default)]
struct BalancerState {
    px: f64,
    py: f64,
    heading: f64,
    pitch: f64,
    speed: f64,
    yaw_rate: f64,
    pitch_rate: f64,
}

pub struct BalancerWorld {
    navigate: bool,
    variant: DynamicsVariant,
    params: DynamicsParams,
    filter: ButterworthFilter,
    assembler: ObservationAssembler,
    state: BalancerState,
    goal: (f64, f64),
    prev_goal_distance: f64,
    steps: usize,
    done: bool,
    standing_steps: u32,
    min_goal_distance: f64,
    last_filtered: [f64; 2],
}

impl BalancerWorld {
    pub fn new(navigate: bool, variant: DynamicsVariant) -> Self {
        let task_dim = if navigate { 2 } else { 0 };
        BalancerWorld {
            navigate,
            variant,
            params: DynamicsParams::defaults(2),
            filter: ButterworthFilter::action_filter(2),
            assembler: ObservationAssembler::new(FRAME_DIM, task_dim),
            state: BalancerState::default(),
            goal: (0.0, 0.0),
            prev_goal_distance: 0.0,
            steps: 0,
            done: false,
            standing_steps: 0,
            min_goal_distance: f64::INFINITY,
            last_filtered: [0.0; 2],
        }
    }

    /// Sagittal accelerations (speed_dot, pitch_dot_dot) for a drive torque.
    /// Two-DOF coupling solved directly:
    ///   (M+m) a + m l cos(phi) pdd = F + m l phi_dot^2 sin(phi) - c_v v
    ///   m l cos(phi) a + (I + m l^2) pdd = m g l sin(phi) - c_p phi_dot
    ///                                      - tau + tau_stop
    fn accelerations(&self, state: &BalancerState, tau_drive: f64) -> (f64, f64) {
        let (m, l) = (BODY_MASS, COM_HEIGHT);
        let total = BODY_MASS + BASE_MASS;
        let (sp, cp) = state.pitch.sin_cos();
        let force = tau_drive / WHEEL_RADIUS;

        let tau_stop = if state.pitch > PROP_STOP_PITCH {
            PROP_STIFFNESS * (PROP_STOP_PITCH - state.pitch) - PROP_DAMPING * state.pitch_rate
        } else {
            0.0
        };

        let a11 = total;
        let a12 = m * l * cp;
        let a22 = BODY_INERTIA + m * l * l;
        let b1 = force + m * l * state.pitch_rate * state.pitch_rate * sp
            - DRIVE_DAMPING * state.speed;
        let b2 = m * self.params.gravity * l * sp - PITCH_DAMPING * state.pitch_rate - tau_drive
            + tau_stop;

        let det = a11 * a22 - a12 * a12;
        (
            (b1 * a22 - b2 * a12) / det,
            (b2 * a11 - b1 * a12) / det,
        )
    }

    fn substep(&mut self, tau_left: f64, tau_right: f64) {
        let tau_drive = tau_left + tau_right;
        let (dv, dpitch_rate) = self.accelerations(&self.state, tau_drive);
        // icy ground scales how much torque differential grips into yaw
        let grip = self.params.friction / super::variant::DEFAULT_FRICTION;
        let yaw_acc =
            (grip * YAW_GAIN * (tau_right - tau_left) - YAW_DAMPING * self.state.yaw_rate)
                / YAW_INERTIA;

        let s = &mut self.state;
        s.speed += dv * PHYSICS_DT;
        s.pitch_rate += dpitch_rate * PHYSICS_DT;
        s.yaw_rate += yaw_acc * PHYSICS_DT;
        s.px += s.speed * s.heading.cos() * PHYSICS_DT;
        s.py += s.speed * s.heading.sin() * PHYSICS_DT;
        s.heading += s.yaw_rate * PHYSICS_DT;
        s.pitch += s.pitch_rate * PHYSICS_DT;
    }

    fn goal_distance(&self) -> f64 {
        let dx = self.goal.0 - self.state.px;
        let dy = self.goal.1 - self.state.py;
        (dx * dx + dy * dy).sqrt()
    }

    /// Cosine between the heading and the goal bearing.
    fn facing_cos(&self) -> f64 {
        let dx = self.goal.0 - self.state.px;
        let dy = self.goal.1 - self.state.py;
        let d = (dx * dx + dy * dy).sqrt();
        if d < 1e-9 {
            return 1.0;
        }
        (dx * self.state.heading.cos() + dy * self.state.heading.sin()) / d
    }

    /// COM height above its resting value against the prop stop.
    fn com_height_rel(&self) -> f64 {
        COM_HEIGHT * (self.state.pitch.cos() - PROP_STOP_PITCH.cos())
    }

    fn frame(&self) -> Vec<f64> {
        let s = &self.state;
        vec![
            s.pitch.sin(),
            s.pitch.cos(),
            s.pitch_rate,
            s.speed,
            s.yaw_rate,
            self.com_height_rel(),
            self.last_filtered[0],
            self.last_filtered[1],
        ]
    }

    /// Goal displacement rotated into the body frame.
    fn task_features(&self) -> Vec<f64> {
        if !self.navigate {
            return vec![];
        }
        let dx = self.goal.0 - self.state.px;
        let dy = self.goal.1 - self.state.py;
        let (sh, ch) = self.state.heading.sin_cos();
        vec![ch * dx + sh * dy, -sh * dx + ch * dy]
    }
}

impl Env for BalancerWorld {
    fn obs_dim(&self) -> usize {
        self.assembler.obs_dim()
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn mdp_id(&self) -> &str {
        if self.navigate {
            "balancer_goal"
        } else {
            "balancer_stand"
        }
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.params = apply_dynamics_variant(&DynamicsParams::defaults(2), self.variant, rng);
        self.filter.reset();
        self.steps = 0;
        self.done = false;
        self.standing_steps = 0;
        self.min_goal_distance = f64::INFINITY;
        self.last_filtered = [0.0; 2];
        self.state = BalancerState {
            pitch: PROP_STOP_PITCH + rng.gen_range(-0.05..0.02),
            heading: rng.gen_range(-0.1..0.1),
            ..BalancerState::default()
        };
        self.goal = if self.navigate {
            sample_goal(rng)
        } else {
            (0.0, 0.0)
        };
        self.prev_goal_distance = self.goal_distance();
        self.min_goal_distance = self.prev_goal_distance;
        self.assembler.reset(self.frame());
        self.assembler.assemble(&self.task_features())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::config("step called on a finished episode"));
        }
        if action.len() != 2 {
            return Err(Error::config(format!(
                "balancer expects 2 actions, got {}",
                action.len()
            )));
        }
        let clamped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let filtered = self.filter.filter_action(&clamped);
        self.last_filtered = [filtered[0], filtered[1]];
        let tau_l = filtered[0] * WHEEL_TORQUE_MAX * self.params.motor_strength[0];
        let tau_r = filtered[1] * WHEEL_TORQUE_MAX * self.params.motor_strength[1];
        for _ in 0..SUBSTEPS_PER_CONTROL {
            self.substep(tau_l, tau_r);
        }

        let s = &self.state;
        let terminal = s.pitch < FORWARD_FALL_PITCH
            || s.pitch.abs() > 2.0
            || !(s.pitch.is_finite() && s.px.is_finite() && s.py.is_finite());
        self.steps += 1;
        let truncated = !terminal && self.steps >= EPISODE_HORIZON;
        self.done = terminal || truncated;

        let r_stand = reward_stand(s.pitch.cos(), self.com_height_rel());
        let distance = self.goal_distance();
        let reward = if self.navigate {
            reward_biped_nav(r_stand, self.facing_cos(), distance, self.prev_goal_distance)
        } else {
            r_stand
        };
        self.prev_goal_distance = distance;
        self.min_goal_distance = self.min_goal_distance.min(distance);
        if s.pitch.abs() < STAND_PITCH_BAND {
            self.standing_steps += 1;
        }

        self.assembler.push(self.frame());
        Ok(StepOutcome {
            observation: self.assembler.assemble(&self.task_features()),
            reward,
            terminal,
            truncated,
        })
    }

    fn metrics(&self) -> TaskMetrics {
        TaskMetrics {
            standing_steps: self.standing_steps,
            min_goal_distance: if self.min_goal_distance.is_finite() {
                self.min_goal_distance
            } else {
                0.0
            },
            ..TaskMetrics::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn reset_default(navigate: bool) -> (BalancerWorld, Vec<f64>) {
        let mut env = BalancerWorld::new(navigate, DynamicsVariant::None);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = env.reset(&mut rng);
        (env, obs)
    }

    #[test]
    fn observation_dims() {
        let (env, obs) = reset_default(true);
        assert_eq!(env.obs_dim(), 26);
        assert_eq!(obs.len(), 26);
        let (env, obs) = reset_default(false);
        assert_eq!(env.obs_dim(), 24);
        assert_eq!(obs.len(), 24);
    }

    #[test]
    fn upright_is_an_equilibrium() {
        let (mut env, _) = reset_default(false);
        env.state = BalancerState::default(); // exactly upright, at rest
        let (dv, dp) = env.accelerations(&env.state.clone(), 0.0);
        assert_eq!(dv, 0.0);
        assert_eq!(dp, 0.0);
        // and the state stays put under zero torque
        for _ in 0..100 {
            env.substep(0.0, 0.0);
        }
        assert_eq!(env.state.pitch, 0.0);
        assert_eq!(env.state.speed, 0.0);
    }

    /// The upright equilibrium must be unstable: linearize pitch dynamics by
    /// finite differences and check the 2x2 companion matrix
    /// [[0, 1], [A, B]] has a positive eigenvalue (B + sqrt(B^2 + 4A)) / 2.
    #[test]
    fn upright_equilibrium_is_unstable() {
        let (env, _) = reset_default(false);
        let h = 1e-6;
        let pdd = |pitch: f64, pitch_rate: f64| {
            let state = BalancerState {
                pitch,
                pitch_rate,
                ..BalancerState::default()
            };
            env.accelerations(&state, 0.0).1
        };
        let a = (pdd(h, 0.0) - pdd(-h, 0.0)) / (2.0 * h);
        let b = (pdd(0.0, h) - pdd(0.0, -h)) / (2.0 * h);
        assert!(a > 0.0, "gravity must destabilize pitch (A = {a})");
        let lambda = (b + (b * b + 4.0 * a).sqrt()) / 2.0;
        assert!(lambda > 1.0, "divergence rate {lambda} too slow to matter");
    }

    #[test]
    fn perturbed_upright_falls_without_control() {
        let (mut env, _) = reset_default(false);
        env.state = BalancerState {
            pitch: 0.01,
            ..BalancerState::default()
        };
        for _ in 0..60 {
            env.step(&[0.0, 0.0]).unwrap();
        }
        assert!(env.state.pitch > 0.5, "should have toppled, pitch = {}", env.state.pitch);
    }

    #[test]
    fn rests_on_prop_stop_without_terminating() {
        let (mut env, _) = reset_default(false);
        for _ in 0..EPISODE_HORIZON {
            let out = env.step(&[0.0, 0.0]).unwrap();
            assert!(!out.terminal, "resting pose must not terminate");
            if out.truncated {
                break;
            }
        }
        let rest = env.state.pitch;
        assert!(
            (rest - PROP_STOP_PITCH).abs() < 0.1,
            "settled at pitch {rest}, expected near the prop stop"
        );
        assert!(env.state.pitch_rate.abs() < 1e-3);
        // resting still pays a little: stable but strictly worse than upright
        let r_rest = reward_stand(rest.cos(), COM_HEIGHT * (rest.cos() - PROP_STOP_PITCH.cos()));
        let r_up = reward_stand(1.0, COM_HEIGHT * (1.0 - PROP_STOP_PITCH.cos()));
        assert!(r_rest > 0.05);
        assert!(r_up > 3.0 * r_rest);
    }

    #[test]
    fn forward_fall_terminates() {
        let (mut env, _) = reset_default(false);
        env.state = BalancerState {
            pitch: -1.4,
            pitch_rate: -2.0,
            ..BalancerState::default()
        };
        let mut terminated = false;
        for _ in 0..20 {
            let out = env.step(&[0.0, 0.0]).unwrap();
            if out.terminal {
                terminated = true;
                break;
            }
        }
        assert!(terminated);
    }

    #[test]
    fn torque_differential_turns_the_robot() {
        let (mut env, _) = reset_default(false);
        let h0 = env.state.heading;
        for _ in 0..20 {
            env.step(&[-0.5, 0.5]).unwrap();
        }
        assert!(env.state.heading > h0 + 0.1, "left-back/right-forward should turn left");
    }

    #[test]
    fn nav_reward_is_gated_while_resting() {
        let (mut env, _) = reset_default(true);
        // resting on the stop: the stand factor is small, so the whole nav
        // reward must stay small no matter the goal terms. The start pitch is
        // at least PROP_STOP_PITCH - 0.05 and only grows under zero torque.
        let out = env.step(&[0.0, 0.0]).unwrap();
        let floor = PROP_STOP_PITCH - 0.06;
        let r_rest_max =
            reward_stand(floor.cos(), COM_HEIGHT * (floor.cos() - PROP_STOP_PITCH.cos())) * 3.0;
        assert!(out.reward <= r_rest_max + 1e-9, "reward {} > {}", out.reward, r_rest_max);
    }

    #[test]
    fn goal_radius_mean_and_bearing_uniformity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 1_000_000usize;
        let mut sum_r = 0.0;
        let mut bins = [0u32; 36];
        for _ in 0..n {
            let (gx, gy) = sample_goal(&mut rng);
            let r = (gx * gx + gy * gy).sqrt();
            assert!(r > 0.0);
            sum_r += r;
            let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
            let bin = ((angle / std::f64::consts::TAU * 36.0) as usize).min(35);
            bins[bin] += 1;
        }
        let mean = sum_r / n as f64;
        assert!(
            (mean - GOAL_RADIUS_MEAN).abs() < 0.005,
            "radius mean {mean}"
        );
        // chi-square over 36 bins; 66.6 is the 0.1% tail for 35 dof
        let expected = n as f64 / 36.0;
        let chi2: f64 = bins
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 66.6, "bearing chi-square {chi2}");
    }

    #[test]
    fn goal_features_are_body_frame() {
        let (mut env, _) = reset_default(true);
        env.state.px = 1.0;
        env.state.py = 2.0;
        env.state.heading = std::f64::consts::FRAC_PI_2;
        env.goal = (1.0, 5.0); // straight ahead, 3 m
        let f = env.task_features();
        assert!((f[0] - 3.0).abs() < 1e-12);
        assert!(f[1].abs() < 1e-12);
    }

    #[test]
    fn trajectories_are_bit_deterministic() {
        let run = || {
            let mut env = BalancerWorld::new(true, DynamicsVariant::Weakened);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut log = env.reset(&mut rng);
            for t in 0..80 {
                let a = [(t as f64 * 0.11).sin(), (t as f64 * 0.23).cos()];
                let out = env.step(&a).unwrap();
                log.extend(out.observation);
                log.push(out.reward);
                if out.terminal || out.truncated {
                    break;
                }
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn variants_step_without_blowing_up() {
        for variant in [
            DynamicsVariant::None,
            DynamicsVariant::Bumpy,
            DynamicsVariant::Icy,
            DynamicsVariant::Weakened,
            DynamicsVariant::Sloped,
            DynamicsVariant::LowGravity,
        ] {
            let mut env = BalancerWorld::new(true, variant);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            env.reset(&mut rng);
            for t in 0..100 {
                let a = [(t as f64 * 0.19).sin(), (t as f64 * 0.29).cos()];
                let out = env.step(&a).unwrap();
                assert!(out.observation.iter().all(|v| v.is_finite()));
                assert!(out.reward.is_finite());
                if out.terminal || out.truncated {
                    break;
                }
            }
        }
    }
}
