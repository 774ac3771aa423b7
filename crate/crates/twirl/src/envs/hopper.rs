//! Planar one-legged hopper on a hurdle course.
//!
//! The torso is a rigid body (x, z, pitch) with a two-segment leg (hip, knee)
//! driven by PD actuators toward a nominal crouch plus filtered policy
//! offsets. Ground contact is a penalty spring-damper at the foot with a
//! friction-cone clamp. Leg mass is neglected: joint torques do not back-drive
//! the torso, which instead carries a weak passive attitude stabilizer.
//!
//! Hurdles are forbidden boxes on the ground; touching one ends the episode.
//! The target task draws hurdle spacing per episode and observes the
//! displacement to the next hurdle; the source analog uses fixed spacing and
//! is blind to it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::obs::ObservationAssembler;
use super::pd::PdActuator;
use super::rewards::reward_jump;
use super::variant::{apply_dynamics_variant, DynamicsParams, DynamicsVariant};
use super::{
    ButterworthFilter, Env, StepOutcome, TaskMetrics, EPISODE_HORIZON, PHYSICS_DT,
    SUBSTEPS_PER_CONTROL,
};

pub const HURDLE_HEIGHT: f64 = 0.01;
pub const HURDLE_HALF_WIDTH: f64 = 0.1;
/// A hurdle counts as passed (and the observed hurdle advances) once the
/// torso is this far beyond its center.
pub const HURDLE_PASS_MARGIN: f64 = 0.4;

const BODY_MASS: f64 = 5.0;
const BODY_INERTIA: f64 = 0.15;
const BODY_RADIUS: f64 = 0.15;
const THIGH_LEN: f64 = 0.22;
const SHANK_LEN: f64 = 0.22;
// straight vertical stance: both joint jacobian columns are horizontal there,
// so gravity applies no joint torque and the stance is an exact equilibrium
const HIP_NOMINAL: f64 = 0.0;
const KNEE_NOMINAL: f64 = 0.0;
const OFFSET_RANGE: f64 = 1.2;
const TORQUE_LIMIT: f64 = 30.0;
const JOINT_INERTIA: [f64; 2] = [0.05, 0.03];
const JOINT_DAMPING: f64 = 0.1;
const JOINT_LIMITS: [(f64, f64); 2] = [(-1.3, 1.3), (-2.4, 0.1)];
const STOP_STIFFNESS: f64 = 300.0;
const STOP_DAMPING: f64 = 5.0;
const CONTACT_STIFFNESS: f64 = 6000.0;
const CONTACT_DAMPING: f64 = 80.0;
// kept low enough that the explicit substep stays stable against the pitch
// inertia through the foot lever arm (c l^2 dt / I well under 2)
const TANGENT_DAMPING: f64 = 80.0;
// must exceed the destabilizing contact-lever stiffness m g l (~21 N m/rad)
const PITCH_STIFFNESS: f64 = 60.0;
const PITCH_DAMPING: f64 = 6.0;
const PITCH_LIMIT: f64 = 1.2;

/// Source-course shaping: reward extra body height near the hurdle.
pub const APEX_SHAPING_RANGE: f64 = 0.5;
pub const APEX_SHAPING_WEIGHT: f64 = 0.5;

const FRAME_DIM: usize = 10;
const FIRST_HURDLE_X: f64 = 2.5;
const SOURCE_SPACING: f64 = 2.0;
const TARGET_SPACING: (f64, f64) = (1.6, 2.6);
const N_HURDLES: usize = 60;

/// Hurdle center positions for one episode.
#[derive(Debug, Clone)]
pub struct HurdleCourse {
    pub centers: Vec<f64>,
}

impl HurdleCourse {
    pub fn fixed_spacing() -> Self {
        let centers = (0..N_HURDLES)
            .map(|i| FIRST_HURDLE_X + i as f64 * SOURCE_SPACING)
            .collect();
        HurdleCourse { centers }
    }

    pub fn random_spacing(rng: &mut ChaCha8Rng) -> Self {
        let mut centers = Vec::with_capacity(N_HURDLES);
        let mut x = FIRST_HURDLE_X;
        for _ in 0..N_HURDLES {
            centers.push(x);
            x += rng.gen_range(TARGET_SPACING.0..TARGET_SPACING.1);
        }
        HurdleCourse { centers }
    }

    pub fn passed_count(&self, body_x: f64) -> u32 {
        self.centers
            .iter()
            .filter(|&&c| c + HURDLE_PASS_MARGIN <= body_x)
            .count() as u32
    }

    /// Center of the hurdle currently ahead (the first one not yet passed).
    pub fn current_center(&self, body_x: f64) -> f64 {
        self.centers
            .iter()
            .copied()
            .find(|&c| c + HURDLE_PASS_MARGIN > body_x)
            .unwrap_or_else(|| *self.centers.last().unwrap())
    }

    /// Whether a point at (px, pz) is inside a hurdle box (ground-relative z).
    fn hits(&self, px: f64, pz_above_ground: f64) -> bool {
        pz_above_ground < HURDLE_HEIGHT
            && self
                .centers
                .iter()
                .any(|&c| (px - c).abs() < HURDLE_HALF_WIDTH)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BodyState {
    x: f64,
    z: f64,
    pitch: f64,
    q: [f64; 2],
    vx: f64,
    vz: f64,
    pitch_rate: f64,
    qd: [f64; 2],
}

pub struct HopperWorld {
    observe_hurdles: bool,
    variant: DynamicsVariant,
    params: DynamicsParams,
    actuators: [PdActuator; 2],
    filter: ButterworthFilter,
    assembler: ObservationAssembler,
    course: HurdleCourse,
    state: BodyState,
    steps: usize,
    done: bool,
    hurdles_passed: u32,
}

impl HopperWorld {
    pub fn new(observe_hurdles: bool, variant: DynamicsVariant) -> Self {
        let task_dim = if observe_hurdles { 2 } else { 0 };
        HopperWorld {
            observe_hurdles,
            variant,
            params: DynamicsParams::defaults(2),
            actuators: [
                PdActuator::new(HIP_NOMINAL, -OFFSET_RANGE, OFFSET_RANGE, TORQUE_LIMIT),
                PdActuator::new(KNEE_NOMINAL, -OFFSET_RANGE, OFFSET_RANGE, TORQUE_LIMIT),
            ],
            filter: ButterworthFilter::action_filter(2),
            assembler: ObservationAssembler::new(FRAME_DIM, task_dim),
            course: HurdleCourse::fixed_spacing(),
            state: BodyState::default(),
            steps: 0,
            done: false,
            hurdles_passed: 0,
        }
    }

    /// Places the body for a scripted trajectory: joints at the nominal pose,
    /// level pitch, zero angular rates. Used by scripted-controller oracles
    /// that bypass the PD reaching motion.
    pub fn script_body(&mut self, x: f64, z: f64, vx: f64, vz: f64) {
        self.state = BodyState {
            x,
            z,
            q: [HIP_NOMINAL, KNEE_NOMINAL],
            vx,
            vz,
            ..BodyState::default()
        };
    }

    /// (x, z, vx, vz) of the body, for scripted-trajectory checks.
    pub fn body_state(&self) -> (f64, f64, f64, f64) {
        (self.state.x, self.state.z, self.state.vx, self.state.vz)
    }

    /// Foot offset from the torso in the body frame.
    fn foot_body(q: [f64; 2]) -> (f64, f64) {
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        (
            THIGH_LEN * s1 + SHANK_LEN * s12,
            -(THIGH_LEN * c1 + SHANK_LEN * c12),
        )
    }

    fn foot_world(&self) -> (f64, f64) {
        let (bx, bz) = Self::foot_body(self.state.q);
        let (sp, cp) = self.state.pitch.sin_cos();
        (
            self.state.x + cp * bx - sp * bz,
            self.state.z + sp * bx + cp * bz,
        )
    }

    /// Standing torso height above ground at the nominal crouch, with static
    /// contact-spring compression.
    fn stand_height(&self) -> f64 {
        let (_, fz) = Self::foot_body([HIP_NOMINAL, KNEE_NOMINAL]);
        -fz - BODY_MASS * self.params.gravity / CONTACT_STIFFNESS
    }

    fn substep(&mut self, targets: [f64; 2]) {
        let s = &self.state;
        let (sp, cp) = s.pitch.sin_cos();
        let (fbx, fbz) = Self::foot_body(s.q);
        let foot = (s.x + cp * fbx - sp * fbz, s.z + sp * fbx + cp * fbz);

        // world-frame jacobian columns for the two joints
        let (s1, c1) = s.q[0].sin_cos();
        let (s12, c12) = (s.q[0] + s.q[1]).sin_cos();
        let j1b = (THIGH_LEN * c1 + SHANK_LEN * c12, THIGH_LEN * s1 + SHANK_LEN * s12);
        let j2b = (SHANK_LEN * c12, SHANK_LEN * s12);
        let rot = |(x, z): (f64, f64)| (cp * x - sp * z, sp * x + cp * z);
        let j1 = rot(j1b);
        let j2 = rot(j2b);
        // d foot / d pitch
        let jp = (-sp * fbx - cp * fbz, cp * fbx - sp * fbz);

        let foot_vel = (
            s.vx + s.pitch_rate * jp.0 + j1.0 * s.qd[0] + j2.0 * s.qd[1],
            s.vz + s.pitch_rate * jp.1 + j1.1 * s.qd[0] + j2.1 * s.qd[1],
        );

        // penalty contact at the foot
        let penetration = self.params.ground_height(foot.0) - foot.1;
        let mut force = (0.0, 0.0);
        if penetration > 0.0 {
            let slope = self.params.ground_slope(foot.0);
            let inv = 1.0 / (1.0 + slope * slope).sqrt();
            let n = (-slope * inv, inv);
            let t = (inv, slope * inv);
            let vn = foot_vel.0 * n.0 + foot_vel.1 * n.1;
            let vt = foot_vel.0 * t.0 + foot_vel.1 * t.1;
            let fn_mag = (CONTACT_STIFFNESS * penetration - CONTACT_DAMPING * vn).max(0.0);
            let ft_cap = self.params.friction * fn_mag;
            let ft_mag = (-TANGENT_DAMPING * vt).clamp(-ft_cap, ft_cap);
            force = (fn_mag * n.0 + ft_mag * t.0, fn_mag * n.1 + ft_mag * t.1);
        }

        let mut qdd = [0.0; 2];
        for i in 0..2 {
            let tau_pd = self.actuators[i].pd_torque(
                targets[i],
                s.q[i],
                s.qd[i],
                self.params.motor_strength[i],
            );
            let (lo, hi) = JOINT_LIMITS[i];
            let tau_stop = if s.q[i] < lo {
                STOP_STIFFNESS * (lo - s.q[i]) - STOP_DAMPING * s.qd[i]
            } else if s.q[i] > hi {
                STOP_STIFFNESS * (hi - s.q[i]) - STOP_DAMPING * s.qd[i]
            } else {
                0.0
            };
            // contact acts on the body only; feeding it back into the joints
            // as well double-counts its work (the joint inertias are not a
            // consistent Lagrangian metric) and pumps energy into limit cycles
            qdd[i] = (tau_pd + tau_stop - JOINT_DAMPING * s.qd[i]) / JOINT_INERTIA[i];
        }

        let r = (foot.0 - s.x, foot.1 - s.z);
        let contact_torque = r.0 * force.1 - r.1 * force.0;
        let pitch_acc = (contact_torque - PITCH_STIFFNESS * s.pitch
            - PITCH_DAMPING * s.pitch_rate)
            / BODY_INERTIA;
        let ax = force.0 / BODY_MASS;
        let az = force.1 / BODY_MASS - self.params.gravity;

        // semi-implicit euler: velocities first, then positions
        let st = &mut self.state;
        st.vx += ax * PHYSICS_DT;
        st.vz += az * PHYSICS_DT;
        st.pitch_rate += pitch_acc * PHYSICS_DT;
        for i in 0..2 {
            st.qd[i] += qdd[i] * PHYSICS_DT;
        }
        st.x += st.vx * PHYSICS_DT;
        st.z += st.vz * PHYSICS_DT;
        st.pitch += st.pitch_rate * PHYSICS_DT;
        for i in 0..2 {
            st.q[i] += st.qd[i] * PHYSICS_DT;
        }
    }

    fn check_termination(&self) -> bool {
        let s = &self.state;
        let ground = self.params.ground_height(s.x);
        let foot = self.foot_world();
        let foot_ground = self.params.ground_height(foot.0);
        s.z - ground < BODY_RADIUS
            || s.pitch.abs() > PITCH_LIMIT
            || self.course.hits(foot.0, foot.1 - foot_ground)
            || self.course.hits(s.x, s.z - BODY_RADIUS - ground)
            || !(s.x.is_finite() && s.z.is_finite() && s.pitch.is_finite())
    }

    fn frame(&self) -> Vec<f64> {
        let s = &self.state;
        let ground = self.params.ground_height(s.x);
        vec![
            s.z - ground,
            s.pitch.sin(),
            s.pitch.cos(),
            s.q[0],
            s.q[1],
            s.vx,
            s.vz,
            s.pitch_rate,
            s.qd[0],
            s.qd[1],
        ]
    }

    fn task_features(&self) -> Vec<f64> {
        if !self.observe_hurdles {
            return vec![];
        }
        let c = self.course.current_center(self.state.x);
        let top = self.params.ground_height(c) + HURDLE_HEIGHT;
        vec![c - self.state.x, top - self.state.z]
    }
}

impl Env for HopperWorld {
    fn obs_dim(&self) -> usize {
        self.assembler.obs_dim()
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn mdp_id(&self) -> &str {
        if self.observe_hurdles {
            "hopper_hurdles"
        } else {
            "hopper_source"
        }
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.params = apply_dynamics_variant(&DynamicsParams::defaults(2), self.variant, rng);
        self.course = if self.observe_hurdles {
            HurdleCourse::random_spacing(rng)
        } else {
            HurdleCourse::fixed_spacing()
        };
        self.filter.reset();
        self.steps = 0;
        self.done = false;
        self.hurdles_passed = 0;
        self.state = BodyState {
            x: 0.0,
            z: self.params.ground_height(0.0) + self.stand_height(),
            q: [
                HIP_NOMINAL + rng.gen_range(-0.01..0.01),
                KNEE_NOMINAL + rng.gen_range(-0.01..0.01),
            ],
            ..BodyState::default()
        };
        self.assembler.reset(self.frame());
        self.assembler.assemble(&self.task_features())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::config("step called on a finished episode"));
        }
        if action.len() != 2 {
            return Err(Error::config(format!(
                "hopper expects 2 actions, got {}",
                action.len()
            )));
        }
        let clamped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let filtered = self.filter.filter_action(&clamped);
        let targets = [
            self.actuators[0].target(filtered[0] * OFFSET_RANGE),
            self.actuators[1].target(filtered[1] * OFFSET_RANGE),
        ];
        for _ in 0..SUBSTEPS_PER_CONTROL {
            self.substep(targets);
        }
        self.hurdles_passed = self.course.passed_count(self.state.x);
        let terminal = self.check_termination();
        self.steps += 1;
        let truncated = !terminal && self.steps >= EPISODE_HORIZON;
        self.done = terminal || truncated;

        let joint_speed =
            (self.state.qd[0].powi(2) + self.state.qd[1].powi(2)).sqrt();
        let (mut reward, _) = reward_jump(
            self.state.vx,
            self.state.pitch.abs(),
            joint_speed,
            self.hurdles_passed,
        );
        if !self.observe_hurdles {
            // dense apex shaping for the source course: extra height pays off
            // within half a metre of the upcoming hurdle
            let c = self.course.current_center(self.state.x);
            if (self.state.x - c).abs() < APEX_SHAPING_RANGE {
                let ground = self.params.ground_height(self.state.x);
                let lift = (self.state.z - ground - self.stand_height()).max(0.0);
                reward += APEX_SHAPING_WEIGHT * lift;
            }
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
            hurdles_cleared: self.hurdles_passed,
            ..TaskMetrics::default()
        }
    }
}
