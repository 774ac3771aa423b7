//! Reward compositors for the jumping and navigation tasks.

/// Per-term breakdown of the jump reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpComponents {
    pub forward: f64,
    pub orientation: f64,
    pub joint_velocity: f64,
    pub hurdle: f64,
}

/// Jump reward: 0.7 * forward + 0.05 * orientation + 0.15 * joint velocity
/// + 0.1 * hurdles passed, with forward = 1 if v_x > 0.5 else 0.007,
/// orientation = exp(-2 |q_root|), joint velocity = exp(-0.1 |qdot|).
pub fn reward_jump(
    forward_velocity: f64,
    root_orientation_norm: f64,
    joint_velocity_norm: f64,
    hurdles_passed: u32,
) -> (f64, JumpComponents) {
    let c = JumpComponents {
        forward: if forward_velocity > 0.5 { 1.0 } else { 0.007 },
        orientation: (-2.0 * root_orientation_norm).exp(),
        joint_velocity: (-0.1 * joint_velocity_norm).exp(),
        hurdle: f64::from(hurdles_passed),
    };
    let total = 0.7 * c.forward + 0.05 * c.orientation + 0.15 * c.joint_velocity + 0.1 * c.hurdle;
    (total, c)
}

/// Upright term: squared normalized cosine between the body-forward vector
/// and world-up.
pub fn reward_upright(cos_up: f64) -> f64 {
    let n = 0.5 * cos_up + 0.5;
    n * n
}

/// Standing reward: upright term plus exp(height) - 1, height clamped >= 0 so
/// the total stays non-negative.
pub fn reward_stand(cos_up: f64, height: f64) -> f64 {
    reward_upright(cos_up) + (height.max(0.0).exp() - 1.0)
}

/// Progress bonus toward the goal.
pub fn reward_distance(curr_distance: f64, prev_distance: f64) -> f64 {
    if curr_distance <= 0.01 {
        1.0
    } else if curr_distance < prev_distance {
        0.5
    } else {
        0.0
    }
}

/// Gated navigation reward: r_stand * (1 + r_facing + r_distance). The stand
/// term multiplies everything, so nothing is earned while fallen.
pub fn reward_biped_nav(
    r_stand: f64,
    cos_facing: f64,
    curr_distance: f64,
    prev_distance: f64,
) -> f64 {
    r_stand * (1.0 + reward_upright(cos_facing) + reward_distance(curr_distance, prev_distance))
}
