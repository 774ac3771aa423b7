//! Position-derivative joint actuator: tau = Kp (q* - q) - Kd qdot, where
//! q* is a nominal pose plus a clamped policy offset.

#[derive(Debug, Clone)]
pub struct PdActuator {
    /// torque / rad
    pub kp: f64,
    /// torque * s / rad
    pub kd: f64,
    pub torque_limit: f64,
    pub nominal: f64,
    pub offset_min: f64,
    pub offset_max: f64,
}

impl PdActuator {
    pub fn new(nominal: f64, offset_min: f64, offset_max: f64, torque_limit: f64) -> Self {
        PdActuator {
            kp: 60.0,
            kd: 3.0,
            torque_limit,
            nominal,
            offset_min,
            offset_max,
        }
    }

    /// Commanded target angle for a policy offset.
    pub fn target(&self, offset: f64) -> f64 {
        self.nominal + offset.clamp(self.offset_min, self.offset_max)
    }

    /// PD torque toward `q_target`, clamped to the torque limit scaled by the
    /// motor strength multiplier.
    pub fn pd_torque(&self, q_target: f64, q: f64, q_dot: f64, strength: f64) -> f64 {
        let tau = self.kp * (q_target - q) - self.kd * q_dot;
        let limit = self.torque_limit * strength;
        tau.clamp(-limit, limit)
    }
}
