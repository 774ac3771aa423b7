//! Second-order low-pass Butterworth action filter (4 Hz cutoff at the
//! 20 Hz control rate), bilinear transform with frequency prewarping.

/// Biquad coefficients plus per-channel state (transposed direct form II).
#[derive(Debug, Clone)]
pub struct ButterworthFilter {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
    /// (s1, s2) per channel; `None` until primed by the first sample.
    state: Vec<Option<(f64, f64)>>,
}

pub const FILTER_CUTOFF_HZ: f64 = 4.0;
pub const CONTROL_RATE_HZ: f64 = 20.0;

impl ButterworthFilter {
    /// Low-pass Butterworth (Q = 1/sqrt(2)) for the given cutoff/sample rate.
    pub fn design(cutoff_hz: f64, sample_hz: f64, channels: usize) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * cutoff_hz / sample_hz;
        let q = std::f64::consts::FRAC_1_SQRT_2;
        let alpha = w0.sin() / (2.0 * q);
        let cos_w0 = w0.cos();
        let a0 = 1.0 + alpha;
        ButterworthFilter {
            b0: (1.0 - cos_w0) / 2.0 / a0,
            b1: (1.0 - cos_w0) / a0,
            b2: (1.0 - cos_w0) / 2.0 / a0,
            a1: -2.0 * cos_w0 / a0,
            a2: (1.0 - alpha) / a0,
            state: vec![None; channels],
        }
    }

    pub fn action_filter(channels: usize) -> Self {
        Self::design(FILTER_CUTOFF_HZ, CONTROL_RATE_HZ, channels)
    }

    pub fn channels(&self) -> usize {
        self.state.len()
    }

    pub fn reset(&mut self) {
        for s in &mut self.state {
            *s = None;
        }
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// One biquad step on a single channel. The state is primed so the first
    /// output equals the first input (steady-state init), avoiding a startup
    /// transient.
    pub fn step_channel(&mut self, ch: usize, x: f64) -> f64 {
        let (s1, s2) = self.state[ch].get_or_insert_with(|| {
            (
                (self.b1 + self.b2 - self.a1 - self.a2) * x,
                (self.b2 - self.a2) * x,
            )
        });
        let y = self.b0 * x + *s1;
        let new_s1 = self.b1 * x - self.a1 * y + *s2;
        let new_s2 = self.b2 * x - self.a2 * y;
        *s1 = new_s1;
        *s2 = new_s2;
        y
    }

    /// Filters one sample per channel.
    pub fn filter_action(&mut self, raw: &[f64]) -> Vec<f64> {
        assert_eq!(raw.len(), self.state.len(), "filter channel count mismatch");
        raw.iter()
            .enumerate()
            .map(|(ch, &x)| self.step_channel(ch, x))
            .collect()
    }
}
