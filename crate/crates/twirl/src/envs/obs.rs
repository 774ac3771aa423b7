//! Three-step observation history assembly.
//!
//! Layout per MDP: task features first (goal/hurdle displacement and the
//! like), then the three per-step feature frames newest first. The history
//! shifts by exactly one frame per control step; reset pads by repeating the
//! first frame.

use std::collections::VecDeque;

pub const HISTORY_LEN: usize = 3;

#[derive(Debug, Clone)]
pub struct ObservationAssembler {
    frame_dim: usize,
    task_dim: usize,
    history: VecDeque<Vec<f64>>,
}

impl ObservationAssembler {
    pub fn new(frame_dim: usize, task_dim: usize) -> Self {
        ObservationAssembler {
            frame_dim,
            task_dim,
            history: VecDeque::with_capacity(HISTORY_LEN),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.task_dim + HISTORY_LEN * self.frame_dim
    }

    pub fn reset(&mut self, first_frame: Vec<f64>) {
        assert_eq!(first_frame.len(), self.frame_dim);
        self.history.clear();
        for _ in 0..HISTORY_LEN {
            self.history.push_front(first_frame.clone());
        }
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        assert_eq!(frame.len(), self.frame_dim);
        self.history.pop_back();
        self.history.push_front(frame);
    }

    pub fn assemble(&self, task_features: &[f64]) -> Vec<f64> {
        assert_eq!(task_features.len(), self.task_dim);
        assert_eq!(self.history.len(), HISTORY_LEN, "assembler not reset");
        let mut out = Vec::with_capacity(self.obs_dim());
        out.extend_from_slice(task_features);
        for frame in &self.history {
            out.extend_from_slice(frame);
        }
        out
    }
}
