use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::NeuralError;

/// Slanted triangular learning rate: a linear rise from `lr_max / ratio` to
/// `lr_max` over the first `cut = floor(cut_frac * total_steps)` steps, then
/// a linear fall back to `lr_max / ratio` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub total_steps: usize,
    pub lr_max: f64,
    pub cut_frac: f64,
    pub ratio: f64,
}

impl TrainSchedule {
    pub fn new(total_steps: usize, lr_max: f64) -> Self {
        TrainSchedule {
            total_steps,
            lr_max,
            cut_frac: 0.1,
            ratio: 32.0,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.cut_frac > 0.0 && self.cut_frac < 1.0) {
            return Err(NeuralError::Config(format!(
                "cut_frac {} is outside (0, 1)",
                self.cut_frac
            )));
        }
        if !(self.ratio > 1.0) {
            return Err(NeuralError::Config(format!("ratio {} must exceed 1", self.ratio)));
        }
        if !(self.lr_max >= 0.0) {
            return Err(NeuralError::Config(format!("lr_max {} is negative", self.lr_max)));
        }
        Ok(())
    }

    pub fn cut(&self) -> usize {
        (self.cut_frac * self.total_steps as f64).floor() as usize
    }

    pub fn rate(&self, step: usize) -> f64 {
        stlr(step, self)
    }
}

/// Learning rate at `step`; steps past the end use the final rate.
pub fn stlr(step: usize, schedule: &TrainSchedule) -> f64 {
    let total = schedule.total_steps;
    let t = step.min(total);
    let cut = schedule.cut();
    let p = if t < cut {
        t as f64 / cut as f64
    } else if total == cut {
        1.0
    } else {
        1.0 - (t - cut) as f64 / (total - cut) as f64
    };
    schedule.lr_max * (1.0 + p * (schedule.ratio - 1.0)) / schedule.ratio
}

/// Randomized truncation length: `bptt` with probability 0.95, otherwise
/// `bptt / 2`, plus Gaussian jitter with standard deviation 5, clamped to
/// `[min(5, 2 * bptt), 2 * bptt]`.
pub fn sample_window_length<R: Rng>(bptt: usize, rng: &mut R) -> usize {
    let base = if rng.random::<f64>() < 0.95 {
        bptt as f64
    } else {
        (bptt / 2).max(1) as f64
    };
    let jitter = Normal::new(0.0, 5.0).expect("valid normal").sample(rng);
    let upper = 2 * bptt;
    let lower = 5.min(upper).max(1);
    ((base + jitter).round().max(lower as f64) as usize).min(upper)
}
