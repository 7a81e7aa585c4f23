use serde::{Deserialize, Serialize};

/// Learning-rate schedule applied per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Half-cosine decay from the base rate to zero over the whole run.
    Cosine,
    Constant,
}

impl Schedule {
    pub fn lr(self, step: usize, total_steps: usize, base_lr: f64) -> f64 {
        match self {
            Schedule::Cosine => cosine_lr(step, total_steps, base_lr),
            Schedule::Constant => base_lr,
        }
    }
}

/// `base_lr · ½ · (1 + cos(π · step / total_steps))`, no warmup or restarts.
///
/// Steps past the end are clamped to the final value (zero).
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    let total = total_steps.max(1);
    let step = if step > total {
        log::warn!("cosine_lr: step {step} exceeds total_steps {total}; clamping");
        total
    } else {
        step
    };
    if step == total {
        return 0.0;
    }
    let progress = step as f64 / total as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
