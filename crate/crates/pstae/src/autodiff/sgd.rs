//! Plain SGD with a single step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamSet, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            decay_factor: 0.1,
            decay_epoch: 10,
            epochs: 15,
            batch_size: 8,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(AutodiffError::Config("learning_rate must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(AutodiffError::Config("decay_factor must be in (0, 1]".into()));
        }
        if self.decay_epoch == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(AutodiffError::Config(
                "decay_epoch, epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at a 1-based epoch: one decay step once `decay_epoch` is reached.
pub fn effective_lr(cfg: &SgdConfig, epoch: usize) -> f64 {
    if epoch >= cfg.decay_epoch {
        cfg.learning_rate * cfg.decay_factor
    } else {
        cfg.learning_rate
    }
}

/// `p <- p - lr(epoch) * grad` for every parameter in the set; grads cleared.
///
/// Stepping a frozen parameter or one without a populated gradient is a
/// usage error.
pub fn sgd_step(params: &mut ParamSet, cfg: &SgdConfig, epoch: usize) -> Result<()> {
    let lr = effective_lr(cfg, epoch);
    for p in params.iter() {
        if p.frozen {
            return Err(AutodiffError::Usage(format!(
                "attempted sgd_step on frozen parameter {:?}",
                p.name
            )));
        }
        if p.grad.is_none() {
            return Err(AutodiffError::Usage(format!(
                "parameter {:?} has no gradient; run backward first",
                p.name
            )));
        }
    }
    for p in params.iter_mut() {
        let grad = p.grad.take().expect("checked above");
        let data = p.value.data_mut();
        for (v, g) in data.iter_mut().zip(&grad) {
            *v -= lr * g;
        }
    }
    Ok(())
}
