use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use crate::error::Result;

/// Adam (no weight decay) with a step schedule that halves the learning rate
/// every `halve_every` epochs.
pub struct Adam {
    inner: AdamW,
    base_lr: f64,
    halve_every: usize,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64, halve_every: usize) -> Result<Self> {
        let params = ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        };
        Ok(Self {
            inner: AdamW::new(vars, params)?,
            base_lr: lr,
            halve_every: halve_every.max(1),
        })
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.base_lr * 0.5f64.powi((epoch / self.halve_every) as i32)
    }

    pub fn start_epoch(&mut self, epoch: usize) {
        let lr = self.lr_for_epoch(epoch);
        self.inner.set_learning_rate(lr);
    }

    pub fn step(&mut self, loss: &Tensor) -> Result<()> {
        self.inner.backward_step(loss)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_schedule() {
        let opt = Adam::new(vec![], 1e-4, 10).unwrap();
        assert_eq!(opt.lr_for_epoch(0), 1e-4);
        assert_eq!(opt.lr_for_epoch(9), 1e-4);
        assert_eq!(opt.lr_for_epoch(10), 5e-5);
        assert_eq!(opt.lr_for_epoch(25), 2.5e-5);
    }
}
