use serde::{Deserialize, Serialize};

/// Halve the learning rate when the monitored loss has not strictly improved
/// for `patience` consecutive epochs, never going below `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl Plateau {
    pub fn new(lr: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            lr,
            factor: 0.5,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Record an epoch's loss and return the learning rate for the next one.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Linear warm-up from `start_factor * lr` over `epochs` epochs (0-based
/// epoch `e` runs at `lr * (start + (1 - start) * e / epochs)`), then
/// plateau scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub start_factor: f64,
    pub plateau: Plateau,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl LrSchedule {
    pub fn plateau(lr: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            base_lr: lr,
            warmup_epochs: 0,
            start_factor: 1.0,
            plateau: Plateau::new(lr, patience, min_lr),
            epoch: 0,
        }
    }

    pub fn with_warmup(mut self, epochs: usize, start_factor: f64) -> Self {
        self.warmup_epochs = epochs;
        self.start_factor = start_factor;
        self
    }

    /// Learning rate for 0-based epoch `e` of the warm-up.
    pub fn warmup_lr(&self, e: usize) -> f64 {
        let frac = e as f64 / self.warmup_epochs as f64;
        self.base_lr * (self.start_factor + (1.0 - self.start_factor) * frac)
    }

    /// Learning rate for the current epoch.
    pub fn lr(&self) -> f64 {
        if self.epoch < self.warmup_epochs {
            self.warmup_lr(self.epoch)
        } else {
            self.plateau.lr
        }
    }

    /// Finish the current epoch with its validation loss. Warm-up epochs do
    /// not feed the plateau rule.
    pub fn end_epoch(&mut self, val_loss: f64) -> f64 {
        if self.epoch >= self.warmup_epochs {
            self.plateau.observe(val_loss);
        }
        self.epoch += 1;
        self.lr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_halves_after_patience_bad_epochs() {
        let mut p = Plateau::new(1.0, 2, 1.0 / 64.0);
        assert_eq!(p.observe(5.0), 1.0);
        assert_eq!(p.observe(5.0), 1.0); // equal is not an improvement
        assert_eq!(p.observe(6.0), 0.5);
        assert_eq!(p.bad_epochs, 0);
        assert_eq!(p.observe(4.0), 0.5);
        for _ in 0..20 {
            p.observe(10.0);
        }
        assert_eq!(p.lr, 1.0 / 64.0);
    }

    #[test]
    fn warmup_endpoints() {
        let s = LrSchedule::plateau(1e-3, 5, 1e-3 / 64.0).with_warmup(20, 0.001);
        assert!((s.lr() - 1e-6).abs() < 1e-18);
        assert!((s.warmup_lr(10) - 1e-3 * (0.001 + 0.999 * 0.5)).abs() < 1e-15);
        let mut s = s;
        for e in 0..20 {
            assert!((s.lr() - s.warmup_lr(e)).abs() < 1e-18);
            s.end_epoch(1.0);
        }
        assert_eq!(s.lr(), 1e-3);
        assert_eq!(s.plateau.best, f64::INFINITY);
    }

    #[test]
    fn warmup_is_monotone() {
        let s = LrSchedule::plateau(0.5, 5, 0.0).with_warmup(20, 0.001);
        for e in 1..20 {
            assert!(s.warmup_lr(e) > s.warmup_lr(e - 1));
        }
        assert!(s.warmup_lr(19) < 0.5);
    }
}
