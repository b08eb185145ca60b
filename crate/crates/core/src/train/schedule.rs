/// Reduce-on-plateau learning-rate rule with an absolute improvement threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    factor: f64,
    patience: usize,
    threshold: f64,
    lr_min: f64,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr0: f64, factor: f64, patience: usize, threshold: f64, lr_min: f64) -> Self {
        PlateauScheduler {
            factor,
            patience,
            threshold,
            lr_min,
            lr: lr0,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }

    /// Feeds one validation loss and returns the learning rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.lr_min);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Stops once the best validation loss has not decreased for `patience` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
            epoch: 0,
        }
    }

    /// 1-based epoch of the best loss seen so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Returns `true` when training should stop after this epoch.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.epoch += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(self.epoch);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        self.bad_epochs >= self.patience
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> PlateauScheduler {
        PlateauScheduler::new(1e-3, 0.5, 5, 1e-4, 1e-7)
    }

    #[test]
    fn sub_threshold_gains_halve_after_epoch_six() {
        let mut s = sched();
        let lrs: Vec<f64> = [1.0, 0.99995, 0.99992, 0.99991, 0.99990, 0.99990]
            .iter()
            .map(|&l| s.observe(l))
            .collect();
        assert_eq!(lrs, vec![1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 5e-4]);
    }

    #[test]
    fn real_improvement_resets_counter() {
        let mut s = sched();
        let losses = [1.0, 1.0, 0.99, 0.99, 0.99, 0.99, 0.99];
        let lrs: Vec<f64> = losses.iter().map(|&l| s.observe(l)).collect();
        assert!(lrs.iter().all(|&lr| lr == 1e-3), "{lrs:?}");
        assert_eq!(s.observe(0.99), 5e-4);
    }

    #[test]
    fn floors_at_minimum() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 5, 1e-4, 1e-7);
        let mut lr = 0.0;
        for _ in 0..1000 {
            lr = s.observe(1.0);
        }
        assert_eq!(lr, 1e-7);
        assert_eq!(s.observe(1.0), 1e-7);
    }

    #[test]
    fn stopper_waits_on_strict_decrease() {
        let mut e = EarlyStopper::new(10);
        for k in 0..500 {
            assert!(!e.observe(1.0 / (k + 1) as f64));
        }
    }

    #[test]
    fn flat_losses_stop_at_epoch_eleven() {
        let mut e = EarlyStopper::new(10);
        let stopped_at = (1..=20).find(|_| e.observe(0.5));
        assert_eq!(stopped_at, Some(11));
        assert_eq!(e.best_epoch(), Some(1));
    }

    #[test]
    fn late_improvement_resets_stopper() {
        let mut e = EarlyStopper::new(10);
        assert!(!e.observe(1.0));
        for _ in 0..9 {
            assert!(!e.observe(1.0));
        }
        assert!(!e.observe(0.9));
        for _ in 0..9 {
            assert!(!e.observe(0.95));
        }
        assert!(e.observe(0.95));
        assert_eq!(e.best_epoch(), Some(11));
    }
}
