use serde::{Deserialize, Serialize};

/// Divides the learning rate by `factor` once validation AUC has failed to
/// improve on its best value for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    patience: usize,
    factor: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Self {
        Self {
            patience,
            factor,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's AUC; returns the new learning rate if it changes.
    pub fn observe(&mut self, auc: f64, lr: f64) -> Option<f64> {
        if auc > self.best {
            self.best = auc;
            self.bad_epochs = 0;
            return None;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            Some(lr / self.factor)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    /// Learning rate in effect after each epoch.
    pub lrs: Vec<f64>,
    /// 1-based epochs at which a reduction fired.
    pub reductions: Vec<usize>,
}

pub fn lr_schedule(history: &[f64], lr0: f64, patience: usize, factor: f64) -> LrSchedule {
    let mut sched = PlateauScheduler::new(patience, factor);
    let mut lr = lr0;
    let mut out = LrSchedule {
        lrs: Vec::with_capacity(history.len()),
        reductions: Vec::new(),
    };
    for (i, &auc) in history.iter().enumerate() {
        if let Some(next) = sched.observe(auc, lr) {
            lr = next;
            out.reductions.push(i + 1);
        }
        out.lrs.push(lr);
    }
    out
}

/// Tracks the best epoch and signals a stop after `patience` epochs
/// without strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Feeds one epoch's AUC; returns whether training should stop.
    pub fn observe(&mut self, auc: f64) -> bool {
        self.epoch += 1;
        if auc > self.best {
            self.best = auc;
            self.best_epoch = self.epoch;
        }
        self.epoch - self.best_epoch >= self.patience
    }

    /// 1-based best epoch; ties keep the earliest.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn improved_last(&self) -> bool {
        self.epoch > 0 && self.best_epoch == self.epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopDecision {
    /// 1-based epoch at which training stops, if it does.
    pub stop_epoch: Option<usize>,
    pub best_epoch: usize,
}

pub fn early_stop(history: &[f64], patience: usize) -> StopDecision {
    let mut stopper = EarlyStopper::new(patience);
    for (i, &auc) in history.iter().enumerate() {
        if stopper.observe(auc) {
            return StopDecision {
                stop_epoch: Some(i + 1),
                best_epoch: stopper.best_epoch(),
            };
        }
    }
    StopDecision {
        stop_epoch: None,
        best_epoch: stopper.best_epoch(),
    }
}
