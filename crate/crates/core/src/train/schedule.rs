use serde::{Deserialize, Serialize};

/// Plateau-driven learning-rate annealing: the rate halves every time the
/// validation loss fails to improve on the best seen so far. Factors of
/// 0.5 keep the sequence lr0 * 0.5^k exact in binary floating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealState {
    pub best_val_loss: f64,
    pub lr: f64,
    pub factor: f64,
}

impl AnnealState {
    pub fn new(lr: f64) -> Self {
        AnnealState {
            best_val_loss: f64::INFINITY,
            lr,
            factor: 0.5,
        }
    }
}

/// Apply one validation reading: improvements move the best marker,
/// anything else multiplies the rate by the factor. Returns the rate to
/// use from here on.
pub fn anneal_on_plateau(state: &mut AnnealState, val_loss: f64) -> f64 {
    if val_loss < state.best_val_loss {
        state.best_val_loss = val_loss;
    } else {
        state.lr *= state.factor;
    }
    state.lr
}

/// Convergence detector: training stops once the dev loss has failed to
/// improve for a full run of consecutive epochs. A patience of 0 behaves
/// like 1, stopping at the first non-improving epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    streak: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience: patience.max(1),
            best: f64::INFINITY,
            streak: 0,
        }
    }

    /// Record one epoch's dev loss; true means stop now.
    pub fn should_stop(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.streak = 0;
        } else {
            self.streak += 1;
        }
        self.streak >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}
