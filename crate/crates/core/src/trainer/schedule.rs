/// Outcome of replaying the learning-rate rules over a validation history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleDecision {
    pub learning_rate: f64,
    pub halvings: u32,
    /// Epochs since the best value, counting the last entry.
    pub since_improvement: usize,
    /// Index of the lowest value (first one on ties).
    pub best_epoch: usize,
    pub stop: bool,
}

/// Replays a validation-loss history, one entry per epoch.
///
/// An epoch improves only if its loss is strictly below the best so far.
/// The rate halves every `halving_patience` consecutive non-improving
/// epochs; training stops after `stop_patience` of them. An empty history
/// leaves the rate untouched.
pub fn lr_schedule_update(
    history: &[f64],
    initial_lr: f64,
    halving_patience: usize,
    stop_patience: usize,
) -> ScheduleDecision {
    let mut d = ScheduleDecision {
        learning_rate: initial_lr,
        halvings: 0,
        since_improvement: 0,
        best_epoch: 0,
        stop: false,
    };
    let Some(&first) = history.first() else {
        return d;
    };
    let mut best = first;
    for (epoch, &loss) in history.iter().enumerate().skip(1) {
        if loss < best {
            best = loss;
            d.best_epoch = epoch;
            d.since_improvement = 0;
            continue;
        }
        d.since_improvement += 1;
        if halving_patience > 0 && d.since_improvement % halving_patience == 0 {
            d.learning_rate *= 0.5;
            d.halvings += 1;
        }
        if d.since_improvement >= stop_patience {
            d.stop = true;
        }
    }
    d
}
