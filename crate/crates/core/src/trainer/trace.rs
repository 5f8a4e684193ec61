use std::fmt::{self, Write as _};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Dns,
    Qnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Real,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    Epoch,
    Minibatch,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Dns => "DNS",
            Target::Qnet => "QNET",
        })
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::Real => "real",
            DataKind::Synthetic => "synthetic",
        })
    }
}

/// One optimizer step on one minibatch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceStep {
    pub target: Target,
    pub data_kind: DataKind,
    pub granularity: Granularity,
    pub loss: f64,
}

/// Append-only record of every fine-tuning step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScheduleTrace {
    steps: Vec<TraceStep>,
}

impl ScheduleTrace {
    pub fn push(&mut self, step: TraceStep) {
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[TraceStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(target, data_kind)` of every step, losses dropped.
    pub fn pattern(&self) -> Vec<(Target, DataKind)> {
        self.steps.iter().map(|s| (s.target, s.data_kind)).collect()
    }

    /// `step<TAB>target<TAB>data_kind<TAB>loss`, one line per step.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{}\t{}\t{:?}", s.target, s.data_kind, s.loss);
        }
        out
    }
}
