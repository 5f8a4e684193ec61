use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::BraunParams;

/// Granularity at which the two networks take turns during fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// A full epoch of one network, then a full epoch of the other.
    Epoch,
    /// One minibatch each, alternating.
    Minibatch,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ep" => Ok(Protocol::Epoch),
            "mb" => Ok(Protocol::Minibatch),
            other => Err(Error::Config(format!("unknown protocol {other:?}, expected ep or mb"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Epoch => "ep",
            Protocol::Minibatch => "mb",
        })
    }
}

/// Learning rates, budgets and patience values for both training phases.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub protocol: Protocol,
    pub lr_dns_pretrain: f64,
    pub lr_dns_finetune: f64,
    pub lr_qnet: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub halving_patience: usize,
    pub stop_patience: usize,
    pub minibatch_size: usize,
    pub braun: BraunParams,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            protocol: Protocol::Epoch,
            lr_dns_pretrain: 1e-4,
            lr_dns_finetune: 2e-5,
            lr_qnet: 5e-5,
            pretrain_epochs: 10,
            finetune_epochs: 26,
            halving_patience: 2,
            stop_patience: 5,
            minibatch_size: 4,
            braun: BraunParams::default(),
            seed: 0,
        }
    }
}

impl TrainPlan {
    /// Budget for the 64-utterance toy corpus: 10 pre-training epochs at 30x
    /// the default pre-training rates, then 5 fine-tuning alternations at the
    /// default fine-tuning rate.
    pub fn desk_scale(protocol: Protocol, seed: u64) -> Self {
        Self {
            protocol,
            lr_dns_pretrain: 3e-3,
            lr_qnet: 1.5e-3,
            finetune_epochs: 5,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_dns_pretrain", self.lr_dns_pretrain),
            ("lr_dns_finetune", self.lr_dns_finetune),
            ("lr_qnet", self.lr_qnet),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("train.{name} must be positive, got {lr}")));
            }
        }
        if self.minibatch_size == 0 {
            return Err(Error::Config("train.minibatch_size must be >= 1".into()));
        }
        if self.halving_patience == 0 || self.stop_patience == 0 {
            return Err(Error::Config("train patience values must be >= 1".into()));
        }
        self.braun.validate()
    }
}
