use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, OptimState};
use super::plan::TrainPlan;
use super::schedule::lr_schedule_update;
use super::steps::{
    dns_braun_grads, mean_braun, oracle_label, prepare, qnet_grads, require_clean, shuffled_batches, Accumulator,
    Prepared,
};
use crate::corpus::{derive_seed, QualityOracle, Utterance};
use crate::dns::DnsModel;
use crate::error::{Error, Result};
use crate::losses::{qnet_loss, QualityLabel};
use crate::quality::QualityModel;
use crate::spectral::ComplexSpectrogram;

const DNS_STREAM: u64 = 0x01;
const QNET_STREAM: u64 = 0x02;

/// One epoch's validation result. Epoch 0 is the model before training.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub learning_rate: f64,
    pub best_epoch: usize,
}

impl EpochRecord {
    /// `tag<TAB>epoch<TAB>train<TAB>val<TAB>lr<TAB>best_epoch`.
    pub fn log_line(&self, tag: &str) -> String {
        format!(
            "{tag}\t{}\t{}\t{:?}\t{:?}\t{}",
            self.epoch,
            self.train_loss.map_or("-".to_string(), |v| format!("{v:?}")),
            self.val_loss,
            self.learning_rate,
            self.best_epoch
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOutput {
    /// Lowest-validation-loss enhancement model.
    pub dns: DnsModel,
    /// Lowest-validation-loss quality model.
    pub qnet: QualityModel,
    pub dns_epochs: Vec<EpochRecord>,
    pub qnet_epochs: Vec<EpochRecord>,
}

impl PretrainOutput {
    pub fn log_text(&self) -> String {
        self.dns_epochs
            .iter()
            .map(|r| r.log_line("dns"))
            .chain(self.qnet_epochs.iter().map(|r| r.log_line("qnet")))
            .map(|l| l + "\n")
            .collect()
    }
}

fn check_nonempty(train: &[Utterance], val: &[Utterance]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training(format!(
            "pretraining needs synthetic training and validation data, got {} and {} utterances",
            train.len(),
            val.len()
        )));
    }
    Ok(())
}

/// Trains the enhancement model on the pre-training loss with LR halving
/// and early stopping, returning the best model and the per-epoch records.
pub fn pretrain_dns(
    mut dns: DnsModel,
    train: &[Utterance],
    val: &[Utterance],
    plan: &TrainPlan,
) -> Result<(DnsModel, Vec<EpochRecord>)> {
    plan.validate()?;
    check_nonempty(train, val)?;
    let train = prepare(train)?;
    let val = prepare(val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, DNS_STREAM));
    let mut opt = OptimState::new(dns.params(), plan.lr_dns_pretrain);

    let mut history = vec![mean_braun(&dns, &val, plan.braun)?];
    let mut records = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        val_loss: history[0],
        learning_rate: opt.learning_rate,
        best_epoch: 0,
    }];
    let mut best = dns.clone();
    for epoch in 1..=plan.pretrain_epochs {
        let mut epoch_loss = 0.0;
        let batches = shuffled_batches(train.len(), plan.minibatch_size, &mut rng);
        for batch in &batches {
            let mut acc = Accumulator::new();
            for &i in batch {
                acc.add(dns_braun_grads(&dns, &train[i], plan.braun)?);
            }
            let (loss, grads) = acc.finish(dns.params());
            adam_step(dns.params_mut(), &grads, &mut opt)?;
            epoch_loss += loss;
        }
        let val_loss = mean_braun(&dns, &val, plan.braun)?;
        history.push(val_loss);
        let decision = lr_schedule_update(&history, plan.lr_dns_pretrain, plan.halving_patience, plan.stop_patience);
        if decision.best_epoch == epoch {
            best = dns.clone();
        }
        opt.learning_rate = decision.learning_rate;
        records.push(EpochRecord {
            epoch,
            train_loss: Some(epoch_loss / batches.len() as f64),
            val_loss,
            learning_rate: decision.learning_rate,
            best_epoch: decision.best_epoch,
        });
        if decision.stop {
            break;
        }
    }
    Ok((best, records))
}

/// A spectrum with its oracle label.
pub(crate) struct Labeled {
    pub id: String,
    pub spec: ComplexSpectrogram,
    pub label: QualityLabel,
}

/// Noisy input, current enhancement output and clean reference of every
/// utterance, each labeled by the oracle.
fn labeled_variants(dns: &DnsModel, data: &[Prepared], oracle: &QualityOracle) -> Result<Vec<Labeled>> {
    let mut out = Vec::with_capacity(3 * data.len());
    for p in data {
        let (clean_spec, clean) = require_clean(p)?;
        let enhanced = dns.enhance_spectrum(&p.noisy)?;
        for (tag, spec) in [("noisy", p.noisy.clone()), ("enhanced", enhanced), ("clean", clean_spec.clone())] {
            let label = oracle_label(&spec, clean, oracle)?;
            out.push(Labeled {
                id: format!("{}/{tag}", p.id),
                spec,
                label,
            });
        }
    }
    Ok(out)
}

fn mean_qnet_loss(qnet: &QualityModel, data: &[Labeled]) -> Result<f64> {
    let mut total = 0.0;
    for d in data {
        total += qnet_loss(&qnet.estimate_quality(&d.spec)?, &d.label)?;
    }
    Ok(total / data.len() as f64)
}

/// Trains the quality model against oracle labels of noisy, enhanced and
/// clean versions of the synthetic data. `dns` stays fixed.
pub fn pretrain_qnet(
    mut qnet: QualityModel,
    dns: &DnsModel,
    train: &[Utterance],
    val: &[Utterance],
    oracle: &QualityOracle,
    plan: &TrainPlan,
) -> Result<(QualityModel, Vec<EpochRecord>)> {
    plan.validate()?;
    check_nonempty(train, val)?;
    let train = labeled_variants(dns, &prepare(train)?, oracle)?;
    let val = labeled_variants(dns, &prepare(val)?, oracle)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, QNET_STREAM));
    let mut opt = OptimState::new(qnet.params(), plan.lr_qnet);

    let mut history = vec![mean_qnet_loss(&qnet, &val)?];
    let mut records = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        val_loss: history[0],
        learning_rate: opt.learning_rate,
        best_epoch: 0,
    }];
    let mut best = qnet.clone();
    for epoch in 1..=plan.pretrain_epochs {
        let mut epoch_loss = 0.0;
        let batches = shuffled_batches(train.len(), plan.minibatch_size, &mut rng);
        for batch in &batches {
            let mut acc = Accumulator::new();
            for &i in batch {
                acc.add(qnet_grads(&qnet, &train[i].spec, &train[i].label, &train[i].id)?);
            }
            let (loss, grads) = acc.finish(qnet.params());
            adam_step(qnet.params_mut(), &grads, &mut opt)?;
            epoch_loss += loss;
        }
        let val_loss = mean_qnet_loss(&qnet, &val)?;
        history.push(val_loss);
        let decision = lr_schedule_update(&history, plan.lr_qnet, plan.halving_patience, plan.stop_patience);
        if decision.best_epoch == epoch {
            best = qnet.clone();
        }
        opt.learning_rate = decision.learning_rate;
        records.push(EpochRecord {
            epoch,
            train_loss: Some(epoch_loss / batches.len() as f64),
            val_loss,
            learning_rate: decision.learning_rate,
            best_epoch: decision.best_epoch,
        });
        if decision.stop {
            break;
        }
    }
    Ok((best, records))
}

/// Pre-trains the enhancement model, then the quality model on the
/// enhancement model's best checkpoint.
pub fn pretrain(
    dns: DnsModel,
    qnet: QualityModel,
    train: &[Utterance],
    val: &[Utterance],
    oracle: &QualityOracle,
    plan: &TrainPlan,
) -> Result<PretrainOutput> {
    let (dns, dns_epochs) = pretrain_dns(dns, train, val, plan)?;
    let (qnet, qnet_epochs) = pretrain_qnet(qnet, &dns, train, val, oracle, plan)?;
    Ok(PretrainOutput {
        dns,
        qnet,
        dns_epochs,
        qnet_epochs,
    })
}
