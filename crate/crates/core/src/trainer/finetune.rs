use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, OptimState};
use super::plan::{Protocol, TrainPlan};
use super::schedule::lr_schedule_update;
use super::steps::{
    dns_finetune_grads, oracle_label, prepare, qnet_grads, require_clean, shuffled_batches, Accumulator, BatchStream,
    Prepared,
};
use super::trace::{DataKind, Granularity, ScheduleTrace, Target, TraceStep};
use crate::corpus::{derive_seed, QualityOracle, Utterance};
use crate::dns::DnsModel;
use crate::error::{Error, Result};
use crate::metrics::interior_oracle_score;
use crate::quality::QualityModel;
use crate::spectral::istft_ola;

const REAL_STREAM: u64 = 0x11;
const SYN_STREAM: u64 = 0x12;

/// Checksums of the network that must stay fixed while the other one trains.
#[derive(Clone, Debug, PartialEq)]
pub struct FreezeCheck {
    pub epoch: usize,
    /// Network that was trained.
    pub trained: Target,
    pub frozen_before: String,
    pub frozen_after: String,
}

impl FreezeCheck {
    pub fn holds(&self) -> bool {
        self.frozen_before == self.frozen_after
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOutput {
    /// Models from the epoch with the best validation score (possibly epoch 0).
    pub dns: DnsModel,
    pub qnet: QualityModel,
    pub trace: ScheduleTrace,
    /// Mean oracle score on the validation split, epoch 0 first.
    pub val_scores: Vec<f64>,
    pub best_epoch: usize,
    pub freeze_checks: Vec<FreezeCheck>,
}

impl FinetuneOutput {
    /// `finetune<TAB>epoch<TAB>val_score<TAB>best_epoch` per epoch.
    pub fn log_text(&self) -> String {
        let mut best = 0;
        self.val_scores
            .iter()
            .enumerate()
            .map(|(e, s)| {
                if *s > self.val_scores[best] {
                    best = e;
                }
                format!("finetune\t{e}\t{s:?}\t{best}\n")
            })
            .collect()
    }
}

struct Session<'a> {
    dns: DnsModel,
    qnet: QualityModel,
    dns_opt: OptimState,
    qnet_opt: OptimState,
    real: &'a [Prepared],
    syn: &'a [Prepared],
    oracle: &'a QualityOracle,
    trace: ScheduleTrace,
    freeze_checks: Vec<FreezeCheck>,
    granularity: Granularity,
}

impl Session<'_> {
    fn dns_step(&mut self, batch: &[usize]) -> Result<()> {
        let mut acc = Accumulator::new();
        for &i in batch {
            acc.add(dns_finetune_grads(&self.dns, &self.qnet, &self.real[i])?);
        }
        let (loss, grads) = acc.finish(self.dns.params());
        adam_step(self.dns.params_mut(), &grads, &mut self.dns_opt)?;
        self.trace.push(TraceStep {
            target: Target::Dns,
            data_kind: DataKind::Real,
            granularity: self.granularity,
            loss,
        });
        Ok(())
    }

    /// Labels come from the oracle scoring the current enhancement output.
    fn qnet_step(&mut self, batch: &[usize]) -> Result<()> {
        let mut acc = Accumulator::new();
        for &i in batch {
            let p = &self.syn[i];
            let (_, clean) = require_clean(p)?;
            let enhanced = self.dns.enhance_spectrum(&p.noisy)?;
            let label = oracle_label(&enhanced, clean, self.oracle)?;
            acc.add(qnet_grads(&self.qnet, &enhanced, &label, &p.id)?);
        }
        let (loss, grads) = acc.finish(self.qnet.params());
        adam_step(self.qnet.params_mut(), &grads, &mut self.qnet_opt)?;
        self.trace.push(TraceStep {
            target: Target::Qnet,
            data_kind: DataKind::Synthetic,
            granularity: self.granularity,
            loss,
        });
        Ok(())
    }

    /// Runs `f` and records the checksum of the network it must not touch.
    fn frozen<F>(&mut self, epoch: usize, trained: Target, f: F) -> Result<()>
    where
        F: FnOnce(&mut Self) -> Result<()>,
    {
        let sum = |s: &Self| match trained {
            Target::Dns => s.qnet.params().checksum(),
            Target::Qnet => s.dns.params().checksum(),
        };
        let before = sum(self);
        f(self)?;
        let check = FreezeCheck {
            epoch,
            trained,
            frozen_before: before,
            frozen_after: sum(self),
        };
        if !check.holds() {
            return Err(Error::Training(format!(
                "frozen network changed while training {trained} in epoch {epoch}"
            )));
        }
        self.freeze_checks.push(check);
        Ok(())
    }
}

/// Mean oracle score of the enhancement model's output on `data`.
fn mean_oracle(dns: &DnsModel, data: &[Prepared], oracle: &QualityOracle) -> Result<f64> {
    let mut total = 0.0;
    for p in data {
        let (_, clean) = require_clean(p)?;
        let wave = istft_ola(&dns.enhance_spectrum(&p.noisy)?)?;
        total += interior_oracle_score(&wave, clean, oracle)?;
    }
    Ok(total / data.len() as f64)
}

/// Alternates reference-free enhancement updates on `real` with estimator
/// updates on `syn`, at epoch or minibatch granularity per `plan.protocol`.
///
/// After every epoch the enhancement model is scored by the oracle on `val`;
/// the returned models are those of the best epoch. The enhancement learning
/// rate follows the halving and stopping rules on the negated score; the
/// estimator learning rate stays fixed.
pub fn alternate_finetune(
    dns: DnsModel,
    qnet: QualityModel,
    real: &[Utterance],
    syn: &[Utterance],
    val: &[Utterance],
    oracle: &QualityOracle,
    plan: &TrainPlan,
) -> Result<FinetuneOutput> {
    plan.validate()?;
    if real.is_empty() || syn.is_empty() || val.is_empty() {
        return Err(Error::Training(format!(
            "fine-tuning needs real, synthetic and validation data, got {}, {} and {} utterances",
            real.len(),
            syn.len(),
            val.len()
        )));
    }
    let real = prepare(real)?;
    let syn = prepare(syn)?;
    let val = prepare(val)?;
    let mut real_rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, REAL_STREAM));
    let syn_rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, SYN_STREAM));
    let mut syn_stream = BatchStream::new(syn.len(), plan.minibatch_size, syn_rng.clone());
    let mut syn_epoch_rng = syn_rng;

    let mut s = Session {
        dns_opt: OptimState::new(dns.params(), plan.lr_dns_finetune),
        qnet_opt: OptimState::new(qnet.params(), plan.lr_qnet),
        dns,
        qnet,
        real: &real,
        syn: &syn,
        oracle,
        trace: ScheduleTrace::default(),
        freeze_checks: Vec::new(),
        granularity: match plan.protocol {
            Protocol::Epoch => Granularity::Epoch,
            Protocol::Minibatch => Granularity::Minibatch,
        },
    };

    let mut val_scores = vec![mean_oracle(&s.dns, &val, oracle)?];
    let mut best = (s.dns.clone(), s.qnet.clone(), 0);
    for epoch in 1..=plan.finetune_epochs {
        let real_batches = shuffled_batches(real.len(), plan.minibatch_size, &mut real_rng);
        match plan.protocol {
            Protocol::Epoch => {
                s.frozen(epoch, Target::Dns, |s| {
                    real_batches.iter().try_for_each(|b| s.dns_step(b))
                })?;
                let syn_batches = shuffled_batches(syn.len(), plan.minibatch_size, &mut syn_epoch_rng);
                s.frozen(epoch, Target::Qnet, |s| {
                    syn_batches.iter().try_for_each(|b| s.qnet_step(b))
                })?;
            }
            Protocol::Minibatch => {
                for b in &real_batches {
                    s.frozen(epoch, Target::Dns, |s| s.dns_step(b))?;
                    let sb = syn_stream.next_batch();
                    s.frozen(epoch, Target::Qnet, |s| s.qnet_step(&sb))?;
                }
            }
        }
        let score = mean_oracle(&s.dns, &val, oracle)?;
        val_scores.push(score);
        let losses: Vec<f64> = val_scores.iter().map(|v| -v).collect();
        let decision = lr_schedule_update(&losses, plan.lr_dns_finetune, plan.halving_patience, plan.stop_patience);
        s.dns_opt.learning_rate = decision.learning_rate;
        if decision.best_epoch == epoch {
            best = (s.dns.clone(), s.qnet.clone(), epoch);
        }
        if decision.stop {
            break;
        }
    }
    Ok(FinetuneOutput {
        dns: best.0,
        qnet: best.1,
        trace: s.trace,
        val_scores,
        best_epoch: best.2,
        freeze_checks: s.freeze_checks,
    })
}
