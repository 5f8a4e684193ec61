//! Runs one short fine-tuning under each alternation protocol from the same
//! pre-trained models and prints the step pattern and freeze checks.
//!
//! Usage: cargo run --release --example finetune_protocols

use perceploop::corpus::{generate_toy_utterances, QualityOracle, ToyCorpusConfig};
use perceploop::dns::{DnsConfig, DnsModel};
use perceploop::quality::{QualityConfig, QualityModel};
use perceploop::trainer::{alternate_finetune, pretrain, Protocol, TrainPlan};

fn main() -> anyhow::Result<()> {
    let cfg = ToyCorpusConfig {
        num_train: 8,
        num_val: 2,
        num_real: 4,
        seconds: 0.5,
        ..Default::default()
    };
    let corpus = generate_toy_utterances(&cfg, 3)?;
    let oracle = QualityOracle::default();
    let base = TrainPlan {
        pretrain_epochs: 2,
        finetune_epochs: 2,
        minibatch_size: 2,
        ..TrainPlan::desk_scale(Protocol::Epoch, 3)
    };
    let pre = pretrain(
        DnsModel::new(DnsConfig::default(), 3)?,
        QualityModel::new(QualityConfig::default(), 4)?,
        &corpus.train,
        &corpus.val,
        &oracle,
        &base,
    )?;
    for protocol in [Protocol::Epoch, Protocol::Minibatch] {
        let plan = TrainPlan { protocol, ..base.clone() };
        let ft = alternate_finetune(
            pre.dns.clone(),
            pre.qnet.clone(),
            &corpus.real,
            &corpus.train,
            &corpus.val,
            &oracle,
            &plan,
        )?;
        let pattern: Vec<String> = ft.trace.steps().iter().map(|s| s.target.to_string()).collect();
        let held = ft.freeze_checks.iter().filter(|c| c.holds()).count();
        println!("{protocol}: {} steps [{}]", pattern.len(), pattern.join(" "));
        println!(
            "{protocol}: {held} of {} freeze checks hold, validation scores {:?}",
            ft.freeze_checks.len(),
            ft.val_scores.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
