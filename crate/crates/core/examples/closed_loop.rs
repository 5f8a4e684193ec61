//! Generates the toy corpus, pre-trains both models, fine-tunes with a
//! chosen protocol and compares validation scores before and after.
//!
//! Usage: cargo run --release --example closed_loop -- [ep|mb] [seed]

use std::time::Instant;

use perceploop::corpus::{generate_toy_utterances, QualityOracle, ToyCorpusConfig};
use perceploop::dns::{DnsConfig, DnsModel};
use perceploop::metrics::{evaluate_utterances, SegSnrParams};
use perceploop::quality::{QualityConfig, QualityModel};
use perceploop::trainer::{alternate_finetune, pretrain, Protocol, TrainPlan};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let protocol: Protocol = args.get(1).map(String::as_str).unwrap_or("ep").parse()?;
    let seed: u64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let start = Instant::now();

    let corpus = generate_toy_utterances(&ToyCorpusConfig::default(), seed)?;
    let oracle = QualityOracle::default();
    let plan = TrainPlan::desk_scale(protocol, seed);
    let pre = pretrain(
        DnsModel::new(DnsConfig::default(), seed)?,
        QualityModel::new(QualityConfig::default(), seed + 1)?,
        &corpus.train,
        &corpus.val,
        &oracle,
        &plan,
    )?;
    print!("{}", pre.log_text());
    let before = evaluate_utterances(&corpus.val, &pre.dns, &oracle, SegSnrParams::default()).aggregate();
    println!("pretrained: dsnr {:.4} oracle {:.4} ({:.1?})", before.0, before.1, start.elapsed());

    let ft = alternate_finetune(pre.dns, pre.qnet, &corpus.real, &corpus.train, &corpus.val, &oracle, &plan)?;
    print!("{}", ft.log_text());
    let after = evaluate_utterances(&corpus.val, &ft.dns, &oracle, SegSnrParams::default()).aggregate();
    println!(
        "fine-tuned ({protocol}): dsnr {:.4} oracle {:.4} gain {:+.4} ({:.1?})",
        after.0,
        after.1,
        after.1 - before.1,
        start.elapsed()
    );
    Ok(())
}
