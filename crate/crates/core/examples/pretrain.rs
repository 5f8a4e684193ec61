//! Pre-trains the enhancement model and the quality estimator on a small
//! generated corpus and writes both checkpoints.
//!
//! Usage: cargo run --release --example pretrain -- [out_dir] [seed]

use std::path::PathBuf;

use perceploop::autodiff::save_checkpoint;
use perceploop::corpus::{generate_toy_utterances, QualityOracle, ToyCorpusConfig};
use perceploop::dns::{DnsConfig, DnsModel};
use perceploop::quality::{QualityConfig, QualityModel};
use perceploop::trainer::{pretrain, Protocol, TrainPlan};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("pretrained"));
    let seed: u64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let cfg = ToyCorpusConfig {
        num_train: 16,
        num_val: 4,
        num_real: 4,
        ..Default::default()
    };
    let corpus = generate_toy_utterances(&cfg, seed)?;
    let plan = TrainPlan {
        pretrain_epochs: 4,
        ..TrainPlan::desk_scale(Protocol::Epoch, seed)
    };
    let res = pretrain(
        DnsModel::new(DnsConfig::default(), seed)?,
        QualityModel::new(QualityConfig::default(), seed + 1)?,
        &corpus.train,
        &corpus.val,
        &QualityOracle::default(),
        &plan,
    )?;
    print!("{}", res.log_text());
    std::fs::create_dir_all(&out)?;
    save_checkpoint(out.join("dns.ckpt"), &res.dns.to_checkpoint())?;
    save_checkpoint(out.join("qnet.ckpt"), &res.qnet.to_checkpoint())?;
    println!("checkpoints in {}", out.display());
    Ok(())
}
