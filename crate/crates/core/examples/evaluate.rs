//! Writes a small corpus to disk, evaluates the identity mask and a fresh
//! model on its validation manifest and prints both reports.
//!
//! Usage: cargo run --release --example evaluate

use perceploop::corpus::{generate_toy_corpus, QualityOracle, ToyCorpusConfig};
use perceploop::dns::{DnsConfig, DnsModel, IdentityMask};
use perceploop::metrics::{evaluate_manifest, SegSnrParams};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = ToyCorpusConfig {
        num_train: 2,
        num_val: 4,
        num_real: 2,
        ..Default::default()
    };
    let m = generate_toy_corpus(&cfg, 11, dir.path())?;
    let oracle = QualityOracle::default();
    let p = SegSnrParams::default();
    let identity = evaluate_manifest(&m.val, &IdentityMask, &oracle, p);
    print!("identity mask\n{}", identity.to_text());
    let model = DnsModel::new(DnsConfig::default(), 11)?;
    let fresh = evaluate_manifest(&m.val, &model, &oracle, p);
    print!("untrained model\n{}", fresh.to_text());
    Ok(())
}
