//! Command implementations behind the `perceploop` binary.
//!
//! Every command reads an optional config file, applies flag overrides and
//! writes plain-text artifacts with stable field order.

use std::path::{Path, PathBuf};

use crate::autodiff::{load_checkpoint, save_checkpoint};
use crate::config::{ConfigMap, RunConfig};
use crate::corpus::{generate_toy_corpus, Manifest};
use crate::dns::{enhance_waveform, DnsModel};
use crate::error::Error;
use crate::metrics::{evaluate_manifest, write_report, SegSnrParams};
use crate::quality::QualityModel;
use crate::trainer::{alternate_finetune, pretrain, Protocol};
use crate::wav::{read_wav, write_wav};

pub const DNS_CKPT: &str = "dns.ckpt";
pub const QNET_CKPT: &str = "qnet.ckpt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or missing arguments; exit code 2.
    #[error("usage: {0}")]
    Usage(String),
    /// Anything that failed while running; exit code 1.
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Flags shared by all subcommands; each command reads the ones it needs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub protocol: Option<Protocol>,
    pub ckpt: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

impl Invocation {
    fn run_config(&self) -> CliResult<RunConfig> {
        let map = match &self.config {
            Some(p) => ConfigMap::load(p)?,
            None => ConfigMap::default(),
        };
        let mut cfg = RunConfig::from_map(&map)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(p) = self.protocol {
            cfg.plan.protocol = p;
        }
        Ok(cfg)
    }

    fn out(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    fn seed(cfg: &RunConfig) -> CliResult<u64> {
        cfg.seed
            .ok_or_else(|| CliError::Usage("a seed is required (--seed or `seed` in the config)".into()))
    }

    /// Corpus directory from `--in`, falling back to `corpus.dir`.
    fn corpus_dir(&self, cfg: &RunConfig) -> CliResult<PathBuf> {
        self.input
            .clone()
            .or_else(|| cfg.corpus_dir.clone())
            .ok_or_else(|| CliError::Usage("corpus directory required (--in or corpus.dir)".into()))
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

/// A checkpoint path may name the file or the directory holding it.
fn checkpoint_file(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

fn load_dns(path: &Path) -> CliResult<DnsModel> {
    Ok(DnsModel::from_checkpoint(&load_checkpoint(checkpoint_file(path, DNS_CKPT))?)?)
}

fn load_qnet(path: &Path) -> CliResult<QualityModel> {
    Ok(QualityModel::from_checkpoint(&load_checkpoint(checkpoint_file(path, QNET_CKPT))?)?)
}

/// `gen`: writes the toy corpus (`train.tsv`, `val.tsv`, `real.tsv`, `wav/`).
pub fn cmd_gen(inv: &Invocation) -> CliResult<String> {
    let cfg = inv.run_config()?;
    let seed = Invocation::seed(&cfg)?;
    let out = inv.out()?;
    let m = generate_toy_corpus(&cfg.corpus, seed, out)?;
    Ok(format!(
        "wrote {} train, {} val and {} real utterances to {}",
        m.train.records.len(),
        m.val.records.len(),
        m.real.records.len(),
        out.display()
    ))
}

/// `pretrain`: trains both models on the corpus' synthetic partitions and
/// writes `dns.ckpt`, `qnet.ckpt` and `pretrain.log` under `--out`.
pub fn cmd_pretrain(inv: &Invocation) -> CliResult<String> {
    let cfg = inv.run_config()?;
    let seed = Invocation::seed(&cfg)?;
    let out = inv.out()?;
    let dir = inv.corpus_dir(&cfg)?;
    let train = Manifest::load(dir.join("train.tsv"))?.load_audio()?;
    let val = Manifest::load(dir.join("val.tsv"))?.load_audio()?;
    let dns = DnsModel::new(cfg.dns.clone(), seed)?;
    let qnet = QualityModel::new(cfg.qnet.clone(), seed.wrapping_add(1))?;
    let res = pretrain(dns, qnet, &train, &val, &cfg.oracle, &cfg.plan)?;
    create_dir(out)?;
    save_checkpoint(out.join(DNS_CKPT), &res.dns.to_checkpoint())?;
    save_checkpoint(out.join(QNET_CKPT), &res.qnet.to_checkpoint())?;
    write_text(&out.join("pretrain.log"), &res.log_text())?;
    Ok(format!(
        "dns {} qnet {}",
        res.dns.params().checksum(),
        res.qnet.params().checksum()
    ))
}

/// `finetune`: alternates the models in the `--ckpt` directory with the chosen protocol
/// and writes checkpoints, `trace.tsv` and `finetune.log` under `--out`.
pub fn cmd_finetune(inv: &Invocation) -> CliResult<String> {
    let cfg = inv.run_config()?;
    Invocation::seed(&cfg)?;
    let out = inv.out()?;
    let ckpt = inv
        .ckpt
        .as_deref()
        .ok_or_else(|| CliError::Usage("--ckpt is required".into()))?;
    let dir = inv.corpus_dir(&cfg)?;
    let ckpt_dir = if ckpt.is_dir() { ckpt } else { ckpt.parent().unwrap_or(Path::new(".")) };
    let dns = load_dns(&ckpt_dir.join(DNS_CKPT))?;
    let qnet = load_qnet(&ckpt_dir.join(QNET_CKPT))?;
    let train = Manifest::load(dir.join("train.tsv"))?.load_audio()?;
    let val = Manifest::load(dir.join("val.tsv"))?.load_audio()?;
    let real = Manifest::load(dir.join("real.tsv"))?.load_audio()?;
    let res = alternate_finetune(dns, qnet, &real, &train, &val, &cfg.oracle, &cfg.plan)?;
    create_dir(out)?;
    save_checkpoint(out.join(DNS_CKPT), &res.dns.to_checkpoint())?;
    save_checkpoint(out.join(QNET_CKPT), &res.qnet.to_checkpoint())?;
    write_text(&out.join("trace.tsv"), &res.trace.to_text())?;
    write_text(&out.join("finetune.log"), &res.log_text())?;
    Ok(format!(
        "{} steps, best epoch {}, validation score {:.4}",
        res.trace.len(),
        res.best_epoch,
        res.val_scores[res.best_epoch]
    ))
}

/// `enhance`: runs the enhancement model from `--ckpt` on the `--in` WAV.
pub fn cmd_enhance(inv: &Invocation) -> CliResult<String> {
    let input = inv
        .input
        .as_deref()
        .ok_or_else(|| CliError::Usage("--in is required".into()))?;
    let out = inv.out()?;
    let ckpt = inv
        .ckpt
        .as_deref()
        .ok_or_else(|| CliError::Usage("--ckpt is required".into()))?;
    let dns = load_dns(ckpt)?;
    let noisy = read_wav(input)?;
    let enhanced = enhance_waveform(&noisy, &dns)?;
    write_wav(out, &enhanced)?;
    Ok(format!("wrote {} samples to {}", enhanced.len(), out.display()))
}

/// `eval`: enhances a manifest (`--in`, a manifest file or corpus directory
/// whose `val.tsv` is used) and writes the report to `--out`.
pub fn cmd_eval(inv: &Invocation) -> CliResult<String> {
    let cfg = inv.run_config()?;
    let out = inv.out()?;
    let ckpt = inv
        .ckpt
        .as_deref()
        .ok_or_else(|| CliError::Usage("--ckpt is required".into()))?;
    let dns = load_dns(ckpt)?;
    let target = inv.corpus_dir(&cfg)?;
    let manifest_path = if target.is_dir() { target.join("val.tsv") } else { target };
    let manifest = Manifest::load(&manifest_path)?;
    let report = evaluate_manifest(&manifest, &dns, &cfg.oracle, SegSnrParams::default());
    write_report(out, &report)?;
    let (d, o) = report.aggregate();
    Ok(format!("{} rows, mean delta SNRseg {d:.4} dB, mean oracle {o:.4}", report.rows.len()))
}
