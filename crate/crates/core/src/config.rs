//! `key = value` run configuration with dotted section prefixes.
//!
//! ```text
//! seed = 7
//! corpus.dir = data
//! train.lr_dns_pretrain = 1e-4
//! dns.channels = 8,16
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::{QualityOracle, ToyCorpusConfig, ORACLE_CMD_ENV};
use crate::dns::DnsConfig;
use crate::error::{Error, Result};
use crate::losses::BraunParams;
use crate::metrics::SegSnrParams;
use crate::quality::QualityConfig;
use crate::trainer::TrainPlan;

const KNOWN_SCALARS: &[&str] = &[
    "seed",
    "corpus.dir",
    "corpus.num_train",
    "corpus.num_val",
    "corpus.num_real",
    "corpus.seconds",
    "corpus.rir_fraction",
    "corpus.snrs",
    "train.protocol",
    "train.lr_dns_pretrain",
    "train.lr_dns_finetune",
    "train.lr_qnet",
    "train.pretrain_epochs",
    "train.finetune_epochs",
    "train.halving_patience",
    "train.stop_patience",
    "train.minibatch_size",
    "train.braun_c",
    "train.braun_alpha",
    "oracle.command",
    "oracle.slope",
    "oracle.offset",
];

/// Raw key/value pairs; later entries override earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
    /// Directory relative paths in the file are resolved against.
    base_dir: PathBuf,
}

impl ConfigMap {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", origin.display(), i + 1))
            })?;
            let key = k.trim().to_string();
            let known = KNOWN_SCALARS.contains(&key.as_str())
                || key.starts_with("dns.")
                || key.starts_with("qnet.");
            if !known {
                return Err(Error::Config(format!("{}:{}: unknown key {key:?}", origin.display(), i + 1)));
            }
            entries.insert(key, v.trim().to_string());
        }
        Ok(Self {
            entries,
            base_dir: origin.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
            })
            .transpose()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|v| self.base_dir.join(v))
    }
}

/// Everything a command needs, resolved from a [`ConfigMap`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub corpus_dir: Option<PathBuf>,
    pub corpus: ToyCorpusConfig,
    pub dns: DnsConfig,
    pub qnet: QualityConfig,
    pub plan: TrainPlan,
    pub oracle: QualityOracle,
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let mut corpus = ToyCorpusConfig::default();
        if let Some(v) = map.parsed("corpus.num_train")? {
            corpus.num_train = v;
        }
        if let Some(v) = map.parsed("corpus.num_val")? {
            corpus.num_val = v;
        }
        if let Some(v) = map.parsed("corpus.num_real")? {
            corpus.num_real = v;
        }
        if let Some(v) = map.parsed("corpus.seconds")? {
            corpus.seconds = v;
        }
        if let Some(v) = map.parsed("corpus.rir_fraction")? {
            corpus.rir_fraction = v;
        }
        if let Some(v) = map.get("corpus.snrs") {
            corpus.snrs_db = v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("corpus.snrs: cannot parse {s:?}"))))
                .collect::<Result<_>>()?;
        }
        corpus.validate()?;

        let mut plan = TrainPlan::default();
        if let Some(v) = map.parsed("train.protocol")? {
            plan.protocol = v;
        }
        macro_rules! set {
            ($field:ident, $key:literal) => {
                if let Some(v) = map.parsed($key)? {
                    plan.$field = v;
                }
            };
        }
        set!(lr_dns_pretrain, "train.lr_dns_pretrain");
        set!(lr_dns_finetune, "train.lr_dns_finetune");
        set!(lr_qnet, "train.lr_qnet");
        set!(pretrain_epochs, "train.pretrain_epochs");
        set!(finetune_epochs, "train.finetune_epochs");
        set!(halving_patience, "train.halving_patience");
        set!(stop_patience, "train.stop_patience");
        set!(minibatch_size, "train.minibatch_size");
        let mut braun = BraunParams::default();
        if let Some(v) = map.parsed("train.braun_c")? {
            braun.c = v;
        }
        if let Some(v) = map.parsed("train.braun_alpha")? {
            braun.alpha = v;
        }
        plan.braun = braun;
        let seed = map.parsed("seed")?;
        plan.seed = seed.unwrap_or(0);
        plan.validate()?;

        let oracle = match map.get("oracle.command") {
            Some(t) => QualityOracle::External { template: t.to_string() },
            None => QualityOracle::Surrogate {
                slope: map.parsed("oracle.slope")?.unwrap_or(0.35),
                offset: map.parsed("oracle.offset")?.unwrap_or(-2.0),
                segments: SegSnrParams::default(),
            },
        };
        let oracle = match std::env::var(ORACLE_CMD_ENV) {
            Ok(t) if !t.trim().is_empty() => QualityOracle::External { template: t },
            _ => oracle,
        };

        let lookup = |k: &str| map.get(k).map(str::to_string);
        Ok(Self {
            seed,
            corpus_dir: map.path("corpus.dir"),
            corpus,
            dns: DnsConfig::from_lookup(lookup)?,
            qnet: QualityConfig::from_lookup(lookup)?,
            plan,
            oracle,
        })
    }

    /// Sets the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.plan.seed = seed;
        self
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_map(&ConfigMap::default()).expect("defaults are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let text = "# run\nseed = 9\ntrain.lr_qnet = 1e-3\ntrain.protocol = mb\ndns.hidden = 32\ncorpus.snrs = 0, 10\ncorpus.dir = data\n";
        let map = ConfigMap::parse(text, Path::new("/x/run.cfg")).unwrap();
        let cfg = RunConfig::from_map(&map).unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.plan.lr_qnet, 1e-3);
        assert_eq!(cfg.plan.protocol, crate::trainer::Protocol::Minibatch);
        assert_eq!(cfg.dns.hidden, 32);
        assert_eq!(cfg.corpus.snrs_db, vec![0.0, 10.0]);
        assert_eq!(cfg.corpus_dir, Some(PathBuf::from("/x/data")));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ConfigMap::parse("train.lr = 1\n", Path::new("c")).is_err());
        assert!(ConfigMap::parse("just text\n", Path::new("c")).is_err());
        let map = ConfigMap::parse("train.lr_qnet = fast\n", Path::new("c")).unwrap();
        assert!(RunConfig::from_map(&map).is_err());
        let map = ConfigMap::parse("train.lr_qnet = -1\n", Path::new("c")).unwrap();
        assert!(RunConfig::from_map(&map).is_err());
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.seed, None);
        assert_eq!(cfg.plan, TrainPlan::default());
        assert_eq!(cfg.with_seed(4).plan.seed, 4);
    }
}
