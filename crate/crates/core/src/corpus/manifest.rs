use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::spectral::WaveBuffer;
use crate::wav::read_wav;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Synthetic,
    /// No clean reference exists.
    Real,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Synthetic => "synthetic",
            RecordKind::Real => "real",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub kind: RecordKind,
    /// Paths are relative to the manifest's directory unless absolute.
    pub noisy: String,
    pub clean: Option<String>,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

/// Tab-separated list of utterances:
/// `id  kind  noisy  clean|-  snr|-  seed`. Lines starting with `#` are comments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self {
            base_dir: base_dir.into(),
            records,
        };
        m.validate(&m.base_dir.join("<memory>"))?;
        Ok(m)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, detail: String| Error::Manifest {
            path: path.display().to_string(),
            line,
            detail,
        };
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = raw.split('\t').collect();
            if f.len() != 6 {
                return Err(err(line, format!("expected 6 tab-separated fields, found {}", f.len())));
            }
            let kind = match f[1] {
                "synthetic" => RecordKind::Synthetic,
                "real" => RecordKind::Real,
                other => return Err(err(line, format!("unknown kind {other:?}"))),
            };
            let opt = |s: &str| (s != "-").then(|| s.to_string());
            let snr_db = match f[4] {
                "-" => None,
                s => Some(s.parse::<f64>().map_err(|_| err(line, format!("bad snr {s:?}")))?),
            };
            let seed = f[5].parse().map_err(|_| err(line, format!("bad seed {:?}", f[5])))?;
            records.push(ManifestRecord {
                id: f[0].to_string(),
                kind,
                noisy: f[2].to_string(),
                clean: opt(f[3]),
                snr_db,
                seed,
            });
        }
        let m = Self {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            records,
        };
        m.validate(path)?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Ids are unique, real records have no reference, synthetic ones do.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let err = |detail: String| Error::Manifest {
                path: path.display().to_string(),
                line: i + 1,
                detail,
            };
            if r.id.is_empty() || r.id.contains(char::is_whitespace) {
                return Err(err(format!("invalid id {:?}", r.id)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(err(format!("duplicate id {:?}", r.id)));
            }
            match (r.kind, &r.clean) {
                (RecordKind::Real, Some(_)) => return Err(err(format!("real record {:?} has a clean path", r.id))),
                (RecordKind::Synthetic, None) => {
                    return Err(err(format!("synthetic record {:?} has no clean path", r.id)))
                }
                _ => {}
            }
            if r.snr_db.is_some_and(f64::is_nan) {
                return Err(err(format!("record {:?} has NaN snr", r.id)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.id,
                r.kind.as_str(),
                r.noisy,
                r.clean.as_deref().unwrap_or("-"),
                r.snr_db.map_or("-".to_string(), |v| format!("{v}")),
                r.seed
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Reads every record's audio into memory.
    pub fn load_audio(&self) -> Result<Vec<Utterance>> {
        self.records
            .iter()
            .map(|r| {
                Ok(Utterance {
                    id: r.id.clone(),
                    noisy: read_wav(self.resolve(&r.noisy))?,
                    clean: match &r.clean {
                        Some(c) => Some(read_wav(self.resolve(c))?),
                        None => None,
                    },
                })
            })
            .collect()
    }
}

/// One utterance held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub noisy: WaveBuffer,
    /// Reference signal; absent for real recordings.
    pub clean: Option<WaveBuffer>,
}
