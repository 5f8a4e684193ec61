use std::process::Command;

use crate::error::{Error, Result};
use crate::metrics::{segmental_snr, SegSnrParams};
use crate::spectral::WaveBuffer;
use crate::wav::write_wav;

/// Environment variable that replaces the external scorer command template.
pub const ORACLE_CMD_ENV: &str = "PERCEPLOOP_ORACLE_CMD";

const SCORE_MIN: f64 = 1.04;
const SCORE_SPAN: f64 = 3.6;
const LABEL_RANGE: (f64, f64) = (1.0, 4.64);

/// Source of ground-truth quality labels.
#[derive(Clone, Debug, PartialEq)]
pub enum QualityOracle {
    /// `1.04 + 3.6 * sigmoid(slope * segmental_snr + offset)`.
    Surrogate {
        slope: f64,
        offset: f64,
        segments: SegSnrParams,
    },
    /// Shell command with `{degraded}` and optionally `{reference}`
    /// placeholders; the first decimal number on stdout is the score.
    External { template: String },
}

impl Default for QualityOracle {
    fn default() -> Self {
        QualityOracle::Surrogate {
            slope: 0.35,
            offset: -2.0,
            segments: SegSnrParams::default(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl QualityOracle {
    /// External command from the environment if set, otherwise the surrogate.
    pub fn from_env() -> Self {
        match std::env::var(ORACLE_CMD_ENV) {
            Ok(t) if !t.trim().is_empty() => QualityOracle::External { template: t },
            _ => QualityOracle::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            QualityOracle::Surrogate { .. } => "surrogate",
            QualityOracle::External { .. } => "external",
        }
    }

    pub fn score(&self, degraded: &WaveBuffer, reference: &WaveBuffer) -> Result<f64> {
        if degraded.len() != reference.len() {
            return Err(Error::Oracle(format!(
                "length mismatch: degraded {} vs reference {} samples",
                degraded.len(),
                reference.len()
            )));
        }
        match self {
            QualityOracle::Surrogate { slope, offset, segments } => {
                let snr = segmental_snr(reference, degraded, *segments)?;
                Ok(SCORE_MIN + SCORE_SPAN * sigmoid(slope * snr + offset))
            }
            QualityOracle::External { template } => run_external(template, degraded, Some(reference)),
        }
    }

    /// Scores without a reference when the configured command supports it.
    pub fn score_reference_free(&self, degraded: &WaveBuffer) -> Result<Option<f64>> {
        match self {
            QualityOracle::External { template } if !template.contains("{reference}") => {
                run_external(template, degraded, None).map(Some)
            }
            _ => Ok(None),
        }
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn run_external(template: &str, degraded: &WaveBuffer, reference: Option<&WaveBuffer>) -> Result<f64> {
    let dir = tempfile::tempdir().map_err(|e| Error::Oracle(format!("temp dir: {e}")))?;
    let deg_path = dir.path().join("degraded.wav");
    write_wav(&deg_path, degraded)?;
    let mut cmd = template.replace("{degraded}", &shell_quote(&deg_path.to_string_lossy()));
    if let Some(r) = reference {
        let ref_path = dir.path().join("reference.wav");
        write_wav(&ref_path, r)?;
        cmd = cmd.replace("{reference}", &shell_quote(&ref_path.to_string_lossy()));
    }
    let out = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .map_err(|e| Error::Oracle(format!("cannot run {cmd:?}: {e}")))?;
    if !out.status.success() {
        return Err(Error::Oracle(format!(
            "command {cmd:?} failed with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let score = first_decimal(&stdout)
        .ok_or_else(|| Error::Oracle(format!("no number in output of {cmd:?}: {:?}", stdout.trim())))?;
    if !(LABEL_RANGE.0..=LABEL_RANGE.1).contains(&score) {
        return Err(Error::Oracle(format!(
            "score {score} outside [{}, {}]",
            LABEL_RANGE.0, LABEL_RANGE.1
        )));
    }
    Ok(score)
}

/// First `[-]digits[.digits]` run in `text`.
fn first_decimal(text: &str) -> Option<f64> {
    let b = text.as_bytes();
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() {
            let start = if i > 0 && b[i - 1] == b'-' { i - 1 } else { i };
            let mut j = i;
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            if j + 1 < b.len() && b[j] == b'.' && b[j + 1].is_ascii_digit() {
                j += 1;
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
            }
            return text[start..j].parse().ok();
        }
        i += 1;
    }
    None
}
