//! Segmental SNR and manifest evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{Manifest, QualityOracle, RecordKind, Utterance};
use crate::dns::{enhance_waveform, MaskPredictor};
use crate::error::{Error, Result};
use crate::spectral::WaveBuffer;
use crate::wav::read_wav;

/// Segments whose reference energy is below this are skipped.
const SILENT_SEGMENT: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegSnrParams {
    pub segment_len: usize,
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for SegSnrParams {
    fn default() -> Self {
        Self {
            segment_len: 384,
            min_db: -10.0,
            max_db: 35.0,
        }
    }
}

impl SegSnrParams {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len == 0 || !(self.min_db < self.max_db) {
            return Err(Error::Domain {
                op: "segmental_snr",
                detail: format!(
                    "need segment_len > 0 and min < max, got {} and [{}, {}]",
                    self.segment_len, self.min_db, self.max_db
                ),
            });
        }
        Ok(())
    }
}

/// Mean over non-silent segments of the clamped per-segment SNR in dB.
/// Trailing samples that do not fill a segment are ignored.
pub fn segmental_snr(reference: &WaveBuffer, test: &WaveBuffer, p: SegSnrParams) -> Result<f64> {
    p.validate()?;
    if reference.len() != test.len() {
        return Err(Error::shape(
            "segmental_snr",
            format!("reference has {} samples, test has {}", reference.len(), test.len()),
        ));
    }
    if reference.len() < p.segment_len {
        return Err(Error::InputTooShort {
            got: reference.len(),
            need: p.segment_len,
        });
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (r, t) in reference
        .samples()
        .chunks_exact(p.segment_len)
        .zip(test.samples().chunks_exact(p.segment_len))
    {
        let signal: f64 = r.iter().map(|v| v * v).sum();
        if signal < SILENT_SEGMENT {
            continue;
        }
        let noise: f64 = r.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = if noise == 0.0 {
            p.max_db
        } else {
            (10.0 * (signal / noise).log10()).clamp(p.min_db, p.max_db)
        };
        total += db;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Domain {
            op: "segmental_snr",
            detail: "all reference segments are silent".into(),
        });
    }
    Ok(total / count as f64)
}

/// Segmental SNR of the enhanced signal minus that of the noisy signal.
pub fn delta_snr_seg(clean: &WaveBuffer, noisy: &WaveBuffer, enhanced: &WaveBuffer, p: SegSnrParams) -> Result<f64> {
    Ok(segmental_snr(clean, enhanced, p)? - segmental_snr(clean, noisy, p)?)
}

/// Region on which enhanced output is compared: the signal trimmed to the
/// synthesis length with one frame dropped at each end.
pub fn interior(x: &WaveBuffer, out_len: usize, margin: usize) -> WaveBuffer {
    let end = out_len.min(x.len()).saturating_sub(margin);
    x.slice(margin.min(end), end)
}

#[derive(Clone, Debug, PartialEq)]
pub enum RowOutcome {
    Scored { delta_snr_seg: f64, oracle: f64 },
    /// Reference-free record without a reference-free scorer.
    Unscored,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub outcome: RowOutcome,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Means of ΔSNRseg and oracle score over scored rows; zeros when none.
    pub fn aggregate(&self) -> (f64, f64) {
        let scored: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| match r.outcome {
                RowOutcome::Scored { delta_snr_seg, oracle } => Some((delta_snr_seg, oracle)),
                _ => None,
            })
            .collect();
        if scored.is_empty() {
            return (0.0, 0.0);
        }
        let n = scored.len() as f64;
        (
            scored.iter().map(|s| s.0).sum::<f64>() / n,
            scored.iter().map(|s| s.1).sum::<f64>() / n,
        )
    }

    /// `id<TAB>delta<TAB>oracle` rows, then `#aggregate<TAB>mean<TAB>mean`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            match &row.outcome {
                RowOutcome::Scored { delta_snr_seg, oracle } => {
                    let _ = writeln!(out, "{}\t{:.6}\t{:.6}", row.id, delta_snr_seg, oracle);
                }
                RowOutcome::Unscored => {
                    let _ = writeln!(out, "{}\t-\tunscored", row.id);
                }
                RowOutcome::Failed(msg) => {
                    let _ = writeln!(out, "{}\t-\t-", row.id);
                    let _ = writeln!(out, "#error\t{}\t{}", row.id, msg.replace(['\t', '\n'], " "));
                }
            }
        }
        let (d, o) = self.aggregate();
        let _ = writeln!(out, "#aggregate\t{d:.6}\t{o:.6}");
        out
    }
}

/// Scores one enhanced synthetic utterance on the interior region.
pub fn score_enhanced(
    clean: &WaveBuffer,
    noisy: &WaveBuffer,
    enhanced: &WaveBuffer,
    oracle: &QualityOracle,
    p: SegSnrParams,
) -> Result<(f64, f64)> {
    let margin = crate::spectral::FrameGrid::default().frame_length();
    let s = interior(clean, enhanced.len(), margin);
    let y = interior(noisy, enhanced.len(), margin);
    let e = interior(enhanced, enhanced.len(), margin);
    Ok((delta_snr_seg(&s, &y, &e, p)?, oracle.score(&e, &s)?))
}

/// Oracle score of `enhanced` against `clean`, both cut to the interior.
pub fn interior_oracle_score(enhanced: &WaveBuffer, clean: &WaveBuffer, oracle: &QualityOracle) -> Result<f64> {
    let margin = crate::spectral::FrameGrid::default().frame_length();
    let s = interior(clean, enhanced.len(), margin);
    let e = interior(enhanced, enhanced.len(), margin);
    oracle.score(&e, &s)
}

/// Like [`evaluate_manifest`] for utterances already in memory. Utterances
/// without a reference are reported as unscored.
pub fn evaluate_utterances(
    utts: &[Utterance],
    model: &impl MaskPredictor,
    oracle: &QualityOracle,
    p: SegSnrParams,
) -> EvalReport {
    let rows = utts
        .iter()
        .map(|u| {
            let outcome = (|| -> Result<RowOutcome> {
                let Some(clean) = &u.clean else {
                    return Ok(RowOutcome::Unscored);
                };
                let enhanced = enhance_waveform(&u.noisy, model)?;
                let (d, o) = score_enhanced(clean, &u.noisy, &enhanced, oracle, p)?;
                Ok(RowOutcome::Scored {
                    delta_snr_seg: d,
                    oracle: o,
                })
            })()
            .unwrap_or_else(|e| RowOutcome::Failed(e.to_string()));
            EvalRow {
                id: u.id.clone(),
                outcome,
            }
        })
        .collect();
    EvalReport { rows }
}

/// Enhances every record of `manifest`, scoring those with a reference.
/// Per-record failures become error rows and the run continues.
pub fn evaluate_manifest(
    manifest: &Manifest,
    model: &impl MaskPredictor,
    oracle: &QualityOracle,
    p: SegSnrParams,
) -> EvalReport {
    let rows = manifest
        .records
        .iter()
        .map(|rec| {
            let outcome = (|| -> Result<RowOutcome> {
                let noisy = read_wav(manifest.resolve(&rec.noisy))?;
                let enhanced = enhance_waveform(&noisy, model)?;
                match (&rec.kind, &rec.clean) {
                    (RecordKind::Synthetic, Some(clean)) => {
                        let clean = read_wav(manifest.resolve(clean))?;
                        let (d, o) = score_enhanced(&clean, &noisy, &enhanced, oracle, p)?;
                        Ok(RowOutcome::Scored {
                            delta_snr_seg: d,
                            oracle: o,
                        })
                    }
                    _ => match oracle.score_reference_free(&enhanced)? {
                        Some(o) => Ok(RowOutcome::Scored {
                            delta_snr_seg: 0.0,
                            oracle: o,
                        }),
                        None => Ok(RowOutcome::Unscored),
                    },
                }
            })()
            .unwrap_or_else(|e| RowOutcome::Failed(e.to_string()));
            EvalRow {
                id: rec.id.clone(),
                outcome,
            }
        })
        .collect();
    EvalReport { rows }
}

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_text()).map_err(|e| Error::io(path, e))
}
