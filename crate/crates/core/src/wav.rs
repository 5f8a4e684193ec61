//! RIFF/WAVE PCM reader and writer, restricted to 16-bit mono 16 kHz.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::{WaveBuffer, SAMPLE_RATE};

fn wav_err(path: &Path, field: &'static str, detail: impl Into<String>) -> Error {
    Error::Wav {
        path: path.display().to_string(),
        field,
        detail: detail.into(),
    }
}

fn to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// The value `x` takes after a write/read round trip.
pub fn quantize_pcm16(x: f64) -> f64 {
    to_pcm16(x) as f64 / 32768.0
}

/// Encodes samples as 16-bit PCM. Values are clamped to [-1, 1).
pub fn encode_wav(buf: &WaveBuffer) -> Vec<u8> {
    let data_len = (buf.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in buf.samples() {
        out.extend_from_slice(&to_pcm16(x).to_le_bytes());
    }
    out
}

pub fn decode_wav(bytes: &[u8], path: &Path) -> Result<WaveBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(wav_err(path, "riff", "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(wav_err(path, "format", "missing WAVE tag"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);

    let mut pos = 12;
    let mut fmt_seen = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(wav_err(
                path,
                "chunk",
                format!("chunk {:?} overruns file", String::from_utf8_lossy(id)),
            ));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err(path, "fmt", format!("chunk size {size} < 16")));
                }
                let audio_format = u16_at(body);
                if audio_format != 1 {
                    return Err(wav_err(
                        path,
                        "audio_format",
                        format!("PCM (1) required, found {audio_format}"),
                    ));
                }
                let channels = u16_at(body + 2);
                if channels != 1 {
                    return Err(wav_err(
                        path,
                        "channels",
                        format!("mono required, found {channels} channels"),
                    ));
                }
                let rate = u32_at(body + 4);
                if rate != SAMPLE_RATE {
                    return Err(wav_err(
                        path,
                        "sample_rate",
                        format!("{SAMPLE_RATE} Hz required, found {rate}"),
                    ));
                }
                let bits = u16_at(body + 14);
                if bits != 16 {
                    return Err(wav_err(
                        path,
                        "bits_per_sample",
                        format!("16 required, found {bits}"),
                    ));
                }
                fmt_seen = true;
            }
            b"data" => {
                if !fmt_seen {
                    return Err(wav_err(path, "fmt", "data chunk before fmt chunk"));
                }
                if size % 2 != 0 {
                    return Err(wav_err(path, "data", format!("odd byte count {size}")));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
                    .collect();
                return WaveBuffer::new(samples);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    if fmt_seen {
        Err(wav_err(path, "data", "no data chunk"))
    } else {
        Err(wav_err(path, "fmt", "no fmt chunk"))
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, path)
}

pub fn write_wav(path: impl AsRef<Path>, buf: &WaveBuffer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(buf)).map_err(|e| Error::io(path, e))
}
