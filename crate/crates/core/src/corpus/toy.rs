use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::manifest::{Manifest, ManifestRecord, RecordKind, Utterance};
use super::mixture::mix;
use crate::error::{Error, Result};
use crate::spectral::{WaveBuffer, SAMPLE_RATE};
use crate::wav::{quantize_pcm16, write_wav};

const RIR_TAPS: usize = 64;
const CLEAN_PEAK: f64 = 0.5;
const MIX_PEAK: f64 = 0.95;
const CLIP_DRIVE: f64 = 1.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpusConfig {
    pub num_train: usize,
    pub num_val: usize,
    pub num_real: usize,
    pub seconds: f64,
    /// Probability that a synthetic utterance is reverberated.
    pub rir_fraction: f64,
    pub snrs_db: Vec<f64>,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            num_train: 32,
            num_val: 16,
            num_real: 16,
            seconds: 2.0,
            rir_fraction: 0.5,
            snrs_db: vec![0.0, 5.0, 10.0, 15.0],
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snrs_db.is_empty() || self.snrs_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("corpus: snrs must be a non-empty list of finite values".into()));
        }
        if !(0.0..=1.0).contains(&self.rir_fraction) {
            return Err(Error::Config(format!("corpus: rir_fraction {} outside [0, 1]", self.rir_fraction)));
        }
        if !(self.seconds.is_finite() && self.num_samples() >= 384) {
            return Err(Error::Config(format!("corpus: {} s is shorter than one frame", self.seconds)));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.seconds * SAMPLE_RATE as f64).round() as usize
    }

    pub fn total(&self) -> usize {
        self.num_train + self.num_val + self.num_real
    }
}

/// The three partitions, each with its manifest records.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpus {
    pub train: Vec<Utterance>,
    pub val: Vec<Utterance>,
    pub real: Vec<Utterance>,
    pub train_records: Vec<ManifestRecord>,
    pub val_records: Vec<ManifestRecord>,
    pub real_records: Vec<ManifestRecord>,
}

/// Per-utterance seed, independent of generation order.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Harmonic tone with a wandering pitch and syllable-like amplitude gating.
pub fn harmonic_source(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.random_range(100.0..260.0);
    let harmonics = rng.random_range(3..=6);
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..TAU)).collect();
    let vibrato_rate = rng.random_range(0.3..1.5);
    let vibrato_phase = rng.random_range(0.0..TAU);
    let am_rate = rng.random_range(2.0..5.0);
    let am_phase = rng.random_range(0.0..TAU);
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let f = f0 * (1.0 + 0.05 * (TAU * vibrato_rate * t + vibrato_phase).sin());
        phase += TAU * f / sr;
        let env = (0.5 * (1.0 + (TAU * am_rate * t + am_phase).sin())).powi(2);
        let v: f64 = phases
            .iter()
            .enumerate()
            .map(|(h, p)| ((h + 1) as f64 * phase + p).sin() / (h + 1) as f64)
            .sum();
        out.push(env * v);
    }
    normalize_peak(&mut out, CLEAN_PEAK);
    out
}

/// First-order autoregressive noise with a random spectral tilt.
pub fn colored_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let a = rng.random_range(-0.5..0.95);
    let mut prev = 0.0;
    (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            prev = a * prev + w;
            prev
        })
        .collect()
}

/// Unit direct path followed by an exponentially decaying random tail.
pub fn decaying_rir(rng: &mut impl Rng) -> Vec<f64> {
    let tau = rng.random_range(4.0..16.0);
    (0..RIR_TAPS)
        .map(|i| {
            if i == 0 {
                1.0
            } else {
                let w: f64 = rng.sample(StandardNormal);
                0.5 * w * (-(i as f64) / tau).exp()
            }
        })
        .collect()
}

struct Generated {
    noisy: Vec<f64>,
    clean: Vec<f64>,
    snr: f64,
    seed: u64,
}

fn generate_one(cfg: &ToyCorpusConfig, seed: u64) -> Result<Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.num_samples();
    let clean = WaveBuffer::new(harmonic_source(n, &mut rng))?;
    let noise = WaveBuffer::new(colored_noise(n, &mut rng))?;
    let rir = rng.random_bool(cfg.rir_fraction).then(|| decaying_rir(&mut rng));
    let snr = cfg.snrs_db[rng.random_range(0..cfg.snrs_db.len())];
    let m = mix(&clean, &noise, rir.as_deref(), snr)?;
    let mut noisy = m.noisy.into_samples();
    let mut target = m.reverberant.into_samples();
    let peak = noisy.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > MIX_PEAK {
        let g = MIX_PEAK / peak;
        noisy.iter_mut().for_each(|v| *v *= g);
        target.iter_mut().for_each(|v| *v *= g);
    }
    Ok(Generated {
        noisy,
        clean: target,
        snr,
        seed,
    })
}

fn quantized(x: &[f64]) -> Result<WaveBuffer> {
    WaveBuffer::new(x.iter().map(|&v| quantize_pcm16(v)).collect())
}

/// Builds the corpus in memory. Samples are already on the 16-bit grid, so
/// they equal what [`write_toy_corpus`] stores and a manifest load returns.
pub fn generate_toy_utterances(cfg: &ToyCorpusConfig, seed: u64) -> Result<ToyCorpus> {
    cfg.validate()?;
    let mut corpus = ToyCorpus {
        train: Vec::new(),
        val: Vec::new(),
        real: Vec::new(),
        train_records: Vec::new(),
        val_records: Vec::new(),
        real_records: Vec::new(),
    };
    let parts = [
        ("train", cfg.num_train, RecordKind::Synthetic),
        ("val", cfg.num_val, RecordKind::Synthetic),
        ("real", cfg.num_real, RecordKind::Real),
    ];
    let mut index = 0u64;
    for (name, count, kind) in parts {
        for i in 0..count {
            let g = generate_one(cfg, derive_seed(seed, index))?;
            index += 1;
            let id = format!("{name}-{i:03}");
            let (noisy, clean) = match kind {
                RecordKind::Synthetic => (quantized(&g.noisy)?, Some(quantized(&g.clean)?)),
                RecordKind::Real => {
                    let clipped: Vec<f64> = g.noisy.iter().map(|v| (CLIP_DRIVE * v).tanh() / CLIP_DRIVE).collect();
                    (quantized(&clipped)?, None)
                }
            };
            let record = ManifestRecord {
                id: id.clone(),
                kind,
                noisy: format!("wav/{id}_noisy.wav"),
                clean: clean.as_ref().map(|_| format!("wav/{id}_clean.wav")),
                snr_db: (kind == RecordKind::Synthetic).then_some(g.snr),
                seed: g.seed,
            };
            let utt = Utterance { id, noisy, clean };
            let (utts, recs) = match name {
                "train" => (&mut corpus.train, &mut corpus.train_records),
                "val" => (&mut corpus.val, &mut corpus.val_records),
                _ => (&mut corpus.real, &mut corpus.real_records),
            };
            utts.push(utt);
            recs.push(record);
        }
    }
    Ok(corpus)
}

/// Paths of the written manifests.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpusManifests {
    pub train: Manifest,
    pub val: Manifest,
    pub real: Manifest,
}

/// Writes `wav/*.wav`, `train.tsv`, `val.tsv` and `real.tsv` under `out`.
pub fn write_toy_corpus(corpus: &ToyCorpus, out: &Path) -> Result<ToyCorpusManifests> {
    let wav_dir = out.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let write_part = |utts: &[Utterance], recs: &[ManifestRecord], file: &str| -> Result<Manifest> {
        for (u, r) in utts.iter().zip(recs) {
            write_wav(out.join(&r.noisy), &u.noisy)?;
            if let (Some(c), Some(p)) = (&u.clean, &r.clean) {
                write_wav(out.join(p), c)?;
            }
        }
        let m = Manifest::new(out, recs.to_vec())?;
        m.save(out.join(file))?;
        Ok(m)
    };
    Ok(ToyCorpusManifests {
        train: write_part(&corpus.train, &corpus.train_records, "train.tsv")?,
        val: write_part(&corpus.val, &corpus.val_records, "val.tsv")?,
        real: write_part(&corpus.real, &corpus.real_records, "real.tsv")?,
    })
}

/// Generates the corpus and writes it under `out`.
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig, seed: u64, out: &Path) -> Result<ToyCorpusManifests> {
    write_toy_corpus(&generate_toy_utterances(cfg, seed)?, out)
}
