//! Scores a clean and a noisy version of the same utterance with the
//! quality estimator and the surrogate oracle, and prints how the estimate
//! responds to its input.
//!
//! Usage: cargo run --example quality_estimate

use perceploop::corpus::{colored_noise, harmonic_source, mix, QualityOracle};
use perceploop::quality::{QualityConfig, QualityModel};
use perceploop::spectral::{stft, FrameGrid, WaveBuffer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let rng = &mut ChaCha8Rng::seed_from_u64(4);
    let clean = WaveBuffer::new(harmonic_source(24_000, rng))?;
    let noise = WaveBuffer::new(colored_noise(24_000, rng))?;
    let qnet = QualityModel::new(QualityConfig::default(), 4)?;
    let oracle = QualityOracle::default();
    for snr in [0.0, 10.0, 20.0] {
        let noisy = mix(&clean, &noise, None, snr)?.noisy;
        let spec = stft(&noisy, FrameGrid::default())?;
        let est = qnet.estimate_quality(&spec)?;
        let grad = qnet.quality_grad_wrt_input(&spec)?;
        let norm = grad.as_slice().iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        println!(
            "snr {snr:>4.1} dB: estimate {:.4} over {} frames ({} blocks), oracle {:.4}, |grad| {norm:.3e}",
            est.utterance_score(),
            est.frame_scores().len(),
            est.num_blocks(),
            oracle.score(&noisy, &clean)?
        );
    }
    Ok(())
}
