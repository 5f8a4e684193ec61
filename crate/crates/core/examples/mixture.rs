//! Builds one reverberant noisy mixture from synthetic sources and checks
//! the achieved signal-to-noise ratio.
//!
//! Usage: cargo run --example mixture -- [snr_db] [out.wav]

use perceploop::corpus::{active_power, colored_noise, decaying_rir, harmonic_source, mix};
use perceploop::spectral::WaveBuffer;
use perceploop::wav::write_wav;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let snr: f64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(5.0);
    let rng = &mut ChaCha8Rng::seed_from_u64(1);
    let clean = WaveBuffer::new(harmonic_source(32_000, rng))?;
    let noise = WaveBuffer::new(colored_noise(32_000, rng))?;
    let rir = decaying_rir(rng);
    let m = mix(&clean, &noise, Some(&rir), snr)?;
    let achieved = 10.0 * (active_power(m.reverberant.samples()) / active_power(m.noise.samples())).log10();
    println!("target {snr:.2} dB, achieved {achieved:.6} dB, impulse response {} taps", rir.len());
    if let Some(path) = args.get(2) {
        let peak = m.noisy.peak().max(1e-12);
        let scaled = WaveBuffer::new(m.noisy.samples().iter().map(|v| 0.9 * v / peak).collect())?;
        write_wav(path, &scaled)?;
        println!("wrote {path}");
    }
    Ok(())
}
