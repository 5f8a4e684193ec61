//! Analyses a tone burst, resynthesises it and reports the reconstruction
//! error on the interior of the signal.
//!
//! Usage: cargo run --example stft_roundtrip

use perceploop::spectral::{istft_ola, stft, FrameGrid, WaveBuffer};

fn main() -> anyhow::Result<()> {
    let grid = FrameGrid::default();
    let x: Vec<f64> = (0..16_000)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            0.4 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() * (1.0 + (3.0 * t).sin()) / 2.0
        })
        .collect();
    let x = WaveBuffer::new(x)?;
    let spec = stft(&x, grid)?;
    let y = istft_ola(&spec)?;
    let margin = grid.frame_length();
    let end = y.len() - margin;
    let (signal, error) = (margin..end).fold((0.0, 0.0), |(s, e), i| {
        let d = x.samples()[i] - y.samples()[i];
        (s + x.samples()[i].powi(2), e + d * d)
    });
    println!(
        "{} samples -> {} frames x {} bins -> {} samples",
        x.len(),
        spec.num_frames(),
        spec.num_bins(),
        y.len()
    );
    println!("interior reconstruction error: {:.1} dB", 10.0 * (error / signal).log10());
    Ok(())
}
