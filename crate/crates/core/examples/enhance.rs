//! Enhances a WAV file with a checkpoint, or with a freshly initialised
//! model when no checkpoint is given, and prints the mask statistics.
//!
//! Usage: cargo run --example enhance -- in.wav out.wav [dns.ckpt]

use anyhow::Context;
use perceploop::autodiff::load_checkpoint;
use perceploop::dns::{enhance_waveform, DnsConfig, DnsModel, MaskPredictor};
use perceploop::spectral::{stft, FrameGrid};
use perceploop::wav::{read_wav, write_wav};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let (input, output) = match (args.get(1), args.get(2)) {
        (Some(i), Some(o)) => (i, o),
        _ => anyhow::bail!("usage: enhance in.wav out.wav [dns.ckpt]"),
    };
    let model = match args.get(3) {
        Some(p) => DnsModel::from_checkpoint(&load_checkpoint(p)?)?,
        None => DnsModel::new(DnsConfig::default(), 0)?,
    };
    let noisy = read_wav(input).with_context(|| format!("reading {input}"))?;
    let mask = model.predict_mask(&stft(&noisy, FrameGrid::default())?)?;
    let enhanced = enhance_waveform(&noisy, &model)?;
    write_wav(output, &enhanced)?;
    println!(
        "{} frames, max |mask| {:.4}, {} -> {} samples",
        mask.num_frames(),
        mask.max_magnitude(),
        noisy.len(),
        enhanced.len()
    );
    Ok(())
}
