//! STFT analysis and overlap-add synthesis on a fixed 16 kHz grid.
//!
//! Frames are 384 samples with a 192-sample hop, windowed by a periodic
//! Hann window and zero-padded to a 512-point DFT. The 257 unique bins are
//! stored in a 260-wide row whose last three entries are always zero, which
//! is the layout both networks consume.
//!
//! Synthesis applies no window: periodic Hann at 50% overlap sums to exactly
//! one, so plain overlap-add of the inverse transforms reconstructs the
//! input everywhere except the first and last `frame_length` samples.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz signal.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveBuffer {
    samples: Vec<f64>,
}

impl WaveBuffer {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Copy of `samples[start..end]`.
    pub fn slice(&self, start: usize, end: usize) -> WaveBuffer {
        WaveBuffer {
            samples: self.samples[start..end].to_vec(),
        }
    }

    /// First `len` samples.
    pub fn truncated(&self, len: usize) -> WaveBuffer {
        self.slice(0, len.min(self.len()))
    }
}

/// Framing parameters. Only the standard grid satisfies the 260-bin layout,
/// but the struct is kept explicit so every call site names its grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameGrid {
    frame_length: usize,
    hop: usize,
    dft_size: usize,
    num_bins_stored: usize,
}

impl Default for FrameGrid {
    fn default() -> Self {
        Self {
            frame_length: 384,
            hop: 192,
            dft_size: 512,
            num_bins_stored: 260,
        }
    }
}

impl FrameGrid {
    pub fn new(frame_length: usize, dft_size: usize, num_bins_stored: usize) -> Result<Self> {
        let grid = Self {
            frame_length,
            hop: frame_length / 2,
            dft_size,
            num_bins_stored,
        };
        if frame_length < 2 || frame_length % 2 != 0 {
            return Err(Error::Domain {
                op: "FrameGrid",
                detail: format!("frame length {frame_length} must be even and >= 2"),
            });
        }
        if dft_size < frame_length {
            return Err(Error::Domain {
                op: "FrameGrid",
                detail: format!("dft size {dft_size} < frame length {frame_length}"),
            });
        }
        if num_bins_stored < grid.num_bins_unique() {
            return Err(Error::Domain {
                op: "FrameGrid",
                detail: format!(
                    "{num_bins_stored} stored bins cannot hold {} unique bins",
                    grid.num_bins_unique()
                ),
            });
        }
        Ok(grid)
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn dft_size(&self) -> usize {
        self.dft_size
    }

    pub fn num_bins_stored(&self) -> usize {
        self.num_bins_stored
    }

    pub fn num_bins_unique(&self) -> usize {
        self.dft_size / 2 + 1
    }

    /// Frames produced by [`stft`] for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_length {
            0
        } else {
            (len - self.frame_length) / self.hop + 1
        }
    }

    /// Samples produced by [`istft_ola`] for `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_length
        }
    }

    /// Periodic Hann window of length `frame_length`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.frame_length as f64;
        (0..self.frame_length)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect()
    }

    /// Multiplicity of each stored bin in the full two-sided spectrum:
    /// 1 for DC and Nyquist, 2 for interior bins, 0 for padding.
    pub fn two_sided_weights(&self) -> Vec<f64> {
        let unique = self.num_bins_unique();
        (0..self.num_bins_stored)
            .map(|k| {
                if k == 0 || k == unique - 1 {
                    1.0
                } else if k < unique {
                    2.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// 1 for unique bins, 0 for padding.
    pub fn active_bins(&self) -> Vec<f64> {
        (0..self.num_bins_stored)
            .map(|k| if k < self.num_bins_unique() { 1.0 } else { 0.0 })
            .collect()
    }
}

/// `frames x num_bins_stored` complex values, row-major by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    grid: FrameGrid,
    frames: usize,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, grid: FrameGrid) -> Self {
        Self {
            grid,
            frames,
            data: vec![Complex64::new(0.0, 0.0); frames * grid.num_bins_stored],
        }
    }

    /// Builds a spectrogram from split real/imaginary parts. Padding bins
    /// must be zero.
    pub fn from_parts(frames: usize, re: &[f64], im: &[f64], grid: FrameGrid) -> Result<Self> {
        let n = frames * grid.num_bins_stored;
        if re.len() != n || im.len() != n {
            return Err(Error::shape(
                "ComplexSpectrogram::from_parts",
                format!(
                    "expected {n} values for {frames} frames, got re={} im={}",
                    re.len(),
                    im.len()
                ),
            ));
        }
        let data = re
            .iter()
            .zip(im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        let spec = Self { grid, frames, data };
        spec.check_padding()?;
        Ok(spec)
    }

    pub fn grid(&self) -> FrameGrid {
        self.grid
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_bins(&self) -> usize {
        self.grid.num_bins_stored
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.grid.num_bins_stored + bin]
    }

    /// Sets a unique bin. Writes to padding bins are dropped.
    pub fn set(&mut self, frame: usize, bin: usize, value: Complex64) {
        if bin < self.grid.num_bins_unique() {
            self.data[frame * self.grid.num_bins_stored + bin] = value;
        }
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        let w = self.grid.num_bins_stored;
        &self.data[frame * w..(frame + 1) * w]
    }

    pub fn re(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.im).collect()
    }

    pub fn check_padding(&self) -> Result<()> {
        let unique = self.grid.num_bins_unique();
        for l in 0..self.frames {
            for (k, c) in self.frame(l).iter().enumerate().skip(unique) {
                if c.re != 0.0 || c.im != 0.0 {
                    return Err(Error::MalformedSpectrogram(format!(
                        "padding bin {k} of frame {l} is {c}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn plan(size: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(size)
    } else {
        planner.plan_fft_forward(size)
    }
}

pub fn stft(x: &WaveBuffer, grid: FrameGrid) -> Result<ComplexSpectrogram> {
    let n = grid.frame_length;
    if x.len() < n {
        return Err(Error::InputTooShort {
            got: x.len(),
            need: n,
        });
    }
    let frames = grid.num_frames(x.len());
    let window = grid.window();
    let fft = plan(grid.dft_size, false);
    let mut buf = vec![Complex64::new(0.0, 0.0); grid.dft_size];
    let mut out = ComplexSpectrogram::zeros(frames, grid);
    let unique = grid.num_bins_unique();
    let width = grid.num_bins_stored;
    for l in 0..frames {
        let start = l * grid.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < n {
                Complex64::new(x.samples[start + i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        out.data[l * width..l * width + unique].copy_from_slice(&buf[..unique]);
    }
    Ok(out)
}

/// Inverse DFT of every frame followed by plain overlap-add.
pub fn istft_ola(spec: &ComplexSpectrogram) -> Result<WaveBuffer> {
    spec.check_padding()?;
    let grid = spec.grid;
    let size = grid.dft_size;
    let unique = grid.num_bins_unique();
    let ifft = plan(size, true);
    let mut out = vec![0.0; grid.output_len(spec.frames)];
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    let scale = 1.0 / size as f64;
    for l in 0..spec.frames {
        let row = spec.frame(l);
        buf[..unique].copy_from_slice(&row[..unique]);
        for k in unique..size {
            buf[k] = row[size - k].conj();
        }
        ifft.process(&mut buf);
        let start = l * grid.hop;
        for i in 0..grid.frame_length {
            out[start + i] += buf[i].re * scale;
        }
    }
    WaveBuffer::new(out)
}
