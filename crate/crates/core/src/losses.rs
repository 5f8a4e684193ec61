//! Training objectives: the compressed-spectrum pre-training loss, the
//! quality-estimator regression loss and the reference-free fine-tuning loss.
//!
//! Each loss has a value form on plain data and a graph form that records
//! the same computation for backpropagation.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::quality::QualityEstimate;
use crate::spectral::ComplexSpectrogram;

/// Highest attainable quality score; the fine-tuning target.
pub const PESQ_MAX: f64 = 4.64;
/// Lowest admissible label.
pub const PESQ_LABEL_MIN: f64 = 1.0;
/// Base of the utterance weight.
const WEIGHT_BASE: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BraunParams {
    /// Magnitude compression exponent.
    pub c: f64,
    /// Weight of the complex term; the compressed-magnitude term gets `1 - alpha`.
    pub alpha: f64,
}

impl Default for BraunParams {
    fn default() -> Self {
        Self { c: 0.3, alpha: 0.7 }
    }
}

impl BraunParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c <= 1.0) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain {
                op: "braun_loss",
                detail: format!("need 0 < c <= 1 and 0 <= alpha <= 1, got c={} alpha={}", self.c, self.alpha),
            });
        }
        Ok(())
    }
}

/// Utterance-level ground truth and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityLabel {
    pub score: f64,
    pub source: String,
}

impl QualityLabel {
    pub fn new(score: f64, source: impl Into<String>) -> Result<Self> {
        check_label(score, "QualityLabel")?;
        Ok(Self {
            score,
            source: source.into(),
        })
    }
}

fn check_label(score: f64, op: &'static str) -> Result<()> {
    if !(PESQ_LABEL_MIN..=PESQ_MAX).contains(&score) {
        return Err(Error::Domain {
            op,
            detail: format!("score {score} outside [{PESQ_LABEL_MIN}, {PESQ_MAX}]"),
        });
    }
    Ok(())
}

fn check_pair(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> Result<()> {
    if a.num_frames() != b.num_frames() || a.num_bins() != b.num_bins() {
        return Err(Error::shape(
            "braun_loss",
            format!(
                "{}x{} vs {}x{}",
                a.num_frames(),
                a.num_bins(),
                b.num_frames(),
                b.num_bins()
            ),
        ));
    }
    Ok(())
}

/// Pre-training loss normalised by `frames * dft_size`, with one-sided
/// terms weighted by their multiplicity in the two-sided spectrum.
pub fn braun_loss(est: &ComplexSpectrogram, target: &ComplexSpectrogram, p: BraunParams) -> Result<f64> {
    check_pair(est, target)?;
    let norm = (est.num_frames() * est.grid().dft_size()) as f64;
    braun_loss_normalized(est, target, p, norm)
}

/// [`braun_loss`] with an explicit normaliser in place of `frames * dft_size`.
pub fn braun_loss_normalized(
    est: &ComplexSpectrogram,
    target: &ComplexSpectrogram,
    p: BraunParams,
    normalizer: f64,
) -> Result<f64> {
    check_pair(est, target)?;
    p.validate()?;
    let weights = est.grid().two_sided_weights();
    let (mut complex, mut compressed) = (0.0, 0.0);
    for l in 0..est.num_frames() {
        for (k, &w) in weights.iter().enumerate() {
            let (a, b) = (est.get(l, k), target.get(l, k));
            complex += w * (a - b).norm_sqr();
            compressed += w * (a.norm().powf(p.c) - b.norm().powf(p.c)).powi(2);
        }
    }
    Ok((p.alpha * complex + (1.0 - p.alpha) * compressed) / normalizer)
}

/// Graph form of [`braun_loss`]; `est` is `(re, im)` of shape `[frames, bins]`.
pub fn braun_loss_graph(
    g: &mut Graph,
    est: (Var, Var),
    target: &ComplexSpectrogram,
    p: BraunParams,
) -> Result<Var> {
    p.validate()?;
    let shape = vec![target.num_frames(), target.num_bins()];
    if g.shape(est.0) != shape.as_slice() || g.shape(est.1) != shape.as_slice() {
        return Err(Error::shape(
            "braun_loss",
            format!("estimate {:?} vs target {:?}", g.shape(est.0), shape),
        ));
    }
    let frames = target.num_frames();
    let weights = g.constant(Tensor::new(
        shape.clone(),
        target.grid().two_sided_weights().repeat(frames),
    )?);
    let t_re = g.constant(Tensor::new(shape.clone(), target.re())?);
    let t_im = g.constant(Tensor::new(shape.clone(), target.im())?);
    let t_mag_c = g.constant(Tensor::new(
        shape,
        target.as_slice().iter().map(|z| z.norm().powf(p.c)).collect(),
    )?);

    let d_re = g.sub(est.0, t_re)?;
    let d_im = g.sub(est.1, t_im)?;
    let d_re2 = g.square(d_re)?;
    let d_im2 = g.square(d_im)?;
    let complex = g.add(d_re2, d_im2)?;

    let mag = g.complex_abs(est.0, est.1)?;
    let mag_c = g.pow(mag, p.c)?;
    let d_mag = g.sub(mag_c, t_mag_c)?;
    let compressed = g.square(d_mag)?;

    let complex = g.scale(complex, p.alpha)?;
    let compressed = g.scale(compressed, 1.0 - p.alpha)?;
    let total = g.add(complex, compressed)?;
    let total = g.mul(total, weights)?;
    let sum = g.sum_all(total)?;
    g.scale(sum, 1.0 / (frames * target.grid().dft_size()) as f64)
}

/// Utterance weight, 1 at the maximum score and decaying geometrically.
pub fn pesq_weight(score: f64) -> Result<f64> {
    check_label(score, "pesq_weight")?;
    Ok(WEIGHT_BASE.powf((score - PESQ_MAX).abs()))
}

/// Estimator regression loss: squared utterance error plus the weighted mean
/// squared error of the frame scores inside full blocks.
pub fn qnet_loss(est: &QualityEstimate, label: &QualityLabel) -> Result<f64> {
    let blocks = est.num_blocks();
    if blocks == 0 {
        return Err(Error::TooFewFrames {
            frames: est.frame_scores().len(),
            block: est.block_len(),
        });
    }
    let weight = pesq_weight(label.score)?;
    let in_blocks = blocks * est.block_len();
    let frame_term: f64 = est.frame_scores()[..in_blocks]
        .iter()
        .map(|q| (q - label.score).powi(2))
        .sum();
    Ok((est.utterance_score() - label.score).powi(2) + weight / in_blocks as f64 * frame_term)
}

/// Graph form of [`qnet_loss`]; `frame_scores` is `[frames]`, `utterance` a scalar.
pub fn qnet_loss_graph(
    g: &mut Graph,
    frame_scores: Var,
    utterance: Var,
    block_len: usize,
    label: &QualityLabel,
) -> Result<Var> {
    let frames = match g.shape(frame_scores) {
        [n] => *n,
        other => return Err(Error::shape("qnet_loss", format!("frame scores {other:?}"))),
    };
    let blocks = if block_len == 0 { 0 } else { frames / block_len };
    if blocks == 0 {
        return Err(Error::TooFewFrames {
            frames,
            block: block_len,
        });
    }
    let weight = pesq_weight(label.score)?;
    let in_blocks = blocks * block_len;
    let mask = g.constant(Tensor::vector(
        (0..frames).map(|l| if l < in_blocks { 1.0 } else { 0.0 }).collect(),
    ));
    let d = g.add_scalar(frame_scores, -label.score)?;
    let d2 = g.square(d)?;
    let d2 = g.mul(d2, mask)?;
    let frame_term = g.sum_all(d2)?;
    let frame_term = g.scale(frame_term, weight / in_blocks as f64)?;
    let du = g.add_scalar(utterance, -label.score)?;
    let utt_term = g.square(du)?;
    g.add(utt_term, frame_term)
}

/// Reference-free fine-tuning loss, pulling the utterance score to the maximum.
pub fn finetune_loss(est: &QualityEstimate) -> f64 {
    finetune_loss_value(est.utterance_score())
}

pub fn finetune_loss_value(utterance_score: f64) -> f64 {
    (utterance_score - PESQ_MAX).powi(2)
}

/// Graph form of [`finetune_loss`].
pub fn finetune_loss_graph(g: &mut Graph, utterance: Var) -> Result<Var> {
    let d = g.add_scalar(utterance, -PESQ_MAX)?;
    g.square(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FrameGrid;
    use rustfft::num_complex::Complex64;

    fn one_bin(v: f64) -> ComplexSpectrogram {
        let mut s = ComplexSpectrogram::zeros(1, FrameGrid::default());
        s.set(0, 0, Complex64::new(v, 0.0));
        s
    }

    #[test]
    fn braun_fixed_point() {
        let s = one_bin(3.0);
        assert_eq!(braun_loss(&s, &s, BraunParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn braun_single_bin_values() {
        let p = BraunParams::default();
        let zero = one_bin(0.0);
        let a = braun_loss_normalized(&zero, &one_bin(1.0), p, 1.0).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
        let b = braun_loss_normalized(&zero, &one_bin(4.0), p, 1.0).unwrap();
        assert!((b - 11.889_219_012_998_221).abs() < 1e-9);
    }

    #[test]
    fn braun_interior_bins_count_twice() {
        let p = BraunParams::default();
        let mut a = ComplexSpectrogram::zeros(1, FrameGrid::default());
        a.set(0, 5, Complex64::new(1.0, 0.0));
        let zero = ComplexSpectrogram::zeros(1, FrameGrid::default());
        let v = braun_loss(&a, &zero, p).unwrap();
        assert!((v - 2.0 / 512.0).abs() < 1e-15);
    }

    #[test]
    fn braun_graph_matches_value() {
        let p = BraunParams::default();
        let mut a = ComplexSpectrogram::zeros(2, FrameGrid::default());
        let mut b = ComplexSpectrogram::zeros(2, FrameGrid::default());
        for k in 0..257 {
            a.set(0, k, Complex64::new((k as f64).sin(), 0.3));
            b.set(1, k, Complex64::new(0.2, (k as f64).cos()));
        }
        let mut g = Graph::new();
        let re = g.constant(Tensor::new(vec![2, 260], a.re()).unwrap());
        let im = g.constant(Tensor::new(vec![2, 260], a.im()).unwrap());
        let l = braun_loss_graph(&mut g, (re, im), &b, p).unwrap();
        let v = braun_loss(&a, &b, p).unwrap();
        assert!((g.value(l).item() - v).abs() < 1e-12 * v.max(1.0));
    }

    #[test]
    fn braun_shape_mismatch() {
        let a = ComplexSpectrogram::zeros(1, FrameGrid::default());
        let b = ComplexSpectrogram::zeros(2, FrameGrid::default());
        assert!(braun_loss(&a, &b, BraunParams::default()).is_err());
    }

    #[test]
    fn pesq_weight_values() {
        assert_eq!(pesq_weight(4.64).unwrap(), 1.0);
        assert!((pesq_weight(3.64).unwrap() - 0.9).abs() < 1e-12);
        assert!((pesq_weight(1.04).unwrap() - 0.684_341_746_759_126_1).abs() < 1e-12);
        assert!(pesq_weight(0.5).is_err());
        assert!(pesq_weight(4.7).is_err());
    }

    #[test]
    fn qnet_loss_values() {
        let fixed = QualityEstimate::pooled(vec![3.0; 16], 16).unwrap();
        assert_eq!(qnet_loss(&fixed, &QualityLabel::new(3.0, "t").unwrap()).unwrap(), 0.0);

        let a = QualityEstimate::new(vec![4.64; 16], 16, 4.0).unwrap();
        let v = qnet_loss(&a, &QualityLabel::new(4.64, "t").unwrap()).unwrap();
        assert!((v - 0.4096).abs() < 1e-12);

        let b = QualityEstimate::new(vec![3.14; 16], 16, 3.64).unwrap();
        let v = qnet_loss(&b, &QualityLabel::new(3.64, "t").unwrap()).unwrap();
        assert!((v - 0.225).abs() < 1e-12);
    }

    #[test]
    fn qnet_loss_ignores_remainder_frames() {
        let mut scores = vec![3.0; 16];
        scores.push(1.5);
        let est = QualityEstimate::new(scores, 16, 3.0).unwrap();
        assert_eq!(qnet_loss(&est, &QualityLabel::new(3.0, "t").unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn qnet_graph_matches_value() {
        let scores: Vec<f64> = (0..35).map(|i| 1.5 + 0.07 * i as f64).collect();
        let est = QualityEstimate::pooled(scores.clone(), 16).unwrap();
        let label = QualityLabel::new(2.2, "t").unwrap();
        let mut g = Graph::new();
        let q = g.constant(Tensor::vector(scores));
        let u = g.mean_all(q).unwrap();
        let l = qnet_loss_graph(&mut g, q, u, 16, &label).unwrap();
        let v = qnet_loss(&est, &label).unwrap();
        assert!((g.value(l).item() - v).abs() < 1e-12);
    }

    #[test]
    fn finetune_values() {
        assert_eq!(finetune_loss_value(4.64), 0.0);
        assert!((finetune_loss_value(2.64) - 4.0).abs() < 1e-12);
        assert!((finetune_loss_value(1.04) - 12.96).abs() < 1e-12);
    }

    #[test]
    fn label_range() {
        assert!(QualityLabel::new(0.99, "t").is_err());
        assert!(QualityLabel::new(4.64, "t").is_ok());
    }
}
