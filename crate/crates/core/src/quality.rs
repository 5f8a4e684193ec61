//! Non-intrusive quality estimator with frame-level embeddings.
//!
//! Every frame is encoded independently (two strided frequency convolutions
//! and a dense embedding) and mapped to a score in `(score_min, score_max)`.
//! The utterance score is the plain mean of the frame scores.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{xavier_uniform, Checkpoint, Graph, Params, Tensor, Var};
use crate::error::{Error, Result};
use crate::spectral::{ComplexSpectrogram, FrameGrid};

/// Offset inside the compressed-magnitude feature, keeps its gradient finite.
const MAGNITUDE_FLOOR: f64 = 1e-6;
const MAGNITUDE_EXPONENT: f64 = 0.15;

#[derive(Clone, Debug, PartialEq)]
pub struct QualityConfig {
    pub bins_in: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub embedding: usize,
    pub block_len: usize,
    pub score_min: f64,
    pub score_max: f64,
    pub feature_scale: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            bins_in: 260,
            channels: vec![8, 16],
            kernel: 5,
            stride: 2,
            embedding: 32,
            block_len: 16,
            score_min: 1.04,
            score_max: 4.64,
            feature_scale: 0.1,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::Config(format!("qnet: {detail}")));
        if self.bins_in != 260 {
            return fail(format!("bins_in must be 260, got {}", self.bins_in));
        }
        if self.block_len != 16 {
            return fail(format!("block_len must be 16, got {}", self.block_len));
        }
        if self.score_max != 4.64 || !(self.score_min < self.score_max) {
            return fail(format!(
                "score range must be [min, 4.64] with min < 4.64, got [{}, {}]",
                self.score_min, self.score_max
            ));
        }
        if self.kernel % 2 == 0 {
            return fail(format!("kernel width must be odd, got {}", self.kernel));
        }
        if self.channels.is_empty() || self.channels.contains(&0) || self.embedding == 0 || self.stride == 0 {
            return fail("all sizes must be >= 1".into());
        }
        if !(self.feature_scale.is_finite() && self.feature_scale > 0.0) {
            return fail(format!("feature_scale must be positive, got {}", self.feature_scale));
        }
        if self.flat_len() == 0 {
            return fail("encoder collapses the frequency axis".into());
        }
        Ok(())
    }

    fn flat_len(&self) -> usize {
        let pad = self.kernel / 2;
        let mut f = self.bins_in;
        for _ in &self.channels {
            let padded = f + 2 * pad;
            f = if padded >= self.kernel {
                (padded - self.kernel) / self.stride + 1
            } else {
                0
            };
        }
        f * self.channels.last().copied().unwrap_or(0)
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        vec![
            ("qnet.bins_in".into(), self.bins_in.to_string()),
            (
                "qnet.channels".into(),
                self.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("qnet.kernel".into(), self.kernel.to_string()),
            ("qnet.stride".into(), self.stride.to_string()),
            ("qnet.embedding".into(), self.embedding.to_string()),
            ("qnet.block_len".into(), self.block_len.to_string()),
            ("qnet.score_min".into(), format!("{:?}", self.score_min)),
            ("qnet.score_max".into(), format!("{:?}", self.score_max)),
            ("qnet.feature_scale".into(), format!("{:?}", self.feature_scale)),
        ]
    }

    /// Reads `qnet.*` keys; missing keys keep their defaults.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut cfg = Self::default();
        let int = |key: &str, v: &str| -> Result<usize> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: not an integer: {v:?}")))
        };
        let real = |key: &str, v: &str| -> Result<f64> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: not a number: {v:?}")))
        };
        for key in ["bins_in", "kernel", "stride", "embedding", "block_len"] {
            let full = format!("qnet.{key}");
            if let Some(v) = get(&full) {
                let n = int(&full, &v)?;
                match key {
                    "bins_in" => cfg.bins_in = n,
                    "kernel" => cfg.kernel = n,
                    "stride" => cfg.stride = n,
                    "embedding" => cfg.embedding = n,
                    _ => cfg.block_len = n,
                }
            }
        }
        for key in ["score_min", "score_max", "feature_scale"] {
            let full = format!("qnet.{key}");
            if let Some(v) = get(&full) {
                let x = real(&full, &v)?;
                match key {
                    "score_min" => cfg.score_min = x,
                    "score_max" => cfg.score_max = x,
                    _ => cfg.feature_scale = x,
                }
            }
        }
        if let Some(v) = get("qnet.channels") {
            cfg.channels = v.split(',').map(|c| int("qnet.channels", c)).collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-frame scores, their block structure and the pooled utterance score.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityEstimate {
    frame_scores: Vec<f64>,
    block_len: usize,
    utterance_score: f64,
}

impl QualityEstimate {
    pub fn new(frame_scores: Vec<f64>, block_len: usize, utterance_score: f64) -> Result<Self> {
        if block_len == 0 || frame_scores.len() < block_len {
            return Err(Error::TooFewFrames {
                frames: frame_scores.len(),
                block: block_len,
            });
        }
        Ok(Self {
            frame_scores,
            block_len,
            utterance_score,
        })
    }

    /// Builds an estimate whose utterance score is the mean of the frame scores.
    pub fn pooled(frame_scores: Vec<f64>, block_len: usize) -> Result<Self> {
        let mean = frame_scores.iter().sum::<f64>() / frame_scores.len().max(1) as f64;
        Self::new(frame_scores, block_len, mean)
    }

    pub fn frame_scores(&self) -> &[f64] {
        &self.frame_scores
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn num_blocks(&self) -> usize {
        self.frame_scores.len() / self.block_len
    }

    /// Scores of block `b`, frames `b*block_len .. (b+1)*block_len`.
    pub fn block(&self, b: usize) -> &[f64] {
        &self.frame_scores[b * self.block_len..(b + 1) * self.block_len]
    }

    pub fn utterance_score(&self) -> f64 {
        self.utterance_score
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityModel {
    config: QualityConfig,
    params: Params,
}

impl QualityModel {
    pub fn new(config: QualityConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let k = config.kernel;
        let mut cin = 3;
        for (i, &cout) in config.channels.iter().enumerate() {
            p.insert(format!("conv{i}.w"), xavier_uniform(&[cout, cin, k], cin * k, cout * k, &mut rng));
            p.insert(format!("conv{i}.b"), Tensor::zeros(&[cout]));
            cin = cout;
        }
        let (d, e) = (config.flat_len(), config.embedding);
        p.insert("embed.w", xavier_uniform(&[d, e], d, e, &mut rng));
        p.insert("embed.b", Tensor::zeros(&[e]));
        p.insert("head.w", xavier_uniform(&[e, 1], e, 1, &mut rng));
        p.insert("head.b", Tensor::zeros(&[1]));
        Ok(Self { config, params: p })
    }

    /// All parameters zero: every score is the range midpoint.
    pub fn zeros(config: QualityConfig) -> Result<Self> {
        let m = Self::new(config, 0)?;
        Ok(Self {
            params: m.params.zeros_like(),
            config: m.config,
        })
    }

    pub fn from_params(config: QualityConfig, params: Params) -> Result<Self> {
        let template = Self::new(config, 0)?;
        template.params.check_layout(&params)?;
        Ok(Self {
            config: template.config,
            params,
        })
    }

    pub fn config(&self) -> &QualityConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.params.clone()).with_meta("model", "qnet");
        c.meta.extend(self.config.to_meta());
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta("model") != Some("qnet") {
            return Err(Error::Config(format!(
                "checkpoint holds model {:?}, expected qnet",
                ckpt.meta("model")
            )));
        }
        let cfg = QualityConfig::from_lookup(|k| ckpt.meta(k).map(str::to_string))?;
        Self::from_params(cfg, ckpt.params.clone())
    }

    /// Records the estimator on `g` for a spectrum given as `[frames, 260]`
    /// real and imaginary parts. Returns `(frame_scores [frames], utterance [])`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], re: Var, im: Var) -> Result<(Var, Var)> {
        let shape = g.shape(re).to_vec();
        if shape.len() != 2 || shape[1] != self.config.bins_in || g.shape(im) != shape.as_slice() {
            return Err(Error::shape(
                "estimate_quality",
                format!("expected [frames, {}] parts, got {:?} and {:?}", self.config.bins_in, shape, g.shape(im)),
            ));
        }
        let frames = shape[0];
        if frames < self.config.block_len {
            return Err(Error::TooFewFrames {
                frames,
                block: self.config.block_len,
            });
        }
        let at = |name: &str| vars[self.params.index_of(name).expect("parameter exists")];
        let cfg = &self.config;

        let active = g.constant(Tensor::new(
            shape.clone(),
            FrameGrid::default().active_bins().repeat(frames),
        )?);
        let re = g.mul(re, active)?;
        let im = g.mul(im, active)?;
        let re = g.scale(re, cfg.feature_scale)?;
        let im = g.scale(im, cfg.feature_scale)?;
        let re2 = g.square(re)?;
        let im2 = g.square(im)?;
        let power = g.add(re2, im2)?;
        let power = g.add_scalar(power, MAGNITUDE_FLOOR)?;
        let mag = g.pow(power, MAGNITUDE_EXPONENT)?;
        let mut x = g.stack(&[re, im, mag])?;

        for i in 0..cfg.channels.len() {
            let c = g.conv1d(x, at(&format!("conv{i}.w")), at(&format!("conv{i}.b")), cfg.stride, cfg.kernel / 2)?;
            x = g.tanh(c)?;
        }
        let flat = g.reshape(x, &[frames, cfg.flat_len()])?;
        let emb = g.linear(flat, at("embed.w"), at("embed.b"))?;
        let emb = g.tanh(emb)?;
        let logit = g.linear(emb, at("head.w"), at("head.b"))?;
        let unit = g.sigmoid(logit)?;
        let scaled = g.scale(unit, cfg.score_max - cfg.score_min)?;
        let scores = g.add_scalar(scaled, cfg.score_min)?;
        let scores = g.reshape(scores, &[frames])?;
        let utterance = g.mean_all(scores)?;
        Ok((scores, utterance))
    }

    pub fn estimate_quality(&self, s: &ComplexSpectrogram) -> Result<QualityEstimate> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let (re, im) = spectrum_constants(&mut g, s)?;
        let (scores, utt) = self.forward(&mut g, &vars, re, im)?;
        QualityEstimate::new(
            g.value(scores).data().to_vec(),
            self.config.block_len,
            g.value(utt).item(),
        )
    }

    /// Gradient of the utterance score with respect to the input spectrum,
    /// estimator parameters held constant.
    pub fn quality_grad_wrt_input(&self, s: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let shape = vec![s.num_frames(), s.num_bins()];
        let re = g.variable(Tensor::new(shape.clone(), s.re())?);
        let im = g.variable(Tensor::new(shape, s.im())?);
        let (_, utt) = self.forward(&mut g, &vars, re, im)?;
        let grads = g.backward(utt)?;
        let gre = grads.get(re).expect("input is trainable");
        let gim = grads.get(im).expect("input is trainable");
        ComplexSpectrogram::from_parts(s.num_frames(), gre.data(), gim.data(), s.grid())
    }
}

/// Binds a spectrogram as two `[frames, bins]` constants.
pub fn spectrum_constants(g: &mut Graph, s: &ComplexSpectrogram) -> Result<(Var, Var)> {
    let shape = vec![s.num_frames(), s.num_bins()];
    let re = g.constant(Tensor::new(shape.clone(), s.re())?);
    let im = g.constant(Tensor::new(shape, s.im())?);
    Ok((re, im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rustfft::num_complex::Complex64;

    fn random_spec(frames: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ComplexSpectrogram::zeros(frames, FrameGrid::default());
        for l in 0..frames {
            for k in 0..257 {
                s.set(l, k, Complex64::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)));
            }
        }
        s
    }

    #[test]
    fn zero_model_scores_midpoint() {
        let q = QualityModel::zeros(QualityConfig::default()).unwrap();
        let est = q.estimate_quality(&random_spec(20, 1)).unwrap();
        for &v in est.frame_scores() {
            assert!((v - 2.84).abs() < 1e-12);
        }
        assert!((est.utterance_score() - 2.84).abs() < 1e-12);
    }

    #[test]
    fn zero_model_has_zero_input_gradient() {
        let q = QualityModel::zeros(QualityConfig::default()).unwrap();
        let s = random_spec(16, 2);
        let grad = q.quality_grad_wrt_input(&s).unwrap();
        assert_eq!(grad.num_frames(), s.num_frames());
        assert_eq!(grad.num_bins(), s.num_bins());
        assert!(grad.as_slice().iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn thirty_three_frames_form_two_blocks() {
        let q = QualityModel::new(QualityConfig::default(), 3).unwrap();
        let est = q.estimate_quality(&random_spec(33, 3)).unwrap();
        assert_eq!(est.num_blocks(), 2);
        assert_eq!(est.frame_scores().len(), 33);
        let mean = est.frame_scores().iter().sum::<f64>() / 33.0;
        assert!((est.utterance_score() - mean).abs() < 1e-12);
    }

    #[test]
    fn too_few_frames() {
        let q = QualityModel::new(QualityConfig::default(), 3).unwrap();
        let err = q.estimate_quality(&random_spec(15, 3)).unwrap_err();
        assert!(err.to_string().contains("utterance too short for FLE blocks"));
    }

    #[test]
    fn scores_stay_in_open_range() {
        let q = QualityModel::new(QualityConfig::default(), 4).unwrap();
        let est = q.estimate_quality(&random_spec(16, 4)).unwrap();
        assert!(est.frame_scores().iter().all(|&v| v > 1.04 && v < 4.64));
    }

    #[test]
    fn config_invariants() {
        assert!(QualityConfig { block_len: 8, ..Default::default() }.validate().is_err());
        assert!(QualityConfig { score_max: 5.0, ..Default::default() }.validate().is_err());
        assert!(QualityConfig { score_min: 4.64, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let q = QualityModel::new(QualityConfig::default(), 6).unwrap();
        let back = QualityModel::from_checkpoint(&Checkpoint::from_bytes(&q.to_checkpoint().to_bytes(), "mem").unwrap())
            .unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        use crate::autodiff::{grad_check_sampled, GradCheckOptions};
        let q = QualityModel::new(QualityConfig::default(), 8).unwrap();
        let s = random_spec(16, 8);
        let point = vec![
            Tensor::new(vec![16, 260], s.re()).unwrap(),
            Tensor::new(vec![16, 260], s.im()).unwrap(),
        ];
        let opts = GradCheckOptions {
            max_coords_per_input: Some(40),
            ..Default::default()
        };
        let err = grad_check_sampled(
            |g, v| {
                let bound = q.params().bind(g, false);
                Ok(q.forward(g, &bound, v[0], v[1])?.1)
            },
            &point,
            &opts,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");

        let grad = q.quality_grad_wrt_input(&s).unwrap();
        let mut g = Graph::new();
        let bound = q.params().bind(&mut g, false);
        let re = g.variable(point[0].clone());
        let im = g.variable(point[1].clone());
        let (_, u) = q.forward(&mut g, &bound, re, im).unwrap();
        let grads = g.backward(u).unwrap();
        assert_eq!(grads.get(re).unwrap().data(), grad.re().as_slice());
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        use crate::autodiff::{grad_check_sampled, GradCheckOptions};
        let q = QualityModel::new(QualityConfig::default(), 9).unwrap();
        let s = random_spec(17, 9);
        let point: Vec<Tensor> = q.params().iter().map(|(_, t)| t.clone()).collect();
        let err = grad_check_sampled(
            |g, vars| {
                let (re, im) = spectrum_constants(g, &s)?;
                let (scores, _) = q.forward(g, vars, re, im)?;
                let sq = g.square(scores)?;
                g.mean_all(sq)
            },
            &point,
            &GradCheckOptions {
                max_coords_per_input: Some(8),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
