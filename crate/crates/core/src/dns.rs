//! Convolutional-recurrent mask estimator.
//!
//! Each frame's stacked real/imaginary spectrum passes through strided
//! frequency convolutions, a gated recurrence over frames, and a mirrored
//! transposed-convolution decoder with additive skips. The raw complex
//! output `O` is bounded to `M = O * tanh(|O|) / max(|O|, 1e-8)`, so
//! `|M| < 1` and the enhanced spectrum `Y * M` never gains energy per bin.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::autodiff::{xavier_uniform, Checkpoint, Graph, Params, Tensor, Var};
use crate::error::{Error, Result};
use crate::spectral::{istft_ola, stft, ComplexSpectrogram, FrameGrid, WaveBuffer};

const GAIN_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct DnsConfig {
    pub bins_in: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub hidden: usize,
    /// Input spectra are multiplied by this before the first layer.
    pub feature_scale: f64,
}

impl Default for DnsConfig {
    fn default() -> Self {
        Self {
            bins_in: 260,
            channels: vec![8, 16],
            kernel: 5,
            stride: 2,
            hidden: 64,
            feature_scale: 0.1,
        }
    }
}

impl DnsConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::Config(format!("dns: {detail}")));
        if self.bins_in != 260 {
            return fail(format!("bins_in must be 260, got {}", self.bins_in));
        }
        if self.kernel % 2 == 0 {
            return fail(format!("kernel width must be odd, got {}", self.kernel));
        }
        if self.channels.is_empty() || self.channels.contains(&0) || self.hidden == 0 || self.stride == 0 {
            return fail("all sizes must be >= 1".into());
        }
        if !(self.feature_scale.is_finite() && self.feature_scale > 0.0) {
            return fail(format!("feature_scale must be positive, got {}", self.feature_scale));
        }
        let lens = self.lengths();
        for i in 0..self.channels.len() {
            if lens[i + 1] == 0 || self.output_padding(i).is_none() {
                return fail(format!(
                    "layer {i} cannot be mirrored: {} bins -> {}",
                    lens[i],
                    lens[i + 1]
                ));
            }
        }
        Ok(())
    }

    fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Frequency length at the input of each encoder layer and after the last.
    fn lengths(&self) -> Vec<usize> {
        let mut lens = vec![self.bins_in];
        for _ in &self.channels {
            let f = *lens.last().unwrap();
            let padded = f + 2 * self.padding();
            lens.push(if padded >= self.kernel {
                (padded - self.kernel) / self.stride + 1
            } else {
                0
            });
        }
        lens
    }

    /// Output padding that makes decoder layer `i` restore encoder length `i`.
    fn output_padding(&self, i: usize) -> Option<usize> {
        let lens = self.lengths();
        let base = (lens[i + 1].checked_sub(1)?) * self.stride + self.kernel;
        let target = lens[i] + 2 * self.padding();
        let op = target.checked_sub(base)?;
        (op < self.stride).then_some(op)
    }

    fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            2
        } else {
            self.channels[layer - 1]
        }
    }

    fn bottleneck(&self) -> usize {
        self.channels.last().unwrap() * self.lengths().last().unwrap()
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        vec![
            ("dns.bins_in".into(), self.bins_in.to_string()),
            (
                "dns.channels".into(),
                self.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("dns.kernel".into(), self.kernel.to_string()),
            ("dns.stride".into(), self.stride.to_string()),
            ("dns.hidden".into(), self.hidden.to_string()),
            ("dns.feature_scale".into(), format!("{:?}", self.feature_scale)),
        ]
    }

    /// Reads `dns.*` keys; missing keys keep their defaults.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut cfg = Self::default();
        let parse = |key: &str, v: String| -> Result<usize> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: not an integer: {v:?}")))
        };
        if let Some(v) = get("dns.bins_in") {
            cfg.bins_in = parse("dns.bins_in", v)?;
        }
        if let Some(v) = get("dns.channels") {
            cfg.channels = v
                .split(',')
                .map(|c| parse("dns.channels", c.to_string()))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("dns.kernel") {
            cfg.kernel = parse("dns.kernel", v)?;
        }
        if let Some(v) = get("dns.stride") {
            cfg.stride = parse("dns.stride", v)?;
        }
        if let Some(v) = get("dns.hidden") {
            cfg.hidden = parse("dns.hidden", v)?;
        }
        if let Some(v) = get("dns.feature_scale") {
            cfg.feature_scale = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("dns.feature_scale: not a number: {v:?}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Complex mask, `frames x 260`, with `|M| < 1` and zero padding bins.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskTensor {
    frames: usize,
    values: Vec<Complex64>,
}

impl MaskTensor {
    pub fn new(frames: usize, values: Vec<Complex64>) -> Result<Self> {
        let width = FrameGrid::default().num_bins_stored();
        if values.len() != frames * width {
            return Err(Error::shape(
                "MaskTensor::new",
                format!("{} values for {frames} frames", values.len()),
            ));
        }
        Ok(Self { frames, values })
    }

    /// Identity mask (`M = 1`) on the unique bins.
    pub fn identity(frames: usize) -> Self {
        let grid = FrameGrid::default();
        let row: Vec<Complex64> = grid
            .active_bins()
            .into_iter()
            .map(|a| Complex64::new(a, 0.0))
            .collect();
        Self {
            frames,
            values: row.repeat(frames),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().fold(0.0, |m, c| m.max(c.norm()))
    }
}

/// `Ŝ = Y · M` elementwise.
pub fn apply_mask(y: &ComplexSpectrogram, m: &MaskTensor) -> Result<ComplexSpectrogram> {
    if y.num_frames() != m.frames || y.num_bins() * y.num_frames() != m.values.len() {
        return Err(Error::shape(
            "apply_mask",
            format!(
                "spectrogram {}x{} vs mask {} frames",
                y.num_frames(),
                y.num_bins(),
                m.frames
            ),
        ));
    }
    let mut out = ComplexSpectrogram::zeros(y.num_frames(), y.grid());
    for l in 0..y.num_frames() {
        for k in 0..y.num_bins() {
            out.set(l, k, y.get(l, k) * m.values[l * y.num_bins() + k]);
        }
    }
    Ok(out)
}

/// Anything that maps a noisy spectrogram to a bounded mask.
pub trait MaskPredictor {
    fn predict_mask(&self, y: &ComplexSpectrogram) -> Result<MaskTensor>;
}

/// Passes the input through unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityMask;

impl MaskPredictor for IdentityMask {
    fn predict_mask(&self, y: &ComplexSpectrogram) -> Result<MaskTensor> {
        Ok(MaskTensor::identity(y.num_frames()))
    }
}

/// `istft_ola(apply_mask(stft(y), predict_mask(stft(y))))`.
pub fn enhance_waveform(y: &WaveBuffer, model: &impl MaskPredictor) -> Result<WaveBuffer> {
    let spec = stft(y, FrameGrid::default())?;
    let mask = model.predict_mask(&spec)?;
    istft_ola(&apply_mask(&spec, &mask)?)
}

/// Graph handles of the model parameters, in the order they are stored.
struct Bound {
    enc: Vec<(Var, Var)>,
    wz: Var,
    bz: Var,
    wc: Var,
    bc: Var,
    uz: Var,
    uc: Var,
    proj_w: Var,
    proj_b: Var,
    dec: Vec<(Var, Var)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DnsModel {
    config: DnsConfig,
    params: Params,
}

impl DnsModel {
    /// Randomly initialised model.
    pub fn new(config: DnsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let k = config.kernel;
        for (i, &cout) in config.channels.iter().enumerate() {
            let cin = config.in_channels(i);
            p.insert(format!("enc{i}.w"), xavier_uniform(&[cout, cin, k], cin * k, cout * k, &mut rng));
            p.insert(format!("enc{i}.b"), Tensor::zeros(&[cout]));
        }
        let (d, h) = (config.bottleneck(), config.hidden);
        p.insert("gru.wz", xavier_uniform(&[d, h], d, h, &mut rng));
        p.insert("gru.bz", Tensor::zeros(&[h]));
        p.insert("gru.wc", xavier_uniform(&[d, h], d, h, &mut rng));
        p.insert("gru.bc", Tensor::zeros(&[h]));
        p.insert("gru.uz", xavier_uniform(&[h, h], h, h, &mut rng));
        p.insert("gru.uc", xavier_uniform(&[h, h], h, h, &mut rng));
        p.insert("proj.w", xavier_uniform(&[h, d], h, d, &mut rng));
        p.insert("proj.b", Tensor::zeros(&[d]));
        for i in (0..config.channels.len()).rev() {
            let cin = config.channels[i];
            let cout = config.in_channels(i);
            p.insert(format!("dec{i}.w"), xavier_uniform(&[cin, cout, k], cin * k, cout * k, &mut rng));
            p.insert(format!("dec{i}.b"), Tensor::zeros(&[cout]));
        }
        Ok(Self { config, params: p })
    }

    /// All parameters zero: the mask is identically zero.
    pub fn zeros(config: DnsConfig) -> Result<Self> {
        let m = Self::new(config, 0)?;
        Ok(Self {
            params: m.params.zeros_like(),
            config: m.config,
        })
    }

    pub fn from_params(config: DnsConfig, params: Params) -> Result<Self> {
        let template = Self::new(config, 0)?;
        template.params.check_layout(&params)?;
        Ok(Self {
            config: template.config,
            params,
        })
    }

    pub fn config(&self) -> &DnsConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.params.clone()).with_meta("model", "dns");
        c.meta.extend(self.config.to_meta());
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta("model") != Some("dns") {
            return Err(Error::Config(format!(
                "checkpoint holds model {:?}, expected dns",
                ckpt.meta("model")
            )));
        }
        let cfg = DnsConfig::from_lookup(|k| ckpt.meta(k).map(str::to_string))?;
        Self::from_params(cfg, ckpt.params.clone())
    }

    fn bind(&self, vars: &[Var]) -> Bound {
        let at = |name: &str| vars[self.params.index_of(name).expect("parameter exists")];
        let n = self.config.channels.len();
        Bound {
            enc: (0..n).map(|i| (at(&format!("enc{i}.w")), at(&format!("enc{i}.b")))).collect(),
            wz: at("gru.wz"),
            bz: at("gru.bz"),
            wc: at("gru.wc"),
            bc: at("gru.bc"),
            uz: at("gru.uz"),
            uc: at("gru.uc"),
            proj_w: at("proj.w"),
            proj_b: at("proj.b"),
            dec: (0..n).map(|i| (at(&format!("dec{i}.w")), at(&format!("dec{i}.b")))).collect(),
        }
    }

    /// Records the mask computation for `y` on `g`. `vars` are the bound
    /// parameters from [`Params::bind`]. Returns `(M_re, M_im)`, each
    /// `[frames, 260]`.
    pub fn forward_mask(&self, g: &mut Graph, vars: &[Var], y: &ComplexSpectrogram) -> Result<(Var, Var)> {
        if y.num_bins() != self.config.bins_in {
            return Err(Error::shape(
                "predict_mask",
                format!("spectrogram has {} bins, model expects {}", y.num_bins(), self.config.bins_in),
            ));
        }
        let b = self.bind(vars);
        let cfg = &self.config;
        let frames = y.num_frames();
        let f = cfg.bins_in;
        let s = cfg.feature_scale;
        let re = g.constant(Tensor::new(vec![frames, f], y.re().iter().map(|v| v * s).collect())?);
        let im = g.constant(Tensor::new(vec![frames, f], y.im().iter().map(|v| v * s).collect())?);
        let mut x = g.stack(&[re, im])?;

        let pad = cfg.padding();
        let mut skips = Vec::with_capacity(b.enc.len());
        for &(w, bias) in &b.enc {
            let c = g.conv1d(x, w, bias, cfg.stride, pad)?;
            x = g.tanh(c)?;
            skips.push(x);
        }
        let enc_shape = g.shape(x).to_vec();
        let flat = g.reshape(x, &[frames, cfg.bottleneck()])?;
        let xz = g.linear(flat, b.wz, b.bz)?;
        let xc = g.linear(flat, b.wc, b.bc)?;
        let h = g.gated_recurrence(xz, xc, b.uz, b.uc)?;
        let up = g.linear(h, b.proj_w, b.proj_b)?;
        let up = g.reshape(up, &enc_shape)?;
        let sum = g.add(up, *skips.last().unwrap())?;
        let mut d = g.tanh(sum)?;
        for layer in (0..b.dec.len()).rev() {
            let (w, bias) = b.dec[layer];
            let op = cfg.output_padding(layer).expect("validated geometry");
            let t = g.conv_transpose1d(d, w, bias, cfg.stride, pad, op)?;
            d = if layer > 0 {
                let sum = g.add(t, skips[layer - 1])?;
                g.tanh(sum)?
            } else {
                t
            };
        }
        let o_re = g.select(d, 0)?;
        let o_im = g.select(d, 1)?;
        let gain = g.magnitude_gain(o_re, o_im, GAIN_FLOOR)?;
        let active = g.constant(Tensor::new(
            vec![frames, f],
            y.grid().active_bins().repeat(frames),
        )?);
        let gain = g.mul(gain, active)?;
        Ok((g.mul(o_re, gain)?, g.mul(o_im, gain)?))
    }

    /// Records `Ŝ = Y · M` and returns `(Ŝ_re, Ŝ_im)`.
    pub fn forward_enhance(&self, g: &mut Graph, vars: &[Var], y: &ComplexSpectrogram) -> Result<(Var, Var)> {
        let (m_re, m_im) = self.forward_mask(g, vars, y)?;
        let shape = vec![y.num_frames(), y.num_bins()];
        let y_re = g.constant(Tensor::new(shape.clone(), y.re())?);
        let y_im = g.constant(Tensor::new(shape, y.im())?);
        g.complex_mul((y_re, y_im), (m_re, m_im))
    }

    pub fn enhance_spectrum(&self, y: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        apply_mask(y, &self.predict_mask(y)?)
    }
}

impl MaskPredictor for DnsModel {
    fn predict_mask(&self, y: &ComplexSpectrogram) -> Result<MaskTensor> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let (re, im) = self.forward_mask(&mut g, &vars, y)?;
        let values = g
            .value(re)
            .data()
            .iter()
            .zip(g.value(im).data())
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        MaskTensor::new(y.num_frames(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_spec(frames: usize, seed: u64, amp: f64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = FrameGrid::default();
        let mut s = ComplexSpectrogram::zeros(frames, grid);
        for l in 0..frames {
            for k in 0..257 {
                s.set(l, k, Complex64::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp)));
            }
        }
        s
    }

    #[test]
    fn default_geometry_mirrors() {
        let cfg = DnsConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.lengths(), vec![260, 130, 65]);
        assert_eq!(cfg.output_padding(0), Some(1));
        assert_eq!(cfg.output_padding(1), Some(1));
    }

    #[test]
    fn config_rejects_even_kernel_and_wrong_bins() {
        let even = DnsConfig { kernel: 4, ..Default::default() };
        assert!(even.validate().is_err());
        let bins = DnsConfig { bins_in: 257, ..Default::default() };
        assert!(bins.validate().is_err());
    }

    #[test]
    fn zero_model_gives_zero_mask() {
        let m = DnsModel::zeros(DnsConfig::default()).unwrap();
        let mask = m.predict_mask(&random_spec(3, 1, 10.0)).unwrap();
        assert!(mask.values().iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn mask_is_bounded_and_padding_is_zero() {
        let m = DnsModel::new(DnsConfig::default(), 3).unwrap();
        let mask = m.predict_mask(&random_spec(5, 2, 100.0)).unwrap();
        assert!(mask.max_magnitude() < 1.0);
        for l in 0..5 {
            for k in 257..260 {
                assert_eq!(mask.values()[l * 260 + k], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn apply_mask_examples() {
        let grid = FrameGrid::default();
        let mut y = ComplexSpectrogram::zeros(1, grid);
        y.set(0, 0, Complex64::new(2.0, 0.0));
        y.set(0, 1, Complex64::new(1.0, 1.0));
        let mut vals = vec![Complex64::new(0.0, 0.0); 260];
        vals[0] = Complex64::new(0.5, 0.0);
        vals[1] = Complex64::new(0.0, 0.5);
        let s = apply_mask(&y, &MaskTensor::new(1, vals).unwrap()).unwrap();
        assert_eq!(s.get(0, 0), Complex64::new(1.0, 0.0));
        assert_eq!(s.get(0, 1), Complex64::new(-0.5, 0.5));
        let id = apply_mask(&y, &MaskTensor::identity(1)).unwrap();
        assert_eq!(id, y);
    }

    #[test]
    fn apply_mask_shape_mismatch() {
        let y = ComplexSpectrogram::zeros(2, FrameGrid::default());
        assert!(apply_mask(&y, &MaskTensor::identity(3)).is_err());
    }

    #[test]
    fn zero_model_enhances_to_silence() {
        let m = DnsModel::zeros(DnsConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = WaveBuffer::new((0..2000).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let out = enhance_waveform(&y, &m).unwrap();
        assert!(out.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_stub_reconstructs_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = WaveBuffer::new((0..4000).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let out = enhance_waveform(&y, &IdentityMask).unwrap();
        for n in 384..out.len() - 384 {
            assert!((out.samples()[n] - y.samples()[n]).abs() < 1e-6);
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_model() {
        let m = DnsModel::new(DnsConfig::default(), 5).unwrap();
        let bytes = m.to_checkpoint().to_bytes();
        let back = DnsModel::from_checkpoint(&Checkpoint::from_bytes(&bytes, "mem").unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn prediction_is_deterministic() {
        let y = random_spec(4, 8, 5.0);
        let a = DnsModel::new(DnsConfig::default(), 21).unwrap().predict_mask(&y).unwrap();
        let b = DnsModel::new(DnsConfig::default(), 21).unwrap().predict_mask(&y).unwrap();
        assert_eq!(a, b);
    }

    /// Sum of the mask weighted by fixed pseudo-random coefficients.
    fn probe(g: &mut Graph, re: Var, im: Var, seed: u64) -> Result<Var> {
        let shape = g.shape(re).to_vec();
        let n = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wr = g.constant(Tensor::new(shape.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
        let wi = g.constant(Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
        let a = g.mul(re, wr)?;
        let b = g.mul(im, wi)?;
        let s = g.add(a, b)?;
        g.sum_all(s)
    }

    #[test]
    fn mask_gradient_matches_finite_differences() {
        use crate::autodiff::{grad_check_sampled, GradCheckOptions};
        for seed in 0..2 {
            let model = DnsModel::new(DnsConfig::default(), seed).unwrap();
            let y = random_spec(3, 100 + seed, 5.0);
            let point: Vec<Tensor> = model.params().iter().map(|(_, t)| t.clone()).collect();
            let err = grad_check_sampled(
                |g, vars| {
                    let (re, im) = model.forward_mask(g, vars, &y)?;
                    probe(g, re, im, seed)
                },
                &point,
                &GradCheckOptions {
                    max_coords_per_input: Some(6),
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn golden_mask_snapshot() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/dns_mask_seed17.txt");
        let model = DnsModel::new(DnsConfig::default(), 17).unwrap();
        let mask = model.predict_mask(&random_spec(8, 17, 10.0)).unwrap();
        let text: String = mask
            .values()
            .iter()
            .map(|c| format!("{:e} {:e}\n", c.re, c.im))
            .collect();
        if std::env::var_os("PERCEPLOOP_BLESS").is_some() {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        let stored = std::fs::read_to_string(&path).expect("snapshot exists; run with PERCEPLOOP_BLESS=1 to create");
        let mut n = 0;
        for (line, c) in stored.lines().zip(mask.values()) {
            let mut it = line.split(' ').map(|v| v.parse::<f64>().unwrap());
            let (re, im) = (it.next().unwrap(), it.next().unwrap());
            assert!((re - c.re).abs() < 1e-10 && (im - c.im).abs() < 1e-10, "entry {n}");
            n += 1;
        }
        assert_eq!(n, 8 * 260);
    }
}
