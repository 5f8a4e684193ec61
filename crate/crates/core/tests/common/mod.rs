//! Helpers shared by the integration tests.
#![allow(dead_code)]

use perceploop::autodiff::{grad_check_sampled, GradCheckOptions, Graph, OpKind, Tensor, Var};
use perceploop::dns::{DnsConfig, DnsModel};
use perceploop::losses::{braun_loss_graph, finetune_loss_graph, qnet_loss_graph, BraunParams, QualityLabel};
use perceploop::quality::{spectrum_constants, QualityConfig, QualityModel};
use perceploop::spectral::{ComplexSpectrogram, FrameGrid, WaveBuffer};
use perceploop::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform values in `[lo, hi]` with a random sign.
pub fn signed(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = uniform(shape, lo, hi, rng);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

pub fn random_wave(len: usize, rng: &mut ChaCha8Rng) -> WaveBuffer {
    WaveBuffer::new((0..len).map(|_| rng.random_range(-0.9..0.9)).collect()).unwrap()
}

/// Spectrum with random unique bins, real DC and Nyquist bins, zero padding.
pub fn random_spec(frames: usize, scale: f64, rng: &mut ChaCha8Rng) -> ComplexSpectrogram {
    let grid = FrameGrid::default();
    let bins = grid.num_bins_stored();
    let unique = grid.num_bins_unique();
    let mut re = vec![0.0; frames * bins];
    let mut im = vec![0.0; frames * bins];
    for l in 0..frames {
        for k in 0..unique {
            re[l * bins + k] = scale * rng.random_range(-1.0..1.0);
            if k != 0 && k != unique - 1 {
                im[l * bins + k] = scale * rng.random_range(-1.0..1.0);
            }
        }
    }
    ComplexSpectrogram::from_parts(frames, &re, &im, grid).unwrap()
}

/// Reduces any tensor to a scalar through fixed random weights, so every
/// output element reaches the gradient.
pub fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let w = g.constant(uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 0x5eed)));
    let p = g.mul(v, w)?;
    g.sum_all(p)
}

pub type ScalarFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub name: String,
    pub point: Vec<Tensor>,
    pub f: ScalarFn,
    /// Coordinates checked per input; `None` checks all of them.
    pub coords: Option<usize>,
    /// Central-difference step.
    pub eps: f64,
}

impl GradCase {
    fn new(name: impl Into<String>, point: Vec<Tensor>, f: ScalarFn) -> Self {
        Self {
            name: name.into(),
            point,
            f,
            coords: None,
            eps: 1e-5,
        }
    }

    fn sampled(mut self, coords: usize) -> Self {
        self.coords = Some(coords);
        self
    }

    /// Larger steps keep round-off below the tolerance where individual
    /// gradient entries are tiny compared with the function value.
    fn step(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    /// Worst relative error between analytic and central-difference gradients.
    pub fn run(&self, seed: u64) -> Result<f64> {
        grad_check_sampled(
            &self.f,
            &self.point,
            &GradCheckOptions {
                eps: self.eps,
                max_coords_per_input: self.coords,
                seed,
            },
        )
    }
}

/// One case per operation kind. The match has no wildcard arm, so a new
/// kind without a case fails to compile.
pub fn op_case(kind: &OpKind, seed: u64) -> GradCase {
    let r = &mut rng(seed);
    let s = seed;
    match kind {
        OpKind::Add => GradCase::new(
            "add",
            vec![signed(&[3, 4], 0.1, 1.0, r), signed(&[3, 4], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.add(v[0], v[1])?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::Sub => GradCase::new(
            "sub",
            vec![signed(&[3, 4], 0.1, 1.0, r), signed(&[3, 4], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.sub(v[0], v[1])?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::Mul => GradCase::new(
            "mul",
            vec![signed(&[3, 4], 0.1, 1.0, r), signed(&[3, 4], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.mul(v[0], v[1])?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::Scale(_) => GradCase::new(
            "scale",
            vec![signed(&[5], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.scale(v[0], -1.7)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::AddScalar(_) => GradCase::new(
            "add_scalar",
            vec![signed(&[5], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.add_scalar(v[0], 0.3)?;
                let o = g.square(o)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::MatMul => GradCase::new(
            "matmul",
            vec![signed(&[3, 4], 0.1, 1.0, r), signed(&[4, 5], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.matmul(v[0], v[1])?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::BiasAdd => GradCase::new(
            "bias_add",
            vec![signed(&[2, 3, 5], 0.1, 1.0, r), signed(&[5], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.bias_add(v[0], v[1])?;
                let o = g.square(o)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::Conv1d { .. } => GradCase::new(
            "conv1d",
            vec![
                signed(&[2, 3, 9], 0.1, 1.0, r),
                signed(&[4, 3, 3], 0.1, 1.0, r),
                signed(&[4], 0.1, 1.0, r),
            ],
            Box::new(move |g, v| {
                let o = g.conv1d(v[0], v[1], v[2], 2, 1)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::ConvTranspose1d { .. } => GradCase::new(
            "conv_transpose1d",
            vec![
                signed(&[2, 4, 5], 0.1, 1.0, r),
                signed(&[4, 3, 5], 0.1, 1.0, r),
                signed(&[3], 0.1, 1.0, r),
            ],
            Box::new(move |g, v| {
                let o = g.conv_transpose1d(v[0], v[1], v[2], 2, 2, 1)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::GatedRecurrence => GradCase::new(
            "gated_recurrence",
            vec![
                signed(&[4, 3], 0.1, 1.0, r),
                signed(&[4, 3], 0.1, 1.0, r),
                signed(&[3, 3], 0.1, 1.0, r),
                signed(&[3, 3], 0.1, 1.0, r),
            ],
            Box::new(move |g, v| {
                let o = g.gated_recurrence(v[0], v[1], v[2], v[3])?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::Tanh => GradCase::new(
            "tanh",
            vec![signed(&[6], 0.1, 2.0, r)],
            Box::new(move |g, v| {
                let o = g.tanh(v[0])?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::Sigmoid => GradCase::new(
            "sigmoid",
            vec![signed(&[6], 0.1, 3.0, r)],
            Box::new(move |g, v| {
                let o = g.sigmoid(v[0])?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::Pow(_) => GradCase::new(
            "pow",
            vec![uniform(&[6], 0.05, 2.0, r)],
            Box::new(move |g, v| {
                let a = g.pow(v[0], 0.3)?;
                let b = g.pow(v[0], 2.5)?;
                let o = g.add(a, b)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::ComplexAbs => GradCase::new(
            "complex_abs",
            vec![signed(&[3, 4], 0.1, 1.0, r), signed(&[3, 4], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.complex_abs(v[0], v[1])?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::MagnitudeGain { .. } => GradCase::new(
            "magnitude_gain",
            vec![signed(&[3, 4], 0.05, 2.0, r), signed(&[3, 4], 0.05, 2.0, r)],
            Box::new(move |g, v| {
                let o = g.magnitude_gain(v[0], v[1], 1e-8)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::SumAxis(_) => GradCase::new(
            "sum_axis",
            vec![signed(&[3, 4, 5], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.sum_axis(v[0], 1)?;
                let o = g.square(o)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::MeanAxis(_) => GradCase::new(
            "mean_axis",
            vec![signed(&[3, 4, 5], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.mean_axis(v[0], 0)?;
                let o = g.square(o)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::SumAll => GradCase::new(
            "sum_all",
            vec![signed(&[3, 4], 0.1, 1.0, r)],
            Box::new(|g, v| {
                let o = g.square(v[0])?;
                g.sum_all(o)
            }),
        ),
        OpKind::MeanAll => GradCase::new(
            "mean_all",
            vec![signed(&[3, 4], 0.1, 1.0, r)],
            Box::new(|g, v| {
                let o = g.square(v[0])?;
                g.mean_all(o)
            }),
        ),
        OpKind::Reshape(_) => GradCase::new(
            "reshape",
            vec![signed(&[3, 4], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.reshape(v[0], &[2, 6])?;
                let o = g.square(o)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::Stack => GradCase::new(
            "stack",
            vec![signed(&[3, 4], 0.1, 1.0, r), signed(&[3, 4], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.stack(&[v[0], v[1], v[0]])?;
                let o = g.square(o)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::Select(_) => GradCase::new(
            "select",
            vec![signed(&[3, 2, 4], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.select(v[0], 1)?;
                let o = g.square(o)?;
                weighted_sum(g, o, s)
            }),
        ),
        OpKind::SliceRows { .. } => GradCase::new(
            "slice_rows",
            vec![signed(&[5, 3], 0.1, 1.0, r)],
            Box::new(move |g, v| {
                let o = g.slice_rows(v[0], 1, 4)?;
                let o = g.square(o)?;
                weighted_sum(g, o, s)
            }),
        ),
    }
}

pub fn all_op_kinds() -> Vec<OpKind> {
    vec![
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale(1.0),
        OpKind::AddScalar(0.0),
        OpKind::MatMul,
        OpKind::BiasAdd,
        OpKind::Conv1d { stride: 1, padding: 0 },
        OpKind::ConvTranspose1d {
            stride: 1,
            padding: 0,
            output_padding: 0,
        },
        OpKind::GatedRecurrence,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Pow(1.0),
        OpKind::ComplexAbs,
        OpKind::MagnitudeGain { floor: 1e-8 },
        OpKind::SumAxis(0),
        OpKind::MeanAxis(0),
        OpKind::SumAll,
        OpKind::MeanAll,
        OpKind::Reshape(vec![]),
        OpKind::Stack,
        OpKind::Select(0),
        OpKind::SliceRows { start: 0, end: 0 },
    ]
}

/// Cases for both networks and the three losses.
pub fn model_cases(seed: u64) -> Vec<GradCase> {
    let r = &mut rng(seed.wrapping_add(1000));
    let mut cases = Vec::new();

    let dns = DnsModel::new(DnsConfig::default(), seed).unwrap();
    let y = random_spec(3, 5.0, r);
    cases.push(
        GradCase::new(
            "dns mask wrt parameters",
            dns.params().iter().map(|(_, t)| t.clone()).collect(),
            Box::new(move |g, v| {
                let (re, im) = dns.forward_mask(g, v, &y)?;
                let a = weighted_sum(g, re, seed)?;
                let b = weighted_sum(g, im, seed + 1)?;
                g.add(a, b)
            }),
        )
        .sampled(6),
    );

    let qnet = QualityModel::new(QualityConfig::default(), seed).unwrap();
    let s = random_spec(17, 8.0, r);
    let q = qnet.clone();
    cases.push(
        GradCase::new(
            "quality scores wrt parameters",
            qnet.params().iter().map(|(_, t)| t.clone()).collect(),
            Box::new(move |g, v| {
                let (re, im) = spectrum_constants(g, &s)?;
                let (scores, _) = q.forward(g, v, re, im)?;
                weighted_sum(g, scores, seed)
            }),
        )
        .sampled(8),
    );
    let s = random_spec(16, 8.0, r);
    let shape = [16, 260];
    cases.push(
        GradCase::new(
            "quality utterance score wrt input",
            vec![
                Tensor::new(shape.to_vec(), s.re()).unwrap(),
                Tensor::new(shape.to_vec(), s.im()).unwrap(),
            ],
            Box::new(move |g, v| {
                let bound = qnet.params().bind(g, false);
                Ok(qnet.forward(g, &bound, v[0], v[1])?.1)
            }),
        )
        .sampled(40)
        .step(1e-4),
    );

    let est = random_spec(2, 2.0, r);
    let target = random_spec(2, 2.0, r);
    cases.push(
        GradCase::new(
            "braun loss wrt estimate",
            vec![
                Tensor::new(vec![2, 260], est.re()).unwrap(),
                Tensor::new(vec![2, 260], est.im()).unwrap(),
            ],
            Box::new(move |g, v| braun_loss_graph(g, (v[0], v[1]), &target, BraunParams::default())),
        )
        .sampled(60),
    );

    let label = QualityLabel::new(r.random_range(1.0..4.64), "test").unwrap();
    cases.push(GradCase::new(
        "estimator loss wrt frame scores",
        vec![uniform(&[35], 1.1, 4.6, r)],
        Box::new(move |g, v| {
            let u = g.mean_all(v[0])?;
            qnet_loss_graph(g, v[0], u, 16, &label)
        }),
    ));

    cases.push(GradCase::new(
        "fine-tuning loss wrt utterance score",
        vec![uniform(&[1], 1.1, 4.6, r)],
        Box::new(|g, v| {
            let u = g.reshape(v[0], &[])?;
            finetune_loss_graph(g, u)
        }),
    ));
    cases
}
