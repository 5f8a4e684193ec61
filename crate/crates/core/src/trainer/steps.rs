//! Per-utterance gradients and minibatch bookkeeping shared by both phases.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, Params, Tensor, Var};
use crate::corpus::{QualityOracle, Utterance};
use crate::dns::DnsModel;
use crate::error::{Error, Result};
use crate::losses::{braun_loss, braun_loss_graph, finetune_loss_graph, qnet_loss_graph, BraunParams, QualityLabel};
use crate::metrics::interior_oracle_score;
use crate::quality::{spectrum_constants, QualityModel};
use crate::spectral::{istft_ola, stft, ComplexSpectrogram, FrameGrid, WaveBuffer};

/// An utterance with its spectra computed once.
pub(crate) struct Prepared {
    pub id: String,
    pub noisy: ComplexSpectrogram,
    pub clean_spec: Option<ComplexSpectrogram>,
    pub clean: Option<WaveBuffer>,
}

pub(crate) fn prepare(utts: &[Utterance]) -> Result<Vec<Prepared>> {
    let grid = FrameGrid::default();
    utts.iter()
        .map(|u| {
            Ok(Prepared {
                id: u.id.clone(),
                noisy: stft(&u.noisy, grid)?,
                clean_spec: u.clean.as_ref().map(|c| stft(c, grid)).transpose()?,
                clean: u.clean.clone(),
            })
        })
        .collect()
}

pub(crate) fn require_clean<'a>(p: &'a Prepared) -> Result<(&'a ComplexSpectrogram, &'a WaveBuffer)> {
    match (&p.clean_spec, &p.clean) {
        (Some(s), Some(c)) => Ok((s, c)),
        _ => Err(Error::Training(format!("utterance {} has no clean reference", p.id))),
    }
}

fn finite(loss: f64, what: &str, id: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Training(format!("non-finite {what} loss ({loss}) on utterance {id}")))
    }
}

fn collect_grads(grads: &mut Gradients, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| grads.take(v).expect("trainable leaf has a gradient"))
        .collect()
}

/// Pre-training loss and DNS gradients for one utterance.
pub(crate) fn dns_braun_grads(dns: &DnsModel, p: &Prepared, braun: BraunParams) -> Result<(f64, Vec<Tensor>)> {
    let (target, _) = require_clean(p)?;
    let mut g = Graph::new();
    let vars = dns.params().bind(&mut g, true);
    let est = dns.forward_enhance(&mut g, &vars, &p.noisy)?;
    let loss = braun_loss_graph(&mut g, est, target, braun)?;
    let value = finite(g.value(loss).item(), "braun", &p.id)?;
    let mut grads = g.backward(loss)?;
    Ok((value, collect_grads(&mut grads, &vars)))
}

/// Reference-free loss and DNS gradients for one utterance. The quality
/// model enters as constants, so no gradient reaches its parameters.
pub(crate) fn dns_finetune_grads(dns: &DnsModel, qnet: &QualityModel, p: &Prepared) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let dvars = dns.params().bind(&mut g, true);
    let qvars = qnet.params().bind(&mut g, false);
    let (re, im) = dns.forward_enhance(&mut g, &dvars, &p.noisy)?;
    let (_, utterance) = qnet.forward(&mut g, &qvars, re, im)?;
    let loss = finetune_loss_graph(&mut g, utterance)?;
    let value = finite(g.value(loss).item(), "fine-tuning", &p.id)?;
    let mut grads = g.backward(loss)?;
    if let Some(v) = qvars.iter().find(|&&v| grads.get(v).is_some()) {
        return Err(Error::Training(format!(
            "quality parameter {} received a gradient in the DNS phase",
            v.index()
        )));
    }
    Ok((value, collect_grads(&mut grads, &dvars)))
}

/// Estimator loss and gradients for one spectrum with a known label.
pub(crate) fn qnet_grads(
    qnet: &QualityModel,
    spec: &ComplexSpectrogram,
    label: &QualityLabel,
    id: &str,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = qnet.params().bind(&mut g, true);
    let (re, im) = spectrum_constants(&mut g, spec)?;
    let (scores, utterance) = qnet.forward(&mut g, &vars, re, im)?;
    let loss = qnet_loss_graph(&mut g, scores, utterance, qnet.config().block_len, label)?;
    let value = finite(g.value(loss).item(), "estimator", id)?;
    let mut grads = g.backward(loss)?;
    Ok((value, collect_grads(&mut grads, &vars)))
}

/// Oracle label for a spectrum, scored against the utterance's reference.
pub(crate) fn oracle_label(spec: &ComplexSpectrogram, clean: &WaveBuffer, oracle: &QualityOracle) -> Result<QualityLabel> {
    let wave = istft_ola(spec)?;
    QualityLabel::new(interior_oracle_score(&wave, clean, oracle)?, oracle.name())
}

pub(crate) fn mean_braun(dns: &DnsModel, data: &[Prepared], braun: BraunParams) -> Result<f64> {
    let mut total = 0.0;
    for p in data {
        let (target, _) = require_clean(p)?;
        total += braun_loss(&dns.enhance_spectrum(&p.noisy)?, target, braun)?;
    }
    Ok(total / data.len() as f64)
}

/// Sum of per-utterance results, averaged on request.
pub(crate) struct Accumulator {
    sum: Option<Vec<Tensor>>,
    loss: f64,
    count: usize,
}

impl Accumulator {
    pub fn new() -> Self {
        Self {
            sum: None,
            loss: 0.0,
            count: 0,
        }
    }

    pub fn add(&mut self, (loss, grads): (f64, Vec<Tensor>)) {
        self.loss += loss;
        self.count += 1;
        match &mut self.sum {
            None => self.sum = Some(grads),
            Some(sum) => {
                for (s, g) in sum.iter_mut().zip(&grads) {
                    for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
        }
    }

    /// Mean loss and mean gradients.
    pub fn finish(self, params: &Params) -> (f64, Vec<Tensor>) {
        let n = self.count.max(1) as f64;
        let grads = match self.sum {
            Some(mut sum) => {
                for t in &mut sum {
                    t.data_mut().iter_mut().for_each(|v| *v /= n);
                }
                sum
            }
            None => params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        };
        (self.loss / n, grads)
    }
}

/// Indices `0..n` in a fresh shuffled order, cut into minibatches.
pub(crate) fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Endless minibatch stream that reshuffles after each pass.
pub(crate) struct BatchStream {
    n: usize,
    batch: usize,
    rng: ChaCha8Rng,
    pending: std::collections::VecDeque<Vec<usize>>,
}

impl BatchStream {
    pub fn new(n: usize, batch: usize, rng: ChaCha8Rng) -> Self {
        Self {
            n,
            batch,
            rng,
            pending: Default::default(),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pending.is_empty() {
            self.pending = shuffled_batches(self.n, self.batch, &mut self.rng).into();
        }
        self.pending.pop_front().expect("n >= 1")
    }
}
