use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per input tensor, drawn without
    /// replacement. `None` checks all of them.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

fn evaluate<F>(f: &F, point: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", format!("f must be scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Central-difference check of every coordinate of every input.
///
/// Returns `max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_sampled(
        f,
        point,
        &GradCheckOptions {
            eps,
            ..Default::default()
        },
    )
}

pub fn grad_check_sampled<F>(f: F, point: &[Tensor], opts: &GradCheckOptions) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if opts.eps <= 0.0 {
        return Err(Error::Domain {
            op: "grad_check",
            detail: format!("eps must be positive, got {}", opts.eps),
        });
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    let mut probe = point.to_vec();
    for (t, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("input is a trainable leaf");
        let n = point[t].len();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let x = point[t].data()[i];
            probe[t].data_mut()[i] = x + opts.eps;
            let fp = evaluate(&f, &probe)?;
            probe[t].data_mut()[i] = x - opts.eps;
            let fm = evaluate(&f, &probe)?;
            probe[t].data_mut()[i] = x;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "f at perturbed coordinate {i} of input {t}"
                )));
            }
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_passes() {
        let point = [Tensor::vector(vec![0.3, -1.2, 2.5, 0.0])];
        let err = grad_check(
            |g, v| {
                let sq = g.square(v[0])?;
                g.sum_all(sq)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let point = [Tensor::vector(vec![1.0, 2.0])];
        let err = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(3.0))),
            &point,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_perturbation_is_an_error() {
        // x - eps lands exactly on the pole of 1/x.
        let point = [Tensor::vector(vec![1e-5])];
        let res = grad_check(
            |g, v| {
                let p = g.pow(v[0], -1.0)?;
                g.sum_all(p)
            },
            &point,
            1e-5,
        );
        assert!(matches!(res, Err(Error::NonFinite(_))), "{:?}", res.err());
    }
}
