use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Smallest base at which the derivative of `x^c` is evaluated, so the
/// gradient stays finite at `x = 0` for `c < 1`. Values are not offset.
pub const POW_GUARD: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds. Shapes refer to the inputs in the order they are passed
/// to [`Graph::forward_op`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// Elementwise, equal shapes.
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    /// `[.., n] + [n]`, the bias repeated over every leading index.
    BiasAdd,
    /// `x [L, Cin, F]`, `w [Cout, Cin, K]`, `b [Cout]` -> `[L, Cout, F']`,
    /// convolving along the last (frequency) axis independently per frame.
    Conv1d { stride: usize, padding: usize },
    /// `x [L, Cin, F]`, `w [Cin, Cout, K]`, `b [Cout]` -> `[L, Cout, F']`
    /// with `F' = (F - 1) * stride - 2 * padding + K + output_padding`.
    ConvTranspose1d {
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    /// Single-gate recurrence over frames starting from a zero state:
    /// `z = sigmoid(xz_l + h U_z)`, `c = tanh(xc_l + h U)`,
    /// `h_l = (1 - z) * h_{l-1} + z * c`.
    /// Inputs `xz [L, H]`, `xc [L, H]`, `U_z [H, H]`, `U [H, H]`.
    GatedRecurrence,
    Tanh,
    Sigmoid,
    /// `x^c` for `x >= 0`; derivative `c * max(x, POW_GUARD)^(c - 1)`.
    Pow(f64),
    /// `sqrt(re^2 + im^2)` of two equally shaped tensors.
    ComplexAbs,
    /// `tanh(|z|) / max(|z|, floor)` of a (re, im) pair; multiplying a
    /// complex value by this gain bounds its magnitude below one.
    MagnitudeGain { floor: f64 },
    SumAxis(usize),
    MeanAxis(usize),
    SumAll,
    MeanAll,
    Reshape(Vec<usize>),
    /// `k` tensors of shape `[L, F]` -> `[L, k, F]`.
    Stack,
    /// `[L, C, F]` -> `[L, F]` at channel `c`.
    Select(usize),
    /// Rows `start..end` of the leading axis.
    SliceRows { start: usize, end: usize },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::MatMul => "matmul",
            OpKind::BiasAdd => "bias_add",
            OpKind::Conv1d { .. } => "conv1d",
            OpKind::ConvTranspose1d { .. } => "conv_transpose1d",
            OpKind::GatedRecurrence => "gated_recurrence",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Pow(_) => "pow",
            OpKind::ComplexAbs => "complex_abs",
            OpKind::MagnitudeGain { .. } => "magnitude_gain",
            OpKind::SumAxis(_) => "sum_axis",
            OpKind::MeanAxis(_) => "mean_axis",
            OpKind::SumAll => "sum_all",
            OpKind::MeanAll => "mean_all",
            OpKind::Reshape(_) => "reshape",
            OpKind::Stack => "stack",
            OpKind::Select(_) => "select",
            OpKind::SliceRows { .. } => "slice_rows",
        }
    }

    fn arity(&self) -> Option<usize> {
        Some(match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul | OpKind::BiasAdd => 2,
            OpKind::ComplexAbs | OpKind::MagnitudeGain { .. } => 2,
            OpKind::Conv1d { .. } | OpKind::ConvTranspose1d { .. } => 3,
            OpKind::GatedRecurrence => 4,
            OpKind::Stack => return None,
            _ => 1,
        })
    }
}

struct Node {
    value: Tensor,
    kind: Option<OpKind>,
    inputs: Vec<Var>,
    /// Activations kept for backward beyond the inputs and output.
    saved: Vec<Vec<f64>>,
    requires_grad: bool,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every trainable leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` is not a trainable leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }

    /// Number of leaves that received a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn shape_err(kind: &OpKind, detail: String) -> Error {
    Error::shape(kind.name(), detail)
}

fn conv_out_len(f: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    (f + 2 * padding).checked_sub(k).map(|n| n / stride + 1)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gain `tanh(r)/max(r, floor)` and its derivative with respect to `r`.
fn magnitude_gain(r: f64, floor: f64) -> (f64, f64) {
    if r <= floor {
        let t = r.tanh();
        (t / floor, (1.0 - t * t) / floor)
    } else if r < 1e-4 {
        let r2 = r * r;
        (1.0 - r2 / 3.0 + 2.0 * r2 * r2 / 15.0, -2.0 * r / 3.0 + 8.0 * r2 * r / 15.0)
    } else {
        // tanh rounds to exactly 1.0 for r > ~19; keep the bound strict.
        let t = r.tanh();
        if t > MAX_GAIN_MAGNITUDE {
            return (MAX_GAIN_MAGNITUDE / r, -MAX_GAIN_MAGNITUDE / (r * r));
        }
        (t / r, ((1.0 - t * t) * r - t) / (r * r))
    }
}

const MAX_GAIN_MAGNITUDE: f64 = 1.0 - 1e-12;

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            kind: None,
            inputs: Vec::new(),
            saved: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Applies `kind` to `inputs` and records the result.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(shape_err(
                    &kind,
                    format!("expected {n} inputs, got {}", inputs.len()),
                ));
            }
        } else if inputs.is_empty() {
            return Err(shape_err(&kind, "no inputs".into()));
        }
        let (value, saved) = self.compute(&kind, inputs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            kind: Some(kind),
            inputs: if requires_grad { inputs.to_vec() } else { Vec::new() },
            saved: if requires_grad { saved } else { Vec::new() },
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn compute(&self, kind: &OpKind, inputs: &[Var]) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let same_shape = |a: &Tensor, b: &Tensor| -> Result<()> {
            if a.shape() != b.shape() {
                return Err(shape_err(
                    kind,
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            Ok(())
        };
        let map = |t: &Tensor, f: &dyn Fn(f64) -> f64| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
        };
        let out = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let (a, b) = (val(0), val(1));
                same_shape(a, b)?;
                let op: fn(f64, f64) -> f64 = match kind {
                    OpKind::Add => |x, y| x + y,
                    OpKind::Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                Tensor::new(
                    a.shape().to_vec(),
                    a.data().iter().zip(b.data()).map(|(&x, &y)| op(x, y)).collect(),
                )?
            }
            OpKind::Scale(s) => map(val(0), &|x| x * s)?,
            OpKind::AddScalar(s) => map(val(0), &|x| x + s)?,
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k, n) = match (a.shape(), b.shape()) {
                    ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
                    (sa, sb) => return Err(shape_err(kind, format!("{sa:?} x {sb:?}"))),
                };
                Tensor::new(vec![m, n], matmul(a.data(), b.data(), m, k, n))?
            }
            OpKind::BiasAdd => {
                let (x, b) = (val(0), val(1));
                let n = *x.shape().last().unwrap_or(&0);
                if b.shape() != [n] || n == 0 {
                    return Err(shape_err(
                        kind,
                        format!("{:?} + bias {:?}", x.shape(), b.shape()),
                    ));
                }
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + b.data()[i % n])
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            OpKind::Conv1d { stride, padding } => {
                let (x, w, b) = (val(0), val(1), val(2));
                let (l, cin, f, cout, k) = match (x.shape(), w.shape(), b.shape()) {
                    ([l, cin, f], [cout, cin2, k], [cout2]) if cin == cin2 && cout == cout2 => {
                        (*l, *cin, *f, *cout, *k)
                    }
                    (sx, sw, sb) => {
                        return Err(shape_err(kind, format!("x {sx:?}, w {sw:?}, b {sb:?}")))
                    }
                };
                let fo = conv_out_len(f, k, *stride, *padding)
                    .filter(|_| *stride > 0)
                    .ok_or_else(|| shape_err(kind, format!("kernel {k} exceeds padded input {f}")))?;
                let mut out = vec![0.0; l * cout * fo];
                conv1d_forward(
                    x.data(), w.data(), b.data(), &mut out, l, cin, f, cout, k, fo, *stride, *padding,
                );
                Tensor::new(vec![l, cout, fo], out)?
            }
            OpKind::ConvTranspose1d {
                stride,
                padding,
                output_padding,
            } => {
                let (x, w, b) = (val(0), val(1), val(2));
                let (l, cin, f, cout, k) = match (x.shape(), w.shape(), b.shape()) {
                    ([l, cin, f], [cin2, cout, k], [cout2]) if cin == cin2 && cout == cout2 => {
                        (*l, *cin, *f, *cout, *k)
                    }
                    (sx, sw, sb) => {
                        return Err(shape_err(kind, format!("x {sx:?}, w {sw:?}, b {sb:?}")))
                    }
                };
                let full = (f.max(1) - 1) * stride + k + output_padding;
                if *stride == 0 || f == 0 || full <= 2 * padding || output_padding >= stride {
                    return Err(shape_err(
                        kind,
                        format!("invalid geometry f={f} k={k} stride={stride} padding={padding}"),
                    ));
                }
                let fo = full - 2 * padding;
                let mut out = vec![0.0; l * cout * fo];
                conv_t_forward(
                    x.data(), w.data(), b.data(), &mut out, l, cin, f, cout, k, fo, *stride, *padding,
                );
                Tensor::new(vec![l, cout, fo], out)?
            }
            OpKind::GatedRecurrence => {
                let (xz, xc, uz, uc) = (val(0), val(1), val(2), val(3));
                let (l, h) = match xz.shape() {
                    [l, h] => (*l, *h),
                    s => return Err(shape_err(kind, format!("xz {s:?}"))),
                };
                if xc.shape() != [l, h] || uz.shape() != [h, h] || uc.shape() != [h, h] {
                    return Err(shape_err(
                        kind,
                        format!(
                            "xz {:?}, xc {:?}, uz {:?}, u {:?}",
                            xz.shape(),
                            xc.shape(),
                            uz.shape(),
                            uc.shape()
                        ),
                    ));
                }
                let (hs, zs, cs) = gru_forward(xz.data(), xc.data(), uz.data(), uc.data(), l, h);
                let out = Tensor::new(vec![l, h], hs)?;
                return Ok((out, vec![zs, cs]));
            }
            OpKind::Tanh => map(val(0), &f64::tanh)?,
            OpKind::Sigmoid => map(val(0), &sigmoid)?,
            OpKind::Pow(exponent) => {
                let x = val(0);
                if let Some(bad) = x.data().iter().find(|&&v| v < 0.0 || v.is_nan()) {
                    return Err(Error::Domain {
                        op: "pow",
                        detail: format!("negative base {bad}"),
                    });
                }
                map(x, &|v| v.powf(*exponent))?
            }
            OpKind::ComplexAbs | OpKind::MagnitudeGain { .. } => {
                let (re, im) = (val(0), val(1));
                same_shape(re, im)?;
                let data = re
                    .data()
                    .iter()
                    .zip(im.data())
                    .map(|(&a, &b)| {
                        let r = a.hypot(b);
                        match kind {
                            OpKind::MagnitudeGain { floor } => magnitude_gain(r, *floor).0,
                            _ => r,
                        }
                    })
                    .collect();
                Tensor::new(re.shape().to_vec(), data)?
            }
            OpKind::SumAxis(axis) | OpKind::MeanAxis(axis) => {
                let x = val(0);
                if *axis >= x.shape().len() {
                    return Err(shape_err(kind, format!("axis {axis} of {:?}", x.shape())));
                }
                let (outer, n, inner) = axis_split(x.shape(), *axis);
                let div = if matches!(kind, OpKind::MeanAxis(_)) { n as f64 } else { 1.0 };
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..n {
                        let src = &x.data()[(o * n + a) * inner..(o * n + a + 1) * inner];
                        for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v /= div);
                let mut shape = x.shape().to_vec();
                shape.remove(*axis);
                Tensor::new(shape, out)?
            }
            OpKind::SumAll | OpKind::MeanAll => {
                let x = val(0);
                let s: f64 = x.data().iter().sum();
                if matches!(kind, OpKind::MeanAll) {
                    if x.is_empty() {
                        return Err(shape_err(kind, "mean of empty tensor".into()));
                    }
                    Tensor::scalar(s / x.len() as f64)
                } else {
                    Tensor::scalar(s)
                }
            }
            OpKind::Reshape(shape) => val(0).clone().reshaped(shape.clone())?,
            OpKind::Stack => {
                let first = val(0).shape().to_vec();
                let (l, f) = match first.as_slice() {
                    [l, f] => (*l, *f),
                    s => return Err(shape_err(kind, format!("inputs must be [L, F], got {s:?}"))),
                };
                let c = inputs.len();
                for i in 1..c {
                    if val(i).shape() != first.as_slice() {
                        return Err(shape_err(
                            kind,
                            format!("{:?} vs {:?}", first, val(i).shape()),
                        ));
                    }
                }
                let mut out = vec![0.0; l * c * f];
                for row in 0..l {
                    for ch in 0..c {
                        out[(row * c + ch) * f..(row * c + ch + 1) * f]
                            .copy_from_slice(&val(ch).data()[row * f..(row + 1) * f]);
                    }
                }
                Tensor::new(vec![l, c, f], out)?
            }
            OpKind::Select(ch) => {
                let x = val(0);
                let (l, c, f) = match x.shape() {
                    [l, c, f] if ch < c => (*l, *c, *f),
                    s => return Err(shape_err(kind, format!("channel {ch} of {s:?}"))),
                };
                let mut out = Vec::with_capacity(l * f);
                for row in 0..l {
                    out.extend_from_slice(&x.data()[(row * c + ch) * f..(row * c + ch + 1) * f]);
                }
                Tensor::new(vec![l, f], out)?
            }
            OpKind::SliceRows { start, end } => {
                let x = val(0);
                let rows = *x.shape().first().unwrap_or(&0);
                if start >= end || *end > rows {
                    return Err(shape_err(
                        kind,
                        format!("rows {start}..{end} of {:?}", x.shape()),
                    ));
                }
                let inner = x.len() / rows;
                let mut shape = x.shape().to_vec();
                shape[0] = end - start;
                Tensor::new(shape, x.data()[start * inner..end * inner].to_vec())?
            }
        };
        Ok((out, Vec::new()))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(kind) = &node.kind else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.input_grads(node, kind, &g);
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                let Some(contrib) = contrib else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot => *slot = Some(contrib),
                }
            }
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if node.kind.is_none() && node.requires_grad {
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                    Some(Tensor::new(node.value.shape().to_vec(), data).expect("gradient shape"))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Gradient contributions of `node` to each of its inputs.
    fn input_grads(&self, node: &Node, kind: &OpKind, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let val = |i: usize| self.nodes[node.inputs[i].0].value.data();
        let shp = |i: usize| self.nodes[node.inputs[i].0].value.shape();
        let need = |i: usize| self.nodes[node.inputs[i].0].requires_grad;
        let out = node.value.data();
        match kind {
            OpKind::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            OpKind::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
            OpKind::Mul => {
                let (a, b) = (val(0), val(1));
                vec![
                    need(0).then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    need(1).then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }
            OpKind::Scale(s) => vec![Some(g.iter().map(|v| v * s).collect())],
            OpKind::AddScalar(_) | OpKind::Reshape(_) => vec![Some(g.to_vec())],
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k) = (shp(0)[0], shp(0)[1]);
                let n = shp(1)[1];
                let ga = need(0).then(|| {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &b[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    ga
                });
                let gb = need(1).then(|| {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = a[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (dst, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *dst += av * gv;
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }
            OpKind::BiasAdd => {
                let n = shp(1)[0];
                let gb = need(1).then(|| {
                    let mut gb = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                    gb
                });
                vec![Some(g.to_vec()), gb]
            }
            OpKind::Conv1d { stride, padding } => {
                let (l, cin, f) = (shp(0)[0], shp(0)[1], shp(0)[2]);
                let (cout, k) = (shp(1)[0], shp(1)[2]);
                let fo = node.value.shape()[2];
                let mut gx = need(0).then(|| vec![0.0; l * cin * f]);
                let mut gw = need(1).then(|| vec![0.0; cout * cin * k]);
                let mut gb = need(2).then(|| vec![0.0; cout]);
                conv1d_backward(
                    val(0), val(1), g, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut(),
                    l, cin, f, cout, k, fo, *stride, *padding,
                );
                vec![gx, gw, gb]
            }
            OpKind::ConvTranspose1d { stride, padding, .. } => {
                let (l, cin, f) = (shp(0)[0], shp(0)[1], shp(0)[2]);
                let (cout, k) = (shp(1)[1], shp(1)[2]);
                let fo = node.value.shape()[2];
                let mut gx = need(0).then(|| vec![0.0; l * cin * f]);
                let mut gw = need(1).then(|| vec![0.0; cin * cout * k]);
                let mut gb = need(2).then(|| vec![0.0; cout]);
                conv_t_backward(
                    val(0), val(1), g, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut(),
                    l, cin, f, cout, k, fo, *stride, *padding,
                );
                vec![gx, gw, gb]
            }
            OpKind::GatedRecurrence => {
                let (l, h) = (shp(0)[0], shp(0)[1]);
                let [gxz, gxc, guz, guc] = gru_backward(
                    out, &node.saved[0], &node.saved[1], val(2), val(3), g, l, h,
                );
                vec![Some(gxz), Some(gxc), Some(guz), Some(guc)]
            }
            OpKind::Tanh => vec![Some(g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect())],
            OpKind::Sigmoid => vec![Some(g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect())],
            OpKind::Pow(c) => {
                let x = val(0);
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| g * c * x.max(POW_GUARD).powf(c - 1.0))
                        .collect(),
                )]
            }
            OpKind::ComplexAbs => {
                let (re, im) = (val(0), val(1));
                let mut gre = vec![0.0; g.len()];
                let mut gim = vec![0.0; g.len()];
                for i in 0..g.len() {
                    let r = out[i];
                    if r > 0.0 {
                        gre[i] = g[i] * re[i] / r;
                        gim[i] = g[i] * im[i] / r;
                    }
                }
                vec![Some(gre), Some(gim)]
            }
            OpKind::MagnitudeGain { floor } => {
                let (re, im) = (val(0), val(1));
                let mut gre = vec![0.0; g.len()];
                let mut gim = vec![0.0; g.len()];
                for i in 0..g.len() {
                    let r = re[i].hypot(im[i]);
                    if r > 0.0 {
                        let d = g[i] * magnitude_gain(r, *floor).1 / r;
                        gre[i] = d * re[i];
                        gim[i] = d * im[i];
                    }
                }
                vec![Some(gre), Some(gim)]
            }
            OpKind::SumAxis(axis) | OpKind::MeanAxis(axis) => {
                let (outer, n, inner) = axis_split(shp(0), *axis);
                let div = if matches!(kind, OpKind::MeanAxis(_)) { n as f64 } else { 1.0 };
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for a in 0..n {
                        for (dst, s) in gx[(o * n + a) * inner..(o * n + a + 1) * inner]
                            .iter_mut()
                            .zip(src)
                        {
                            *dst = s / div;
                        }
                    }
                }
                vec![Some(gx)]
            }
            OpKind::SumAll => vec![Some(vec![g[0]; val(0).len()])],
            OpKind::MeanAll => {
                let n = val(0).len();
                vec![Some(vec![g[0] / n as f64; n])]
            }
            OpKind::Stack => {
                let (l, f) = (shp(0)[0], shp(0)[1]);
                let c = node.inputs.len();
                (0..c)
                    .map(|ch| {
                        need(ch).then(|| {
                            let mut gi = Vec::with_capacity(l * f);
                            for row in 0..l {
                                gi.extend_from_slice(&g[(row * c + ch) * f..(row * c + ch + 1) * f]);
                            }
                            gi
                        })
                    })
                    .collect()
            }
            OpKind::Select(ch) => {
                let (l, c, f) = (shp(0)[0], shp(0)[1], shp(0)[2]);
                let mut gx = vec![0.0; l * c * f];
                for row in 0..l {
                    gx[(row * c + ch) * f..(row * c + ch + 1) * f]
                        .copy_from_slice(&g[row * f..(row + 1) * f]);
                }
                vec![Some(gx)]
            }
            OpKind::SliceRows { start, .. } => {
                let x = val(0);
                let inner = x.len() / shp(0)[0];
                let mut gx = vec![0.0; x.len()];
                gx[start * inner..start * inner + g.len()].copy_from_slice(g);
                vec![Some(gx)]
            }
        }
    }

    // Typed wrappers used by the models.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.forward_op(OpKind::Scale(s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.forward_op(OpKind::AddScalar(s), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::MatMul, &[a, b])
    }

    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::BiasAdd, &[x, b])
    }

    /// `x W + b` for `x [L, D]`, `W [D, H]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.bias_add(xw, b)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        self.forward_op(OpKind::Conv1d { stride, padding }, &[x, w, b])
    }

    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        self.forward_op(
            OpKind::ConvTranspose1d {
                stride,
                padding,
                output_padding,
            },
            &[x, w, b],
        )
    }

    pub fn gated_recurrence(&mut self, xz: Var, xc: Var, uz: Var, uc: Var) -> Result<Var> {
        self.forward_op(OpKind::GatedRecurrence, &[xz, xc, uz, uc])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Sigmoid, &[a])
    }

    pub fn pow(&mut self, a: Var, exponent: f64) -> Result<Var> {
        self.forward_op(OpKind::Pow(exponent), &[a])
    }

    pub fn complex_abs(&mut self, re: Var, im: Var) -> Result<Var> {
        self.forward_op(OpKind::ComplexAbs, &[re, im])
    }

    pub fn magnitude_gain(&mut self, re: Var, im: Var, floor: f64) -> Result<Var> {
        self.forward_op(OpKind::MagnitudeGain { floor }, &[re, im])
    }

    /// `(a_re + i a_im)(b_re + i b_im)`.
    pub fn complex_mul(&mut self, a: (Var, Var), b: (Var, Var)) -> Result<(Var, Var)> {
        let rr = self.mul(a.0, b.0)?;
        let ii = self.mul(a.1, b.1)?;
        let ri = self.mul(a.0, b.1)?;
        let ir = self.mul(a.1, b.0)?;
        Ok((self.sub(rr, ii)?, self.add(ri, ir)?))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.forward_op(OpKind::SumAxis(axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.forward_op(OpKind::MeanAxis(axis), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::SumAll, &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::MeanAll, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.forward_op(OpKind::Reshape(shape.to_vec()), &[a])
    }

    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        self.forward_op(OpKind::Stack, parts)
    }

    pub fn select(&mut self, a: Var, channel: usize) -> Result<Var> {
        self.forward_op(OpKind::Select(channel), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.forward_op(OpKind::SliceRows { start, end }, &[a])
    }
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (dst, bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *dst += av * bv;
            }
        }
    }
    c
}

/// Range of output positions `fo_idx` for which `fo_idx * stride + tap - padding`
/// lands inside `0..f`.
fn valid_range(tap: usize, stride: usize, padding: usize, f: usize, fo: usize) -> (usize, usize) {
    // need fo_idx*stride + tap >= padding  and  fo_idx*stride + tap - padding < f
    let lo = if tap >= padding {
        0
    } else {
        (padding - tap).div_ceil(stride)
    };
    let limit = f + padding; // fo_idx*stride + tap < f + padding
    let hi = if limit > tap {
        ((limit - tap - 1) / stride + 1).min(fo)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    x: &[f64], w: &[f64], b: &[f64], out: &mut [f64],
    l: usize, cin: usize, f: usize, cout: usize, k: usize, fo: usize, stride: usize, padding: usize,
) {
    for row in 0..l {
        for o in 0..cout {
            let dst = &mut out[(row * cout + o) * fo..(row * cout + o + 1) * fo];
            dst.iter_mut().for_each(|v| *v = b[o]);
            for i in 0..cin {
                let src = &x[(row * cin + i) * f..(row * cin + i + 1) * f];
                for tap in 0..k {
                    let wv = w[(o * cin + i) * k + tap];
                    let (lo, hi) = valid_range(tap, stride, padding, f, fo);
                    for p in lo..hi {
                        dst[p] += wv * src[p * stride + tap - padding];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    x: &[f64], w: &[f64], g: &[f64],
    mut gx: Option<&mut [f64]>, mut gw: Option<&mut [f64]>, mut gb: Option<&mut [f64]>,
    l: usize, cin: usize, f: usize, cout: usize, k: usize, fo: usize, stride: usize, padding: usize,
) {
    for row in 0..l {
        for o in 0..cout {
            let grow = &g[(row * cout + o) * fo..(row * cout + o + 1) * fo];
            if let Some(gb) = gb.as_deref_mut() {
                gb[o] += grow.iter().sum::<f64>();
            }
            for i in 0..cin {
                let base = (row * cin + i) * f;
                for tap in 0..k {
                    let widx = (o * cin + i) * k + tap;
                    let (lo, hi) = valid_range(tap, stride, padding, f, fo);
                    if let Some(gw) = gw.as_deref_mut() {
                        let mut acc = 0.0;
                        for p in lo..hi {
                            acc += grow[p] * x[base + p * stride + tap - padding];
                        }
                        gw[widx] += acc;
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = w[widx];
                        for p in lo..hi {
                            gx[base + p * stride + tap - padding] += grow[p] * wv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_t_forward(
    x: &[f64], w: &[f64], b: &[f64], out: &mut [f64],
    l: usize, cin: usize, f: usize, cout: usize, k: usize, fo: usize, stride: usize, padding: usize,
) {
    // out[o, p*stride + tap - padding] += x[i, p] * w[i, o, tap]; the roles of
    // input and output length swap relative to conv1d.
    for row in 0..l {
        for o in 0..cout {
            let dst = &mut out[(row * cout + o) * fo..(row * cout + o + 1) * fo];
            dst.iter_mut().for_each(|v| *v = b[o]);
            for i in 0..cin {
                let src = &x[(row * cin + i) * f..(row * cin + i + 1) * f];
                for tap in 0..k {
                    let wv = w[(i * cout + o) * k + tap];
                    let (lo, hi) = valid_range(tap, stride, padding, fo, f);
                    for p in lo..hi {
                        dst[p * stride + tap - padding] += wv * src[p];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_t_backward(
    x: &[f64], w: &[f64], g: &[f64],
    mut gx: Option<&mut [f64]>, mut gw: Option<&mut [f64]>, mut gb: Option<&mut [f64]>,
    l: usize, cin: usize, f: usize, cout: usize, k: usize, fo: usize, stride: usize, padding: usize,
) {
    for row in 0..l {
        for o in 0..cout {
            let grow = &g[(row * cout + o) * fo..(row * cout + o + 1) * fo];
            if let Some(gb) = gb.as_deref_mut() {
                gb[o] += grow.iter().sum::<f64>();
            }
            for i in 0..cin {
                let base = (row * cin + i) * f;
                for tap in 0..k {
                    let widx = (i * cout + o) * k + tap;
                    let (lo, hi) = valid_range(tap, stride, padding, fo, f);
                    if let Some(gw) = gw.as_deref_mut() {
                        let mut acc = 0.0;
                        for p in lo..hi {
                            acc += grow[p * stride + tap - padding] * x[base + p];
                        }
                        gw[widx] += acc;
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = w[widx];
                        for p in lo..hi {
                            gx[base + p] += grow[p * stride + tap - padding] * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Returns (h, z, c), each `[L, H]`.
fn gru_forward(
    xz: &[f64], xc: &[f64], uz: &[f64], uc: &[f64], l: usize, h: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut hs = vec![0.0; l * h];
    let mut zs = vec![0.0; l * h];
    let mut cs = vec![0.0; l * h];
    let mut prev = vec![0.0; h];
    let mut az = vec![0.0; h];
    let mut ac = vec![0.0; h];
    for t in 0..l {
        az.copy_from_slice(&xz[t * h..(t + 1) * h]);
        ac.copy_from_slice(&xc[t * h..(t + 1) * h]);
        for (i, &hv) in prev.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            for j in 0..h {
                az[j] += hv * uz[i * h + j];
                ac[j] += hv * uc[i * h + j];
            }
        }
        for j in 0..h {
            let z = sigmoid(az[j]);
            let c = ac[j].tanh();
            let hn = (1.0 - z) * prev[j] + z * c;
            zs[t * h + j] = z;
            cs[t * h + j] = c;
            hs[t * h + j] = hn;
        }
        prev.copy_from_slice(&hs[t * h..(t + 1) * h]);
    }
    (hs, zs, cs)
}

#[allow(clippy::too_many_arguments)]
fn gru_backward(
    hs: &[f64], zs: &[f64], cs: &[f64], uz: &[f64], uc: &[f64], g: &[f64], l: usize, h: usize,
) -> [Vec<f64>; 4] {
    let mut gxz = vec![0.0; l * h];
    let mut gxc = vec![0.0; l * h];
    let mut guz = vec![0.0; h * h];
    let mut guc = vec![0.0; h * h];
    let mut carry = vec![0.0; h];
    let zero = vec![0.0; h];
    for t in (0..l).rev() {
        let prev = if t == 0 { &zero[..] } else { &hs[(t - 1) * h..t * h] };
        let mut next_carry = vec![0.0; h];
        for j in 0..h {
            let gh = g[t * h + j] + carry[j];
            let z = zs[t * h + j];
            let c = cs[t * h + j];
            let daz = gh * (c - prev[j]) * z * (1.0 - z);
            let dac = gh * z * (1.0 - c * c);
            gxz[t * h + j] = daz;
            gxc[t * h + j] = dac;
            next_carry[j] += gh * (1.0 - z);
        }
        let daz = &gxz[t * h..(t + 1) * h];
        let dac = &gxc[t * h..(t + 1) * h];
        for i in 0..h {
            let hv = prev[i];
            let mut acc = 0.0;
            for j in 0..h {
                acc += uz[i * h + j] * daz[j] + uc[i * h + j] * dac[j];
                if hv != 0.0 {
                    guz[i * h + j] += hv * daz[j];
                    guc[i * h + j] += hv * dac[j];
                }
            }
            next_carry[i] += acc;
        }
        carry = next_carry;
    }
    [gxz, gxc, guz, guc]
}
