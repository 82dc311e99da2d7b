//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] owns every value computed in one forward pass. Each op
//! appends a node holding its output and enough context to replay the
//! chain rule; [`Graph::backward`] walks the nodes in exact reverse order.
//! Only nodes downstream of a `requires_grad` leaf receive gradients.

mod check;
pub(crate) mod conv;

pub use check::grad_check;

use crate::dsp::stft::{self, StftConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use conv::{ConvGeom, RepeatGeom};
use realfft::num_complex::Complex;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Scale(f64),
    Offset(f64),
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Log,
    Square,
    ClampMin(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reduce {
    Sum,
    Mean,
    L1,
    Frobenius,
}

enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Reduce(Reduce, Var),
    Reshape(Var),
    Narrow {
        input: Var,
        start: usize,
    },
    SumChannels(Var),
    Repeat {
        input: Var,
        hop: usize,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    RepeatConv1d {
        frames: Var,
        weight: Var,
        bias: Option<Var>,
        geom: RepeatGeom,
    },
    StftMagnitude {
        input: Var,
        cfg: StftConfig,
        spectra: Vec<Complex<f64>>,
    },
    ScaledSum {
        a: Var,
        b: Var,
        scale: f64,
    },
    /// `act` holds the tanh outputs followed by the sigmoid outputs, kept for backward.
    Gate {
        input: Var,
        cond: Option<Var>,
        hop: usize,
        act: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Tape of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn check_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(op, "rank", rank, t.rank()));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        None => *slot = Some(contrib),
    }
}

/// `e^v` by Cody-Waite reduction and a degree-13 Taylor polynomial.
/// Branch-free so that loops over it vectorise; within 2 ulp of libm.
#[inline(always)]
fn exp_poly(v: f64) -> f64 {
    const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52
    const LN2_HI: f64 = 0.693_147_180_369_123_8;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let v = v.clamp(-708.0, 708.0);
    let shifted = v * std::f64::consts::LOG2_E + SHIFTER;
    let k = shifted - SHIFTER;
    let r = (v - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for d in [479_001_600.0, 39_916_800.0, 3_628_800.0, 362_880.0, 40_320.0, 5_040.0, 720.0, 120.0, 24.0, 6.0, 2.0, 1.0, 1.0] {
        p = p * r + 1.0 / d;
    }
    // The low mantissa bits of `shifted` hold k in two's complement.
    f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52) * p
}

/// `tanh` through a single exponential.
#[inline(always)]
fn fast_tanh(v: f64) -> f64 {
    1.0 - 2.0 / (exp_poly(2.0 * v) + 1.0)
}

#[inline(always)]
fn fast_sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + exp_poly(-v))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
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

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Copy of `var`'s value as a new constant; gradients stop here.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.constant(value)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let op = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            ta.map(|x| f(x, y))
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            tb.map(|y| f(x, y))
        } else {
            let dim = ta
                .shape()
                .iter()
                .zip(tb.shape())
                .position(|(p, q)| p != q)
                .unwrap_or(ta.rank().min(tb.rank()));
            return Err(Error::Invalid {
                op,
                msg: format!(
                    "operand shapes {:?} and {:?} differ in dimension {dim}",
                    ta.shape(),
                    tb.shape()
                ),
            });
        };
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, rg, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = match kind {
            Unary::Scale(s) => t.map(|v| v * s),
            Unary::Offset(c) => t.map(|v| v + c),
            Unary::Tanh => t.map(f64::tanh),
            Unary::Sigmoid => t.map(sigmoid),
            Unary::Relu => t.map(|v| v.max(0.0)),
            Unary::LeakyRelu(alpha) => t.map(|v| if v > 0.0 { v } else { alpha * v }),
            Unary::Log => {
                if let Some((index, &value)) = t.data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
                    return Err(Error::NonPositive {
                        op: "log",
                        index,
                        value,
                    });
                }
                t.map(f64::ln)
            }
            Unary::Square => t.map(|v| v * v),
            Unary::ClampMin(lo) => t.map(|v| v.max(lo)),
        };
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::Unary(kind, a)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(Unary::Scale(s), a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Offset(c), a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(alpha), a)
    }

    /// Natural log; errors on any non-positive element.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }

    /// `max(a, lo)`; the gradient is zero where the clamp is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Result<Var> {
        self.unary(Unary::ClampMin(lo), a)
    }

    fn reduce(&mut self, kind: Reduce, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::invalid("reduce", "empty tensor"));
        }
        let d = t.data();
        let v = match kind {
            Reduce::Sum => d.iter().sum(),
            Reduce::Mean => d.iter().sum::<f64>() / d.len() as f64,
            Reduce::L1 => d.iter().map(|v| v.abs()).sum(),
            Reduce::Frobenius => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::scalar(v), rg, Op::Reduce(kind, a)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, a)
    }

    pub fn l1_norm(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::L1, a)
    }

    pub fn frobenius_norm(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Frobenius, a)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::Reshape(a)))
    }

    /// Channels `[start, start + len)` of a `[batch, channels, time]` tensor.
    pub fn narrow_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        check_rank("narrow_channels", t, 3)?;
        let (b, c, n) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        if start + len > c {
            return Err(Error::shape("narrow_channels", "channels", start + len, c));
        }
        let mut data = Vec::with_capacity(b * len * n);
        for bi in 0..b {
            data.extend_from_slice(&t.data()[(bi * c + start) * n..(bi * c + start + len) * n]);
        }
        let value = Tensor::new(vec![b, len, n], data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::Narrow { input: a, start }))
    }

    /// `scale · (a + b)` for same-shaped operands.
    pub fn add_scaled(&mut self, a: Var, b: Var, scale: f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::invalid(
                "add_scaled",
                format!("operand shapes {:?} and {:?} differ", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| scale * (x + y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, rg, Op::ScaledSum { a, b, scale }))
    }

    /// Gated activation `tanh(u_a) · σ(u_b)` where `u = input + cond`.
    ///
    /// `input: [batch, 2r, time]` is split into halves along channels.
    /// `cond: [batch, 2r, time / hop]` is held constant over each run of
    /// `hop` samples, so frame-rate conditioning never gets upsampled.
    pub fn gate(&mut self, input: Var, cond: Option<Var>, hop: usize) -> Result<Var> {
        let x = self.value(input);
        check_rank("gate", x, 3)?;
        let (batch, c2, time) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if c2 % 2 != 0 {
            return Err(Error::invalid("gate", format!("channel count {c2} is odd")));
        }
        if hop == 0 || time % hop != 0 {
            return Err(Error::invalid("gate", format!("time {time} is not a multiple of hop {hop}")));
        }
        let frames = time / hop;
        let zeros;
        let cv = match cond {
            Some(c) => {
                let c = self.value(c);
                if c.shape() != [batch, c2, frames] {
                    return Err(Error::invalid(
                        "gate",
                        format!("conditioning shape {:?}, expected {:?}", c.shape(), [batch, c2, frames]),
                    ));
                }
                c.data()
            }
            None => {
                zeros = vec![0.0; batch * c2 * frames];
                &zeros
            }
        };
        let r = c2 / 2;
        let n = batch * r * time;
        let xd = x.data();
        // act[..n] holds tanh(u_a) and act[n..] holds σ(u_b).
        let mut act = vec![0.0; 2 * n];
        let (th_all, sg_all) = act.split_at_mut(n);
        for b in 0..batch {
            for ch in 0..r {
                let o = (b * r + ch) * time;
                let (ya, yb) = ((b * c2 + ch) * time, (b * c2 + r + ch) * time);
                let (ca, cb) = ((b * c2 + ch) * frames, (b * c2 + r + ch) * frames);
                let th_row = &mut th_all[o..o + time];
                let sg_row = &mut sg_all[o..o + time];
                for j in 0..frames {
                    let span = j * hop..(j + 1) * hop;
                    let fa = cv[ca + j];
                    for (th, u) in th_row[span.clone()].iter_mut().zip(&xd[ya + span.start..ya + span.end]) {
                        *th = fast_tanh(u + fa);
                    }
                    let fb = cv[cb + j];
                    for (sg, u) in sg_row[span.clone()].iter_mut().zip(&xd[yb + span.start..yb + span.end]) {
                        *sg = fast_sigmoid(u + fb);
                    }
                }
            }
        }
        let out = th_all.iter().zip(sg_all.iter()).map(|(t, s)| t * s).collect();
        let value = Tensor::new(vec![batch, r, time], out)?;
        let rg = self.requires_grad(input) || cond.is_some_and(|c| self.requires_grad(c));
        Ok(self.push(value, rg, Op::Gate { input, cond, hop, act }))
    }

    /// Sum over the channel axis: `[batch, channels, time] -> [batch, 1, time]`.
    pub fn sum_channels(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        check_rank("sum_channels", t, 3)?;
        let (b, c, n) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mut data = vec![0.0; b * n];
        for bi in 0..b {
            let out = &mut data[bi * n..(bi + 1) * n];
            for ci in 0..c {
                let row = &t.data()[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let value = Tensor::new(vec![b, 1, n], data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::SumChannels(a)))
    }

    /// Nearest-neighbour upsampling: repeats each element of the last axis `hop` times.
    pub fn repeat_last(&mut self, a: Var, hop: usize) -> Result<Var> {
        if hop == 0 {
            return Err(Error::invalid("repeat_last", "hop must be positive"));
        }
        let t = self.value(a);
        if t.rank() == 0 {
            return Err(Error::shape("repeat_last", "rank", 1, 0));
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() *= hop;
        let data = t.data().iter().flat_map(|&v| std::iter::repeat_n(v, hop)).collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::Repeat { input: a, hop }))
    }

    /// Dilated 1-D convolution with symmetric "same" zero padding.
    ///
    /// `input: [batch, c_in, time]`, `weight: [c_out, c_in, kernel]`,
    /// `bias: [c_out]`. The kernel must be odd so the output keeps `time`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Option<Var>, dilation: usize) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        check_rank("conv1d", x, 3)?;
        check_rank("conv1d", w, 3)?;
        let geom = ConvGeom {
            batch: x.shape()[0],
            c_in: x.shape()[1],
            c_out: w.shape()[0],
            kernel: w.shape()[2],
            time: x.shape()[2],
            dilation,
        };
        if w.shape()[1] != geom.c_in {
            return Err(Error::shape("conv1d", "input channels", w.shape()[1], geom.c_in));
        }
        validate_kernel("conv1d", geom.kernel, dilation)?;
        let b = self.check_bias("conv1d", bias, geom.c_out)?;
        let out = conv::conv1d_forward(x.data(), w.data(), b, &geom);
        let value = Tensor::new(vec![geom.batch, geom.c_out, geom.time], out)?;
        let rg = self.requires_grad(input)
            || self.requires_grad(weight)
            || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            value,
            rg,
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// `conv1d(repeat_last(frames, hop), weight, bias, 1)` evaluated at frame
    /// rate. `frames: [batch, c_in, n_frames]`.
    pub fn conv1d_repeated(&mut self, frames: Var, hop: usize, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (f, w) = (self.value(frames), self.value(weight));
        check_rank("conv1d_repeated", f, 3)?;
        check_rank("conv1d_repeated", w, 3)?;
        if hop == 0 {
            return Err(Error::invalid("conv1d_repeated", "hop must be positive"));
        }
        let geom = RepeatGeom {
            batch: f.shape()[0],
            c_in: f.shape()[1],
            c_out: w.shape()[0],
            kernel: w.shape()[2],
            frames: f.shape()[2],
            hop,
        };
        if w.shape()[1] != geom.c_in {
            return Err(Error::shape("conv1d_repeated", "input channels", w.shape()[1], geom.c_in));
        }
        validate_kernel("conv1d_repeated", geom.kernel, 1)?;
        let b = self.check_bias("conv1d_repeated", bias, geom.c_out)?;
        let out = conv::repeated_forward(f.data(), w.data(), b, &geom);
        let value = Tensor::new(vec![geom.batch, geom.c_out, geom.time()], out)?;
        let rg = self.requires_grad(frames)
            || self.requires_grad(weight)
            || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            value,
            rg,
            Op::RepeatConv1d {
                frames,
                weight,
                bias,
                geom,
            },
        ))
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, c_out: usize) -> Result<Option<&[f64]>> {
        match bias {
            None => Ok(None),
            Some(b) => {
                let t = self.value(b);
                check_rank(op, t, 1)?;
                if t.numel() != c_out {
                    return Err(Error::shape(op, "bias length", c_out, t.numel()));
                }
                Ok(Some(t.data()))
            }
        }
    }

    /// Magnitude STFT of each row of `input` (`[time]` or `[rows, time]`).
    /// Output is `[rows, n_frames, fft_size/2 + 1]`.
    pub fn stft_magnitude(&mut self, input: Var, cfg: &StftConfig) -> Result<Var> {
        let x = self.value(input);
        let (rows, time) = match x.shape() {
            [t] => (1, *t),
            [r, t] => (*r, *t),
            _ => return Err(Error::shape("stft_magnitude", "rank", 2, x.rank())),
        };
        let (mags, spectra) = stft::forward(x.data(), rows, time, cfg)?;
        let frames = cfg.n_frames(time)?;
        let value = Tensor::new(vec![rows, frames, cfg.n_bins()], mags)?;
        let rg = self.requires_grad(input);
        Ok(self.push(
            value,
            rg,
            Op::StftMagnitude {
                input,
                cfg: cfg.clone(),
                spectra,
            },
        ))
    }

    /// Gradients of the scalar `root` with respect to every leaf that
    /// requires them. Intermediate gradients are released as soon as they
    /// have been propagated.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.numel() != 1 {
            return Err(Error::shape("backward", "root element count", 1, root_val.numel()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let (lower, _) = grads.split_at_mut(id);
            self.propagate(node, g, lower);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                let node = &self.nodes[id];
                match (&node.op, g) {
                    (Op::Leaf, Some(g)) if node.requires_grad => {
                        Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => self.binary_backward(*kind, *a, *b, g, grads),
            Op::Unary(kind, a) => {
                if !self.wants(*a) {
                    return;
                }
                let x = self.value(*a).data();
                let y = node.value.data();
                let mut d = g;
                match *kind {
                    Unary::Scale(s) => d.iter_mut().for_each(|v| *v *= s),
                    Unary::Offset(_) => {}
                    Unary::Tanh => d.iter_mut().zip(y).for_each(|(v, yv)| *v *= 1.0 - yv * yv),
                    Unary::Sigmoid => d.iter_mut().zip(y).for_each(|(v, yv)| *v *= yv * (1.0 - yv)),
                    Unary::Relu => d.iter_mut().zip(x).for_each(|(v, xv)| {
                        if *xv <= 0.0 {
                            *v = 0.0
                        }
                    }),
                    Unary::LeakyRelu(alpha) => d.iter_mut().zip(x).for_each(|(v, xv)| {
                        if *xv <= 0.0 {
                            *v *= alpha
                        }
                    }),
                    Unary::Log => d.iter_mut().zip(x).for_each(|(v, xv)| *v /= xv),
                    Unary::Square => d.iter_mut().zip(x).for_each(|(v, xv)| *v *= 2.0 * xv),
                    Unary::ClampMin(lo) => d.iter_mut().zip(x).for_each(|(v, xv)| {
                        if *xv < lo {
                            *v = 0.0
                        }
                    }),
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::Reduce(kind, a) => {
                if !self.wants(*a) {
                    return;
                }
                let gv = g[0];
                let x = self.value(*a).data();
                let d: Vec<f64> = match kind {
                    Reduce::Sum => vec![gv; x.len()],
                    Reduce::Mean => vec![gv / x.len() as f64; x.len()],
                    Reduce::L1 => x
                        .iter()
                        .map(|v| {
                            if *v > 0.0 {
                                gv
                            } else if *v < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                    Reduce::Frobenius => {
                        let norm = node.value.data()[0];
                        if norm == 0.0 {
                            vec![0.0; x.len()]
                        } else {
                            x.iter().map(|v| gv * v / norm).collect()
                        }
                    }
                };
                accumulate(&mut grads[a.0], d);
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::ScaledSum { a, b, scale } => {
                let mut d = g;
                d.iter_mut().for_each(|v| *v *= scale);
                match (self.wants(*a), self.wants(*b)) {
                    (true, true) => {
                        accumulate(&mut grads[a.0], d.clone());
                        accumulate(&mut grads[b.0], d);
                    }
                    (true, false) => accumulate(&mut grads[a.0], d),
                    (false, true) => accumulate(&mut grads[b.0], d),
                    (false, false) => {}
                }
            }
            Op::Gate {
                input,
                cond,
                hop,
                act,
            } => self.gate_backward(node, *input, *cond, *hop, act, &g, grads),
            Op::Narrow { input, start } => {
                if !self.wants(*input) {
                    return;
                }
                let src = self.value(*input).shape();
                let (b, c, n) = (src[0], src[1], src[2]);
                let len = node.value.shape()[1];
                let mut d = vec![0.0; b * c * n];
                for bi in 0..b {
                    d[(bi * c + start) * n..(bi * c + start + len) * n]
                        .copy_from_slice(&g[bi * len * n..(bi + 1) * len * n]);
                }
                accumulate(&mut grads[input.0], d);
            }
            Op::SumChannels(a) => {
                if !self.wants(*a) {
                    return;
                }
                let src = self.value(*a).shape();
                let (b, c, n) = (src[0], src[1], src[2]);
                let mut d = Vec::with_capacity(b * c * n);
                for bi in 0..b {
                    for _ in 0..c {
                        d.extend_from_slice(&g[bi * n..(bi + 1) * n]);
                    }
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::Repeat { input, hop } => {
                if self.wants(*input) {
                    let d = g.chunks(*hop).map(|c| c.iter().sum()).collect();
                    accumulate(&mut grads[input.0], d);
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
            } => {
                let want = (
                    self.wants(*input),
                    self.wants(*weight),
                    bias.is_some_and(|b| self.wants(b)),
                );
                let r = conv::conv1d_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    &g,
                    geom,
                    want,
                );
                self.scatter_conv(r, *input, *weight, *bias, grads);
            }
            Op::RepeatConv1d {
                frames,
                weight,
                bias,
                geom,
            } => {
                let want = (
                    self.wants(*frames),
                    self.wants(*weight),
                    bias.is_some_and(|b| self.wants(b)),
                );
                let r = conv::repeated_backward(
                    self.value(*frames).data(),
                    self.value(*weight).data(),
                    &g,
                    geom,
                    want,
                );
                self.scatter_conv(r, *frames, *weight, *bias, grads);
            }
            Op::StftMagnitude { input, cfg, spectra } => {
                if !self.wants(*input) {
                    return;
                }
                let x = self.value(*input);
                let time = *x.shape().last().unwrap();
                let rows = x.numel() / time;
                let d = stft::backward(&g, spectra, rows, time, cfg);
                accumulate(&mut grads[input.0], d);
            }
        }
    }

    fn scatter_conv(
        &self,
        r: conv::ConvGrads,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        grads: &mut [Option<Vec<f64>>],
    ) {
        if let Some(d) = r.input {
            accumulate(&mut grads[input.0], d);
        }
        if let Some(d) = r.weight {
            accumulate(&mut grads[weight.0], d);
        }
        if let (Some(d), Some(b)) = (r.bias, bias) {
            accumulate(&mut grads[b.0], d);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gate_backward(
        &self,
        node: &Node,
        input: Var,
        cond: Option<Var>,
        hop: usize,
        act: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let want_c = cond.is_some_and(|c| self.wants(c));
        if !self.wants(input) && !want_c {
            return;
        }
        let out = node.value.shape();
        let (batch, r, time) = (out[0], out[1], out[2]);
        let frames = time / hop;
        let n = batch * r * time;
        let mut dy = vec![0.0; 2 * n];
        let mut dc = want_c.then(|| vec![0.0; batch * 2 * r * frames]);
        for b in 0..batch {
            for ch in 0..r {
                let o = (b * r + ch) * time;
                let (ya, yb) = ((b * 2 * r + ch) * time, (b * 2 * r + r + ch) * time);
                let (th, sg, gr) = (&act[o..o + time], &act[n + o..n + o + time], &g[o..o + time]);
                let (lo, hi) = dy.split_at_mut(yb);
                let (da, db) = (&mut lo[ya..ya + time], &mut hi[..time]);
                for t in 0..time {
                    da[t] = gr[t] * sg[t] * (1.0 - th[t] * th[t]);
                    db[t] = gr[t] * th[t] * sg[t] * (1.0 - sg[t]);
                }
                if let Some(dc) = dc.as_mut() {
                    let (ca, cb) = ((b * 2 * r + ch) * frames, (b * 2 * r + r + ch) * frames);
                    for j in 0..frames {
                        dc[ca + j] += dy[ya + j * hop..ya + (j + 1) * hop].iter().sum::<f64>();
                        dc[cb + j] += dy[yb + j * hop..yb + (j + 1) * hop].iter().sum::<f64>();
                    }
                }
            }
        }
        if let (Some(dc), Some(c)) = (dc, cond) {
            accumulate(&mut grads[c.0], dc);
        }
        if self.wants(input) {
            accumulate(&mut grads[input.0], dy);
        }
    }

    fn binary_backward(&self, kind: Binary, a: Var, b: Var, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = g.len();
        let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
        // Reduces a full-size contribution onto a broadcast scalar operand.
        let fit = |t: &Tensor, d: Vec<f64>| if t.numel() == 1 && n != 1 { vec![d.iter().sum()] } else { d };
        let (ga, gb) = match (self.wants(a), self.wants(b)) {
            (true, true) => (Some(g.clone()), Some(g)),
            (true, false) => (Some(g), None),
            (false, true) => (None, Some(g)),
            (false, false) => return,
        };
        if let Some(mut d) = ga {
            match kind {
                Binary::Add | Binary::Sub => {}
                Binary::Mul => d.iter_mut().enumerate().for_each(|(i, v)| *v *= at(tb, i)),
                Binary::Div => d.iter_mut().enumerate().for_each(|(i, v)| *v /= at(tb, i)),
            }
            accumulate(&mut grads[a.0], fit(ta, d));
        }
        if let Some(mut d) = gb {
            match kind {
                Binary::Add => {}
                Binary::Sub => d.iter_mut().for_each(|v| *v = -*v),
                Binary::Mul => d.iter_mut().enumerate().for_each(|(i, v)| *v *= at(ta, i)),
                Binary::Div => d.iter_mut().enumerate().for_each(|(i, v)| {
                    let y = at(tb, i);
                    *v = -*v * at(ta, i) / (y * y)
                }),
            }
            accumulate(&mut grads[b.0], fit(tb, d));
        }
    }
}

fn validate_kernel(op: &'static str, kernel: usize, dilation: usize) -> Result<()> {
    if kernel % 2 == 0 {
        return Err(Error::invalid(op, format!("kernel size {kernel} must be odd")));
    }
    if dilation == 0 {
        return Err(Error::invalid(op, "dilation must be at least 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(shape: [usize; 3], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut g = Graph::new();
        let x = g.constant(t3([1, 1, 4], vec![0.5, -1.0, 2.0, 3.0]));
        let w = g.constant(t3([1, 1, 1], vec![1.0]));
        let b = g.constant(Tensor::from_vec(vec![0.0]));
        let y = g.conv1d(x, w, Some(b), 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.0, 2.0, 3.0]);
    }

    #[test]
    fn centered_delta_kernel() {
        let mut g = Graph::new();
        let x = g.constant(t3([1, 1, 3], vec![1.0, 2.0, 3.0]));
        let w = g.constant(t3([1, 1, 3], vec![0.0, 1.0, 0.0]));
        let b = g.constant(Tensor::from_vec(vec![0.0]));
        let y = g.conv1d(x, w, Some(b), 1).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_errors_name_the_dimension() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 8]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3]));
        let err = g.conv1d(x, w, None, 1).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
        let w_even = g.constant(Tensor::zeros(&[1, 2, 2]));
        assert!(g.conv1d(x, w_even, None, 1).is_err());
        let w_ok = g.constant(Tensor::zeros(&[4, 2, 3]));
        let bias = g.constant(Tensor::zeros(&[3]));
        let err = g.conv1d(x, w_ok, Some(bias), 1).unwrap_err().to_string();
        assert!(err.contains("bias length"), "{err}");
    }

    #[test]
    fn activations_at_reference_points() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![-1.0]));
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert!((g.value(y).data()[0] + 0.2).abs() < 1e-15);
        let z = g.constant(Tensor::from_vec(vec![0.0]));
        let t = g.tanh(z).unwrap();
        let s = g.sigmoid(z).unwrap();
        let gated = g.mul(t, s).unwrap();
        assert_eq!(g.value(gated).data(), &[0.0]);
    }

    #[test]
    fn square_gradient_at_three() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![3.0]));
        let y = g.square(x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::NonPositive { index: 1, .. })));
    }

    #[test]
    fn reductions() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        let n = g.frobenius_norm(a).unwrap();
        assert_eq!(g.value(n).item().unwrap(), 5.0);
        let ones = g.constant(Tensor::ones(&[2, 3]));
        let m = g.mean(ones).unwrap();
        assert_eq!(g.value(m).item().unwrap(), 1.0);
        let empty = g.constant(Tensor::zeros(&[0]));
        assert!(g.sum(empty).is_err());
    }

    #[test]
    fn l1_gradient_is_sign() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![-2.0, 5.0, 0.0]));
        let n = g.l1_norm(x).unwrap();
        let grads = g.backward(n).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[-1.0, 1.0, 0.0]);
    }

    #[test]
    fn norm_gradient_at_origin_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[4]));
        let n = g.frobenius_norm(x).unwrap();
        let grads = g.backward(n).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shared_input_accumulates() {
        // d/dx (x*x + 3x) = 2x + 3
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![2.0]));
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0).unwrap();
        let y = g.add(sq, lin).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn scalar_broadcast_in_binary_ops() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0, 4.0]));
        let s = g.param(Tensor::scalar(2.0));
        let y = g.div(x, s).unwrap();
        let total = g.sum(y).unwrap();
        assert_eq!(g.value(total).item().unwrap(), 3.5);
        let grads = g.backward(total).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.5, 0.5, 0.5]);
        // d/ds Σ x/s = -Σx / s²
        assert_eq!(grads.get(s).unwrap().data(), &[-7.0 / 4.0]);

        let v = g.constant(Tensor::zeros(&[2]));
        let err = g.add(x, v).unwrap_err().to_string();
        assert!(err.contains("dimension 0"), "{err}");
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0]));
        let c = g.constant(Tensor::from_vec(vec![5.0]));
        let y = g.mul(x, c).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[3]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn narrow_and_sum_channels_shapes() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap());
        let mid = g.narrow_channels(x, 1, 2).unwrap();
        assert_eq!(g.shape(mid), &[2, 2, 2]);
        assert_eq!(g.value(mid).data(), &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
        let s = g.sum_channels(x).unwrap();
        assert_eq!(g.value(s).data(), &[6.0, 9.0, 24.0, 27.0]);
        assert!(g.narrow_channels(x, 2, 2).is_err());
    }

    #[test]
    fn repeat_last_upsamples() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let y = g.repeat_last(x, 3).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    fn wavy(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.37 + phase).sin() * 1.3).collect()
    }

    #[test]
    fn gate_matches_composed_ops() {
        let y = t3([2, 4, 6], wavy(48, 0.1));
        let c = t3([2, 4, 3], wavy(24, 0.7));
        let mut g = Graph::new();
        let (yv, cv) = (g.constant(y), g.constant(c));
        let fused = g.gate(yv, Some(cv), 2).unwrap();
        let up = g.repeat_last(cv, 2).unwrap();
        let u = g.add(yv, up).unwrap();
        let (ua, ub) = (g.narrow_channels(u, 0, 2).unwrap(), g.narrow_channels(u, 2, 2).unwrap());
        let (ta, sb) = (g.tanh(ua).unwrap(), g.sigmoid(ub).unwrap());
        let slow = g.mul(ta, sb).unwrap();
        for (a, b) in g.value(fused).data().iter().zip(g.value(slow).data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gate_gradients() {
        let c = t3([2, 4, 3], wavy(24, 0.7));
        let via_input = grad_check(
            |g, x| {
                let cv = g.constant(c.clone());
                let y = g.gate(x, Some(cv), 2)?;
                let y = g.square(y)?;
                g.sum(y)
            },
            &t3([2, 4, 6], wavy(48, 0.1)),
            1e-5,
        )
        .unwrap();
        assert!(via_input < 1e-6, "{via_input}");
        let y = t3([2, 4, 6], wavy(48, 0.1));
        let via_cond = grad_check(
            |g, x| {
                let yv = g.constant(y.clone());
                let out = g.gate(yv, Some(x), 2)?;
                let out = g.square(out)?;
                g.sum(out)
            },
            &c,
            1e-5,
        )
        .unwrap();
        assert!(via_cond < 1e-6, "{via_cond}");
    }

    #[test]
    fn gate_rejects_bad_shapes() {
        let mut g = Graph::new();
        let odd = g.constant(Tensor::zeros(&[1, 3, 4]));
        assert!(g.gate(odd, None, 1).is_err());
        let y = g.constant(Tensor::zeros(&[1, 2, 5]));
        assert!(g.gate(y, None, 2).is_err());
        let c = g.constant(Tensor::zeros(&[1, 2, 3]));
        let y = g.constant(Tensor::zeros(&[1, 2, 4]));
        assert!(g.gate(y, Some(c), 2).is_err());
    }

    #[test]
    fn add_scaled_value_and_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let b = g.param(Tensor::from_vec(vec![3.0, -1.0]));
        let y = g.add_scaled(a, b, 0.5).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 0.5]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.5, 0.5]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn fast_activations_are_accurate() {
        for i in -8000..=8000 {
            let v = i as f64 * 0.01;
            assert!((fast_tanh(v) - v.tanh()).abs() < 1e-15, "{v}");
            assert!((fast_sigmoid(v) - sigmoid(v)).abs() < 1e-15, "{v}");
            let e = v * 8.5;
            assert!((exp_poly(e) / e.exp() - 1.0).abs() < 1e-15, "{e}");
        }
        assert_eq!(fast_tanh(1e6), 1.0);
        assert_eq!(fast_tanh(-1e6), -1.0);
        assert!(fast_sigmoid(-1e6) < 1e-300);
    }
}
