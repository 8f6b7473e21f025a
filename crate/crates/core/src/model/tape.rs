//! A minimal reverse-mode tape over multi-channel grid tensors.
//!
//! Nodes are appended in evaluation order and the backward pass walks them
//! in reverse, accumulating gradients for node values and for the flat
//! parameter vector. Only the operations the registrar needs are supported.

use crate::error::{Error, Result};
use crate::grid::Dims;

/// Multi-channel grid tensor, channel-major like every other grid here.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, dims: Dims) -> Self {
        Self {
            channels,
            dims,
            data: vec![0.0; channels * dims.len()],
        }
    }
}

/// Selects a backward rule to corrupt. Exists so gradient checks can show
/// they detect a wrong derivative.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Leaky-ReLU uses slope 1 on the negative side in the backward pass.
    LeakyReluSlope,
    /// `tanh'` computed as `1 − y` instead of `1 − y²`.
    TanhDerivative,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Constant,
    /// 3×3×3 convolution with zero padding.
    Conv3 {
        input: usize,
        weight: usize,
        bias: usize,
    },
    /// 1×1×1 convolution.
    Pointwise {
        input: usize,
        weight: usize,
        bias: usize,
    },
    LeakyRelu {
        input: usize,
        slope: f64,
    },
    Tanh {
        input: usize,
    },
    ChannelScale {
        input: usize,
        factors: Vec<f64>,
    },
    /// Separable trilinear resize with aligned corners.
    Resize {
        input: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded forward computation. One backward pass per recording.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    param_len: usize,
    consumed: bool,
}

const OFFSETS: [[isize; 3]; 27] = {
    let mut o = [[0isize; 3]; 27];
    let mut k = 0;
    while k < 27 {
        o[k] = [
            (k % 3) as isize - 1,
            ((k / 3) % 3) as isize - 1,
            (k / 9) as isize - 1,
        ];
        k += 1;
    }
    o
};

/// Valid output range along one axis for a shift of `off`.
#[inline]
fn shifted_range(n: usize, off: isize) -> std::ops::Range<usize> {
    let lo = if off < 0 { (-off) as usize } else { 0 };
    let hi = if off > 0 { n - off as usize } else { n };
    lo..hi.max(lo)
}

fn conv3_forward(x: &Tensor, w: &[f64], b: &[f64], out_c: usize) -> Tensor {
    let dims = x.dims;
    let n = dims.len();
    let in_c = x.channels;
    let mut y = Tensor::zeros(out_c, dims);
    for o in 0..out_c {
        let out = &mut y.data[o * n..(o + 1) * n];
        out.fill(b[o]);
        for i in 0..in_c {
            let src = &x.data[i * n..(i + 1) * n];
            for (k, off) in OFFSETS.iter().enumerate() {
                let wk = w[(o * in_c + i) * 27 + k];
                if wk == 0.0 {
                    continue;
                }
                for z in shifted_range(dims.d, off[2]) {
                    let sz = (z as isize + off[2]) as usize;
                    for yy in shifted_range(dims.h, off[1]) {
                        let sy = (yy as isize + off[1]) as usize;
                        let xr = shifted_range(dims.w, off[0]);
                        let dst0 = dims.index(xr.start, yy, z);
                        let src0 = dims.index((xr.start as isize + off[0]) as usize, sy, sz);
                        let len = xr.len();
                        for (d, s) in out[dst0..dst0 + len].iter_mut().zip(&src[src0..src0 + len]) {
                            *d += wk * s;
                        }
                    }
                }
            }
        }
    }
    y
}

/// Accumulates `dx`, `dw`, `db` for a 3×3×3 convolution.
fn conv3_backward(
    x: &Tensor,
    w: &[f64],
    gy: &[f64],
    out_c: usize,
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    let dims = x.dims;
    let n = dims.len();
    let in_c = x.channels;
    for o in 0..out_c {
        let g = &gy[o * n..(o + 1) * n];
        db[o] += g.iter().sum::<f64>();
        for i in 0..in_c {
            let src = &x.data[i * n..(i + 1) * n];
            let dsrc = &mut dx[i * n..(i + 1) * n];
            for (k, off) in OFFSETS.iter().enumerate() {
                let widx = (o * in_c + i) * 27 + k;
                let wk = w[widx];
                let mut acc = 0.0;
                for z in shifted_range(dims.d, off[2]) {
                    let sz = (z as isize + off[2]) as usize;
                    for yy in shifted_range(dims.h, off[1]) {
                        let sy = (yy as isize + off[1]) as usize;
                        let xr = shifted_range(dims.w, off[0]);
                        let dst0 = dims.index(xr.start, yy, z);
                        let src0 = dims.index((xr.start as isize + off[0]) as usize, sy, sz);
                        let len = xr.len();
                        let gs = &g[dst0..dst0 + len];
                        for (gv, s) in gs.iter().zip(&src[src0..src0 + len]) {
                            acc += gv * s;
                        }
                        for (ds, gv) in dsrc[src0..src0 + len].iter_mut().zip(gs) {
                            *ds += wk * gv;
                        }
                    }
                }
                dw[widx] += acc;
            }
        }
    }
}

fn pointwise_forward(x: &Tensor, w: &[f64], b: &[f64], out_c: usize) -> Tensor {
    let n = x.dims.len();
    let mut y = Tensor::zeros(out_c, x.dims);
    for o in 0..out_c {
        let out = &mut y.data[o * n..(o + 1) * n];
        out.fill(b[o]);
        for i in 0..x.channels {
            let wk = w[o * x.channels + i];
            for (d, s) in out.iter_mut().zip(&x.data[i * n..(i + 1) * n]) {
                *d += wk * s;
            }
        }
    }
    y
}

/// Sample positions of an aligned-corners linear resize from `n_in` to `n_out`.
fn resize_stencil(n_in: usize, n_out: usize) -> Vec<(usize, f64)> {
    (0..n_out)
        .map(|j| {
            let p = j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (p.floor() as usize).min(n_in - 2);
            (lo, p - lo as f64)
        })
        .collect()
}

/// Linear resize along one axis (0 = x, 1 = y, 2 = z).
fn resize_axis(x: &Tensor, axis: usize, n_out: usize) -> Tensor {
    let din = x.dims.as_array();
    if din[axis] == n_out {
        return x.clone();
    }
    let mut dout = din;
    dout[axis] = n_out;
    let out_dims = Dims::new(dout[0], dout[1], dout[2]);
    let stencil = resize_stencil(din[axis], n_out);
    let mut y = Tensor::zeros(x.channels, out_dims);
    let (nin, nout) = (x.dims.len(), out_dims.len());
    for c in 0..x.channels {
        let src = &x.data[c * nin..(c + 1) * nin];
        let dst = &mut y.data[c * nout..(c + 1) * nout];
        for (j, (px, py, pz)) in out_dims.iter().enumerate() {
            let mut p = [px, py, pz];
            let (lo, f) = stencil[p[axis]];
            p[axis] = lo;
            let a = src[x.dims.index(p[0], p[1], p[2])];
            p[axis] = lo + 1;
            let b = src[x.dims.index(p[0], p[1], p[2])];
            dst[j] = a * (1.0 - f) + b * f;
        }
    }
    y
}

/// Adjoint of [`resize_axis`]: maps a gradient on the output grid back to `in_dims`.
fn resize_axis_adjoint(g: &Tensor, axis: usize, in_dims: Dims) -> Tensor {
    let din = in_dims.as_array();
    let n_out = g.dims.as_array()[axis];
    if din[axis] == n_out {
        return g.clone();
    }
    let stencil = resize_stencil(din[axis], n_out);
    let mut gx = Tensor::zeros(g.channels, in_dims);
    let (nin, nout) = (in_dims.len(), g.dims.len());
    for c in 0..g.channels {
        let src = &g.data[c * nout..(c + 1) * nout];
        let dst = &mut gx.data[c * nin..(c + 1) * nin];
        for (j, (px, py, pz)) in g.dims.iter().enumerate() {
            let mut p = [px, py, pz];
            let (lo, f) = stencil[p[axis]];
            p[axis] = lo;
            dst[in_dims.index(p[0], p[1], p[2])] += src[j] * (1.0 - f);
            p[axis] = lo + 1;
            dst[in_dims.index(p[0], p[1], p[2])] += src[j] * f;
        }
    }
    gx
}

pub(crate) fn resize(x: &Tensor, to: Dims) -> Tensor {
    let t = resize_axis(x, 0, to.w);
    let t = resize_axis(&t, 1, to.h);
    resize_axis(&t, 2, to.d)
}

fn resize_adjoint(g: &Tensor, from: Dims) -> Tensor {
    let d1 = Dims::new(from.w, from.h, from.d);
    let d2 = Dims::new(g.dims.w, from.h, from.d);
    let d3 = Dims::new(g.dims.w, g.dims.h, from.d);
    let t = resize_axis_adjoint(g, 2, d3);
    let t = resize_axis_adjoint(&t, 1, d2);
    resize_axis_adjoint(&t, 0, d1)
}

impl Tape {
    pub(crate) fn new(param_len: usize) -> Self {
        Self {
            nodes: Vec::new(),
            param_len,
            consumed: false,
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> usize {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub(crate) fn value(&self, node: usize) -> &Tensor {
        &self.nodes[node].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub(crate) fn constant(&mut self, t: Tensor) -> usize {
        self.push(Op::Constant, t)
    }

    /// `weight` and `bias` are offsets into `theta`.
    pub(crate) fn conv3(
        &mut self,
        input: usize,
        theta: &[f64],
        weight: usize,
        bias: usize,
        out_c: usize,
    ) -> usize {
        let x = &self.nodes[input].value;
        let w_len = out_c * x.channels * 27;
        let y = conv3_forward(
            x,
            &theta[weight..weight + w_len],
            &theta[bias..bias + out_c],
            out_c,
        );
        self.push(
            Op::Conv3 {
                input,
                weight,
                bias,
            },
            y,
        )
    }

    pub(crate) fn pointwise(
        &mut self,
        input: usize,
        theta: &[f64],
        weight: usize,
        bias: usize,
        out_c: usize,
    ) -> usize {
        let x = &self.nodes[input].value;
        let w_len = out_c * x.channels;
        let y = pointwise_forward(
            x,
            &theta[weight..weight + w_len],
            &theta[bias..bias + out_c],
            out_c,
        );
        self.push(
            Op::Pointwise {
                input,
                weight,
                bias,
            },
            y,
        )
    }

    pub(crate) fn leaky_relu(&mut self, input: usize, slope: f64) -> usize {
        let mut y = self.nodes[input].value.clone();
        for v in &mut y.data {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        self.push(Op::LeakyRelu { input, slope }, y)
    }

    pub(crate) fn tanh(&mut self, input: usize) -> usize {
        let mut y = self.nodes[input].value.clone();
        for v in &mut y.data {
            *v = v.tanh();
        }
        self.push(Op::Tanh { input }, y)
    }

    pub(crate) fn channel_scale(&mut self, input: usize, factors: Vec<f64>) -> usize {
        let mut y = self.nodes[input].value.clone();
        let n = y.dims.len();
        for (c, f) in factors.iter().enumerate() {
            for v in &mut y.data[c * n..(c + 1) * n] {
                *v *= f;
            }
        }
        self.push(Op::ChannelScale { input, factors }, y)
    }

    pub(crate) fn resize(&mut self, input: usize, to: Dims) -> usize {
        let y = resize(&self.nodes[input].value, to);
        self.push(Op::Resize { input }, y)
    }

    /// Propagates `upstream` (the gradient of the loss with respect to the
    /// last node) back to the parameters. Fails if the tape was already used.
    pub fn backward(&mut self, upstream: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.backward_with_fault(upstream, theta, Fault::None)
    }

    #[doc(hidden)]
    pub fn backward_with_fault(
        &mut self,
        upstream: &[f64],
        theta: &[f64],
        fault: Fault,
    ) -> Result<Vec<f64>> {
        if self.consumed {
            return Err(Error::TapeReused);
        }
        let last = self
            .nodes
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Missing("empty tape".into()))?;
        if upstream.len() != self.nodes[last].value.data.len() {
            return Err(Error::InvalidParameter(format!(
                "upstream gradient has {} entries, output has {}",
                upstream.len(),
                self.nodes[last].value.data.len()
            )));
        }
        if theta.len() != self.param_len {
            return Err(Error::InvalidParameter(format!(
                "tape recorded {} parameters, got {}",
                self.param_len,
                theta.len()
            )));
        }
        self.consumed = true;

        let mut dtheta = vec![0.0; self.param_len];
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[last] = Some(upstream.to_vec());

        for idx in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Conv3 {
                    input,
                    weight,
                    bias,
                } => {
                    let x = &self.nodes[*input].value;
                    let out_c = node.value.channels;
                    let w_len = out_c * x.channels * 27;
                    let mut dx = vec![0.0; x.data.len()];
                    let (head, tail) = dtheta.split_at_mut(*bias);
                    conv3_backward(
                        x,
                        &theta[*weight..*weight + w_len],
                        &gy,
                        out_c,
                        &mut dx,
                        &mut head[*weight..*weight + w_len],
                        &mut tail[..out_c],
                    );
                    accumulate(&mut grads[*input], dx);
                }
                Op::Pointwise {
                    input,
                    weight,
                    bias,
                } => {
                    let x = &self.nodes[*input].value;
                    let n = x.dims.len();
                    let (in_c, out_c) = (x.channels, node.value.channels);
                    let mut dx = vec![0.0; x.data.len()];
                    for o in 0..out_c {
                        let g = &gy[o * n..(o + 1) * n];
                        dtheta[*bias + o] += g.iter().sum::<f64>();
                        for i in 0..in_c {
                            let xs = &x.data[i * n..(i + 1) * n];
                            let widx = *weight + o * in_c + i;
                            dtheta[widx] += g.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                            let wk = theta[widx];
                            for (d, gv) in dx[i * n..(i + 1) * n].iter_mut().zip(g) {
                                *d += wk * gv;
                            }
                        }
                    }
                    accumulate(&mut grads[*input], dx);
                }
                Op::LeakyRelu { input, slope } => {
                    let x = &self.nodes[*input].value.data;
                    let neg = if fault == Fault::LeakyReluSlope {
                        1.0
                    } else {
                        *slope
                    };
                    let dx = gy
                        .iter()
                        .zip(x)
                        .map(|(g, &v)| if v < 0.0 { g * neg } else { *g })
                        .collect();
                    accumulate(&mut grads[*input], dx);
                }
                Op::Tanh { input } => {
                    let y = &node.value.data;
                    let dx = gy
                        .iter()
                        .zip(y)
                        .map(|(g, t)| match fault {
                            Fault::TanhDerivative => g * (1.0 - t),
                            _ => g * (1.0 - t * t),
                        })
                        .collect();
                    accumulate(&mut grads[*input], dx);
                }
                Op::ChannelScale { input, factors } => {
                    let n = node.value.dims.len();
                    let mut dx = gy;
                    for (c, f) in factors.iter().enumerate() {
                        for v in &mut dx[c * n..(c + 1) * n] {
                            *v *= f;
                        }
                    }
                    accumulate(&mut grads[*input], dx);
                }
                Op::Resize { input } => {
                    let g = Tensor {
                        channels: node.value.channels,
                        dims: node.value.dims,
                        data: gy,
                    };
                    let dx = resize_adjoint(&g, self.nodes[*input].value.dims);
                    accumulate(&mut grads[*input], dx.data);
                }
            }
        }
        Ok(dtheta)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}
