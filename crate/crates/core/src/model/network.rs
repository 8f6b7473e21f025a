use crate::error::{ensure_finite, Result};
use crate::grid::{Ddf, Dims, ImagePair, Volume};

use super::arch::ModelParams;
use super::tape::{Fault, Tape, Tensor};

const LEAKY_SLOPE: f64 = 0.1;

/// Anything that predicts a displacement field registering `moving` to `fixed`.
pub trait Registrar: Sync {
    fn register(&self, moving: &Volume, fixed: &Volume) -> Result<Ddf>;
}

fn avg_pool(v: &Volume, pool: usize, coarse: Dims) -> Vec<f64> {
    let dims = v.dims();
    let mut out = vec![0.0; coarse.len()];
    for (x, y, z) in dims.iter() {
        out[coarse.index(x / pool, y / pool, z / pool)] += v.get(x, y, z);
    }
    let norm = 1.0 / (pool * pool * pool) as f64;
    for o in &mut out {
        *o *= norm;
    }
    out
}

/// A prediction together with the tape that produced it.
#[derive(Debug)]
pub struct Forward {
    pub ddf: Ddf,
    pub tape: Tape,
}

impl Forward {
    /// `dL/dθ` given `dL/dU`. Consumes the recorded tape.
    pub fn backward(&mut self, params: &ModelParams, upstream: &Ddf) -> Result<Vec<f64>> {
        backward(&mut self.tape, params, upstream)
    }
}

/// Predicts `U = g(moving, fixed; θ)` and records the computation.
pub fn forward(params: &ModelParams, pair: &ImagePair) -> Result<Forward> {
    forward_images(params, &pair.moving, &pair.fixed)
}

pub(crate) fn forward_images(
    params: &ModelParams,
    moving: &Volume,
    fixed: &Volume,
) -> Result<Forward> {
    let arch = params.arch();
    arch.dims.expect_same(&moving.dims())?;
    arch.dims.expect_same(&fixed.dims())?;
    ensure_finite("parameters", params.theta())?;

    let theta = params.theta();
    let blocks = params.manifest();
    let off = |name: &str| {
        blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.offset)
            .expect("manifest names are fixed")
    };

    let coarse = arch.coarse();
    let mut input = Tensor::zeros(2, coarse);
    let n = coarse.len();
    input.data[..n].copy_from_slice(&avg_pool(moving, arch.pool, coarse));
    input.data[n..].copy_from_slice(&avg_pool(fixed, arch.pool, coarse));

    let mut tape = Tape::new(theta.len());
    let mut h = tape.constant(input);
    for (layer, width) in arch.hidden.iter().enumerate() {
        let w = off(["conv1.weight", "conv2.weight", "conv3.weight"][layer]);
        let b = off(["conv1.bias", "conv2.bias", "conv3.bias"][layer]);
        h = tape.conv3(h, theta, w, b, *width);
        h = tape.leaky_relu(h, LEAKY_SLOPE);
    }
    if arch.control != coarse {
        h = tape.resize(h, arch.control);
    }
    h = tape.pointwise(h, theta, off("head.weight"), off("head.bias"), 3);
    h = tape.tanh(h);
    h = tape.channel_scale(h, arch.max_displacement.to_vec());
    if arch.control != arch.dims {
        h = tape.resize(h, arch.dims);
    }
    let ddf = Ddf::new(arch.dims, tape.value(h).data.clone())?;
    Ok(Forward { ddf, tape })
}

/// Backpropagates `dL/dU` through a recorded forward pass.
pub fn backward(tape: &mut Tape, params: &ModelParams, upstream: &Ddf) -> Result<Vec<f64>> {
    tape.backward(upstream.data(), params.theta())
}

#[doc(hidden)]
pub fn backward_with_fault(
    tape: &mut Tape,
    params: &ModelParams,
    upstream: &Ddf,
    fault: Fault,
) -> Result<Vec<f64>> {
    tape.backward_with_fault(upstream.data(), params.theta(), fault)
}

/// Prediction without keeping the tape, e.g. for the teacher.
pub fn predict(params: &ModelParams, moving: &Volume, fixed: &Volume) -> Result<Ddf> {
    Ok(forward_images(params, moving, fixed)?.ddf)
}

impl Registrar for ModelParams {
    fn register(&self, moving: &Volume, fixed: &Volume) -> Result<Ddf> {
        predict(self, moving, fixed)
    }
}
