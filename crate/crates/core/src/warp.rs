//! Trilinear resampling and displacement-field composition.
//!
//! Warping is a pull-back: the output at voxel `x` reads the input at
//! `x + u(x)`. Points outside `[0, dim-1]` are clamped to the border on each
//! axis, so constant fields stay constant under resampling.

use crate::error::{Error, Result};
use crate::grid::{Ddf, Dims, MaskSet, Volume};

/// Corner indices and interpolation weights along one axis.
#[derive(Clone, Copy, Debug)]
struct AxisStencil {
    lo: usize,
    hi: usize,
    frac: f64,
    /// False when the coordinate was clamped; the derivative along this axis is then zero.
    inside: bool,
}

#[inline]
fn axis_stencil(p: f64, n: usize) -> AxisStencil {
    let max = (n - 1) as f64;
    let inside = (0.0..=max).contains(&p);
    let q = p.clamp(0.0, max);
    let lo = (q.floor() as usize).min(n - 2);
    AxisStencil {
        lo,
        hi: lo + 1,
        frac: q - lo as f64,
        inside,
    }
}

#[inline]
fn interp(src: &[f64], dims: &Dims, sx: AxisStencil, sy: AxisStencil, sz: AxisStencil) -> f64 {
    let (fx, fy, fz) = (sx.frac, sy.frac, sz.frac);
    let c000 = src[dims.index(sx.lo, sy.lo, sz.lo)];
    let c100 = src[dims.index(sx.hi, sy.lo, sz.lo)];
    let c010 = src[dims.index(sx.lo, sy.hi, sz.lo)];
    let c110 = src[dims.index(sx.hi, sy.hi, sz.lo)];
    let c001 = src[dims.index(sx.lo, sy.lo, sz.hi)];
    let c101 = src[dims.index(sx.hi, sy.lo, sz.hi)];
    let c011 = src[dims.index(sx.lo, sy.hi, sz.hi)];
    let c111 = src[dims.index(sx.hi, sy.hi, sz.hi)];
    let c00 = c000 * (1.0 - fx) + c100 * fx;
    let c10 = c010 * (1.0 - fx) + c110 * fx;
    let c01 = c001 * (1.0 - fx) + c101 * fx;
    let c11 = c011 * (1.0 - fx) + c111 * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Trilinear sample of a raw channel at a continuous voxel coordinate.
#[inline]
pub(crate) fn sample_channel(src: &[f64], dims: &Dims, p: [f64; 3]) -> f64 {
    interp(
        src,
        dims,
        axis_stencil(p[0], dims.w),
        axis_stencil(p[1], dims.h),
        axis_stencil(p[2], dims.d),
    )
}

/// Trilinear sample and its gradient with respect to the sample point.
///
/// The gradient component along a clamped axis is zero.
#[inline]
pub(crate) fn sample_channel_with_grad(src: &[f64], dims: &Dims, p: [f64; 3]) -> (f64, [f64; 3]) {
    let sx = axis_stencil(p[0], dims.w);
    let sy = axis_stencil(p[1], dims.h);
    let sz = axis_stencil(p[2], dims.d);
    let (fx, fy, fz) = (sx.frac, sy.frac, sz.frac);
    let c000 = src[dims.index(sx.lo, sy.lo, sz.lo)];
    let c100 = src[dims.index(sx.hi, sy.lo, sz.lo)];
    let c010 = src[dims.index(sx.lo, sy.hi, sz.lo)];
    let c110 = src[dims.index(sx.hi, sy.hi, sz.lo)];
    let c001 = src[dims.index(sx.lo, sy.lo, sz.hi)];
    let c101 = src[dims.index(sx.hi, sy.lo, sz.hi)];
    let c011 = src[dims.index(sx.lo, sy.hi, sz.hi)];
    let c111 = src[dims.index(sx.hi, sy.hi, sz.hi)];

    let c00 = c000 * (1.0 - fx) + c100 * fx;
    let c10 = c010 * (1.0 - fx) + c110 * fx;
    let c01 = c001 * (1.0 - fx) + c101 * fx;
    let c11 = c011 * (1.0 - fx) + c111 * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    let value = c0 * (1.0 - fz) + c1 * fz;

    let gz = if sz.inside { c1 - c0 } else { 0.0 };
    let gy = if sy.inside {
        (c10 - c00) * (1.0 - fz) + (c11 - c01) * fz
    } else {
        0.0
    };
    let gx = if sx.inside {
        let d00 = c100 - c000;
        let d10 = c110 - c010;
        let d01 = c101 - c001;
        let d11 = c111 - c011;
        ((d00 * (1.0 - fy) + d10 * fy) * (1.0 - fz)) + ((d01 * (1.0 - fy) + d11 * fy) * fz)
    } else {
        0.0
    };
    (value, [gx, gy, gz])
}

/// Trilinear interpolation of `vol` at continuous voxel coordinate `p`, clamped to the border.
pub fn trilinear_sample(vol: &Volume, p: [f64; 3]) -> Result<f64> {
    if let Some(i) = p.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "sample point",
            index: i,
            value: p[i],
        });
    }
    Ok(sample_channel(vol.data(), &vol.dims(), p))
}

/// Warps one raw channel by `ddf`.
pub(crate) fn warp_channel(src: &[f64], ddf: &Ddf) -> Vec<f64> {
    let dims = ddf.dims();
    let n = dims.len();
    let (ux, uy, uz) = (ddf.channel(0), ddf.channel(1), ddf.channel(2));
    let mut out = Vec::with_capacity(n);
    for (i, (x, y, z)) in dims.iter().enumerate() {
        let p = [x as f64 + ux[i], y as f64 + uy[i], z as f64 + uz[i]];
        out.push(sample_channel(src, &dims, p));
    }
    out
}

/// Warps one raw channel and returns, for each output voxel, the gradient of
/// the sampled value with respect to the three displacement components.
pub(crate) fn warp_channel_with_grad(src: &[f64], ddf: &Ddf) -> (Vec<f64>, Vec<[f64; 3]>) {
    let dims = ddf.dims();
    let n = dims.len();
    let (ux, uy, uz) = (ddf.channel(0), ddf.channel(1), ddf.channel(2));
    let mut out = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    for (i, (x, y, z)) in dims.iter().enumerate() {
        let p = [x as f64 + ux[i], y as f64 + uy[i], z as f64 + uz[i]];
        let (v, g) = sample_channel_with_grad(src, &dims, p);
        out.push(v);
        grad.push(g);
    }
    (out, grad)
}

/// Backward warp of a volume: `output(x) = input(x + u(x))`.
pub fn resample_volume(input: &Volume, ddf: &Ddf) -> Result<Volume> {
    input.dims().expect_same(&ddf.dims())?;
    Ok(input.with_data(warp_channel(input.data(), ddf)))
}

/// Backward warp of every class channel; the result is a soft mask set.
pub fn resample_masks(input: &MaskSet, ddf: &Ddf) -> Result<MaskSet> {
    input.dims().expect_same(&ddf.dims())?;
    let mut data = Vec::with_capacity(input.data().len());
    for c in 0..input.classes() {
        data.extend(
            warp_channel(input.channel(c), ddf)
                .into_iter()
                // trilinear weights are convex, clamp only absorbs rounding
                .map(|v| v.clamp(0.0, 1.0)),
        );
    }
    Ok(MaskSet::soft_from_raw(input.dims(), input.classes(), data))
}

/// Resamples each displacement channel of `a` by `b`.
pub fn resample_ddf(a: &Ddf, b: &Ddf) -> Result<Ddf> {
    a.dims().expect_same(&b.dims())?;
    let mut data = Vec::with_capacity(a.data().len());
    for c in 0..3 {
        data.extend(warp_channel(a.channel(c), b));
    }
    Ok(Ddf::from_raw(a.dims(), data))
}

/// Field equivalent to warping by `a` and then by `b`: `b + a ∘ b`.
pub fn compose_ddf(a: &Ddf, b: &Ddf) -> Result<Ddf> {
    let mut out = resample_ddf(a, b)?;
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o += bv;
    }
    Ok(out)
}

/// The zero displacement field.
pub fn identity_ddf(dims: Dims) -> Ddf {
    Ddf::zeros(dims)
}
