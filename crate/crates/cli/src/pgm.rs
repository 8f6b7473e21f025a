use swreg_core::Dims;

/// 8-bit binary PGM of axial slice `z`, min-max windowed over the slice.
/// Rows run along `y`, columns along `x`.
pub fn axial_slice_pgm(channel: &[f64], dims: Dims, z: usize) -> Vec<u8> {
    let plane = dims.w * dims.h;
    let slice = &channel[z * plane..(z + 1) * plane];
    let (lo, hi) = slice
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mut out = format!("P5\n{} {}\n255\n", dims.w, dims.h).into_bytes();
    out.extend(slice.iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}
