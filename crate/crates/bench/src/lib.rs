//! Shared fixtures for the benchmarks.

use swreg_core::phantom::{generate_subject, PhantomConfig};
use swreg_core::{Ddf, Dims, ImagePair, Subject};

pub fn subjects(dims: Dims, n: usize) -> Vec<Subject> {
    let cfg = PhantomConfig::standard(dims);
    (0..n)
        .map(|i| generate_subject(&cfg, i as u64).expect("standard phantom fits"))
        .collect()
}

pub fn labelled_pair(dims: Dims) -> ImagePair {
    let s = subjects(dims, 2);
    let (a, b) = (s[0].clone(), s[1].clone());
    ImagePair::labelled(
        a.image,
        b.image,
        a.masks.expect("masks"),
        b.masks.expect("masks"),
    )
    .expect("same grid")
}

pub fn smooth_field(dims: Dims) -> Ddf {
    Ddf::from_fn(dims, |x, y, z| {
        let (x, y, z) = (x as f64, y as f64, z as f64);
        [
            0.7 * (0.3 * y).sin(),
            -0.5 * (0.2 * z).cos(),
            0.4 * (0.25 * x).sin(),
        ]
    })
    .expect("finite")
}
