//! Parameter initialization.

use crate::diffmath::{rf, NdArray, Real};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Xavier-uniform matrix `[rows, cols]` for a linear layer.
pub fn xavier2d<R: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> NdArray<R> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    NdArray::from_fn(&[rows, cols], |_| {
        rf(rng.random::<f64>() * 2.0 * bound - bound)
    })
}

/// Xavier-uniform convolution kernel `[cout, cin, kh, kw]`.
pub fn xavier_conv<R: Real>(
    rng: &mut ChaCha8Rng,
    cout: usize,
    cin: usize,
    kh: usize,
    kw: usize,
) -> NdArray<R> {
    let fan_in = cin * kh * kw;
    let fan_out = cout * kh * kw;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    NdArray::from_fn(&[cout, cin, kh, kw], |_| {
        rf(rng.random::<f64>() * 2.0 * bound - bound)
    })
}
