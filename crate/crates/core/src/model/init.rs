use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Real, Tensor};

fn uniform<R: Real>(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor<R> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| R::lit(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub(crate) fn he_uniform<R: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<R> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

pub(crate) fn glorot_uniform<R: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<R> {
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

/// `[h, h * blocks]` made of `blocks` independent orthogonal `h x h`
/// matrices side by side, one per GRU gate.
pub(crate) fn orthogonal_blocks<R: Real>(h: usize, blocks: usize, rng: &mut ChaCha8Rng) -> Tensor<R> {
    let mut out = vec![R::zero(); h * h * blocks];
    for b in 0..blocks {
        let a = DMatrix::<f64>::from_fn(h, h, |_, _| StandardNormal.sample(rng));
        let qr = a.qr();
        let (q, r) = (qr.q(), qr.r());
        for j in 0..h {
            // Sign fix makes the draw uniform over the orthogonal group.
            let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..h {
                out[i * h * blocks + b * h + j] = R::lit(s * q[(i, j)]);
            }
        }
    }
    Tensor::new([h, h * blocks], out).unwrap()
}
