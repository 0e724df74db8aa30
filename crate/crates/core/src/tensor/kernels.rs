//! Plain-slice forward/backward kernels behind the graph operations.
//!
//! Activations are laid out `[N, T, C]` row-major, so a time step of one
//! sample is a contiguous channel row. Weight reductions over the batch run
//! in a fixed order, which keeps results bit-identical between runs.

use super::Real;
use crate::{Error, Result};

#[inline]
fn axpy<R: Real>(alpha: R, x: &[R], y: &mut [R]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut s = R::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub t_in: usize,
    pub c_in: usize,
    pub t_out: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Stride 1 uses "same" padding; larger strides tile the input exactly
    /// (no padding, `t_out = t_in / stride`).
    pub fn new(n: usize, t_in: usize, c_in: usize, k: usize, c_out: usize, stride: usize) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(Error::arg("conv1d: kernel length and stride must be positive"));
        }
        let (t_out, pad) = if stride == 1 {
            if k % 2 == 0 {
                return Err(Error::arg(format!("conv1d: same padding needs odd kernel length, got {k}")));
            }
            (t_in, (k - 1) / 2)
        } else {
            if t_in % stride != 0 {
                return Err(Error::len(format!(
                    "conv1d: input length {t_in} is not divisible by stride {stride}"
                )));
            }
            (t_in / stride, 0)
        };
        Ok(Self {
            n,
            t_in,
            c_in,
            t_out,
            c_out,
            k,
            stride,
            pad,
        })
    }

    #[inline]
    fn src(&self, t: usize, k: usize) -> Option<usize> {
        let s = (t * self.stride + k) as isize - self.pad as isize;
        (s >= 0 && (s as usize) < self.t_in).then_some(s as usize)
    }
}

pub(crate) fn conv1d_forward<R: Real>(x: &[R], w: &[R], b: &[R], g: &ConvGeom) -> Vec<R> {
    let mut out = vec![R::zero(); g.n * g.t_out * g.c_out];
    for n in 0..g.n {
        for t in 0..g.t_out {
            let o = (n * g.t_out + t) * g.c_out;
            let out_row = &mut out[o..o + g.c_out];
            out_row.copy_from_slice(b);
            for k in 0..g.k {
                let Some(s) = g.src(t, k) else { continue };
                let x_row = &x[(n * g.t_in + s) * g.c_in..][..g.c_in];
                for (ci, &xv) in x_row.iter().enumerate() {
                    let w_row = &w[(k * g.c_in + ci) * g.c_out..][..g.c_out];
                    axpy(xv, w_row, out_row);
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is skipped when the input needs no gradient.
pub(crate) fn conv1d_backward<R: Real>(
    x: &[R],
    w: &[R],
    dy: &[R],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<R>>, Vec<R>, Vec<R>) {
    let mut dx = need_dx.then(|| vec![R::zero(); x.len()]);
    let mut dw = vec![R::zero(); w.len()];
    let mut db = vec![R::zero(); g.c_out];
    for n in 0..g.n {
        for t in 0..g.t_out {
            let dy_row = &dy[(n * g.t_out + t) * g.c_out..][..g.c_out];
            axpy(R::one(), dy_row, &mut db);
            for k in 0..g.k {
                let Some(s) = g.src(t, k) else { continue };
                let xo = (n * g.t_in + s) * g.c_in;
                for ci in 0..g.c_in {
                    let wo = (k * g.c_in + ci) * g.c_out;
                    axpy(x[xo + ci], dy_row, &mut dw[wo..wo + g.c_out]);
                    if let Some(dx) = dx.as_mut() {
                        dx[xo + ci] += dot(&w[wo..wo + g.c_out], dy_row);
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Non-overlapping max pooling over time. Ties resolve to the lowest index.
pub(crate) fn maxpool_forward<R: Real>(
    x: &[R],
    n: usize,
    t: usize,
    c: usize,
    size: usize,
) -> (Vec<R>, Vec<usize>) {
    let t_out = t / size;
    let mut out = Vec::with_capacity(n * t_out * c);
    let mut argmax = Vec::with_capacity(n * t_out * c);
    for ni in 0..n {
        for to in 0..t_out {
            for ci in 0..c {
                let mut best = (ni * t + to * size) * c + ci;
                for j in 1..size {
                    let idx = (ni * t + to * size + j) * c + ci;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) struct BnForward<R> {
    pub y: Vec<R>,
    pub xhat: Vec<R>,
    pub mean: Vec<R>,
    pub var: Vec<R>,
    pub inv_std: Vec<R>,
}

/// Batch statistics per channel over all `rows` of a `[rows, c]` view.
pub(crate) fn batchnorm_train_forward<R: Real>(
    x: &[R],
    gamma: &[R],
    beta: &[R],
    rows: usize,
    c: usize,
    eps: R,
) -> BnForward<R> {
    let m = R::from_usize(rows).unwrap();
    let mut mean = vec![R::zero(); c];
    for r in 0..rows {
        axpy(R::one(), &x[r * c..(r + 1) * c], &mut mean);
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![R::zero(); c];
    for r in 0..rows {
        for ci in 0..c {
            let d = x[r * c + ci] - mean[ci];
            var[ci] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<R> = var.iter().map(|&v| R::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![R::zero(); x.len()];
    let mut y = vec![R::zero(); x.len()];
    for r in 0..rows {
        for ci in 0..c {
            let i = r * c + ci;
            let h = (x[i] - mean[ci]) * inv_std[ci];
            xhat[i] = h;
            y[i] = gamma[ci] * h + beta[ci];
        }
    }
    BnForward {
        y,
        xhat,
        mean,
        var,
        inv_std,
    }
}

/// Returns `(dx, dgamma, dbeta)` for training-mode batch norm.
pub(crate) fn batchnorm_train_backward<R: Real>(
    dy: &[R],
    xhat: &[R],
    gamma: &[R],
    inv_std: &[R],
    rows: usize,
    c: usize,
) -> (Vec<R>, Vec<R>, Vec<R>) {
    let m = R::from_usize(rows).unwrap();
    let mut dgamma = vec![R::zero(); c];
    let mut dbeta = vec![R::zero(); c];
    for r in 0..rows {
        for ci in 0..c {
            let i = r * c + ci;
            dgamma[ci] += dy[i] * xhat[i];
            dbeta[ci] += dy[i];
        }
    }
    // dxhat = dy * gamma, so sum(dxhat) = gamma * dbeta and sum(dxhat * xhat) = gamma * dgamma.
    let mut dx = vec![R::zero(); dy.len()];
    for r in 0..rows {
        for ci in 0..c {
            let i = r * c + ci;
            let dxhat = dy[i] * gamma[ci];
            dx[i] = inv_std[ci] / m
                * (m * dxhat - gamma[ci] * dbeta[ci] - xhat[i] * gamma[ci] * dgamma[ci]);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn linear_forward<R: Real>(x: &[R], w: &[R], b: &[R], n: usize, d_in: usize, d_out: usize) -> Vec<R> {
    let mut out = vec![R::zero(); n * d_out];
    for i in 0..n {
        let row = &mut out[i * d_out..(i + 1) * d_out];
        row.copy_from_slice(b);
        for (k, &xv) in x[i * d_in..(i + 1) * d_in].iter().enumerate() {
            axpy(xv, &w[k * d_out..(k + 1) * d_out], row);
        }
    }
    out
}

pub(crate) fn linear_backward<R: Real>(
    x: &[R],
    w: &[R],
    dy: &[R],
    n: usize,
    d_in: usize,
    d_out: usize,
    need_dx: bool,
) -> (Option<Vec<R>>, Vec<R>, Vec<R>) {
    let mut dx = need_dx.then(|| vec![R::zero(); n * d_in]);
    let mut dw = vec![R::zero(); w.len()];
    let mut db = vec![R::zero(); d_out];
    for i in 0..n {
        let dy_row = &dy[i * d_out..(i + 1) * d_out];
        axpy(R::one(), dy_row, &mut db);
        for k in 0..d_in {
            let w_row = &w[k * d_out..(k + 1) * d_out];
            axpy(x[i * d_in + k], dy_row, &mut dw[k * d_out..(k + 1) * d_out]);
            if let Some(dx) = dx.as_mut() {
                dx[i * d_in + k] = dot(w_row, dy_row);
            }
        }
    }
    (dx, dw, db)
}

/// Per-step activations saved for backpropagation through time.
#[derive(Clone, Debug, Default)]
pub(crate) struct GruCache<R> {
    /// Hidden state entering each step, `[N, T, H]`.
    h_prev: Vec<R>,
    z: Vec<R>,
    r: Vec<R>,
    cand: Vec<R>,
}

pub(crate) struct GruDims {
    pub n: usize,
    pub t: usize,
    pub c: usize,
    pub h: usize,
}

/// GRU with gate order (update z, reset r, candidate) packed along the last
/// axis of `kernel [C, 3H]`, `recurrent [H, 3H]` and `bias [3H]`:
///
/// ```text
/// z  = sigmoid(x Wz + (h*m) Uz + bz)
/// r  = sigmoid(x Wr + (h*m) Ur + br)
/// h~ = tanh(x Wh + (r * (h*m)) Uh + bh)
/// h' = z * h + (1 - z) * h~
/// ```
///
/// `mask` is an optional `[N, H]` recurrent dropout mask (already scaled),
/// applied at every step. Returns the final hidden state `[N, H]`.
pub(crate) fn gru_forward<R: Real>(
    x: &[R],
    kernel: &[R],
    recurrent: &[R],
    bias: &[R],
    mask: Option<&[R]>,
    d: &GruDims,
) -> (Vec<R>, GruCache<R>) {
    let (h3, hs) = (3 * d.h, d.h);
    let steps = d.n * d.t * hs;
    let mut cache = GruCache {
        h_prev: vec![R::zero(); steps],
        z: vec![R::zero(); steps],
        r: vec![R::zero(); steps],
        cand: vec![R::zero(); steps],
    };
    let mut out = vec![R::zero(); d.n * hs];
    let mut pre_x = vec![R::zero(); h3];
    let mut pre_h = vec![R::zero(); h3];
    let mut hd = vec![R::zero(); hs];
    let mut rh = vec![R::zero(); hs];
    for n in 0..d.n {
        let mut h = vec![R::zero(); hs];
        let m = mask.map(|m| &m[n * hs..(n + 1) * hs]);
        for t in 0..d.t {
            let base = (n * d.t + t) * hs;
            cache.h_prev[base..base + hs].copy_from_slice(&h);
            pre_x.copy_from_slice(bias);
            for (ci, &xv) in x[(n * d.t + t) * d.c..][..d.c].iter().enumerate() {
                axpy(xv, &kernel[ci * h3..(ci + 1) * h3], &mut pre_x);
            }
            for j in 0..hs {
                hd[j] = match m {
                    Some(m) => h[j] * m[j],
                    None => h[j],
                };
            }
            pre_h[..2 * hs].iter_mut().for_each(|v| *v = R::zero());
            for j in 0..hs {
                axpy(hd[j], &recurrent[j * h3..j * h3 + 2 * hs], &mut pre_h[..2 * hs]);
            }
            for j in 0..hs {
                let z = sigmoid(pre_x[j] + pre_h[j]);
                let r = sigmoid(pre_x[hs + j] + pre_h[hs + j]);
                cache.z[base + j] = z;
                cache.r[base + j] = r;
                rh[j] = r * hd[j];
            }
            pre_h[2 * hs..].iter_mut().for_each(|v| *v = R::zero());
            for j in 0..hs {
                axpy(rh[j], &recurrent[j * h3 + 2 * hs..(j + 1) * h3], &mut pre_h[2 * hs..]);
            }
            for j in 0..hs {
                let c = (pre_x[2 * hs + j] + pre_h[2 * hs + j]).tanh();
                cache.cand[base + j] = c;
                let z = cache.z[base + j];
                h[j] = z * h[j] + (R::one() - z) * c;
            }
        }
        out[n * hs..(n + 1) * hs].copy_from_slice(&h);
    }
    (out, cache)
}

pub(crate) struct GruGrads<R> {
    pub dx: Option<Vec<R>>,
    pub dkernel: Vec<R>,
    pub drecurrent: Vec<R>,
    pub dbias: Vec<R>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_backward<R: Real>(
    dout: &[R],
    x: &[R],
    kernel: &[R],
    recurrent: &[R],
    mask: Option<&[R]>,
    cache: &GruCache<R>,
    d: &GruDims,
    need_dx: bool,
) -> GruGrads<R> {
    let (h3, hs) = (3 * d.h, d.h);
    let mut dx = need_dx.then(|| vec![R::zero(); x.len()]);
    let mut dkernel = vec![R::zero(); kernel.len()];
    let mut drecurrent = vec![R::zero(); recurrent.len()];
    let mut dbias = vec![R::zero(); h3];
    let mut da = vec![R::zero(); h3];
    let mut hd = vec![R::zero(); hs];
    let mut rh = vec![R::zero(); hs];
    let mut drh = vec![R::zero(); hs];
    let mut dhd = vec![R::zero(); hs];
    for n in 0..d.n {
        let m = mask.map(|m| &m[n * hs..(n + 1) * hs]);
        let mut dh: Vec<R> = dout[n * hs..(n + 1) * hs].to_vec();
        for t in (0..d.t).rev() {
            let base = (n * d.t + t) * hs;
            let hp = &cache.h_prev[base..base + hs];
            let z = &cache.z[base..base + hs];
            let r = &cache.r[base..base + hs];
            let cand = &cache.cand[base..base + hs];
            for j in 0..hs {
                hd[j] = match m {
                    Some(m) => hp[j] * m[j],
                    None => hp[j],
                };
                rh[j] = r[j] * hd[j];
            }
            // Candidate and update gate pre-activations.
            for j in 0..hs {
                let dz = dh[j] * (hp[j] - cand[j]);
                let dc = dh[j] * (R::one() - z[j]);
                da[j] = dz * z[j] * (R::one() - z[j]);
                da[2 * hs + j] = dc * (R::one() - cand[j] * cand[j]);
            }
            // Through (r * hd) Uh.
            for j in 0..hs {
                let u_h = &recurrent[j * h3 + 2 * hs..(j + 1) * h3];
                drh[j] = dot(u_h, &da[2 * hs..]);
            }
            for j in 0..hs {
                let dr = drh[j] * hd[j];
                da[hs + j] = dr * r[j] * (R::one() - r[j]);
            }
            for j in 0..hs {
                let u_zr = &recurrent[j * h3..j * h3 + 2 * hs];
                dhd[j] = dot(u_zr, &da[..2 * hs]) + drh[j] * r[j];
                axpy(hd[j], &da[..2 * hs], &mut drecurrent[j * h3..j * h3 + 2 * hs]);
                axpy(rh[j], &da[2 * hs..], &mut drecurrent[j * h3 + 2 * hs..(j + 1) * h3]);
            }
            axpy(R::one(), &da, &mut dbias);
            let xo = (n * d.t + t) * d.c;
            for ci in 0..d.c {
                let k_row = ci * h3..(ci + 1) * h3;
                axpy(x[xo + ci], &da, &mut dkernel[k_row.clone()]);
                if let Some(dx) = dx.as_mut() {
                    dx[xo + ci] = dot(&kernel[k_row], &da);
                }
            }
            for j in 0..hs {
                let via_mask = match m {
                    Some(m) => dhd[j] * m[j],
                    None => dhd[j],
                };
                dh[j] = dh[j] * z[j] + via_mask;
            }
        }
    }
    GruGrads {
        dx,
        dkernel,
        drecurrent,
        dbias,
    }
}
