//! Tensor-engine operations against loop oracles and central differences.

mod common;

use common::{max_grad_error, project, rand_tensor, rng};
use rawnet::tensor::{BnMode, BnStats};
use rawnet::{Graph, Tensor};

const TOL: f64 = 1e-4;

/// Explicit zero-padded cross-correlation.
fn conv_oracle(x: &[Vec<f64>], w: &[Vec<Vec<f64>>], b: &[f64], stride: usize) -> Vec<Vec<f64>> {
    let (t, c_in, k, c_out) = (x.len(), x[0].len(), w.len(), b.len());
    let pad = if stride == 1 { (k - 1) / 2 } else { 0 };
    let mut padded = vec![vec![0.0; c_in]; pad];
    padded.extend(x.iter().cloned());
    padded.extend(vec![vec![0.0; c_in]; pad + k]);
    let t_out = if stride == 1 { t } else { t / stride };
    let mut out = vec![vec![0.0; c_out]; t_out];
    for (to, row) in out.iter_mut().enumerate() {
        for co in 0..c_out {
            let mut s = b[co];
            for kk in 0..k {
                for ci in 0..c_in {
                    s += padded[to * stride + kk][ci] * w[kk][ci][co];
                }
            }
            row[co] = s;
        }
    }
    out
}

fn nested2(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let c = t.shape()[1];
    t.data().chunks(c).map(|r| r.to_vec()).collect()
}

fn nested3(t: &Tensor<f64>) -> Vec<Vec<Vec<f64>>> {
    let (b, c) = (t.shape()[1], t.shape()[2]);
    t.data()
        .chunks(b * c)
        .map(|m| m.chunks(c).map(|r| r.to_vec()).collect())
        .collect()
}

#[test]
fn conv1d_matches_loop_oracle() {
    let mut r = rng(1);
    let x = rand_tensor(&[12, 2], &mut r);
    let w = rand_tensor(&[3, 2, 4], &mut r);
    let b = rand_tensor(&[4], &mut r);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv1d(xv, wv, bv, 1).unwrap();
    assert_eq!(g.shape(y), &[12, 4]);
    let expected = conv_oracle(&nested2(&x), &nested3(&w), b.data(), 1);
    for (got, want) in g.value(y).data().iter().zip(expected.concat()) {
        assert!((got - want).abs() < 1e-12);
    }

    let x = rand_tensor(&[12, 2], &mut r);
    let xv = g.constant(x.clone());
    let y = g.conv1d(xv, wv, bv, 3).unwrap();
    assert_eq!(g.shape(y), &[4, 4]);
    let expected = conv_oracle(&nested2(&x), &nested3(&w), b.data(), 3);
    for (got, want) in g.value(y).data().iter().zip(expected.concat()) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn conv1d_zero_input_zero_bias_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::zeros([27, 3]));
    let w = g.constant(rand_tensor(&[3, 3, 5], &mut rng(2)));
    let b = g.constant(Tensor::zeros([5]));
    let y = g.conv1d(x, w, b, 1).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn strided_front_conv_shape() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([59049, 1]));
    let w = g.constant(Tensor::zeros([3, 1, 128]));
    let b = g.constant(Tensor::zeros([128]));
    let y = g.conv1d(x, w, b, 3).unwrap();
    assert_eq!(g.shape(y), &[19683, 128]);
}

#[test]
fn maxpool_matches_window_scan() {
    let x = rand_tensor(&[9, 1], &mut rng(3));
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = g.maxpool1d(xv, 3).unwrap();
    let want: Vec<f64> = x
        .data()
        .chunks(3)
        .map(|w| w.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    assert_eq!(g.value(y).data(), want.as_slice());

    let mut g = Graph::<f64>::new();
    let big = g.constant(Tensor::zeros([2187, 128]));
    let p = g.maxpool1d(big, 3).unwrap();
    assert_eq!(g.shape(p), &[729, 128]);
}

#[test]
fn maxpool_constant_input_routes_gradient_to_window_start() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::<f64>::full([6, 2], 1.5));
    let y = g.maxpool1d(x, 3).unwrap();
    assert_eq!(g.value(y).data(), &[1.5; 4]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    let grad = g.grad(x).unwrap();
    // Rows 0 and 3 start each window.
    assert_eq!(grad, &[1., 1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 0.]);
}

#[test]
fn maxpool_gradient_is_one_hot_per_window() {
    let x = rand_tensor(&[3, 12, 4], &mut rng(4));
    let mut g = Graph::new();
    let xv = g.leaf(x);
    let y = g.maxpool1d(xv, 3).unwrap();
    let l = project(&mut g, y, 5);
    g.backward(l).unwrap();
    let grad = g.grad(xv).unwrap();
    for n in 0..3 {
        for w in 0..4 {
            for c in 0..4 {
                let nz = (0..3)
                    .filter(|j| grad[(n * 12 + w * 3 + j) * 4 + c] != 0.0)
                    .count();
                assert!(nz <= 1);
            }
        }
    }
    assert!(g.maxpool1d(xv, 5).is_err());
}

#[test]
fn batchnorm_train_standardises() {
    let x = rand_tensor(&[4, 5, 3], &mut rng(6));
    let mut stats = BnStats::new(3);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let gamma = g.constant(Tensor::full([3], 1.0));
    let beta = g.constant(Tensor::zeros([3]));
    let y = g.batchnorm(xv, gamma, beta, &mut stats, BnMode::Train).unwrap();
    let data = g.value(y).data();
    for c in 0..3 {
        let col: Vec<f64> = data.iter().skip(c).step_by(3).copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-5);
        // epsilon 1e-5 in the denominator shrinks the variance slightly.
        assert!((var - 1.0).abs() < 1e-3);
    }
    assert!(stats.initialized);
}

#[test]
fn batchnorm_affine_identity() {
    let x = rand_tensor(&[2, 50, 2], &mut rng(7));
    let mut stats = BnStats::new(2);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let ones = g.constant(Tensor::full([2], 1.0));
    let zeros = g.constant(Tensor::zeros([2]));
    let std = g.batchnorm(xv, ones, zeros, &mut stats, BnMode::Train).unwrap();
    let gamma = g.constant(Tensor::full([2], 2.0));
    let beta = g.constant(Tensor::full([2], 3.0));
    let y = g.batchnorm(std, gamma, beta, &mut stats, BnMode::Train).unwrap();
    let data = g.value(y).data();
    for c in 0..2 {
        let col: Vec<f64> = data.iter().skip(c).step_by(2).copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        assert!((mean - 3.0).abs() < 1e-6);
        assert!((sd - 2.0).abs() < 1e-3);
    }
}

#[test]
fn batchnorm_eval_uninitialised_falls_back_to_unit_stats() {
    let x = rand_tensor(&[5, 2], &mut rng(8));
    let mut stats = BnStats::new(2);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gamma = g.constant(Tensor::full([2], 1.0));
    let beta = g.constant(Tensor::zeros([2]));
    let y = g.batchnorm(xv, gamma, beta, &mut stats, BnMode::Eval).unwrap();
    for (a, b) in g.value(y).data().iter().zip(x.data()) {
        assert!((a - b / (1.0 + 1e-5f64).sqrt()).abs() < 1e-12);
    }
    assert!(!stats.initialized);
}

#[test]
fn batchnorm_train_needs_two_rows() {
    let mut stats = BnStats::new(2);
    let mut g = Graph::new();
    let xv = g.constant(Tensor::<f64>::zeros([1, 2]));
    let gamma = g.constant(Tensor::full([2], 1.0));
    let beta = g.constant(Tensor::zeros([2]));
    assert!(g.batchnorm(xv, gamma, beta, &mut stats, BnMode::Train).is_err());
}

#[test]
fn linear_matches_dot_products() {
    let mut r = rng(9);
    let x = rand_tensor(&[5], &mut r);
    let w = rand_tensor(&[5, 3], &mut r);
    let b = rand_tensor(&[3], &mut r);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.linear(xv, wv, bv).unwrap();
    for j in 0..3 {
        let want: f64 = b.data()[j] + (0..5).map(|i| x.data()[i] * w.data()[i * 3 + j]).sum::<f64>();
        assert!((g.value(y).data()[j] - want).abs() < 1e-12);
    }
    let mut ident = vec![0.0; 25];
    (0..5).for_each(|i| ident[i * 6] = 1.0);
    let iv = g.constant(Tensor::new([5, 5], ident).unwrap());
    let zb = g.constant(Tensor::zeros([5]));
    let same = g.linear(xv, iv, zb).unwrap();
    assert_eq!(g.value(same).data(), x.data());
    assert!(g.linear(xv, bv, bv).is_err());

    let big = g.constant(Tensor::<f64>::zeros([1024]));
    let fw = g.constant(Tensor::zeros([1024, 128]));
    let fb = g.constant(Tensor::zeros([128]));
    let e = g.linear(big, fw, fb).unwrap();
    assert_eq!(g.shape(e), &[128]);
}

#[test]
fn global_avg_pool_cases() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::full([7, 3], 2.5));
    let p = g.global_avg_pool(c).unwrap();
    assert_eq!(g.value(p).data(), &[2.5; 3]);
    let x = rand_tensor(&[4, 2], &mut rng(10));
    let xv = g.constant(x.clone());
    let p = g.global_avg_pool(xv).unwrap();
    for ch in 0..2 {
        let mean = (0..4).map(|t| x.data()[t * 2 + ch]).sum::<f64>() / 4.0;
        assert!((g.value(p).data()[ch] - mean).abs() < 1e-15);
    }
    let block = g.constant(Tensor::zeros([27, 256]));
    let p = g.global_avg_pool(block).unwrap();
    assert_eq!(g.shape(p), &[256]);
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar GRU recurrence, one unit at a time.
fn gru_oracle(x: &Tensor<f64>, k: &Tensor<f64>, u: &Tensor<f64>, b: &Tensor<f64>, mask: Option<&[f64]>) -> Vec<f64> {
    let (t_len, c) = (x.shape()[0], x.shape()[1]);
    let h = b.numel() / 3;
    let kk = |i: usize, j: usize| k.data()[i * 3 * h + j];
    let uu = |i: usize, j: usize| u.data()[i * 3 * h + j];
    let mut state = vec![0.0; h];
    for t in 0..t_len {
        let xt = &x.data()[t * c..(t + 1) * c];
        let hd: Vec<f64> = (0..h).map(|j| state[j] * mask.map_or(1.0, |m| m[j])).collect();
        let mut z = vec![0.0; h];
        let mut r = vec![0.0; h];
        for j in 0..h {
            let mut az = b.data()[j];
            let mut ar = b.data()[h + j];
            for i in 0..c {
                az += xt[i] * kk(i, j);
                ar += xt[i] * kk(i, h + j);
            }
            for i in 0..h {
                az += hd[i] * uu(i, j);
                ar += hd[i] * uu(i, h + j);
            }
            z[j] = sig(az);
            r[j] = sig(ar);
        }
        let mut next = vec![0.0; h];
        for j in 0..h {
            let mut ah = b.data()[2 * h + j];
            for i in 0..c {
                ah += xt[i] * kk(i, 2 * h + j);
            }
            for i in 0..h {
                ah += r[i] * hd[i] * uu(i, 2 * h + j);
            }
            next[j] = z[j] * state[j] + (1.0 - z[j]) * ah.tanh();
        }
        state = next;
    }
    state
}

#[test]
fn gru_matches_unrolled_recurrence() {
    let mut r = rng(11);
    let x = rand_tensor(&[3, 2], &mut r);
    let k = rand_tensor(&[2, 6], &mut r);
    let u = rand_tensor(&[2, 6], &mut r);
    let b = rand_tensor(&[6], &mut r);
    for mask in [None, Some(vec![1.0 / 0.7, 0.0])] {
        let mut g = Graph::new();
        let vars = [x.clone(), k.clone(), u.clone(), b.clone()].map(|t| g.constant(t));
        let y = g.gru(vars[0], vars[1], vars[2], vars[3], mask.clone()).unwrap();
        let want = gru_oracle(&x, &k, &u, &b, mask.as_deref());
        for (a, w) in g.value(y).data().iter().zip(&want) {
            assert!((a - w).abs() < 1e-12, "{a} vs {w}");
        }
    }
}

#[test]
fn gru_zero_input_stays_at_zero() {
    let mut r = rng(12);
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::zeros([5, 3]));
    let k = g.constant(rand_tensor(&[3, 12], &mut r));
    let u = g.constant(rand_tensor(&[4, 12], &mut r));
    let b = g.constant(Tensor::zeros([12]));
    let y = g.gru(x, k, u, b, None).unwrap();
    assert_eq!(g.value(y).data(), &[0.0; 4]);
}

#[test]
fn gru_paper_scale_output_shape() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([27, 256]));
    let k = g.constant(Tensor::zeros([256, 3072]));
    let u = g.constant(Tensor::zeros([1024, 3072]));
    let b = g.constant(Tensor::zeros([3072]));
    let y = g.gru(x, k, u, b, None).unwrap();
    assert_eq!(g.shape(y), &[1024]);
}

// ---------------------------------------------------------------------------
// Central-difference checks

#[test]
fn grad_conv1d() {
    let mut r = rng(20);
    for stride in [1, 3] {
        let ins = [rand_tensor(&[2, 6, 2], &mut r), rand_tensor(&[3, 2, 3], &mut r), rand_tensor(&[3], &mut r)];
        let err = max_grad_error(&ins, |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], stride).unwrap();
            project(g, y, 21)
        });
        assert!(err < TOL, "stride {stride}: {err}");
    }
}

#[test]
fn grad_maxpool() {
    let ins = [rand_tensor(&[2, 9, 3], &mut rng(22))];
    let err = max_grad_error(&ins, |g, v| {
        let y = g.maxpool1d(v[0], 3).unwrap();
        project(g, y, 23)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn grad_batchnorm_train_and_eval() {
    let mut r = rng(24);
    let ins = [rand_tensor(&[4, 5, 2], &mut r), rand_tensor(&[2], &mut r), rand_tensor(&[2], &mut r)];
    let err = max_grad_error(&ins, |g, v| {
        let mut stats = BnStats::new(2);
        let y = g.batchnorm(v[0], v[1], v[2], &mut stats, BnMode::Train).unwrap();
        project(g, y, 25)
    });
    assert!(err < TOL, "train {err}");
    let err = max_grad_error(&ins, |g, v| {
        let mut stats = BnStats::new(2);
        stats.mean = vec![0.3, -0.2];
        stats.var = vec![0.5, 2.0];
        let y = g.batchnorm(v[0], v[1], v[2], &mut stats, BnMode::Eval).unwrap();
        project(g, y, 25)
    });
    assert!(err < TOL, "eval {err}");
}

#[test]
fn grad_leaky_relu() {
    let ins = [rand_tensor(&[4, 6], &mut rng(26))];
    let err = max_grad_error(&ins, |g, v| {
        let y = g.leaky_relu(v[0], 0.3);
        project(g, y, 27)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn grad_gru() {
    let mut r = rng(28);
    let ins = [
        rand_tensor(&[2, 3, 2], &mut r),
        rand_tensor(&[2, 6], &mut r),
        rand_tensor(&[2, 6], &mut r),
        rand_tensor(&[6], &mut r),
    ];
    for mask in [None, Some(vec![1.0 / 0.7, 0.0, 1.0 / 0.7, 1.0 / 0.7])] {
        let err = max_grad_error(&ins, |g, v| {
            let y = g.gru(v[0], v[1], v[2], v[3], mask.clone()).unwrap();
            project(g, y, 29)
        });
        assert!(err < TOL, "{err}");
    }
}

#[test]
fn grad_linear_and_gap() {
    let mut r = rng(30);
    let ins = [rand_tensor(&[3, 5], &mut r), rand_tensor(&[5, 4], &mut r), rand_tensor(&[4], &mut r)];
    let err = max_grad_error(&ins, |g, v| {
        let y = g.linear(v[0], v[1], v[2]).unwrap();
        project(g, y, 31)
    });
    assert!(err < TOL, "linear {err}");
    let ins = [rand_tensor(&[2, 4, 3], &mut r)];
    let err = max_grad_error(&ins, |g, v| {
        let y = g.global_avg_pool(v[0]).unwrap();
        project(g, y, 32)
    });
    assert!(err < TOL, "gap {err}");
}

#[test]
fn grad_elementwise() {
    let mut r = rng(33);
    let ins = [rand_tensor(&[7], &mut r), rand_tensor(&[7], &mut r)];
    let err = max_grad_error(&ins, |g, v| {
        let a = g.mul(v[0], v[1]).unwrap();
        let b = g.sub(a, v[0]).unwrap();
        let c = g.add(b, v[1]).unwrap();
        let d = g.scale(c, -1.7);
        let e = g.reshape(d, [7, 1]).unwrap();
        project(g, e, 34)
    });
    assert!(err < TOL, "{err}");
}
