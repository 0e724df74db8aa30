#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawnet::model::{build_rawnet, RawNet, RawNetConfig};
use rawnet::objectives::{combined_loss, CenterBank, LossProfile, ObjectiveConfig};
use rawnet::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduce a node to a scalar through a fixed random projection so every
/// output element contributes to the checked gradient.
pub fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).to_vec();
    let w = rand_tensor(&shape, &mut rng(seed));
    let w = g.constant(w);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences (h = 1e-5) against reverse-mode gradients for every
/// element of every input. Returns the worst relative error.
pub fn max_grad_error<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let h = 1e-5;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(|d| d.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let eval = |ins: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i][j], fd));
        }
    }
    worst
}

pub fn shrunk_config(num_speakers: usize) -> RawNetConfig {
    RawNetConfig {
        scale_factor: 8,
        input_len: 2187,
        num_speakers,
        ..RawNetConfig::default()
    }
}

pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

/// Finite-difference check of the full combined objective through a shrunk
/// network in train mode (batch statistics, recurrent dropout). Every
/// element of the first convolution's weight is checked, plus up to
/// `per_param` random elements of every other parameter.
///
/// The step is 1e-6 rather than 1e-5: with thousands of leaky-ReLU and
/// max-pool switch points a step of 1e-5 regularly straddles one, and the
/// difference quotient then measures the kink, not the derivative.
/// Gradients that vanish exactly (convolution biases feeding a train-mode
/// batch norm) are compared absolutely, within 1e-8.
pub fn end_to_end_grad_check(seed: u64, per_param: usize) -> GradReport {
    let m = 3;
    let mut model = build_rawnet::<f64>(&RawNetConfig {
        init_seed: seed,
        ..shrunk_config(m)
    })
    .unwrap();
    let mut r = rng(seed + 1);
    let n = 3;
    let x = rand_tensor(&[n, 2187], &mut r);
    let labels = [0, 1, 2];
    let bank = CenterBank::from_tensor(rand_tensor(&[m, 128], &mut r), 0.5).unwrap();
    let width = model.recurrent_width();
    let mask: Vec<f64> = (0..n * width)
        .map(|_| if r.random::<f64>() < 0.3 { 0.0 } else { 1.0 / 0.7 })
        .collect();
    let cfg = ObjectiveConfig {
        lambda: 0.1,
        profile: LossProfile::SoftCenterBasis,
        normalize_basis: false,
    };

    let loss = |model: &mut RawNet<f64>, backward: bool| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = model.forward_train(&mut g, xv, Some(mask.clone())).unwrap();
        let terms = combined_loss(&mut g, out.logits, out.embedding.unwrap(), &labels, &bank, out.output_weight, &cfg).unwrap();
        if backward {
            g.backward(terms.total).unwrap();
            model.params_mut().zero_grad();
            model.params_mut().accumulate_grads(&g);
        }
        g.value(terms.total).item()
    };
    loss(&mut model, true);

    let h = 1e-6;
    let ids: Vec<_> = model.params().iter().map(|(id, p)| (id, p.name.clone(), p.value.numel())).collect();
    let mut report = GradReport {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    for (id, name, numel) in ids {
        let picks: Vec<usize> = if name == "front/conv/weight" || numel <= per_param {
            (0..numel).collect()
        } else {
            (0..per_param).map(|_| r.random_range(0..numel)).collect()
        };
        let analytic = model.params().get(id).grad.clone().map(|t| t.into_data()).unwrap_or_else(|| vec![0.0; numel]);
        for j in picks {
            let orig = model.params().get(id).value.data()[j];
            model.params_mut().get_mut(id).value.data_mut()[j] = orig + h;
            let lp = loss(&mut model, false);
            model.params_mut().get_mut(id).value.data_mut()[j] = orig - h;
            let lm = loss(&mut model, false);
            model.params_mut().get_mut(id).value.data_mut()[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let e = if (analytic[j] - fd).abs() < 1e-8 { 0.0 } else { rel_err(analytic[j], fd) };
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.worst_at = format!("{name}[{j}]: autodiff {} vs fd {fd}", analytic[j]);
            }
        }
    }
    report
}
