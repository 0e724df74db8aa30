//! Training objective: categorical cross-entropy plus a center loss that
//! pulls embeddings toward their class center and a speaker basis loss that
//! pushes the output layer's per-speaker weight vectors apart.
//!
//! ```text
//! L = L_CE + lambda * L_C + L_BS
//! L_C  = 1/2 * sum_i |x_i - c_{y_i}|^2          (over the mini-batch)
//! L_BS = sum_i sum_{j != i} cos(w_i, w_j)       (over output-layer columns)
//! ```

use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Lower bound on the norm product in the basis cosine.
pub const BASIS_EPS: f64 = 1e-8;

/// Which terms enter the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossProfile {
    /// Cross-entropy only.
    #[serde(rename = "soft")]
    Soft,
    /// Cross-entropy, center loss and speaker basis loss.
    #[serde(rename = "soft+center+bs")]
    SoftCenterBasis,
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::arg(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

fn batch_dims(g: &Graph<impl Real>, v: Var, what: &str) -> Result<(usize, usize)> {
    match *g.shape(v) {
        [n, d] => Ok((n, d)),
        [d] => Ok((1, d)),
        ref s => Err(Error::dim(format!("{what}: expected [N, D], got {s:?}"))),
    }
}

/// Mean negative log-softmax probability of the target class.
pub fn cross_entropy<R: Real>(g: &mut Graph<R>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, m) = batch_dims(g, logits, "cross_entropy")?;
    check_labels(labels, n, m)?;
    let z = g.value(logits).data();
    let inv_n = R::one() / R::from_usize(n).unwrap();
    let mut loss = R::zero();
    let mut grad = vec![R::zero(); n * m];
    for (i, &y) in labels.iter().enumerate() {
        let row = &z[i * m..(i + 1) * m];
        let max = row.iter().copied().fold(R::neg_infinity(), R::max);
        let sum: R = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for j in 0..m {
            let p = (row[j] - log_z).exp();
            grad[i * m + j] = (p - if j == y { R::one() } else { R::zero() }) * inv_n;
        }
    }
    Ok(g.fused_loss(logits, loss * inv_n, grad))
}

/// Per-class centers for the center loss, updated by a running rule
/// rather than by backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterBank<R> {
    centers: Tensor<R>,
    pub alpha: R,
}

impl<R: Real> CenterBank<R> {
    /// Zero-initialised centers.
    pub fn new(num_classes: usize, dim: usize, alpha: f64) -> Self {
        Self {
            centers: Tensor::zeros([num_classes, dim]),
            alpha: R::lit(alpha),
        }
    }

    pub fn from_tensor(centers: Tensor<R>, alpha: f64) -> Result<Self> {
        if centers.rank() != 2 {
            return Err(Error::dim(format!("centers must be [M, D], got {:?}", centers.shape())));
        }
        Ok(Self {
            centers,
            alpha: R::lit(alpha),
        })
    }

    pub fn centers(&self) -> &Tensor<R> {
        &self.centers
    }

    pub fn num_classes(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.shape()[1]
    }

    /// For each class `j` present in the batch:
    /// `c_j <- c_j - alpha * sum_{i: y_i = j} (c_j - x_i) / (1 + n_j)`.
    pub fn update(&mut self, embeddings: &Tensor<R>, labels: &[usize]) -> Result<()> {
        let d = self.dim();
        let n = labels.len();
        if embeddings.numel() != n * d {
            return Err(Error::dim(format!(
                "center update: embeddings {:?} do not match {n} labels of dim {d}",
                embeddings.shape()
            )));
        }
        check_labels(labels, n, self.num_classes())?;
        let mut delta = vec![R::zero(); self.centers.numel()];
        let mut count = vec![0usize; self.num_classes()];
        let c = self.centers.data();
        for (i, &y) in labels.iter().enumerate() {
            count[y] += 1;
            for k in 0..d {
                delta[y * d + k] += c[y * d + k] - embeddings.data()[i * d + k];
            }
        }
        let alpha = self.alpha;
        let data = self.centers.data_mut();
        for (j, &cnt) in count.iter().enumerate() {
            if cnt == 0 {
                continue;
            }
            let denom = R::from_usize(1 + cnt).unwrap();
            for k in 0..d {
                data[j * d + k] -= alpha * delta[j * d + k] / denom;
            }
        }
        Ok(())
    }
}

/// `1/2 * sum_i |x_i - c_{y_i}|^2`; the gradient reaches the embeddings
/// only.
pub fn center_loss<R: Real>(
    g: &mut Graph<R>,
    embeddings: Var,
    labels: &[usize],
    bank: &CenterBank<R>,
) -> Result<Var> {
    let (n, d) = batch_dims(g, embeddings, "center_loss")?;
    if d != bank.dim() {
        return Err(Error::dim(format!(
            "center_loss: embedding dim {d} but centers have dim {}",
            bank.dim()
        )));
    }
    check_labels(labels, n, bank.num_classes())?;
    let x = g.value(embeddings).data();
    let c = bank.centers.data();
    let mut grad = vec![R::zero(); n * d];
    let mut loss = R::zero();
    for (i, &y) in labels.iter().enumerate() {
        for k in 0..d {
            let diff = x[i * d + k] - c[y * d + k];
            grad[i * d + k] = diff;
            loss += diff * diff;
        }
    }
    Ok(g.fused_loss(embeddings, loss * R::lit(0.5), grad))
}

/// Sum of pairwise cosines between the columns of the output-layer weight
/// `[D, M]`, every ordered pair `(i, j)` with `i != j` counted. With
/// `normalize` the sum is divided by `M (M - 1)`.
pub fn basis_loss<R: Real>(g: &mut Graph<R>, weight: Var, normalize: bool) -> Result<Var> {
    let (d, m) = match *g.shape(weight) {
        [d, m] => (d, m),
        ref s => return Err(Error::dim(format!("basis_loss: weight must be [D, M], got {s:?}"))),
    };
    if m < 2 {
        return Err(Error::arg("basis_loss: need at least two speakers"));
    }
    let w = g.value(weight).data();
    let col = |i: usize| (0..d).map(move |k| w[k * m + i]);
    let norms: Vec<R> = (0..m).map(|i| col(i).map(|v| v * v).sum::<R>().sqrt()).collect();
    if norms.iter().any(|&n| n == R::zero()) {
        log::warn!("basis_loss: zero-norm basis vector, cosine guarded by epsilon");
    }
    let eps = R::lit(BASIS_EPS);
    let mut gram = vec![R::zero(); m * m];
    for k in 0..d {
        let row = &w[k * m..(k + 1) * m];
        for i in 0..m {
            let wi = row[i];
            for j in i + 1..m {
                gram[i * m + j] += wi * row[j];
            }
        }
    }
    let scale = if normalize {
        R::one() / R::from_usize(m * (m - 1)).unwrap()
    } else {
        R::one()
    };
    let two = R::lit(2.0);
    let mut loss = R::zero();
    let mut grad = vec![R::zero(); d * m];
    for i in 0..m {
        for j in i + 1..m {
            let dot = gram[i * m + j];
            let raw = norms[i] * norms[j];
            let p = if raw > eps { raw } else { eps };
            loss += two * dot / p;
            // d cos_ij / d w_i = w_j / p - dot * n_j * (w_i / n_i) / p^2, and symmetrically.
            // A clamped denominator is constant.
            let coef = if raw > eps { dot / (p * p) } else { R::zero() };
            let ci = if norms[i] > R::zero() { coef * norms[j] / norms[i] } else { R::zero() };
            let cj = if norms[j] > R::zero() { coef * norms[i] / norms[j] } else { R::zero() };
            for k in 0..d {
                let (wi, wj) = (w[k * m + i], w[k * m + j]);
                grad[k * m + i] += two * scale * (wj / p - ci * wi);
                grad[k * m + j] += two * scale * (wi / p - cj * wj);
            }
        }
    }
    Ok(g.fused_loss(weight, loss * scale, grad))
}

/// Graph nodes of the individual loss terms and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub cross_entropy: Var,
    pub center: Var,
    pub basis: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub profile: LossProfile,
    pub normalize_basis: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            profile: LossProfile::SoftCenterBasis,
            normalize_basis: false,
        }
    }
}

/// `L_CE + lambda * L_C + L_BS` as one scalar node. Under
/// [`LossProfile::Soft`] the total is the cross-entropy alone; the other
/// terms are still evaluated for logging.
pub fn combined_loss<R: Real>(
    g: &mut Graph<R>,
    logits: Var,
    embeddings: Var,
    labels: &[usize],
    bank: &CenterBank<R>,
    output_weight: Var,
    cfg: &ObjectiveConfig,
) -> Result<LossTerms> {
    if cfg.lambda < 0.0 {
        return Err(Error::arg("lambda must be non-negative"));
    }
    let ce = cross_entropy(g, logits, labels)?;
    let center = center_loss(g, embeddings, labels, bank)?;
    let basis = basis_loss(g, output_weight, cfg.normalize_basis)?;
    let total = match cfg.profile {
        LossProfile::Soft => ce,
        LossProfile::SoftCenterBasis => {
            let weighted = g.scale(center, R::lit(cfg.lambda));
            let partial = g.add(ce, weighted)?;
            g.add(partial, basis)?
        }
    };
    Ok(LossTerms {
        cross_entropy: ce,
        center,
        basis,
        total,
    })
}
