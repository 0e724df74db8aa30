//! Trial-pair features and back-end classifiers.
//!
//! For enrolment embedding `e` and test embedding `t` of dimension `D`:
//!
//! ```text
//! b-vector     [e + t | e - t | e * t]                      3D
//! concat&mul   [e | t | e * t]                              3D
//! rb-vector    [b(e, t) | r(e) | r(t)]                      3D + 2 K d_pca
//!              r(x) = [P b(x, c_1) | ... | P b(x, c_K)]
//! ```
//!
//! where `c_k` are k-means representatives of the training embeddings and
//! `P` is a PCA projection fitted on those representative b-vectors.

mod dnn;
mod embeddings;
mod kmeans;
mod pca;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dnn::{BackendDnn, BackendModel, DnnConfig};
pub use embeddings::EmbeddingSet;
pub use kmeans::{kmeans, KMeans};
pub use pca::Pca;

pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "cosine")]
    Cosine,
    #[serde(rename = "b-vector")]
    BVector,
    #[serde(rename = "rb-vector")]
    RbVector,
    #[serde(rename = "concat-mul")]
    ConcatMul,
}

impl BackendKind {
    pub const ALL: [BackendKind; 4] = [
        BackendKind::Cosine,
        BackendKind::BVector,
        BackendKind::RbVector,
        BackendKind::ConcatMul,
    ];

    pub fn needs_model(self) -> bool {
        self != BackendKind::Cosine
    }

    /// Input width of the classifier for embeddings of dimension `d`.
    pub fn feature_dim(self, d: usize, codebook: Option<&RepresentativeCodebook>) -> usize {
        match self {
            BackendKind::Cosine => 0,
            BackendKind::BVector | BackendKind::ConcatMul => 3 * d,
            BackendKind::RbVector => 3 * d + codebook.map_or(0, |c| 2 * c.k() * c.pca.dim()),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Cosine => "cosine",
            BackendKind::BVector => "b-vector",
            BackendKind::RbVector => "rb-vector",
            BackendKind::ConcatMul => "concat-mul",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackendKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::arg(format!("unknown back-end `{s}` (cosine, b-vector, rb-vector, concat-mul)")))
    }
}

fn same_dim(e: &[f64], t: &[f64]) -> Result<()> {
    if e.len() != t.len() {
        return Err(Error::dim(format!("embedding dimensions differ: {} vs {}", e.len(), t.len())));
    }
    Ok(())
}

pub fn cosine_score(e: &[f64], t: &[f64]) -> Result<f64> {
    same_dim(e, t)?;
    let dot: f64 = e.iter().zip(t).map(|(a, b)| a * b).sum();
    let ne = e.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nt = t.iter().map(|a| a * a).sum::<f64>().sqrt();
    if ne == 0.0 || nt == 0.0 {
        log::warn!("cosine_score: zero-norm embedding, cosine guarded by epsilon");
    }
    Ok(dot / (ne * nt + COSINE_EPS))
}

/// `[e + t | e - t | e * t]`.
pub fn b_vector(e: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    same_dim(e, t)?;
    let mut out = Vec::with_capacity(3 * e.len());
    out.extend(e.iter().zip(t).map(|(a, b)| a + b));
    out.extend(e.iter().zip(t).map(|(a, b)| a - b));
    out.extend(e.iter().zip(t).map(|(a, b)| a * b));
    Ok(out)
}

/// `[e | t | e * t]`.
pub fn concat_mul(e: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    same_dim(e, t)?;
    let mut out = Vec::with_capacity(3 * e.len());
    out.extend_from_slice(e);
    out.extend_from_slice(t);
    out.extend(e.iter().zip(t).map(|(a, b)| a * b));
    Ok(out)
}

/// k-means representatives of the training embeddings and a PCA fitted on
/// the b-vectors between every training embedding and every representative.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentativeCodebook {
    pub vectors: Vec<Vec<f64>>,
    pub pca: Pca,
}

impl RepresentativeCodebook {
    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    /// `[P b(x, c_1) | ... | P b(x, c_K)]`.
    pub fn r_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.k() * self.pca.dim());
        for c in &self.vectors {
            out.extend(self.pca.project(&b_vector(x, c)?)?);
        }
        Ok(out)
    }
}

pub fn fit_codebook(train: &[Vec<f64>], k: usize, d_pca: usize, seed: u64) -> Result<RepresentativeCodebook> {
    let km = kmeans(train, k, 100, seed)?;
    let mut bs = Vec::with_capacity(train.len() * k);
    for x in train {
        for c in &km.centroids {
            bs.push(b_vector(x, c)?);
        }
    }
    let pca = Pca::fit(&bs, d_pca)?;
    Ok(RepresentativeCodebook {
        vectors: km.centroids,
        pca,
    })
}

/// `[b(e, t) | r(e) | r(t)]`.
pub fn rb_vector(e: &[f64], t: &[f64], codebook: Option<&RepresentativeCodebook>) -> Result<Vec<f64>> {
    let cb = codebook.ok_or_else(|| Error::arg("rb-vector needs a fitted representative codebook"))?;
    let mut out = b_vector(e, t)?;
    out.extend(cb.r_vector(e)?);
    out.extend(cb.r_vector(t)?);
    Ok(out)
}

/// Classifier input for a trial pair.
pub fn pair_feature(kind: BackendKind, e: &[f64], t: &[f64], codebook: Option<&RepresentativeCodebook>) -> Result<Vec<f64>> {
    match kind {
        BackendKind::Cosine => Err(Error::arg("the cosine back-end has no feature vector")),
        BackendKind::BVector => b_vector(e, t),
        BackendKind::ConcatMul => concat_mul(e, t),
        BackendKind::RbVector => rb_vector(e, t, codebook),
    }
}
