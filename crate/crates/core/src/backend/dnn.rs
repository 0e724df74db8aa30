use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pair_feature, BackendKind, Pca, RepresentativeCodebook};
use crate::tensor::{Checkpoint, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub leaky_slope: f64,
    pub init_seed: u64,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self {
            hidden: 1024,
            layers: 4,
            leaky_slope: 0.3,
            init_seed: 0,
        }
    }
}

/// Fully connected leaky-ReLU stack with a two-way softmax output; class 1
/// is "same speaker".
#[derive(Clone, Debug)]
pub struct BackendDnn<R> {
    config: DnnConfig,
    input_dim: usize,
    params: ParamStore<R>,
    layers: Vec<(ParamId, ParamId)>,
}

impl<R: Real> BackendDnn<R> {
    pub fn new(input_dim: usize, config: &DnnConfig) -> Result<Self> {
        if input_dim == 0 || config.hidden == 0 {
            return Err(Error::Config("back-end input and hidden widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut d_in = input_dim;
        for i in 0..=config.layers {
            let (name, d_out) = if i < config.layers {
                (format!("dense{}", i + 1), config.hidden)
            } else {
                ("output".to_string(), 2)
            };
            let w = crate::model::he_uniform(&[d_in, d_out], d_in, &mut rng);
            layers.push((
                params.add(format!("{name}/weight"), w, true)?,
                params.add(format!("{name}/bias"), Tensor::zeros([d_out]), false)?,
            ));
            d_in = d_out;
        }
        Ok(Self {
            config: config.clone(),
            input_dim,
            params,
            layers,
        })
    }

    pub fn config(&self) -> &DnnConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    /// Logits `[N, 2]` for features `[N, F]`.
    pub fn forward(&self, g: &mut Graph<R>, x: Var) -> Result<Var> {
        match *g.shape(x) {
            [_, f] if f == self.input_dim => {}
            ref s => {
                return Err(Error::dim(format!(
                    "back-end expects features of width {}, got {s:?}",
                    self.input_dim
                )))
            }
        }
        let slope = R::lit(self.config.leaky_slope);
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(&self.params, w);
            let bv = g.param(&self.params, b);
            h = g.linear(h, wv, bv)?;
            if i + 1 < self.layers.len() {
                h = g.leaky_relu(h, slope);
            }
        }
        Ok(h)
    }

    /// Same-speaker probability of every feature row.
    pub fn probabilities(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let data: Vec<R> = features.iter().flatten().map(|&v| R::lit(v)).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([features.len(), data.len() / features.len()], data)?);
        let logits = self.forward(&mut g, x)?;
        Ok(g
            .value(logits)
            .data()
            .chunks(2)
            .map(|z| {
                let (a, b) = (z[0].to_f64_lossless(), z[1].to_f64_lossless());
                1.0 / (1.0 + (a - b).exp())
            })
            .collect())
    }
}

/// A trained back-end: feature construction plus classifier.
#[derive(Clone, Debug)]
pub struct BackendModel<R> {
    pub kind: BackendKind,
    pub embedding_dim: usize,
    pub codebook: Option<RepresentativeCodebook>,
    pub dnn: BackendDnn<R>,
}

impl<R: Real> BackendModel<R> {
    pub fn new(
        kind: BackendKind,
        embedding_dim: usize,
        codebook: Option<RepresentativeCodebook>,
        config: &DnnConfig,
    ) -> Result<Self> {
        if !kind.needs_model() {
            return Err(Error::arg("the cosine back-end has no trainable model"));
        }
        if kind == BackendKind::RbVector && codebook.is_none() {
            return Err(Error::arg("rb-vector needs a fitted representative codebook"));
        }
        let dnn = BackendDnn::new(kind.feature_dim(embedding_dim, codebook.as_ref()), config)?;
        Ok(Self {
            kind,
            embedding_dim,
            codebook,
            dnn,
        })
    }

    pub fn feature(&self, e: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        pair_feature(self.kind, e, t, self.codebook.as_ref())
    }

    pub fn score(&self, e: &[f64], t: &[f64]) -> Result<f64> {
        Ok(self.dnn.probabilities(&[self.feature(e, t)?])?[0])
    }

    pub fn score_batch(&self, pairs: &[(&[f64], &[f64])]) -> Result<Vec<f64>> {
        let feats = pairs.iter().map(|(e, t)| self.feature(e, t)).collect::<Result<Vec<_>>>()?;
        self.dnn.probabilities(&feats)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(R::DTYPE);
        ck.meta.insert("backend/kind".into(), self.kind.to_string());
        ck.meta.insert("backend/embedding_dim".into(), self.embedding_dim.to_string());
        ck.meta.insert(
            "backend/config".into(),
            toml::to_string(self.dnn.config()).expect("config serialises"),
        );
        ck.put_params(&self.dnn.params);
        if let Some(cb) = &self.codebook {
            let (k, d) = (cb.k(), self.embedding_dim);
            let flat: Vec<f64> = cb.vectors.iter().flatten().copied().collect();
            ck.insert("codebook/vectors", &Tensor::new([k, d], flat).unwrap());
            ck.insert("codebook/pca_mean", &Tensor::new([cb.pca.input_dim()], cb.pca.mean.clone()).unwrap());
            ck.insert(
                "codebook/pca_components",
                &Tensor::new([cb.pca.input_dim(), cb.pca.dim()], cb.pca.components.clone()).unwrap(),
            );
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("back-end checkpoint has no {k}")))
        };
        let kind: BackendKind = meta("backend/kind")?.parse()?;
        let embedding_dim: usize = meta("backend/embedding_dim")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad backend/embedding_dim".into()))?;
        let config: DnnConfig =
            toml::from_str(meta("backend/config")?).map_err(|e| Error::Checkpoint(e.message().to_string()))?;
        let codebook = if ck.tensors.contains_key("codebook/vectors") {
            let v = ck.get::<f64>("codebook/vectors")?;
            let comps = ck.get::<f64>("codebook/pca_components")?;
            let dim = comps.shape()[1];
            Some(RepresentativeCodebook {
                vectors: v.data().chunks(v.shape()[1]).map(<[f64]>::to_vec).collect(),
                pca: Pca::from_parts(ck.get::<f64>("codebook/pca_mean")?.into_data(), comps.into_data(), dim)?,
            })
        } else {
            None
        };
        let mut model = Self::new(kind, embedding_dim, codebook, &config)?;
        ck.load_params(&mut model.dnn.params)?;
        Ok(model)
    }
}
