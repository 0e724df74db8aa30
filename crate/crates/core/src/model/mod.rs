//! The raw-waveform speaker embedding network and its pre-training variant.
//!
//! ```text
//! [N, L] -> strided conv + BN + leaky ReLU          front
//!        -> residual blocks with max pooling        resblock1..resblockB
//!        -> GRU (last state) -> FC                  gru, embedding
//!        -> FC                                      output (speaker logits)
//! ```
//!
//! The pre-training variant replaces the GRU and embedding layer by global
//! average pooling. Both share parameter names for the front and the
//! residual blocks, which is what [`transfer_pretrained`] relies on.

mod config;
mod init;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::WaveformClip;
use crate::tensor::{BnStats, Checkpoint, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

pub use config::{LayerShape, RawNetConfig};
pub(crate) use config::check_eval_len;
pub(crate) use init::he_uniform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    RawNet,
    PretrainCnn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::RawNet => "rawnet",
            ModelKind::PretrainCnn => "pretrain-cnn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rawnet" => Ok(ModelKind::RawNet),
            "pretrain-cnn" => Ok(ModelKind::PretrainCnn),
            other => Err(Error::Checkpoint(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
}

#[derive(Clone, Debug)]
struct Bn {
    gamma: ParamId,
    beta: ParamId,
    /// Index into the model's running statistics.
    stats: usize,
}

#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv,
    bn1: Bn,
    conv2: Conv,
    bn2: Bn,
    /// 1x1 convolution on the skip path when the channel count changes.
    proj: Option<Conv>,
}

#[derive(Clone, Debug)]
enum Head {
    Recurrent {
        kernel: ParamId,
        recurrent: ParamId,
        bias: ParamId,
        embedding: Dense,
        output: Dense,
    },
    Pooled {
        output: Dense,
    },
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Output of the last residual block, `[N, T, C]`.
    pub trunk: Var,
    /// Speaker embedding `[N, D]`; absent in the pre-training variant.
    pub embedding: Option<Var>,
    pub logits: Var,
    /// The output layer's weight `[D, M]`, whose columns are the speaker
    /// basis vectors.
    pub output_weight: Var,
    pub trace: Vec<LayerShape>,
}

/// Utterance-level speaker embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f64>,
    pub utterance_id: String,
    pub speaker_id: Option<usize>,
}

enum Stats<'a, R> {
    Train(&'a mut [BnStats<R>]),
    Eval(&'a [BnStats<R>]),
}

#[derive(Clone, Debug)]
pub struct RawNet<R> {
    config: RawNetConfig,
    kind: ModelKind,
    params: ParamStore<R>,
    bn_stats: Vec<BnStats<R>>,
    bn_names: Vec<String>,
    front: (Conv, Bn),
    blocks: Vec<ResBlock>,
    head: Head,
}

struct Builder<'a, R> {
    params: ParamStore<R>,
    bn_stats: Vec<BnStats<R>>,
    bn_names: Vec<String>,
    rng: &'a mut ChaCha8Rng,
    momentum: f64,
}

impl<R: Real> Builder<'_, R> {
    fn conv(&mut self, name: &str, k: usize, c_in: usize, c_out: usize, stride: usize) -> Result<Conv> {
        let w = init::he_uniform(&[k, c_in, c_out], k * c_in, self.rng);
        Ok(Conv {
            weight: self.params.add(format!("{name}/weight"), w, true)?,
            bias: self.params.add(format!("{name}/bias"), Tensor::zeros([c_out]), false)?,
            stride,
        })
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<Bn> {
        let gamma = self.params.add(format!("{name}/gamma"), Tensor::full([c], R::one()), false)?;
        let beta = self.params.add(format!("{name}/beta"), Tensor::zeros([c]), false)?;
        let mut stats = BnStats::new(c);
        stats.momentum = R::lit(self.momentum);
        self.bn_stats.push(stats);
        self.bn_names.push(name.to_string());
        Ok(Bn {
            gamma,
            beta,
            stats: self.bn_stats.len() - 1,
        })
    }

    fn dense(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<Dense> {
        let w = init::he_uniform(&[d_in, d_out], d_in, self.rng);
        Ok(Dense {
            weight: self.params.add(format!("{name}/weight"), w, true)?,
            bias: self.params.add(format!("{name}/bias"), Tensor::zeros([d_out]), false)?,
        })
    }
}

/// Build the full network: front, residual blocks, GRU, embedding and
/// output layers.
pub fn build_rawnet<R: Real>(config: &RawNetConfig) -> Result<RawNet<R>> {
    RawNet::build(config, ModelKind::RawNet)
}

/// Build the pre-training network: the same front and residual blocks,
/// then global average pooling and the output layer.
pub fn build_pretrain_cnn<R: Real>(config: &RawNetConfig) -> Result<RawNet<R>> {
    RawNet::build(config, ModelKind::PretrainCnn)
}

/// Names the front and residual blocks own, shared by both variants.
fn is_trunk_name(name: &str) -> bool {
    name.starts_with("front/") || name.starts_with("resblock")
}

impl<R: Real> RawNet<R> {
    pub fn build(config: &RawNetConfig, kind: ModelKind) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut b = Builder {
            params: ParamStore::new(),
            bn_stats: Vec::new(),
            bn_names: Vec::new(),
            rng: &mut rng,
            momentum: config.bn_momentum,
        };
        let c0 = config.front_width();
        let front = (
            b.conv("front/conv", config.front_kernel, 1, c0, config.front_stride)?,
            b.bn("front/bn", c0)?,
        );
        let k = config.block_kernel;
        let mut blocks = Vec::new();
        let mut c_in = c0;
        for (i, c) in config.block_widths().into_iter().enumerate() {
            let name = format!("resblock{}", i + 1);
            blocks.push(ResBlock {
                conv1: b.conv(&format!("{name}/conv1"), k, c_in, c, 1)?,
                bn1: b.bn(&format!("{name}/bn1"), c)?,
                conv2: b.conv(&format!("{name}/conv2"), k, c, c, 1)?,
                bn2: b.bn(&format!("{name}/bn2"), c)?,
                proj: if c != c_in {
                    Some(b.conv(&format!("{name}/proj"), 1, c_in, c, 1)?)
                } else {
                    None
                },
            });
            c_in = c;
        }
        let m = config.num_speakers;
        let head = match kind {
            ModelKind::RawNet => {
                let h = config.gru_width();
                let kernel = init::glorot_uniform(&[c_in, 3 * h], c_in, 3 * h, b.rng);
                let recurrent = init::orthogonal_blocks(h, 3, b.rng);
                Head::Recurrent {
                    kernel: b.params.add("gru/kernel", kernel, true)?,
                    recurrent: b.params.add("gru/recurrent_kernel", recurrent, true)?,
                    bias: b.params.add("gru/bias", Tensor::zeros([3 * h]), false)?,
                    embedding: b.dense("embedding", h, config.embedding_dim)?,
                    output: b.dense("output", config.embedding_dim, m)?,
                }
            }
            ModelKind::PretrainCnn => Head::Pooled {
                output: b.dense("gap_output", c_in, m)?,
            },
        };
        Ok(Self {
            config: config.clone(),
            kind,
            params: b.params,
            bn_stats: b.bn_stats,
            bn_names: b.bn_names,
            front,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &RawNetConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    /// Running statistics of every batch-norm layer, keyed by layer name.
    pub fn bn_stats(&self) -> impl Iterator<Item = (&str, &BnStats<R>)> {
        self.bn_names.iter().map(String::as_str).zip(&self.bn_stats)
    }

    pub fn bn_stats_mut(&mut self, layer: &str) -> Option<&mut BnStats<R>> {
        let i = self.bn_names.iter().position(|n| n == layer)?;
        Some(&mut self.bn_stats[i])
    }

    /// Width of the GRU state, which is the size of a recurrent dropout
    /// mask per sample. Zero for the pre-training variant.
    pub fn recurrent_width(&self) -> usize {
        match self.head {
            Head::Recurrent { .. } => self.config.gru_width(),
            Head::Pooled { .. } => 0,
        }
    }

    /// Forward pass in train mode: batch statistics, running statistics
    /// updated, optional recurrent dropout mask of `N * H` values.
    pub fn forward_train(&mut self, g: &mut Graph<R>, waveforms: Var, mask: Option<Vec<R>>) -> Result<ForwardOutput> {
        let mut stats = std::mem::take(&mut self.bn_stats);
        let out = self.forward_impl(g, waveforms, Stats::Train(&mut stats), mask);
        self.bn_stats = stats;
        out
    }

    /// Forward pass in eval mode; a pure function of parameters and input.
    pub fn forward_eval(&self, g: &mut Graph<R>, waveforms: Var) -> Result<ForwardOutput> {
        self.forward_impl(g, waveforms, Stats::Eval(&self.bn_stats), None)
    }

    pub fn forward(&mut self, g: &mut Graph<R>, waveforms: Var, mode: Mode, mask: Option<Vec<R>>) -> Result<ForwardOutput> {
        match mode {
            Mode::Train => self.forward_train(g, waveforms, mask),
            Mode::Eval => self.forward_eval(g, waveforms),
        }
    }

    fn conv(&self, g: &mut Graph<R>, x: Var, c: &Conv) -> Result<Var> {
        let w = g.param(&self.params, c.weight);
        let b = g.param(&self.params, c.bias);
        g.conv1d(x, w, b, c.stride)
    }

    fn bn(&self, g: &mut Graph<R>, x: Var, bn: &Bn, stats: &mut Stats<'_, R>) -> Result<Var> {
        let gamma = g.param(&self.params, bn.gamma);
        let beta = g.param(&self.params, bn.beta);
        match stats {
            Stats::Train(s) => g.batchnorm_train(x, gamma, beta, &mut s[bn.stats]),
            Stats::Eval(s) => g.batchnorm_eval(x, gamma, beta, &s[bn.stats]),
        }
    }

    fn dense(&self, g: &mut Graph<R>, x: Var, d: &Dense) -> Result<(Var, Var)> {
        let w = g.param(&self.params, d.weight);
        let b = g.param(&self.params, d.bias);
        Ok((g.linear(x, w, b)?, w))
    }

    fn forward_impl(
        &self,
        g: &mut Graph<R>,
        waveforms: Var,
        mut stats: Stats<'_, R>,
        mask: Option<Vec<R>>,
    ) -> Result<ForwardOutput> {
        let (n, len) = match *g.shape(waveforms) {
            [n, l] => (n, l),
            ref s => return Err(Error::dim(format!("model input must be [N, L], got {s:?}"))),
        };
        check_eval_len(&self.config, len)?;
        let slope = R::lit(self.config.leaky_slope);
        let mut trace = vec![LayerShape::new("input", &[len])];
        let sample = |g: &Graph<R>, v: Var| g.shape(v)[1..].to_vec();

        let x = g.reshape(waveforms, [n, len, 1])?;
        let x = self.conv(g, x, &self.front.0)?;
        let x = self.bn(g, x, &self.front.1, &mut stats)?;
        let mut x = g.leaky_relu(x, slope);
        trace.push(LayerShape::new("front", &sample(g, x)));

        for (i, blk) in self.blocks.iter().enumerate() {
            let h = self.conv(g, x, &blk.conv1)?;
            let h = self.bn(g, h, &blk.bn1, &mut stats)?;
            let h = g.leaky_relu(h, slope);
            let h = self.conv(g, h, &blk.conv2)?;
            let h = self.bn(g, h, &blk.bn2, &mut stats)?;
            let skip = match &blk.proj {
                Some(p) => self.conv(g, x, p)?,
                None => x,
            };
            let y = g.add(h, skip)?;
            let y = g.leaky_relu(y, slope);
            x = g.maxpool1d(y, self.config.pool_size)?;
            trace.push(LayerShape::new(format!("resblock{}", i + 1), &sample(g, x)));
        }
        let trunk = x;

        let (embedding, logits, output_weight) = match &self.head {
            Head::Recurrent {
                kernel,
                recurrent,
                bias,
                embedding,
                output,
            } => {
                let k = g.param(&self.params, *kernel);
                let r = g.param(&self.params, *recurrent);
                let b = g.param(&self.params, *bias);
                let mask = match stats {
                    Stats::Train(_) => mask,
                    Stats::Eval(_) => None,
                };
                let h = g.gru(trunk, k, r, b, mask)?;
                trace.push(LayerShape::new("gru", &sample(g, h)));
                let (e, _) = self.dense(g, h, embedding)?;
                trace.push(LayerShape::new("embedding", &sample(g, e)));
                let (logits, w) = self.dense(g, e, output)?;
                (Some(e), logits, w)
            }
            Head::Pooled { output } => {
                let p = g.global_avg_pool(trunk)?;
                trace.push(LayerShape::new("gap", &sample(g, p)));
                let (logits, w) = self.dense(g, p, output)?;
                (None, logits, w)
            }
        };
        trace.push(LayerShape::new("output", &sample(g, logits)));
        Ok(ForwardOutput {
            trunk,
            embedding,
            logits,
            output_weight,
            trace,
        })
    }

    /// Embedding of a whole utterance in eval mode.
    ///
    /// The clip is truncated to the largest multiple of
    /// [`RawNetConfig::min_input_len`] so every pooling stage divides evenly.
    pub fn extract_embedding(&self, clip: &WaveformClip) -> Result<SpeakerEmbedding> {
        if self.kind != ModelKind::RawNet {
            return Err(Error::arg("embeddings come from the full network, not the pre-training variant"));
        }
        let m = self.config.min_input_len();
        if clip.len() < m {
            return Err(Error::len(format!(
                "utterance `{}` has {} samples, the minimum is {m}",
                clip.utterance_id,
                clip.len()
            )));
        }
        let len = clip.len() / m * m;
        let data: Vec<R> = clip.samples[..len].iter().map(|&s| R::lit(s)).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([1, len], data)?);
        let out = self.forward_eval(&mut g, x)?;
        let e = g.value(out.embedding.expect("recurrent head has an embedding"));
        let vector: Vec<f64> = e.data().iter().map(|v| v.to_f64_lossless()).collect();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite embedding for `{}`", clip.utterance_id)));
        }
        Ok(SpeakerEmbedding {
            vector,
            utterance_id: clip.utterance_id.clone(),
            speaker_id: Some(clip.speaker_id),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(R::DTYPE);
        ck.meta.insert("model/kind".into(), self.kind.to_string());
        ck.meta.insert("model/config".into(), self.config.to_toml());
        ck.put_params(&self.params);
        for (name, s) in self.bn_stats() {
            ck.put_bn(name, s);
        }
        ck
    }

    /// Overwrite parameters and running statistics from `ck`; every shape
    /// must match this model's.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        if let Some(kind) = ck.meta.get("model/kind") {
            let kind: ModelKind = kind.parse()?;
            if kind != self.kind {
                return Err(Error::Checkpoint(format!("checkpoint holds a {kind} model, expected {}", self.kind)));
            }
        }
        ck.load_params(&mut self.params)?;
        for (i, name) in self.bn_names.iter().enumerate() {
            ck.load_bn(name, &mut self.bn_stats[i])?;
        }
        Ok(())
    }

    /// Rebuild a model from the configuration stored in `ck`.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: ModelKind = ck
            .meta
            .get("model/kind")
            .ok_or_else(|| Error::Checkpoint("checkpoint has no model/kind".into()))?
            .parse()?;
        let cfg = RawNetConfig::from_toml(
            ck.meta
                .get("model/config")
                .ok_or_else(|| Error::Checkpoint("checkpoint has no model/config".into()))?,
        )?;
        let mut model = Self::build(&cfg, kind)?;
        model.load_checkpoint(ck)?;
        Ok(model)
    }
}

/// Copy every front and residual-block parameter and running statistic of
/// `cnn` into `rawnet`. The pooling head of `cnn` is dropped; the GRU and
/// fully connected layers of `rawnet` keep their initial values.
pub fn transfer_pretrained<R: Real>(cnn: &RawNet<R>, rawnet: &mut RawNet<R>) -> Result<()> {
    if cnn.kind != ModelKind::PretrainCnn || rawnet.kind != ModelKind::RawNet {
        return Err(Error::arg("transfer goes from the pre-training network to the full network"));
    }
    let src: BTreeSet<&str> = cnn.params.names().filter(|n| is_trunk_name(n)).collect();
    let dst: BTreeSet<&str> = rawnet.params.names().filter(|n| is_trunk_name(n)).collect();
    let mut unmatched: Vec<String> = src.symmetric_difference(&dst).map(|s| s.to_string()).collect();
    for &name in src.intersection(&dst) {
        let (a, b) = (cnn.params.by_name(name).unwrap(), rawnet.params.by_name(name).unwrap());
        if a.value.shape() != b.value.shape() {
            unmatched.push(format!(
                "{name} (pretrained {:?}, target {:?})",
                a.value.shape(),
                b.value.shape()
            ));
        }
    }
    if cnn.bn_names != rawnet.bn_names {
        unmatched.push("batch-norm layer layout".into());
    }
    if !unmatched.is_empty() {
        return Err(Error::Transfer(unmatched));
    }
    for &name in &src {
        rawnet.params.assign(name, cnn.params.by_name(name).unwrap().value.clone())?;
    }
    rawnet.bn_stats.clone_from(&cnn.bn_stats);
    Ok(())
}
