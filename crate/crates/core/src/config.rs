//! The run configuration: one flat TOML table covering the network, both
//! front-end training stages and the back-end classifier.
//!
//! Every key is optional; missing keys take the full-scale defaults and an
//! unknown key is an error that names it. [`RunConfig::desk`] is the shrunk
//! preset used for CPU-sized experiments.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::RawNetConfig;
use crate::objectives::LossProfile;
use crate::trainer::{BackendTrainConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub precision: Precision,
    pub seed: u64,

    pub front_kernel: usize,
    pub front_stride: usize,
    pub front_channels: usize,
    pub block_plan: Vec<[usize; 2]>,
    pub block_kernel: usize,
    pub pool_size: usize,
    pub gru_hidden: usize,
    pub embedding_dim: usize,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub scale_factor: usize,
    pub input_len: usize,

    pub pre_emphasis: f64,
    pub val_fraction: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub loss_profile: LossProfile,
    pub lambda: f64,
    pub center_alpha: f64,
    pub normalize_basis: bool,
    pub lr: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub recurrent_dropout: f64,
    pub eval_every: usize,

    pub backend_batch_size: usize,
    pub backend_epochs: usize,
    pub backend_pairs_per_epoch: usize,
    pub backend_lr: f64,
    pub backend_lr_decay: f64,
    pub backend_weight_decay: f64,
    pub backend_hidden: usize,
    pub backend_layers: usize,
    pub backend_val_fraction: f64,
    pub backend_val_refs: usize,
    pub codebook_k: usize,
    pub codebook_dim: usize,
}

/// One line of documentation per key, in file order.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("precision", "floating point width of every network: \"f32\" or \"f64\""),
    ("seed", "seeds weight init, crops, shuffling, dropout and pair sampling"),
    ("front_kernel", "strided front convolution: kernel length"),
    ("front_stride", "strided front convolution: stride"),
    ("front_channels", "strided front convolution: output channels before scaling"),
    ("block_plan", "residual stages as [blocks, channels] pairs"),
    ("block_kernel", "kernel length inside residual blocks"),
    ("pool_size", "max-pool size after every residual block"),
    ("gru_hidden", "GRU width before scaling"),
    ("embedding_dim", "speaker embedding width"),
    ("leaky_slope", "negative slope of every leaky ReLU"),
    ("bn_momentum", "batch-norm running statistics momentum"),
    ("scale_factor", "divides every channel count and the GRU width"),
    ("input_len", "training crop length in samples"),
    ("pre_emphasis", "pre-emphasis coefficient, 0 disables"),
    ("val_fraction", "share of every training speaker's utterances held out for validation"),
    ("batch_size", "front-end mini-batch size"),
    ("pretrain_epochs", "epochs of CNN pre-training"),
    ("epochs", "epochs of full network training"),
    ("loss_profile", "\"soft\" or \"soft+center+bs\""),
    ("lambda", "center loss weight"),
    ("center_alpha", "center update rate"),
    ("normalize_basis", "divide the speaker basis loss by the number of pairs"),
    ("lr", "initial learning rate"),
    ("lr_decay", "learning rate is lr / (1 + lr_decay * step)"),
    ("weight_decay", "L2 weight decay on kernels"),
    ("recurrent_dropout", "GRU recurrent dropout rate"),
    ("eval_every", "validate every this many epochs"),
    ("backend_batch_size", "back-end pairs per batch, half same and half different"),
    ("backend_epochs", "back-end epochs"),
    ("backend_pairs_per_epoch", "back-end pairs drawn per epoch"),
    ("backend_lr", "back-end initial learning rate"),
    ("backend_lr_decay", "back-end learning rate decay"),
    ("backend_weight_decay", "back-end L2 weight decay"),
    ("backend_hidden", "back-end hidden layer width"),
    ("backend_layers", "back-end hidden layer count"),
    ("backend_val_fraction", "share of every speaker's embeddings held out for back-end validation"),
    ("backend_val_refs", "training embeddings per speaker that validation embeddings are scored against"),
    ("codebook_k", "rb-vector representative vectors"),
    ("codebook_dim", "rb-vector PCA dimension"),
];

impl Default for RunConfig {
    fn default() -> Self {
        let m = RawNetConfig::default();
        let t = TrainConfig::default();
        let b = BackendTrainConfig::default();
        Self {
            precision: Precision::F32,
            seed: 0,
            front_kernel: m.front_kernel,
            front_stride: m.front_stride,
            front_channels: m.front_channels,
            block_plan: m.block_plan,
            block_kernel: m.block_kernel,
            pool_size: m.pool_size,
            gru_hidden: m.gru_hidden,
            embedding_dim: m.embedding_dim,
            leaky_slope: m.leaky_slope,
            bn_momentum: m.bn_momentum,
            scale_factor: m.scale_factor,
            input_len: m.input_len,
            pre_emphasis: t.pre_emphasis,
            val_fraction: t.val_fraction,
            batch_size: t.batch_size,
            pretrain_epochs: 20,
            epochs: t.epochs,
            loss_profile: t.profile,
            lambda: t.lambda,
            center_alpha: t.center_alpha,
            normalize_basis: t.normalize_basis,
            lr: t.lr,
            lr_decay: t.lr_decay,
            weight_decay: t.weight_decay,
            recurrent_dropout: t.recurrent_dropout,
            eval_every: t.eval_every,
            backend_batch_size: b.batch_size,
            backend_epochs: b.epochs,
            backend_pairs_per_epoch: b.pairs_per_epoch,
            backend_lr: b.lr,
            backend_lr_decay: b.lr_decay,
            backend_weight_decay: b.weight_decay,
            backend_hidden: b.hidden,
            backend_layers: b.layers,
            backend_val_fraction: b.val_fraction,
            backend_val_refs: b.val_refs,
            codebook_k: b.codebook_k,
            codebook_dim: b.codebook_dim,
        }
    }
}

impl RunConfig {
    /// Shrunk network and schedule for a 20-speaker synthetic corpus on one
    /// CPU core.
    pub fn desk() -> Self {
        Self {
            scale_factor: 8,
            input_len: 6561,
            bn_momentum: 0.9,
            batch_size: 16,
            pretrain_epochs: 20,
            epochs: 40,
            eval_every: 5,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model(2).validate()?;
        self.pretrain().validate()?;
        self.train().validate()?;
        self.backend().validate()
    }

    /// Network configuration for `num_speakers` training classes.
    pub fn model(&self, num_speakers: usize) -> RawNetConfig {
        RawNetConfig {
            front_kernel: self.front_kernel,
            front_stride: self.front_stride,
            front_channels: self.front_channels,
            block_plan: self.block_plan.clone(),
            block_kernel: self.block_kernel,
            pool_size: self.pool_size,
            gru_hidden: self.gru_hidden,
            embedding_dim: self.embedding_dim,
            num_speakers,
            leaky_slope: self.leaky_slope,
            bn_momentum: self.bn_momentum,
            scale_factor: self.scale_factor,
            input_len: self.input_len,
            init_seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lambda: self.lambda,
            center_alpha: self.center_alpha,
            lr: self.lr,
            lr_decay: self.lr_decay,
            weight_decay: self.weight_decay,
            recurrent_dropout: self.recurrent_dropout,
            seed: self.seed,
            eval_every: self.eval_every,
            profile: self.loss_profile,
            normalize_basis: self.normalize_basis,
            pre_emphasis: self.pre_emphasis,
            val_fraction: self.val_fraction,
        }
    }

    /// Pre-training schedule: the training keys with `pretrain_epochs`.
    pub fn pretrain(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain_epochs,
            ..self.train()
        }
    }

    pub fn backend(&self) -> BackendTrainConfig {
        BackendTrainConfig {
            batch_size: self.backend_batch_size,
            epochs: self.backend_epochs,
            pairs_per_epoch: self.backend_pairs_per_epoch,
            lr: self.backend_lr,
            lr_decay: self.backend_lr_decay,
            weight_decay: self.backend_weight_decay,
            seed: self.seed,
            hidden: self.backend_hidden,
            layers: self.backend_layers,
            leaky_slope: self.leaky_slope,
            codebook_k: self.codebook_k,
            codebook_dim: self.codebook_dim,
            val_fraction: self.backend_val_fraction,
            val_refs: self.backend_val_refs,
        }
    }

    /// TOML text with a comment above every key.
    pub fn to_documented_toml(&self) -> String {
        let plain = toml::to_string(self).expect("config serialises");
        let mut out = String::new();
        for line in plain.lines() {
            let key = line.split('=').next().unwrap_or("").trim();
            if let Some((_, doc)) = KEY_DOCS.iter().find(|(k, _)| *k == key) {
                out.push_str("# ");
                out.push_str(doc);
                out.push('\n');
            }
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
