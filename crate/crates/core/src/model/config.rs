use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture hyperparameters. The defaults build the full-size network
/// for 59,049-sample inputs and 1,211 training speakers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawNetConfig {
    pub front_kernel: usize,
    pub front_stride: usize,
    pub front_channels: usize,
    /// `[num_blocks, channels]` per stage.
    pub block_plan: Vec<[usize; 2]>,
    pub block_kernel: usize,
    pub pool_size: usize,
    pub gru_hidden: usize,
    pub embedding_dim: usize,
    pub num_speakers: usize,
    pub leaky_slope: f64,
    /// Running-statistics momentum of every batch-norm layer.
    pub bn_momentum: f64,
    /// Divides every channel count and the GRU width.
    pub scale_factor: usize,
    /// Training crop length.
    pub input_len: usize,
    pub init_seed: u64,
}

impl Default for RawNetConfig {
    fn default() -> Self {
        Self {
            front_kernel: 3,
            front_stride: 3,
            front_channels: 128,
            block_plan: vec![[2, 128], [4, 256]],
            block_kernel: 3,
            pool_size: 3,
            gru_hidden: 1024,
            embedding_dim: 128,
            num_speakers: 1211,
            leaky_slope: 0.3,
            bn_momentum: 0.99,
            scale_factor: 1,
            input_len: 59_049,
            init_seed: 0,
        }
    }
}

/// Per-sample output shape of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: String,
    pub shape: Vec<usize>,
}

impl LayerShape {
    pub(crate) fn new(layer: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            layer: layer.into(),
            shape: shape.to_vec(),
        }
    }
}

impl RawNetConfig {
    fn scaled(&self, c: usize, what: &str) -> Result<usize> {
        if c % self.scale_factor != 0 || c < self.scale_factor {
            return Err(Error::Config(format!(
                "{what} = {c} is not divisible by scale_factor = {}",
                self.scale_factor
            )));
        }
        Ok(c / self.scale_factor)
    }

    pub fn front_width(&self) -> usize {
        self.front_channels / self.scale_factor.max(1)
    }

    pub fn gru_width(&self) -> usize {
        self.gru_hidden / self.scale_factor.max(1)
    }

    /// Output channels of every residual block in order.
    pub fn block_widths(&self) -> Vec<usize> {
        self.block_plan
            .iter()
            .flat_map(|&[n, c]| std::iter::repeat_n(c / self.scale_factor.max(1), n))
            .collect()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_plan.iter().map(|b| b[0]).sum()
    }

    /// Total time downsampling from input samples to GRU frames, which is
    /// also the shortest input that yields one frame.
    pub fn min_input_len(&self) -> usize {
        self.front_stride * self.pool_size.pow(self.num_blocks() as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scale_factor == 0 {
            return bad("scale_factor must be positive".into());
        }
        if self.front_kernel == 0 || self.front_stride == 0 || self.pool_size == 0 {
            return bad("front_kernel, front_stride and pool_size must be positive".into());
        }
        if self.front_stride == 1 && self.front_kernel % 2 == 0 {
            return bad("front_kernel must be odd when front_stride is 1".into());
        }
        if self.block_kernel % 2 == 0 {
            return bad(format!("block_kernel must be odd, got {}", self.block_kernel));
        }
        if self.block_plan.is_empty() || self.block_plan.iter().any(|b| b[0] == 0) {
            return bad("block_plan needs at least one stage with at least one block".into());
        }
        self.scaled(self.front_channels, "front_channels")?;
        self.scaled(self.gru_hidden, "gru_hidden")?;
        for &[_, c] in &self.block_plan {
            self.scaled(c, "block_plan channels")?;
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if self.num_speakers < 2 {
            return bad(format!("num_speakers must be at least 2, got {}", self.num_speakers));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope must be in (0, 1), got {}", self.leaky_slope));
        }
        if !(self.bn_momentum >= 0.0 && self.bn_momentum < 1.0) {
            return bad(format!("bn_momentum must be in [0, 1), got {}", self.bn_momentum));
        }
        let m = self.min_input_len();
        if self.input_len < m || self.input_len % m != 0 {
            return bad(format!("input_len = {} must be a positive multiple of {m}", self.input_len));
        }
        Ok(())
    }

    /// Layer output shapes for an input of `len` samples, computed without
    /// building the network.
    pub fn shape_plan(&self, len: usize, pretrain: bool) -> Result<Vec<LayerShape>> {
        self.validate()?;
        check_eval_len(self, len)?;
        let mut plan = vec![LayerShape::new("input", &[len])];
        let mut t = len / self.front_stride;
        plan.push(LayerShape::new("front", &[t, self.front_width()]));
        let widths = self.block_widths();
        for (i, &c) in widths.iter().enumerate() {
            t /= self.pool_size;
            plan.push(LayerShape::new(format!("resblock{}", i + 1), &[t, c]));
        }
        if pretrain {
            plan.push(LayerShape::new("gap", &[*widths.last().unwrap()]));
        } else {
            plan.push(LayerShape::new("gru", &[self.gru_width()]));
            plan.push(LayerShape::new("embedding", &[self.embedding_dim]));
        }
        plan.push(LayerShape::new("output", &[self.num_speakers]));
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Inputs must divide evenly through every strided stage.
pub(crate) fn check_eval_len(cfg: &RawNetConfig, len: usize) -> Result<()> {
    let m = cfg.min_input_len();
    if len < m {
        return Err(Error::len(format!("input of {len} samples is shorter than the minimum of {m}")));
    }
    if len % m != 0 {
        return Err(Error::len(format!("input length {len} is not a multiple of {m}")));
    }
    Ok(())
}
