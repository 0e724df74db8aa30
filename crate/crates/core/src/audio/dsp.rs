use rand::{Rng, RngCore};

use super::WaveformClip;
use crate::{Error, Result};

pub const DEFAULT_PRE_EMPHASIS: f64 = 0.97;

/// First-order high-pass: `y[0] = x[0]`, `y[t] = x[t] - coeff * x[t-1]`.
pub fn pre_emphasis(clip: &WaveformClip, coeff: f64) -> WaveformClip {
    let x = &clip.samples;
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
        y.extend(x.windows(2).map(|w| w[1] - coeff * w[0]));
    }
    WaveformClip {
        samples: y,
        ..clip.clone()
    }
}

/// Crop or duplicate to exactly `target_len` samples.
///
/// Longer clips are cropped to a contiguous window; shorter clips are
/// concatenated with themselves until they reach the target and then
/// cropped. The window starts at a random offset drawn from `rng`, or at 0
/// when no generator is given.
pub fn fit_length(clip: &WaveformClip, target_len: usize, rng: Option<&mut dyn RngCore>) -> Result<WaveformClip> {
    if clip.samples.is_empty() {
        return Err(Error::len(format!("clip `{}` is empty", clip.utterance_id)));
    }
    if target_len == 0 {
        return Err(Error::arg("target length must be positive"));
    }
    let len = clip.samples.len();
    if len == target_len {
        return Ok(clip.clone());
    }
    let source: Vec<f64> = if len < target_len {
        let copies = target_len.div_ceil(len);
        clip.samples.iter().copied().cycle().take(copies * len).collect()
    } else {
        clip.samples.clone()
    };
    let slack = source.len() - target_len;
    let offset = match rng {
        Some(r) if slack > 0 => r.random_range(0..=slack),
        _ => 0,
    };
    Ok(WaveformClip {
        samples: source[offset..offset + target_len].to_vec(),
        ..clip.clone()
    })
}
