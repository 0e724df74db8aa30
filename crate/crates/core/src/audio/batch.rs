use rand::seq::SliceRandom;
use rand::RngCore;

use super::WaveformClip;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Stacked waveforms `[N, L]` with aligned labels.
#[derive(Clone, Debug)]
pub struct Batch<R> {
    pub waveforms: Tensor<R>,
    pub labels: Vec<usize>,
    pub utterance_ids: Vec<String>,
}

impl<R> Batch<R> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Stack equal-length clips in the given order; labels are the clips'
/// speaker ids.
pub fn stack_batch<R: Real>(clips: &[&WaveformClip]) -> Result<Batch<R>> {
    let first = clips.first().ok_or_else(|| Error::arg("cannot stack an empty batch"))?;
    let len = first.len();
    if let Some(c) = clips.iter().find(|c| c.len() != len) {
        return Err(Error::len(format!(
            "mixed clip lengths in batch: `{}` has {} samples, `{}` has {len}",
            c.utterance_id,
            c.len(),
            first.utterance_id
        )));
    }
    let mut data = Vec::with_capacity(clips.len() * len);
    for c in clips {
        data.extend(c.samples.iter().map(|&x| R::lit(x)));
    }
    Ok(Batch {
        waveforms: Tensor::new([clips.len(), len], data)?,
        labels: clips.iter().map(|c| c.speaker_id).collect(),
        utterance_ids: clips.iter().map(|c| c.utterance_id.clone()).collect(),
    })
}

/// Shuffle with `rng` and cut into batches of `batch_size`; the last batch
/// may be smaller.
pub fn make_batches<R: Real>(clips: &[WaveformClip], batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<Batch<R>>> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|idx| stack_batch(&idx.iter().map(|&i| &clips[i]).collect::<Vec<_>>()))
        .collect()
}
