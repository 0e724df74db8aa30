use std::collections::BTreeMap;
use std::path::Path;

use crate::audio::{corpus_root, pre_emphasis, read_manifest, Split, WaveformClip};
use crate::{Error, Result};

/// Training clips with dense class labels and a closed-set validation
/// split.
///
/// `speaker_id` of every clip is replaced by its class index; `speakers`
/// maps class indices back to corpus speaker ids.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub train: Vec<WaveformClip>,
    pub val: Vec<WaveformClip>,
    pub speakers: Vec<usize>,
}

impl TrainingData {
    /// Group `clips` by speaker and hold out the last
    /// `max(1, round(val_fraction * n))` utterances (by id) of every speaker
    /// with at least two. `val_fraction = 0` keeps everything for training.
    pub fn from_clips(clips: Vec<WaveformClip>, val_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {val_fraction}")));
        }
        let mut by_speaker: BTreeMap<usize, Vec<WaveformClip>> = BTreeMap::new();
        for c in clips {
            by_speaker.entry(c.speaker_id).or_default().push(c);
        }
        if by_speaker.len() < 2 {
            return Err(Error::Corpus(format!(
                "training needs at least 2 speakers, the corpus has {}",
                by_speaker.len()
            )));
        }
        let mut data = TrainingData {
            train: Vec::new(),
            val: Vec::new(),
            speakers: Vec::new(),
        };
        for (class, (speaker, mut utts)) in by_speaker.into_iter().enumerate() {
            utts.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
            let n = utts.len();
            let hold = if val_fraction > 0.0 && n >= 2 {
                ((val_fraction * n as f64).round() as usize).clamp(1, n - 1)
            } else {
                0
            };
            for (i, mut c) in utts.into_iter().enumerate() {
                c.speaker_id = class;
                if i < n - hold {
                    data.train.push(c);
                } else {
                    data.val.push(c);
                }
            }
            data.speakers.push(speaker);
        }
        Ok(data)
    }

    /// Load the training split of a corpus (directory or manifest path),
    /// applying pre-emphasis when `coeff` is non-zero.
    pub fn from_corpus(path: &Path, pre_emphasis_coeff: f64, val_fraction: f64) -> Result<Self> {
        Self::from_clips(load_split(path, &[Split::Train], pre_emphasis_coeff)?, val_fraction)
    }

    pub fn num_classes(&self) -> usize {
        self.speakers.len()
    }
}

fn manifest_file(path: &Path) -> std::path::PathBuf {
    if path.is_dir() {
        path.join("manifest.csv")
    } else {
        path.to_path_buf()
    }
}

/// Clips of the given splits in manifest order.
pub fn load_split(path: &Path, splits: &[Split], pre_emphasis_coeff: f64) -> Result<Vec<WaveformClip>> {
    let root = corpus_root(path);
    let rows = read_manifest(manifest_file(path))?;
    rows.iter()
        .filter(|r| splits.contains(&r.split))
        .map(|r| {
            let c = r.load(&root)?;
            Ok(if pre_emphasis_coeff != 0.0 {
                pre_emphasis(&c, pre_emphasis_coeff)
            } else {
                c
            })
        })
        .collect()
}

/// Load every clip named in the manifest, regardless of split.
pub fn load_all(path: &Path, pre_emphasis_coeff: f64) -> Result<Vec<WaveformClip>> {
    load_split(path, &[Split::Train, Split::TrialsEnrol, Split::TrialsTest], pre_emphasis_coeff)
}
