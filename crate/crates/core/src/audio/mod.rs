//! Audio ingestion and the synthetic speaker corpus.

mod batch;
mod corpus;
mod dsp;
mod synth;
mod wav;

pub use batch::{make_batches, stack_batch, Batch};
pub use corpus::{
    corpus_root, generate_seeded_corpus, generate_synthetic_corpus, read_manifest, read_trials, write_manifest, write_trials, CorpusOptions, ManifestRow,
    Split, Trial,
};
pub use dsp::{fit_length, pre_emphasis, DEFAULT_PRE_EMPHASIS};
pub use synth::{default_speakers, synthesize_utterance, SynthOptions, SyntheticSpeakerSpec};
pub use wav::{read_wav, read_wav_i16, write_wav, write_wav_i16, SAMPLE_RATE};

/// Mono waveform with its speaker label.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformClip {
    /// Samples in `[-1, 1)`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub speaker_id: usize,
    pub utterance_id: String,
}

impl WaveformClip {
    pub fn new(samples: Vec<f64>, speaker_id: usize, utterance_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
            speaker_id,
            utterance_id: utterance_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
