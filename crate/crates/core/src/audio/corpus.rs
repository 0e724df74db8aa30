//! Corpus manifest and trial list files, and the on-disk synthetic corpus.
//!
//! ```text
//! <dir>/manifest.csv   utterance_id,speaker_id,split,path
//! <dir>/trials.csv     enrol_utt,test_utt,label
//! <dir>/speakers.csv   speaker_id,f0_hz,formants_hz,role
//! <dir>/wav/<utterance_id>.wav
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{default_speakers, synthesize_utterance, SynthOptions, SyntheticSpeakerSpec};
use super::wav::write_wav;
use super::{read_wav, WaveformClip};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "trials-enrol")]
    TrialsEnrol,
    #[serde(rename = "trials-test")]
    TrialsTest,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::TrialsEnrol => "trials-enrol",
            Split::TrialsTest => "trials-test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "trials-enrol" => Ok(Split::TrialsEnrol),
            "trials-test" => Ok(Split::TrialsTest),
            other => Err(Error::format("split", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utterance_id: String,
    pub speaker_id: usize,
    pub split: Split,
    /// Relative to the manifest's directory.
    pub path: String,
}

impl ManifestRow {
    pub fn load(&self, root: &Path) -> Result<WaveformClip> {
        let mut clip = read_wav(root.join(&self.path))?;
        clip.speaker_id = self.speaker_id;
        clip.utterance_id = self.utterance_id.clone();
        Ok(clip)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub enrol_utt: String,
    pub test_utt: String,
    /// 1 for same speaker, 0 for different.
    pub label: u8,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), format!("{other:?}")),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(Error::format(
            path.display().to_string(),
            format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        ));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    read_csv(path.as_ref(), &["utterance_id", "speaker_id", "split", "path"])
}

pub fn write_trials(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    write_csv(path.as_ref(), trials)
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let trials: Vec<Trial> = read_csv(path, &["enrol_utt", "test_utt", "label"])?;
    if let Some(t) = trials.iter().find(|t| t.label > 1) {
        return Err(Error::format("label", format!("{}: label must be 0 or 1, got {}", path.display(), t.label)));
    }
    Ok(trials)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusOptions {
    pub utts_per_speaker: usize,
    /// Speakers held out of training and used for the trial list.
    pub trial_speakers: usize,
    pub num_trials: usize,
    pub seed: u64,
    pub synth: SynthOptions,
    /// Replace an existing corpus in the target directory.
    pub force: bool,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            utts_per_speaker: 10,
            trial_speakers: 6,
            num_trials: 200,
            seed: 7,
            synth: SynthOptions::default(),
            force: false,
        }
    }
}

const CORPUS_FILES: [&str; 3] = ["manifest.csv", "trials.csv", "speakers.csv"];

#[derive(Serialize)]
struct SpeakerRow {
    speaker_id: usize,
    f0_hz: String,
    formants_hz: String,
    role: &'static str,
}

/// Write WAVs, manifest, trial list and speaker table under `dir`.
///
/// The last `trial_speakers` speakers are held out of training; the first
/// half of each one's utterances are enrolment utterances, the rest test
/// utterances. Trials are half same-speaker, half different-speaker.
pub fn generate_synthetic_corpus(
    specs: &[SyntheticSpeakerSpec],
    opts: &CorpusOptions,
    dir: impl AsRef<Path>,
) -> Result<Vec<ManifestRow>> {
    let dir = dir.as_ref();
    if specs.len() < 2 {
        return Err(Error::arg("a corpus needs at least 2 speakers"));
    }
    if opts.trial_speakers >= specs.len() || opts.trial_speakers == 1 {
        return Err(Error::arg(format!(
            "trial speakers must be 0 or between 2 and {}, got {}",
            specs.len() - 1,
            opts.trial_speakers
        )));
    }
    if opts.utts_per_speaker < 2 {
        return Err(Error::arg("need at least 2 utterances per speaker"));
    }
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty && !opts.force {
            return Err(Error::Corpus(format!(
                "{} exists and is not empty (use force to overwrite)",
                dir.display()
            )));
        }
        if non_empty {
            let wav_dir = dir.join("wav");
            if wav_dir.exists() {
                std::fs::remove_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
            }
            for f in CORPUS_FILES {
                let p = dir.join(f);
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
    }
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let first_trial = specs.len() - opts.trial_speakers;
    let half = opts.utts_per_speaker / 2;
    let mut rows = Vec::new();
    let mut speakers = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        let held_out = k >= first_trial;
        speakers.push(SpeakerRow {
            speaker_id: spec.speaker_id,
            f0_hz: format!("{:.2}", spec.f0),
            formants_hz: spec.formants.iter().map(|f| format!("{f:.1}")).collect::<Vec<_>>().join(" "),
            role: if held_out { "trials" } else { "train" },
        });
        for u in 0..opts.utts_per_speaker {
            let len = rng.random_range(opts.synth.min_len..=opts.synth.max_len);
            let samples = synthesize_utterance(spec, len, &mut rng);
            let utterance_id = format!("spk{:03}_utt{:03}", spec.speaker_id, u);
            let rel = format!("wav/{utterance_id}.wav");
            write_wav(dir.join(&rel), &samples)?;
            let split = match (held_out, u < half) {
                (false, _) => Split::Train,
                (true, true) => Split::TrialsEnrol,
                (true, false) => Split::TrialsTest,
            };
            rows.push(ManifestRow {
                utterance_id,
                speaker_id: spec.speaker_id,
                split,
                path: rel,
            });
        }
    }
    write_manifest(dir.join("manifest.csv"), &rows)?;
    write_csv(&dir.join("speakers.csv"), &speakers)?;
    let trials = if opts.trial_speakers >= 2 {
        sample_trials(&rows, opts.num_trials, &mut rng)
    } else {
        Vec::new()
    };
    write_trials(dir.join("trials.csv"), &trials)?;
    Ok(rows)
}

/// Draw `num_speakers` distinct voices from `opts.seed` and write their
/// corpus to `dir`.
pub fn generate_seeded_corpus(num_speakers: usize, opts: &CorpusOptions, dir: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    let specs = default_speakers(num_speakers, &opts.synth, &mut rng)?;
    generate_synthetic_corpus(&specs, opts, dir)
}

/// Half same-speaker, half different-speaker pairs of enrolment and test
/// utterances, without repeats.
fn sample_trials(rows: &[ManifestRow], n: usize, rng: &mut ChaCha8Rng) -> Vec<Trial> {
    let enrol: Vec<&ManifestRow> = rows.iter().filter(|r| r.split == Split::TrialsEnrol).collect();
    let test: Vec<&ManifestRow> = rows.iter().filter(|r| r.split == Split::TrialsTest).collect();
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for e in &enrol {
        for t in &test {
            let pair = (e.utterance_id.clone(), t.utterance_id.clone());
            if e.speaker_id == t.speaker_id {
                same.push(pair);
            } else {
                diff.push(pair);
            }
        }
    }
    same.shuffle(rng);
    diff.shuffle(rng);
    let n_same = (n / 2).min(same.len());
    let n_diff = (n - n_same).min(diff.len());
    let mut trials: Vec<Trial> = same
        .into_iter()
        .take(n_same)
        .map(|(e, t)| Trial {
            enrol_utt: e,
            test_utt: t,
            label: 1,
        })
        .chain(diff.into_iter().take(n_diff).map(|(e, t)| Trial {
            enrol_utt: e,
            test_utt: t,
            label: 0,
        }))
        .collect();
    trials.shuffle(rng);
    trials
}

/// Resolve the directory holding `manifest.csv` from either the directory
/// itself or the manifest path.
pub fn corpus_root(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}
