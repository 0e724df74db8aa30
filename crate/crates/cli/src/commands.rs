use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rawnet::audio::{corpus_root, generate_seeded_corpus, pre_emphasis, read_manifest, read_trials, CorpusOptions, ManifestRow, Split};
use rawnet::backend::{cosine_score, BackendKind, BackendModel, EmbeddingSet};
use rawnet::config::{Precision, RunConfig};
use rawnet::model::RawNet;
use rawnet::scoring::{det_points, score_pairs, write_scores, Metrics, ScoredTrial};
use rawnet::tensor::{write_atomic, Checkpoint, DType};
use rawnet::trainer::{
    checkpoint_pre_emphasis, extract_embeddings, load_split, pretrain_cnn, train_backend, train_rawnet, worker_threads,
    TrainOutcome, TrainingData,
};
use rawnet::{Error, Real, Result};

use crate::output::{Run, Staging};
use crate::OutArgs;

pub const MODEL_FILE: &str = "model.rwnt";
pub const BACKEND_FILE: &str = "backend.rwnt";
pub const EMBEDDINGS_FILE: &str = "embeddings.rwnt";
pub const SCORES_FILE: &str = "scores.csv";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitSel {
    All,
    Train,
    Trials,
}

impl SplitSel {
    fn splits(self) -> &'static [Split] {
        match self {
            SplitSel::All => &[Split::Train, Split::TrialsEnrol, Split::TrialsTest],
            SplitSel::Train => &[Split::Train],
            SplitSel::Trials => &[Split::TrialsEnrol, Split::TrialsTest],
        }
    }
}

/// `path` itself, or `path/file` when `path` is a directory.
fn resolve(path: &Path, file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(file)
    } else {
        path.to_path_buf()
    }
}

fn load_config(path: &Path, run: &mut Run) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    run.input(path);
    run.seed = Some(cfg.seed);
    run.config = Some(cfg.clone());
    Ok(cfg)
}

pub fn gen_data(speakers: usize, utts: usize, trial_speakers: usize, trials: usize, seed: u64, out: &OutArgs) -> Result<()> {
    let mut run = Run::start("gen-data");
    run.seed = Some(seed);
    let staging = Staging::new(&out.out, out.force)?;
    let opts = CorpusOptions {
        utts_per_speaker: utts,
        trial_speakers,
        num_trials: trials,
        seed,
        ..CorpusOptions::default()
    };
    let rows = generate_seeded_corpus(speakers, &opts, staging.dir())?;
    let manifest = run.finish(&staging)?;
    let dir = staging.commit(&manifest)?;
    log::info!("wrote {} utterances to {}", rows.len(), dir.display());
    Ok(())
}

fn save_outcome<R: Real>(outcome: &TrainOutcome<R>, cfg: &RunConfig, staging: &Staging) -> Result<()> {
    outcome.checkpoint().save(staging.path(MODEL_FILE))?;
    outcome.log.write(staging.dir())?;
    write_atomic(&staging.path(CONFIG_FILE), cfg.to_documented_toml().as_bytes())
}

fn pretrain_as<R: Real>(cfg: &RunConfig, data: &TrainingData, staging: &Staging) -> Result<()> {
    let outcome = pretrain_cnn::<R>(data, &cfg.model(data.num_classes()), &cfg.pretrain())?;
    save_outcome(&outcome, cfg, staging)
}

pub fn pretrain(config: &Path, data_path: &Path, out: &OutArgs) -> Result<()> {
    let mut run = Run::start("pretrain");
    let cfg = load_config(config, &mut run)?;
    let data = TrainingData::from_corpus(data_path, cfg.pre_emphasis, cfg.val_fraction)?;
    run.input(data_path);
    let staging = Staging::new(&out.out, out.force)?;
    match cfg.precision {
        Precision::F32 => pretrain_as::<f32>(&cfg, &data, &staging)?,
        Precision::F64 => pretrain_as::<f64>(&cfg, &data, &staging)?,
    }
    let manifest = run.finish(&staging)?;
    staging.commit(&manifest)?;
    Ok(())
}

fn train_as<R: Real>(cfg: &RunConfig, data: &TrainingData, pretrained: Option<&Checkpoint>, staging: &Staging) -> Result<()> {
    let cnn = pretrained.map(RawNet::<R>::from_checkpoint).transpose()?;
    let outcome = train_rawnet::<R>(data, &cfg.model(data.num_classes()), &cfg.train(), cnn.as_ref())?;
    log::info!("kept the model from epoch {}", outcome.best_epoch);
    save_outcome(&outcome, cfg, staging)
}

pub fn train(config: &Path, data_path: &Path, pretrained: Option<&Path>, out: &OutArgs) -> Result<()> {
    let mut run = Run::start("train");
    let cfg = load_config(config, &mut run)?;
    let data = TrainingData::from_corpus(data_path, cfg.pre_emphasis, cfg.val_fraction)?;
    run.input(data_path);
    let ck = match pretrained {
        Some(p) => {
            let p = resolve(p, MODEL_FILE);
            run.input(&p);
            Some(Checkpoint::load(&p)?)
        }
        None => None,
    };
    let staging = Staging::new(&out.out, out.force)?;
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, &data, ck.as_ref(), &staging)?,
        Precision::F64 => train_as::<f64>(&cfg, &data, ck.as_ref(), &staging)?,
    }
    let manifest = run.finish(&staging)?;
    staging.commit(&manifest)?;
    Ok(())
}

/// A front-end at the precision its checkpoint was written in, plus the
/// pre-emphasis it was trained with.
enum FrontEnd {
    F32(RawNet<f32>),
    F64(RawNet<f64>),
}

impl FrontEnd {
    fn load(path: &Path) -> Result<(Self, f64)> {
        let ck = Checkpoint::load(path)?;
        let coeff = checkpoint_pre_emphasis(&ck)?;
        let net = match ck.dtype {
            DType::F32 => FrontEnd::F32(RawNet::from_checkpoint(&ck)?),
            DType::F64 => FrontEnd::F64(RawNet::from_checkpoint(&ck)?),
        };
        Ok((net, coeff))
    }

    fn extract(&self, clips: &[rawnet::audio::WaveformClip]) -> Result<Vec<rawnet::model::SpeakerEmbedding>> {
        let threads = worker_threads();
        match self {
            FrontEnd::F32(m) => extract_embeddings(m, clips, threads),
            FrontEnd::F64(m) => extract_embeddings(m, clips, threads),
        }
    }
}

pub fn extract(model: &Path, data: &Path, split: SplitSel, out: &OutArgs) -> Result<()> {
    let mut run = Run::start("extract");
    let model = resolve(model, MODEL_FILE);
    let (net, coeff) = FrontEnd::load(&model)?;
    run.input(&model);
    run.input(data);
    let clips = load_split(data, split.splits(), coeff)?;
    if clips.is_empty() {
        return Err(Error::Corpus(format!("no utterances in split {split:?} of {}", data.display())));
    }
    let staging = Staging::new(&out.out, out.force)?;
    let set = EmbeddingSet::new(net.extract(&clips)?)?;
    set.save(&staging.path(EMBEDDINGS_FILE))?;
    log::info!("extracted {} embeddings of dimension {}", set.len(), set.dim());
    let manifest = run.finish(&staging)?;
    staging.commit(&manifest)?;
    Ok(())
}

fn manifest_rows(data: &Path) -> Result<Vec<ManifestRow>> {
    read_manifest(resolve(data, "manifest.csv"))
}

fn backend_as<R: Real>(cfg: &RunConfig, kind: BackendKind, set: &EmbeddingSet, staging: &Staging) -> Result<()> {
    let outcome = train_backend::<R>(kind, set, &cfg.backend())?;
    log::info!("kept the {kind} back-end from epoch {}", outcome.best_epoch);
    outcome.model.to_checkpoint().save(staging.path(BACKEND_FILE))?;
    outcome.log.write(staging.dir())?;
    write_atomic(&staging.path(CONFIG_FILE), cfg.to_documented_toml().as_bytes())
}

pub fn backend_train(config: &Path, embeddings: &Path, kind: BackendKind, data: Option<&Path>, out: &OutArgs) -> Result<()> {
    let mut run = Run::start("backend-train");
    let cfg = load_config(config, &mut run)?;
    let embeddings = resolve(embeddings, EMBEDDINGS_FILE);
    let mut set = EmbeddingSet::load(&embeddings)?;
    run.input(&embeddings);
    if let Some(data) = data {
        let train: std::collections::HashSet<String> = manifest_rows(data)?
            .into_iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.utterance_id)
            .collect();
        set = EmbeddingSet::new(set.items.into_iter().filter(|e| train.contains(&e.utterance_id)).collect())?;
        run.input(data);
    }
    let staging = Staging::new(&out.out, out.force)?;
    match cfg.precision {
        Precision::F32 => backend_as::<f32>(&cfg, kind, &set, &staging)?,
        Precision::F64 => backend_as::<f64>(&cfg, kind, &set, &staging)?,
    }
    let manifest = run.finish(&staging)?;
    staging.commit(&manifest)?;
    Ok(())
}

enum Backend {
    Cosine,
    F32(BackendModel<f32>),
    F64(BackendModel<f64>),
}

impl Backend {
    fn load(kind: BackendKind, model: Option<&Path>) -> Result<Self> {
        if kind == BackendKind::Cosine {
            return Ok(Backend::Cosine);
        }
        let path = model.ok_or_else(|| Error::InvalidArgument(format!("the {kind} back-end needs --model")))?;
        let ck = Checkpoint::load(path)?;
        let b = match ck.dtype {
            DType::F32 => Backend::F32(BackendModel::from_checkpoint(&ck)?),
            DType::F64 => Backend::F64(BackendModel::from_checkpoint(&ck)?),
        };
        let found = match &b {
            Backend::F32(m) => m.kind,
            Backend::F64(m) => m.kind,
            Backend::Cosine => unreachable!(),
        };
        if found != kind {
            return Err(Error::InvalidArgument(format!(
                "{} holds a {found} back-end, --backend asked for {kind}",
                path.display()
            )));
        }
        Ok(b)
    }

    fn embedding_dim(&self) -> Option<usize> {
        match self {
            Backend::Cosine => None,
            Backend::F32(m) => Some(m.embedding_dim),
            Backend::F64(m) => Some(m.embedding_dim),
        }
    }

    fn score(&self, e: &[f64], t: &[f64]) -> Result<f64> {
        match self {
            Backend::Cosine => cosine_score(e, t),
            Backend::F32(m) => m.score(e, t),
            Backend::F64(m) => m.score(e, t),
        }
    }
}

pub struct ScoreArgs {
    pub backend: BackendKind,
    pub model: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub frontend: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub trials: Option<PathBuf>,
    pub cache: bool,
    pub out: OutArgs,
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let mut run = Run::start("score");
    let model = args.model.as_deref().map(|m| resolve(m, BACKEND_FILE));
    let backend = Backend::load(args.backend, model.as_deref())?;
    if let Some(m) = &model {
        run.input(m);
    }
    let trials_path = match (&args.trials, &args.data) {
        (Some(t), _) => t.clone(),
        (None, Some(d)) => resolve(d, "trials.csv"),
        (None, None) => return Err(Error::InvalidArgument("give --trials or --data".into())),
    };
    let trials = read_trials(&trials_path)?;
    run.input(&trials_path);

    let dim_check = |v: Vec<f64>, id: &str| -> Result<Vec<f64>> {
        match backend.embedding_dim() {
            Some(d) if d != v.len() => Err(Error::Dimension(format!(
                "embedding of `{id}` has dimension {}, the back-end expects {d}",
                v.len()
            ))),
            _ => Ok(v),
        }
    };
    let scorer = |e: &[f64], t: &[f64]| backend.score(e, t);
    let scored: Vec<ScoredTrial> = match (&args.embeddings, &args.frontend) {
        (Some(e), _) => {
            let path = resolve(e, EMBEDDINGS_FILE);
            let set = EmbeddingSet::load(&path)?;
            run.input(&path);
            score_pairs(&trials, |id| dim_check(set.get(id)?.vector.clone(), id), scorer, args.cache)?
        }
        (None, Some(f)) => {
            let f = resolve(f, MODEL_FILE);
            let (net, coeff) = FrontEnd::load(&f)?;
            let data = args.data.as_deref().expect("clap requires --data with --frontend");
            let root = corpus_root(&resolve(data, "manifest.csv"));
            let rows: HashMap<String, ManifestRow> =
                manifest_rows(data)?.into_iter().map(|r| (r.utterance_id.clone(), r)).collect();
            run.input(&f);
            run.input(data);
            let embed = |id: &str| -> Result<Vec<f64>> {
                let row = rows
                    .get(id)
                    .ok_or_else(|| Error::InvalidArgument(format!("utterance `{id}` is not in the corpus manifest")))?;
                let mut clip = row.load(&root)?;
                if coeff != 0.0 {
                    clip = pre_emphasis(&clip, coeff);
                }
                let v = net.extract(std::slice::from_ref(&clip))?.remove(0).vector;
                dim_check(v, id)
            };
            score_pairs(&trials, embed, scorer, args.cache)?
        }
        (None, None) => return Err(Error::InvalidArgument("give --embeddings or --frontend".into())),
    };
    let staging = Staging::new(&args.out.out, args.out.force)?;
    write_scores(staging.path(SCORES_FILE), &scored)?;
    log::info!("scored {} trials with the {} back-end", scored.len(), args.backend);
    let manifest = run.finish(&staging)?;
    staging.commit(&manifest)?;
    Ok(())
}

pub fn eval(scores: &Path, out: Option<&Path>, force: bool) -> Result<()> {
    let mut run = Run::start("eval");
    let scores = resolve(scores, SCORES_FILE);
    let trials = rawnet::scoring::read_scores(&scores)?;
    run.input(&scores);
    let metrics = Metrics::from_trials(&trials)?;
    if let Some(out) = out {
        let staging = Staging::new(out, force)?;
        write_atomic(&staging.path("metrics.toml"), metrics.to_key_values().as_bytes())?;
        let mut det = String::from("threshold,far,frr\n");
        for p in det_points(&trials)? {
            det.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
        }
        write_atomic(&staging.path("det.csv"), det.as_bytes())?;
        let manifest = run.finish(&staging)?;
        staging.commit(&manifest)?;
    }
    println!("{}", metrics.summary_line());
    Ok(())
}
