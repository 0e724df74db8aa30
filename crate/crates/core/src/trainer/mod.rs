//! Training loops: CNN pre-training, full network training with the
//! combined objective, and back-end classifier training.
//!
//! Every loop draws crops, shuffles and dropout masks from one ChaCha
//! stream seeded by the configuration, so a rerun with the same data and
//! configuration reproduces the log exactly.

mod backend;
mod data;
mod log;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{fit_length, make_batches, stack_batch, WaveformClip};
use crate::backend::cosine_score;
use crate::model::{transfer_pretrained, ModelKind, RawNet, RawNetConfig, SpeakerEmbedding};
use crate::objectives::{combined_loss, cross_entropy, CenterBank, LossProfile, ObjectiveConfig};
use crate::scoring::eer_from_scores;
use crate::tensor::{Amsgrad, AmsgradConfig, Checkpoint, Graph, Real};
use crate::{Error, Result};

pub use backend::{train_backend, BackendTrainConfig, BackendTrainOutcome};
pub use data::{load_all, load_split, TrainingData};
pub use log::{EpochRecord, StepRecord, TrainLog};

/// Checkpoint meta key recording the pre-emphasis coefficient the model was
/// trained with; extraction applies the same filter.
pub const META_PRE_EMPHASIS: &str = "data/pre_emphasis";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Center loss weight.
    pub lambda: f64,
    /// Center update rate.
    pub center_alpha: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub recurrent_dropout: f64,
    pub seed: u64,
    /// Validate every this many epochs (and always after the last one).
    pub eval_every: usize,
    pub profile: LossProfile,
    pub normalize_basis: bool,
    pub pre_emphasis: f64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 40,
            lambda: 1e-3,
            center_alpha: 0.5,
            lr: 1e-3,
            lr_decay: 1e-4,
            weight_decay: 1e-4,
            recurrent_dropout: 0.3,
            seed: 0,
            eval_every: 1,
            profile: LossProfile::SoftCenterBasis,
            normalize_basis: false,
            pre_emphasis: 0.97,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2 for batch norm, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [
            ("lr_decay", self.lr_decay),
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.center_alpha > 0.0 && self.center_alpha <= 1.0) {
            return bad(format!("center_alpha must be in (0, 1], got {}", self.center_alpha));
        }
        if !(0.0..1.0).contains(&self.recurrent_dropout) {
            return bad(format!("recurrent_dropout must be in [0, 1), got {}", self.recurrent_dropout));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return bad(format!("pre_emphasis must be in [0, 1), got {}", self.pre_emphasis));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        Ok(())
    }

    fn optimizer(&self) -> AmsgradConfig {
        AmsgradConfig {
            lr: self.lr,
            decay: self.lr_decay,
            weight_decay: self.weight_decay,
            ..AmsgradConfig::default()
        }
    }

    fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda: self.lambda,
            profile: self.profile,
            normalize_basis: self.normalize_basis,
        }
    }
}

/// A trained network, its log, and the epoch the kept weights come from.
#[derive(Clone, Debug)]
pub struct TrainOutcome<R> {
    pub model: RawNet<R>,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub pre_emphasis: f64,
}

impl<R: Real> TrainOutcome<R> {
    /// Model checkpoint including the pre-emphasis coefficient.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.meta.insert(META_PRE_EMPHASIS.into(), self.pre_emphasis.to_string());
        ck
    }
}

/// Pre-emphasis recorded in a model checkpoint, if any.
pub fn checkpoint_pre_emphasis(ck: &Checkpoint) -> Result<f64> {
    match ck.meta.get(META_PRE_EMPHASIS) {
        None => Ok(0.0),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad {META_PRE_EMPHASIS} value `{v}`"))),
    }
}

/// Worker count for embedding extraction: `RAWNET_THREADS` when set to a
/// positive integer, otherwise the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("RAWNET_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Whole-utterance embeddings of `clips`, in input order, computed on up
/// to `threads` threads. The result does not depend on `threads`.
pub fn extract_embeddings<R: Real>(
    model: &RawNet<R>,
    clips: &[WaveformClip],
    threads: usize,
) -> Result<Vec<SpeakerEmbedding>> {
    let threads = threads.clamp(1, clips.len().max(1));
    if threads == 1 {
        return clips.iter().map(|c| model.extract_embedding(c)).collect();
    }
    let chunk = clips.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = clips
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|c| model.extract_embedding(c)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(clips.len());
        for h in handles {
            out.extend(h.join().expect("extraction worker panicked")?);
        }
        Ok(out)
    })
}

fn train_crops(clips: &[WaveformClip], len: usize, rng: &mut ChaCha8Rng) -> Result<Vec<WaveformClip>> {
    clips.iter().map(|c| fit_length(c, len, Some(rng))).collect()
}

fn val_crops(clips: &[WaveformClip], len: usize) -> Result<Vec<WaveformClip>> {
    clips.iter().map(|c| fit_length(c, len, None)).collect()
}

/// Mean cross-entropy of `clips` in eval mode, in batches of `batch`.
fn eval_loss<R: Real>(model: &RawNet<R>, clips: &[WaveformClip], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for part in clips.chunks(batch) {
        let b = stack_batch::<R>(&part.iter().collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let x = g.constant(b.waveforms);
        let out = model.forward_eval(&mut g, x)?;
        let l = cross_entropy(&mut g, out.logits, &b.labels)?;
        total += g.value(l).item().to_f64_lossless() * part.len() as f64;
    }
    Ok(total / clips.len() as f64)
}

/// Cosine EER of held-out utterances against one training utterance of
/// every class; same-class pairs are targets.
fn validation_eer<R: Real>(model: &RawNet<R>, data: &TrainingData) -> Result<Option<f64>> {
    if data.val.is_empty() {
        return Ok(None);
    }
    let mut refs: Vec<&WaveformClip> = Vec::new();
    for class in 0..data.num_classes() {
        if let Some(c) = data.train.iter().find(|c| c.speaker_id == class) {
            refs.push(c);
        }
    }
    let ref_clips: Vec<WaveformClip> = refs.into_iter().cloned().collect();
    let threads = worker_threads();
    let enrol = extract_embeddings(model, &ref_clips, threads)?;
    let test = extract_embeddings(model, &data.val, threads)?;
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for t in &test {
        for e in &enrol {
            let s = cosine_score(&e.vector, &t.vector)?;
            if e.speaker_id == t.speaker_id {
                same.push(s);
            } else {
                diff.push(s);
            }
        }
    }
    if same.is_empty() || diff.is_empty() {
        return Ok(None);
    }
    Ok(Some(eer_from_scores(&same, &diff)?.eer))
}

fn dropout_mask<R: Real>(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Option<Vec<R>> {
    if p == 0.0 || n == 0 {
        return None;
    }
    let keep = R::lit(1.0 / (1.0 - p));
    Some((0..n).map(|_| if rng.random::<f64>() < p { R::zero() } else { keep }).collect())
}

fn check_model_config(model_cfg: &RawNetConfig, data: &TrainingData) -> Result<RawNetConfig> {
    let cfg = RawNetConfig {
        num_speakers: data.num_classes(),
        ..model_cfg.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    data: &'a TrainingData,
    rng: ChaCha8Rng,
    log: TrainLog,
}

impl Loop<'_> {
    /// Shuffled, cropped batches for one epoch; a trailing batch of one clip
    /// is dropped since batch norm needs two.
    fn epoch_batches<R: Real>(&mut self, len: usize) -> Result<Vec<crate::audio::Batch<R>>> {
        let crops = train_crops(&self.data.train, len, &mut self.rng)?;
        let mut batches = make_batches::<R>(&crops, self.cfg.batch_size, &mut self.rng)?;
        if batches.last().is_some_and(|b| b.len() < 2) {
            batches.pop();
        }
        Ok(batches)
    }

    fn record_step(&mut self, epoch: usize, step: u64, lr: f64, grad_norm: f64, terms: [f64; 4]) -> Result<()> {
        if !grad_norm.is_finite() || !terms[3].is_finite() {
            return Err(Error::arg(format!(
                "training diverged at step {step}: loss {} gradient norm {grad_norm}",
                terms[3]
            )));
        }
        let [ce, center, basis, total] = terms;
        ::log::debug!("step {step} epoch {epoch} loss {total:.5} (ce {ce:.5}) lr {lr:.3e}");
        self.log.steps.push(StepRecord {
            step,
            epoch,
            ce,
            center,
            basis,
            total,
            lr,
            grad_norm,
        });
        Ok(())
    }

    fn epoch_mean(&self, epoch: usize) -> f64 {
        let xs: Vec<f64> = self.log.steps.iter().filter(|s| s.epoch == epoch).map(|s| s.total).collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    }
}

/// Train the pre-training network (convolutional trunk, global average
/// pooling, speaker softmax) with cross-entropy only.
pub fn pretrain_cnn<R: Real>(data: &TrainingData, model_cfg: &RawNetConfig, cfg: &TrainConfig) -> Result<TrainOutcome<R>> {
    cfg.validate()?;
    let model_cfg = check_model_config(model_cfg, data)?;
    let mut model = RawNet::<R>::build(&model_cfg, ModelKind::PretrainCnn)?;
    let mut opt = Amsgrad::<R>::new(cfg.optimizer());
    let mut lp = Loop {
        cfg,
        data,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        log: TrainLog::default(),
    };
    let len = model_cfg.input_len;
    let val = val_crops(&data.val, len)?;
    for epoch in 1..=cfg.epochs {
        for batch in lp.epoch_batches::<R>(len)? {
            let mut g = Graph::new();
            let x = g.constant(batch.waveforms);
            let out = model.forward_train(&mut g, x, None)?;
            let loss = cross_entropy(&mut g, out.logits, &batch.labels)?;
            g.backward(loss)?;
            let ce = g.value(loss).item().to_f64_lossless();
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate_grads(&g);
            let grad_norm = params.grad_norm();
            let lr = opt.current_lr();
            opt.step(params);
            lp.record_step(epoch, opt.state.step, lr, grad_norm, [ce, 0.0, 0.0, ce])?;
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let val_loss = if val.is_empty() { None } else { Some(eval_loss(&model, &val, cfg.batch_size)?) };
            let rec = EpochRecord {
                epoch,
                step: opt.state.step,
                train_loss: lp.epoch_mean(epoch),
                val_loss,
                val_eer: None,
            };
            ::log::info!("pretrain epoch {epoch}: train {:.4} val {:?}", rec.train_loss, rec.val_loss);
            lp.log.epochs.push(rec);
        }
    }
    Ok(TrainOutcome {
        model,
        log: lp.log,
        best_epoch: cfg.epochs,
        pre_emphasis: cfg.pre_emphasis,
    })
}

/// Train the full network with `L_CE + lambda L_C + L_BS` (or cross-entropy
/// alone under the `soft` profile), starting from `pretrained` when given.
/// Centers are updated once per optimizer step. The returned model is the
/// one with the lowest validation EER.
pub fn train_rawnet<R: Real>(
    data: &TrainingData,
    model_cfg: &RawNetConfig,
    cfg: &TrainConfig,
    pretrained: Option<&RawNet<R>>,
) -> Result<TrainOutcome<R>> {
    cfg.validate()?;
    let model_cfg = check_model_config(model_cfg, data)?;
    let mut model = RawNet::<R>::build(&model_cfg, ModelKind::RawNet)?;
    if let Some(cnn) = pretrained {
        transfer_pretrained(cnn, &mut model)?;
    }
    let mut bank = CenterBank::<R>::new(data.num_classes(), model_cfg.embedding_dim, cfg.center_alpha);
    let objective = cfg.objective();
    let mut opt = Amsgrad::<R>::new(cfg.optimizer());
    let mut lp = Loop {
        cfg,
        data,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        log: TrainLog::default(),
    };
    let len = model_cfg.input_len;
    let width = model.recurrent_width();
    let val = val_crops(&data.val, len)?;
    let mut best: Option<(RawNet<R>, usize)> = None;
    for epoch in 1..=cfg.epochs {
        for batch in lp.epoch_batches::<R>(len)? {
            let mask = dropout_mask::<R>(batch.len() * width, cfg.recurrent_dropout, &mut lp.rng);
            let mut g = Graph::new();
            let x = g.constant(batch.waveforms);
            let out = model.forward_train(&mut g, x, mask)?;
            let emb = out.embedding.expect("full network has an embedding layer");
            let terms = combined_loss(&mut g, out.logits, emb, &batch.labels, &bank, out.output_weight, &objective)?;
            g.backward(terms.total)?;
            let vals = [terms.cross_entropy, terms.center, terms.basis, terms.total].map(|v| g.value(v).item().to_f64_lossless());
            bank.update(g.value(emb), &batch.labels)?;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate_grads(&g);
            let grad_norm = params.grad_norm();
            let lr = opt.current_lr();
            opt.step(params);
            lp.record_step(epoch, opt.state.step, lr, grad_norm, vals)?;
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let val_loss = if val.is_empty() { None } else { Some(eval_loss(&model, &val, cfg.batch_size)?) };
            let rec = EpochRecord {
                epoch,
                step: opt.state.step,
                train_loss: lp.epoch_mean(epoch),
                val_loss,
                val_eer: validation_eer(&model, data)?,
            };
            ::log::info!(
                "train epoch {epoch}: train {:.4} val loss {:?} val EER {:?}",
                rec.train_loss,
                rec.val_loss,
                rec.val_eer
            );
            lp.log.epochs.push(rec);
            if lp.log.best_epoch() == Some(epoch) {
                best = Some((model.clone(), epoch));
            }
        }
    }
    let (model, best_epoch) = best.unwrap_or((model, cfg.epochs));
    Ok(TrainOutcome {
        model,
        log: lp.log,
        best_epoch,
        pre_emphasis: cfg.pre_emphasis,
    })
}
