use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, StepRecord, TrainLog};
use crate::backend::{fit_codebook, BackendKind, BackendModel, DnnConfig, EmbeddingSet};
use crate::model::SpeakerEmbedding;
use crate::objectives::cross_entropy;
use crate::scoring::eer_from_scores;
use crate::tensor::{Amsgrad, AmsgradConfig, Graph, Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub leaky_slope: f64,
    pub codebook_k: usize,
    pub codebook_dim: usize,
    pub val_fraction: f64,
    /// Training embeddings per speaker that validation utterances are
    /// compared against.
    pub val_refs: usize,
}

impl Default for BackendTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 20,
            pairs_per_epoch: 1024,
            lr: 1e-3,
            lr_decay: 1e-4,
            weight_decay: 1e-4,
            seed: 0,
            hidden: 1024,
            layers: 4,
            leaky_slope: 0.3,
            codebook_k: 8,
            codebook_dim: 16,
            val_fraction: 0.1,
            val_refs: 3,
        }
    }
}

impl BackendTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return bad(format!("backend batch_size must be even and at least 2, got {}", self.batch_size));
        }
        if self.epochs == 0 || self.pairs_per_epoch < self.batch_size {
            return bad("backend epochs must be positive and pairs_per_epoch at least one batch".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("backend lr must be positive, lr_decay and weight_decay non-negative".into());
        }
        if self.hidden == 0 || self.codebook_k == 0 || self.codebook_dim == 0 {
            return bad("backend hidden, codebook_k and codebook_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("backend val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    pub fn dnn(&self) -> DnnConfig {
        DnnConfig {
            hidden: self.hidden,
            layers: self.layers,
            leaky_slope: self.leaky_slope,
            init_seed: self.seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BackendTrainOutcome<R> {
    pub model: BackendModel<R>,
    pub log: TrainLog,
    pub best_epoch: usize,
}

type Pair<'a> = (&'a [f64], &'a [f64], usize);

/// Same-speaker probability cross-entropy over labelled pairs.
fn pair_loss<R: Real>(model: &BackendModel<R>, pairs: &[Pair<'_>]) -> Result<(Graph<R>, crate::Var, f64)> {
    let feats = pairs.iter().map(|(e, t, _)| model.feature(e, t)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = pairs.iter().map(|p| p.2).collect();
    let width = feats[0].len();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new([feats.len(), width], feats.iter().flatten().map(|&v| R::lit(v)).collect())?);
    let logits = model.dnn.forward(&mut g, x)?;
    let loss = cross_entropy(&mut g, logits, &labels)?;
    let value = g.value(loss).item().to_f64_lossless();
    Ok((g, loss, value))
}

/// Train a back-end classifier on pairs drawn from `embeddings`, which must
/// carry speaker ids. Every batch holds equal numbers of same- and
/// different-speaker pairs. A validation split of each speaker's
/// utterances is scored against training utterances; the kept model has
/// the lowest validation EER.
pub fn train_backend<R: Real>(
    kind: BackendKind,
    embeddings: &EmbeddingSet,
    cfg: &BackendTrainConfig,
) -> Result<BackendTrainOutcome<R>> {
    cfg.validate()?;
    if !kind.needs_model() {
        return Err(Error::arg("the cosine back-end has nothing to train"));
    }
    let mut by_speaker: BTreeMap<usize, Vec<&SpeakerEmbedding>> = BTreeMap::new();
    for e in &embeddings.items {
        let s = e
            .speaker_id
            .ok_or_else(|| Error::arg(format!("embedding `{}` has no speaker id", e.utterance_id)))?;
        by_speaker.entry(s).or_default().push(e);
    }
    if by_speaker.len() < 2 {
        return Err(Error::Corpus(format!(
            "back-end training needs at least 2 speakers, got {}",
            by_speaker.len()
        )));
    }
    let (mut train, mut val): (Vec<Vec<&SpeakerEmbedding>>, Vec<&SpeakerEmbedding>) = (Vec::new(), Vec::new());
    for (_, mut utts) in by_speaker {
        utts.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        let n = utts.len();
        let hold = if cfg.val_fraction > 0.0 && n >= 3 {
            ((cfg.val_fraction * n as f64).round() as usize).clamp(1, n - 2)
        } else {
            0
        };
        val.extend(utts.drain(n - hold..));
        train.push(utts);
    }
    let multi: Vec<usize> = (0..train.len()).filter(|&s| train[s].len() >= 2).collect();
    if multi.is_empty() {
        return Err(Error::Corpus("no speaker has two training embeddings to form a same-speaker pair".into()));
    }

    let dim = embeddings.dim();
    let codebook = if kind == BackendKind::RbVector {
        let flat: Vec<Vec<f64>> = train.iter().flatten().map(|e| e.vector.clone()).collect();
        Some(fit_codebook(&flat, cfg.codebook_k.min(flat.len()), cfg.codebook_dim, cfg.seed)?)
    } else {
        None
    };
    let mut model = BackendModel::<R>::new(kind, dim, codebook, &cfg.dnn())?;

    // Validation trials: held-out utterances against the first few training
    // utterances of every speaker.
    let mut val_pairs: Vec<Pair<'_>> = Vec::new();
    for v in &val {
        for utts in &train {
            for r in utts.iter().take(cfg.val_refs.max(1)) {
                val_pairs.push((&r.vector, &v.vector, usize::from(r.speaker_id == v.speaker_id)));
            }
        }
    }
    let has_val = val_pairs.iter().any(|p| p.2 == 1) && val_pairs.iter().any(|p| p.2 == 0);

    let mut opt = Amsgrad::<R>::new(AmsgradConfig {
        lr: cfg.lr,
        decay: cfg.lr_decay,
        weight_decay: cfg.weight_decay,
        ..AmsgradConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let mut best: Option<(BackendModel<R>, usize)> = None;
    let half = cfg.batch_size / 2;
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        let steps = cfg.pairs_per_epoch / cfg.batch_size;
        for _ in 0..steps {
            let mut pairs: Vec<Pair<'_>> = Vec::with_capacity(cfg.batch_size);
            for _ in 0..half {
                let utts = &train[*multi.choose(&mut rng).unwrap()];
                let a = rng.random_range(0..utts.len());
                let b = (a + rng.random_range(1..utts.len())) % utts.len();
                pairs.push((&utts[a].vector, &utts[b].vector, 1));
            }
            for _ in 0..half {
                let s1 = rng.random_range(0..train.len());
                let s2 = (s1 + rng.random_range(1..train.len())) % train.len();
                let e = train[s1].choose(&mut rng).unwrap();
                let t = train[s2].choose(&mut rng).unwrap();
                pairs.push((&e.vector, &t.vector, 0));
            }
            let (mut g, loss, value) = pair_loss(&model, &pairs)?;
            g.backward(loss)?;
            let params = model.dnn.params_mut();
            params.zero_grad();
            params.accumulate_grads(&g);
            let grad_norm = params.grad_norm();
            if !value.is_finite() || !grad_norm.is_finite() {
                return Err(Error::arg(format!("back-end training diverged at step {}", opt.state.step + 1)));
            }
            let lr = opt.current_lr();
            opt.step(params);
            sum += value;
            log.steps.push(StepRecord {
                step: opt.state.step,
                epoch,
                ce: value,
                center: 0.0,
                basis: 0.0,
                total: value,
                lr,
                grad_norm,
            });
        }
        let (val_loss, val_eer) = if has_val {
            let mut total = 0.0;
            let mut same = Vec::new();
            let mut diff = Vec::new();
            for part in val_pairs.chunks(256) {
                total += pair_loss(&model, part)?.2 * part.len() as f64;
                let scores = model
                    .dnn
                    .probabilities(&part.iter().map(|(e, t, _)| model.feature(e, t)).collect::<Result<Vec<_>>>()?)?;
                for (p, s) in part.iter().zip(scores) {
                    if p.2 == 1 {
                        same.push(s);
                    } else {
                        diff.push(s);
                    }
                }
            }
            (Some(total / val_pairs.len() as f64), Some(eer_from_scores(&same, &diff)?.eer))
        } else {
            (None, None)
        };
        log.epochs.push(EpochRecord {
            epoch,
            step: opt.state.step,
            train_loss: sum / steps as f64,
            val_loss,
            val_eer,
        });
        ::log::info!("backend {kind} epoch {epoch}: train {:.4} val {val_loss:?} EER {val_eer:?}", sum / steps as f64);
        if log.best_epoch() == Some(epoch) {
            best = Some((model.clone(), epoch));
        }
    }
    let (model, best_epoch) = best.unwrap_or((model, cfg.epochs));
    Ok(BackendTrainOutcome {
        model,
        log,
        best_epoch,
    })
}
