//! Equal error rate, DET operating points and score files.
//!
//! A trial is accepted at threshold `t` when its score is `>= t`. The
//! sweep visits every distinct score and finally `+inf` (reject all):
//!
//! ```text
//! FAR(t) = #{different : score >= t} / #different
//! FRR(t) = #{same      : score <  t} / #same
//! ```
//!
//! `FAR - FRR` starts at 1 and ends at -1. The EER is read at the first
//! threshold where it is `<= 0`, linearly interpolated from the previous
//! threshold when it is strictly negative there.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::write_atomic;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub enrol: String,
    pub test: String,
    pub score: f64,
    /// 1 for same speaker, 0 for different; absent when unknown.
    pub label: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    /// Fraction in `[0, 1]`.
    pub eer: f64,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

fn split_scores(trials: &[ScoredTrial]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for t in trials {
        if !t.score.is_finite() {
            return Err(Error::arg(format!("non-finite score for trial {} / {}", t.enrol, t.test)));
        }
        match t.label {
            Some(1) => same.push(t.score),
            Some(0) => diff.push(t.score),
            Some(l) => return Err(Error::arg(format!("label must be 0 or 1, got {l}"))),
            None => return Err(Error::arg(format!("trial {} / {} has no label", t.enrol, t.test))),
        }
    }
    if same.is_empty() || diff.is_empty() {
        return Err(Error::arg(format!(
            "EER needs both same- and different-speaker trials, got {} same and {} different",
            same.len(),
            diff.len()
        )));
    }
    Ok((same, diff))
}

/// Operating points at every distinct score and at `+inf`, in increasing
/// threshold order; `far` is non-increasing and `frr` non-decreasing.
pub fn det_points_from(same: &[f64], diff: &[f64]) -> Vec<OperatingPoint> {
    let mut all: Vec<(f64, bool)> = same.iter().map(|&s| (s, true)).chain(diff.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ns, nd) = (same.len() as f64, diff.len() as f64);
    let (mut same_below, mut diff_below) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        points.push(OperatingPoint {
            threshold: t,
            far: (diff.len() - diff_below) as f64 / nd,
            frr: same_below as f64 / ns,
        });
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                same_below += 1;
            } else {
                diff_below += 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    points
}

pub fn det_points(trials: &[ScoredTrial]) -> Result<Vec<OperatingPoint>> {
    let (same, diff) = split_scores(trials)?;
    Ok(det_points_from(&same, &diff))
}

pub fn eer_from_scores(same: &[f64], diff: &[f64]) -> Result<Eer> {
    if same.is_empty() || diff.is_empty() {
        return Err(Error::arg("EER needs both same- and different-speaker scores"));
    }
    let pts = det_points_from(same, diff);
    let k = pts
        .iter()
        .position(|p| p.far - p.frr <= 0.0)
        .expect("the +inf point has FAR - FRR = -1");
    let cur = pts[k];
    let d_cur = cur.far - cur.frr;
    if d_cur == 0.0 || k == 0 {
        return Ok(Eer {
            eer: cur.far,
            threshold: cur.threshold,
        });
    }
    let prev = pts[k - 1];
    let d_prev = prev.far - prev.frr;
    let a = d_prev / (d_prev - d_cur);
    let threshold = if cur.threshold.is_finite() {
        prev.threshold + a * (cur.threshold - prev.threshold)
    } else {
        prev.threshold
    };
    Ok(Eer {
        eer: prev.far + a * (cur.far - prev.far),
        threshold,
    })
}

pub fn compute_eer(trials: &[ScoredTrial]) -> Result<Eer> {
    let (same, diff) = split_scores(trials)?;
    eer_from_scores(&same, &diff)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub eer: f64,
    pub threshold: f64,
    pub n_trials: usize,
    pub n_same: usize,
    pub n_different: usize,
}

impl Metrics {
    pub fn from_trials(trials: &[ScoredTrial]) -> Result<Self> {
        let (same, diff) = split_scores(trials)?;
        let e = eer_from_scores(&same, &diff)?;
        Ok(Self {
            eer: e.eer,
            threshold: e.threshold,
            n_trials: trials.len(),
            n_same: same.len(),
            n_different: diff.len(),
        })
    }

    /// `EER%  threshold  n_trials`
    pub fn summary_line(&self) -> String {
        format!("{:.4}%  {:.6}  {}", self.eer * 100.0, self.threshold, self.n_trials)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "EER:           {:.4} %", self.eer * 100.0).unwrap();
        writeln!(s, "threshold:     {:.6}", self.threshold).unwrap();
        writeln!(s, "trials:        {}", self.n_trials).unwrap();
        writeln!(s, "  same:        {}", self.n_same).unwrap();
        writeln!(s, "  different:   {}", self.n_different).unwrap();
        s
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "eer = {}\neer_percent = {}\nthreshold = {}\nn_trials = {}\nn_same = {}\nn_different = {}\n",
            self.eer,
            self.eer * 100.0,
            self.threshold,
            self.n_trials,
            self.n_same,
            self.n_different
        )
    }
}

/// `enrol,test,score,label` with an empty label column when unknown.
pub fn write_scores(path: impl AsRef<Path>, trials: &[ScoredTrial]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in trials {
        w.serialize(t).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoredTrial>> {
    let path = path.as_ref();
    let r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), format!("{other:?}")),
    })?;
    scores_from(r, &path.display().to_string())
}

/// Score rows from CSV text with the `enrol,test,score,label` header.
pub fn parse_scores(text: &str) -> Result<Vec<ScoredTrial>> {
    scores_from(csv::Reader::from_reader(text.as_bytes()), "scores")
}

fn scores_from<R: std::io::Read>(mut r: csv::Reader<R>, source: &str) -> Result<Vec<ScoredTrial>> {
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(source.to_string(), e.to_string())))
        .collect()
}

/// Score every trial with `score`, looking each utterance's embedding up
/// through `embed`. With `cache`, each utterance is embedded once.
pub fn score_pairs<E, S>(trials: &[crate::audio::Trial], mut embed: E, score: S, cache: bool) -> Result<Vec<ScoredTrial>>
where
    E: FnMut(&str) -> Result<Vec<f64>>,
    S: Fn(&[f64], &[f64]) -> Result<f64>,
{
    let mut seen: HashMap<String, Vec<f64>> = HashMap::new();
    let mut get = |id: &str| -> Result<Vec<f64>> {
        if cache {
            if let Some(v) = seen.get(id) {
                return Ok(v.clone());
            }
        }
        let v = embed(id)?;
        if cache {
            seen.insert(id.to_string(), v.clone());
        }
        Ok(v)
    };
    trials
        .iter()
        .map(|t| {
            let e = get(&t.enrol_utt)?;
            let x = get(&t.test_utt)?;
            Ok(ScoredTrial {
                enrol: t.enrol_utt.clone(),
                test: t.test_utt.clone(),
                score: score(&e, &x)?,
                label: Some(t.label),
            })
        })
        .collect()
}
