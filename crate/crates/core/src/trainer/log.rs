use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::write_atomic;
use crate::{Error, Result};

/// One optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub ce: f64,
    pub center: f64,
    pub basis: f64,
    pub total: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// End-of-epoch validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_eer: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn to_csv<T: Serialize>(rows: &[T], what: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(what, e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::format(what, e.to_string()))
}

fn from_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), format!("{other:?}")),
    })?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path.display().to_string(), e.to_string())))
        .collect()
}

impl TrainLog {
    pub const STEPS_FILE: &'static str = "train_log.csv";
    pub const EPOCHS_FILE: &'static str = "val_log.csv";

    /// Write `train_log.csv` and `val_log.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(Self::STEPS_FILE), &to_csv(&self.steps, "train log")?)?;
        write_atomic(&dir.join(Self::EPOCHS_FILE), &to_csv(&self.epochs, "validation log")?)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Self {
            steps: from_csv(&dir.join(Self::STEPS_FILE))?,
            epochs: from_csv(&dir.join(Self::EPOCHS_FILE))?,
        })
    }

    /// Epoch with the lowest validation EER, ties broken by validation loss
    /// and then by the earlier epoch.
    pub fn best_epoch(&self) -> Option<usize> {
        self.epochs
            .iter()
            .filter(|e| e.val_eer.is_some())
            .min_by(|a, b| {
                a.val_eer
                    .unwrap()
                    .total_cmp(&b.val_eer.unwrap())
                    .then(a.val_loss.unwrap_or(f64::INFINITY).total_cmp(&b.val_loss.unwrap_or(f64::INFINITY)))
                    .then(a.epoch.cmp(&b.epoch))
            })
            .map(|e| e.epoch)
    }
}
