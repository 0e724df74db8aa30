//! Embedding file: an RWNT container with one `[N, D]` tensor named
//! `embeddings`, and a CSV sidecar `<file>.index` listing
//! `row,utterance_id,speaker_id` in row order.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::SpeakerEmbedding;
use crate::tensor::{write_atomic, Checkpoint, DType, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingSet {
    pub items: Vec<SpeakerEmbedding>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    row: usize,
    utterance_id: String,
    speaker_id: Option<usize>,
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".index");
    PathBuf::from(s)
}

impl EmbeddingSet {
    pub fn new(items: Vec<SpeakerEmbedding>) -> Result<Self> {
        let mut index = HashMap::new();
        let dim = items.first().map_or(0, |e| e.vector.len());
        for (i, e) in items.iter().enumerate() {
            if e.vector.len() != dim {
                return Err(Error::dim(format!(
                    "embedding `{}` has dimension {}, expected {dim}",
                    e.utterance_id,
                    e.vector.len()
                )));
            }
            if index.insert(e.utterance_id.clone(), i).is_some() {
                return Err(Error::arg(format!("duplicate utterance `{}`", e.utterance_id)));
            }
        }
        Ok(Self { items, index })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.items.first().map_or(0, |e| e.vector.len())
    }

    pub fn get(&self, utterance_id: &str) -> Result<&SpeakerEmbedding> {
        self.index
            .get(utterance_id)
            .map(|&i| &self.items[i])
            .ok_or_else(|| Error::arg(format!("no embedding for utterance `{utterance_id}`")))
    }

    /// Writes `path` and its `.index` sidecar. Values are stored as f32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut ck = Checkpoint::new(DType::F32);
        ck.meta.insert("embeddings/count".into(), self.len().to_string());
        let flat: Vec<f64> = self.items.iter().flat_map(|e| e.vector.iter().copied()).collect();
        ck.insert("embeddings", &Tensor::new([self.len(), self.dim()], flat)?);
        ck.save(path)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for (row, e) in self.items.iter().enumerate() {
            w.serialize(IndexRow {
                row,
                utterance_id: e.utterance_id.clone(),
                speaker_id: e.speaker_id,
            })
            .map_err(|e| Error::format("index", e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format("index", e.to_string()))?;
        write_atomic(&index_path(path), &bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ck = Checkpoint::load(path)?;
        let t = ck.get::<f64>("embeddings")?;
        let idx = index_path(path);
        let mut r = csv::Reader::from_path(&idx).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&idx, io),
            other => Error::format(idx.display().to_string(), format!("{other:?}")),
        })?;
        let rows: Vec<IndexRow> = r
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(idx.display().to_string(), e.to_string()))?;
        let (n, d) = match *t.shape() {
            [n, d] => (n, d),
            ref s => return Err(Error::Checkpoint(format!("embeddings tensor has shape {s:?}"))),
        };
        if rows.len() != n {
            return Err(Error::format(
                idx.display().to_string(),
                format!("index lists {} rows, container holds {n}", rows.len()),
            ));
        }
        let items = rows
            .into_iter()
            .map(|r| {
                if r.row >= n {
                    return Err(Error::format(idx.display().to_string(), format!("row {} out of range", r.row)));
                }
                Ok(SpeakerEmbedding {
                    vector: t.data()[r.row * d..(r.row + 1) * d].to_vec(),
                    utterance_id: r.utterance_id,
                    speaker_id: r.speaker_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }
}
