//! Binary model file.
//!
//! ```text
//! "PTMD"                 4 bytes
//! format version         u32 LE
//! manifest length        u64 LE
//! manifest               UTF-8 JSON
//! tensor data            f64 LE, row-major, in manifest order
//! ```
//!
//! The manifest carries configs, training metadata, prototype texts and
//! scores, and the name and shape of every tensor that follows. Writing is a
//! pure function of the model, so equal models give identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneParams;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ModelConfig, ModelState, TrainingMeta};
use crate::optim::{AdamConfig, AdamState};
use crate::prototype::PrototypeSet;

pub const MODEL_MAGIC: &[u8; 4] = b"PTMD";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerRecord {
    config: AdamConfig,
    step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    meta: TrainingMeta,
    input_dim: usize,
    num_classes: usize,
    prototype_texts: Option<Vec<String>>,
    sentiment_scores: Option<Vec<f64>>,
    optimizer: Option<OptimizerRecord>,
    tensors: Vec<TensorRecord>,
}

fn named_tensors(model: &ModelState) -> Vec<(String, &Matrix)> {
    let mut out: Vec<(String, &Matrix)> = model.tensor_names().into_iter().zip(model.tensors()).collect();
    if let Some(opt) = &model.optimizer {
        let names = model.tensor_names();
        for (n, m) in names.iter().zip(&opt.first_moment) {
            out.push((format!("adam.m.{n}"), m));
        }
        for (n, v) in names.iter().zip(&opt.second_moment) {
            out.push((format!("adam.v.{n}"), v));
        }
    }
    out
}

pub fn to_bytes(model: &ModelState) -> Result<Vec<u8>> {
    let tensors = named_tensors(model);
    let manifest = Manifest {
        format_version: MODEL_FORMAT_VERSION,
        config: model.config.clone(),
        meta: model.meta.clone(),
        input_dim: model.prototypes.dim(),
        num_classes: model.num_classes(),
        prototype_texts: model.prototypes.texts.clone(),
        sentiment_scores: model.prototypes.sentiment_scores.clone(),
        optimizer: model.optimizer.as_ref().map(|o| OptimizerRecord {
            config: o.config.clone(),
            step: o.step,
        }),
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorRecord {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let payload: usize = tensors.iter().map(|(_, m)| m.as_slice().len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + payload);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in &tensors {
        for x in m.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn matrix(&mut self, rec: &TensorRecord) -> Result<Matrix> {
        let n = rec
            .rows
            .checked_mul(rec.cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::ModelFormat(format!("tensor {} too large", rec.name)))?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Matrix::from_vec(rec.rows, rec.cols, data)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::ModelFormat("manifest too large".into()))?;
    let manifest: Manifest = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::ModelFormat(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(Error::ModelFormat("manifest version disagrees with header".into()));
    }

    manifest
        .config
        .validate()
        .map_err(|e| Error::ModelFormat(format!("stored config: {e}")))?;
    if manifest.num_classes == 0 || manifest.input_dim == 0 {
        return Err(Error::ModelFormat("zero classes or zero input width".into()));
    }
    let cfg = &manifest.config;
    let mut backbone = BackboneParams::zeros(cfg.num_prototypes, cfg.hidden_size, cfg.num_layers, manifest.num_classes);
    let mut prototypes = Matrix::zeros(cfg.num_prototypes, manifest.input_dim);
    let mut expected: Vec<(String, &mut Matrix)> = Vec::new();
    let names = {
        let mut v = vec!["prototypes".to_string()];
        v.extend(backbone.tensor_names());
        v
    };
    let mut slots: Vec<&mut Matrix> = vec![&mut prototypes];
    slots.extend(backbone.tensors_mut());
    for (n, m) in names.iter().cloned().zip(slots) {
        expected.push((n, m));
    }

    let with_opt = manifest.optimizer.is_some();
    let want = names.len() * if with_opt { 3 } else { 1 };
    if manifest.tensors.len() != want {
        return Err(Error::ModelFormat(format!(
            "expected {want} tensors, manifest lists {}",
            manifest.tensors.len()
        )));
    }

    let check = |rec: &TensorRecord, name: &str, shape: (usize, usize)| -> Result<()> {
        if rec.name != name || (rec.rows, rec.cols) != shape {
            return Err(Error::ModelFormat(format!(
                "tensor {} {}x{} where {name} {}x{} was expected",
                rec.name, rec.rows, rec.cols, shape.0, shape.1
            )));
        }
        Ok(())
    };

    let mut records = manifest.tensors.iter();
    for (name, slot) in expected {
        let rec = records.next().expect("count checked");
        check(rec, &name, slot.shape())?;
        *slot = r.matrix(rec)?;
    }
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(o) => {
            let shapes: Vec<(usize, usize)> = std::iter::once(prototypes.shape())
                .chain(backbone.tensors().iter().map(|m| m.shape()))
                .collect();
            let mut state = AdamState::new(o.config.clone(), &shapes);
            state.step = o.step;
            for (prefix, moments) in [("m", &mut state.first_moment), ("v", &mut state.second_moment)] {
                for (name, slot) in names.iter().zip(moments.iter_mut()) {
                    let rec = records.next().expect("count checked");
                    check(rec, &format!("adam.{prefix}.{name}"), slot.shape())?;
                    *slot = r.matrix(rec)?;
                }
            }
            Some(state)
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut set = PrototypeSet::new(prototypes).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if let Some(t) = &manifest.prototype_texts {
        if t.len() != set.len() {
            return Err(Error::ModelFormat("prototype text count mismatch".into()));
        }
    }
    if let Some(s) = &manifest.sentiment_scores {
        if s.len() != set.len() {
            return Err(Error::ModelFormat("sentiment score count mismatch".into()));
        }
    }
    set.texts = manifest.prototype_texts;
    set.sentiment_scores = manifest.sentiment_scores;
    let mut model = ModelState::new(set, backbone, manifest.config)?;
    model.meta = manifest.meta;
    model.optimizer = optimizer;
    Ok(model)
}

pub fn save_model(model: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
