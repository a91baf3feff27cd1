//! Model state and the composed forward/backward pass:
//! embeddings → prototype layer → (sparsified) similarity rows → LSTM → ŷ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{self, BackboneParams, ForwardCache, Mode};
use crate::embedding::{embed_document, EmbedderSpec, SentenceEmbedder};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::loss::{self, LossBreakdown, LossConfig};
use crate::optim::AdamState;
use crate::prototype::{layer_backward, similarity_matrix, PrototypeSet, SimilarityConfig, SimilarityMatrix};
use crate::text::Document;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub similarity: SimilarityConfig,
    pub loss: LossConfig,
    pub num_prototypes: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Dropout rate on the head input during training.
    pub dropout: f64,
    /// Class whose output is reported as a prototype's sentiment score.
    pub positive_class: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            similarity: SimilarityConfig::default(),
            loss: LossConfig::default(),
            num_prototypes: 200,
            hidden_size: 128,
            num_layers: 2,
            dropout: 0.5,
            positive_class: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        self.loss.validate()?;
        if self.num_prototypes < 2 {
            return Err(Error::Config("need at least 2 prototypes".into()));
        }
        if self.hidden_size == 0 || self.num_layers == 0 {
            return Err(Error::Config("hidden size and layer count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub projected: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedderSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub prototypes: PrototypeSet,
    pub backbone: BackboneParams,
    pub config: ModelConfig,
    pub meta: TrainingMeta,
    pub optimizer: Option<AdamState>,
}

impl ModelState {
    pub fn new(prototypes: PrototypeSet, backbone: BackboneParams, config: ModelConfig) -> Result<Self> {
        if prototypes.len() != backbone.input_size() {
            return Err(Error::Shape(format!(
                "{} prototypes but backbone input width {}",
                prototypes.len(),
                backbone.input_size()
            )));
        }
        Ok(Self {
            prototypes,
            backbone,
            config,
            meta: TrainingMeta::default(),
            optimizer: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.backbone.num_classes()
    }

    /// Trainable tensors: prototypes first, then the backbone in its fixed order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.prototypes.vectors];
        v.extend(self.backbone.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.prototypes.vectors];
        v.extend(self.backbone.tensors_mut());
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = vec!["prototypes".to_string()];
        v.extend(self.backbone.tensor_names());
        v
    }

    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|m| m.shape()).collect()
    }
}

/// Gradient of the total loss, shaped like the trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub prototypes: Matrix,
    pub backbone: BackboneParams,
}

impl Gradients {
    pub fn zeros_like(model: &ModelState) -> Self {
        Self {
            prototypes: Matrix::zeros(model.prototypes.len(), model.prototypes.dim()),
            backbone: model.backbone.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.prototypes];
        v.extend(self.backbone.tensors());
        v
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.prototypes.add_assign(&other.prototypes);
        self.backbone.add_assign(&other.backbone);
    }
}

/// Forward state for one document.
#[derive(Clone, Debug)]
pub struct DocumentPass {
    pub similarity: SimilarityMatrix,
    pub backbone: ForwardCache,
}

impl DocumentPass {
    pub fn y_hat(&self) -> &[f64] {
        &self.backbone.y_hat
    }
}

pub fn forward_document(model: &ModelState, embeddings: &Matrix, mode: Mode) -> Result<DocumentPass> {
    let cfg = &model.config.similarity;
    let similarity = similarity_matrix(embeddings, &model.prototypes.vectors, cfg)?;
    let backbone = backbone::forward(similarity.backbone_input(cfg), &model.backbone, mode)?;
    Ok(DocumentPass {
        similarity,
        backbone,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub y_hat: Vec<f64>,
    /// argmax of ŷ, lowest index on ties.
    pub class: usize,
    /// Nearest-prototype index per sentence, as fed to the backbone.
    pub trajectory: Vec<usize>,
}

pub fn predict_embedded(model: &ModelState, embeddings: &Matrix) -> Result<Prediction> {
    let pass = forward_document(model, embeddings, Mode::Eval)?;
    Ok(Prediction {
        class: argmax(pass.y_hat()),
        y_hat: pass.backbone.y_hat,
        trajectory: pass.similarity.argmax_indices,
    })
}

pub fn predict(doc: &Document, model: &ModelState, provider: &dyn SentenceEmbedder) -> Result<Prediction> {
    let embeddings = embed_document(doc, provider)?;
    predict_embedded(model, &embeddings)
}

/// One document of a mini-batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub embeddings: &'a Matrix,
    pub label: &'a [f64],
    /// Seed for this document's dropout mask; ignored in eval mode.
    pub dropout_seed: u64,
}

#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    pub loss: LossBreakdown,
    pub predictions: Vec<Vec<f64>>,
    pub grads: Option<Gradients>,
}

/// Total loss `acc + α·div + β·proto` over a batch, and optionally its
/// gradient with respect to every trainable tensor.
///
/// The accuracy term averages over `items`; the prototypicality term
/// averages over the rows of `proto_sentences`. Sentence embeddings are
/// inputs, so no gradient flows into them. Per-document work runs in
/// parallel and is reduced in item order, so results do not depend on the
/// thread count.
pub fn batch_objective(
    model: &ModelState,
    items: &[BatchItem<'_>],
    proto_sentences: &Matrix,
    training: bool,
    with_grad: bool,
) -> Result<ObjectiveOutput> {
    if items.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let cfg = &model.config;
    let metric = &*cfg.similarity.metric;
    let n = items.len();

    let per_doc: Vec<(Vec<f64>, Option<Gradients>)> = items
        .par_iter()
        .map(|item| {
            let mode = if training {
                Mode::Train {
                    dropout: cfg.dropout,
                    seed: item.dropout_seed,
                }
            } else {
                Mode::Eval
            };
            let pass = forward_document(model, item.embeddings, mode)?;
            if item.label.len() != pass.y_hat().len() {
                return Err(Error::Shape(format!(
                    "label width {} vs {} model outputs",
                    item.label.len(),
                    pass.y_hat().len()
                )));
            }
            if !with_grad {
                return Ok((pass.backbone.y_hat, None));
            }
            let d_yhat = loss::accuracy_loss_grad(pass.y_hat(), item.label, n);
            let bb = backbone::backward(&pass.backbone, &model.backbone, &d_yhat);
            let layer = layer_backward(
                &bb.input,
                &pass.similarity,
                item.embeddings,
                &model.prototypes.vectors,
                &cfg.similarity,
            );
            Ok((
                pass.backbone.y_hat,
                Some(Gradients {
                    prototypes: layer.prototypes,
                    backbone: bb.params,
                }),
            ))
        })
        .collect::<Result<_>>()?;

    let labels: Vec<&[f64]> = items.iter().map(|i| i.label).collect();
    let predictions: Vec<Vec<f64>> = per_doc.iter().map(|(p, _)| p.clone()).collect();
    let acc = loss::accuracy_loss(&predictions, &labels)?;

    let p = &model.prototypes.vectors;
    let (div, proto, grads) = if with_grad {
        let mut total = Gradients::zeros_like(model);
        for (_, g) in &per_doc {
            total.add_assign(g.as_ref().expect("gradients requested"));
        }
        let (div, mut g_div) = loss::diversity_loss_grad(p, &cfg.loss, metric)?;
        let (proto, mut g_proto) = loss::prototypicality_loss_grad(proto_sentences, p, metric)?;
        g_div.scale(cfg.loss.alpha);
        g_proto.scale(cfg.loss.beta);
        total.prototypes.add_assign(&g_div);
        total.prototypes.add_assign(&g_proto);
        (div, proto, Some(total))
    } else {
        (
            loss::diversity_loss(p, &cfg.loss, metric)?,
            loss::prototypicality_loss(proto_sentences, p, metric)?,
            None,
        )
    };

    Ok(ObjectiveOutput {
        loss: cfg.loss.combine(acc, div, proto),
        predictions,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::prototype::PrototypeSet;

    fn tiny_model(sparse: bool) -> ModelState {
        let protos = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let config = ModelConfig {
            num_prototypes: 3,
            hidden_size: 4,
            num_layers: 2,
            dropout: 0.0,
            similarity: SimilarityConfig {
                sparse,
                ..Default::default()
            },
            ..Default::default()
        };
        let backbone = BackboneParams::init(3, 4, 2, 2, 5).unwrap();
        ModelState::new(PrototypeSet::new(protos).unwrap(), backbone, config).unwrap()
    }

    #[test]
    fn sentences_on_prototypes_feed_exact_one_hot_rows() {
        let model = tiny_model(true);
        let e = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let pred = predict_embedded(&model, &e).unwrap();
        let one_hot = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let direct = backbone::forward(&one_hot, &model.backbone, Mode::Eval).unwrap();
        assert_eq!(pred.y_hat, direct.y_hat);
        assert_eq!(pred.trajectory, vec![1, 0, 2]);
    }

    #[test]
    fn predict_is_deterministic() {
        let model = tiny_model(true);
        let provider = HashEmbedder::new(3, 9);
        let doc = Document {
            source_id: "x".into(),
            sentences: vec!["good".into(), "bad day".into()],
            label: vec![0.0, 1.0],
        };
        assert_eq!(predict(&doc, &model, &provider).unwrap(), predict(&doc, &model, &provider).unwrap());
    }

    #[test]
    fn mismatched_prototype_count_rejected() {
        let protos = PrototypeSet::new(Matrix::zeros(3, 2)).unwrap();
        let backbone = BackboneParams::init(4, 2, 1, 2, 0).unwrap();
        assert!(ModelState::new(protos, backbone, ModelConfig::default()).is_err());
    }

    #[test]
    fn zero_weights_reduce_total_to_accuracy() {
        let mut model = tiny_model(true);
        model.config.loss.alpha = 0.0;
        model.config.loss.beta = 0.0;
        let e = Matrix::from_rows(&[vec![0.3, 0.2, 0.1]]).unwrap();
        let items = [BatchItem {
            embeddings: &e,
            label: &[1.0, 0.0],
            dropout_seed: 0,
        }];
        let out = batch_objective(&model, &items, &e, false, true).unwrap();
        assert_eq!(out.loss.total, out.loss.acc);
    }

    #[test]
    fn tensor_lists_line_up() {
        let model = tiny_model(false);
        let g = Gradients::zeros_like(&model);
        let shapes: Vec<_> = g.tensors().iter().map(|m| m.shape()).collect();
        assert_eq!(shapes, model.tensor_shapes());
        assert_eq!(model.tensor_names().len(), shapes.len());
    }
}
