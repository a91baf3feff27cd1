//! End-to-end training.
//!
//! Prototypes start at k-medoids centers of the training sentences, all
//! tensors are updated with ADAM on mini-batches, prototypes are projected
//! onto their nearest training sentence every `projection_period` epochs and
//! once at the end, and each projected prototype is finally scored by
//! running it through the model as a one-sentence document.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneParams;
use crate::clustering::{kmedoids_weighted, subsample_indices};
use crate::embedding::{embed_sentences, SentenceEmbedder};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::loss::LossBreakdown;
use crate::metric::DistanceMetric;
use crate::model::{
    batch_objective, predict_embedded, BatchItem, EpochRecord, ModelConfig, ModelState,
};
use crate::optim::{AdamConfig, AdamState};
use crate::prototype::PrototypeSet;
use crate::text::{Document, LabeledCorpus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub projection_period: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of the training corpus held out for validation when no
    /// separate validation corpus is given.
    pub validation_fraction: f64,
    pub adam: AdamConfig,
    pub kmedoids_max_iter: usize,
    /// Distinct sentences clustered at most; larger sets are subsampled.
    pub kmedoids_cap: usize,
    /// Sentences sampled per batch for the prototypicality term.
    pub proto_sample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            projection_period: 10,
            seed: 0,
            patience: 10,
            validation_fraction: 0.1,
            adam: AdamConfig::default(),
            kmedoids_max_iter: 50,
            kmedoids_cap: 20_000,
            proto_sample: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.projection_period == 0 || self.kmedoids_max_iter == 0 {
            return Err(Error::Config(
                "batch_size, projection_period and kmedoids_max_iter must be >= 1".into(),
            ));
        }
        if self.proto_sample == 0 || self.kmedoids_cap == 0 {
            return Err(Error::Config("proto_sample and kmedoids_cap must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// A corpus with every sentence embedded once.
#[derive(Clone, Debug)]
pub struct EmbeddedCorpus {
    /// Per-document T×J embeddings.
    pub docs: Vec<Matrix>,
    pub labels: Vec<Vec<f64>>,
    /// Distinct sentences in first-occurrence order.
    pub unique_texts: Vec<String>,
    /// Embedding of each distinct sentence.
    pub unique: Matrix,
    /// Distinct-sentence index of every sentence occurrence, in corpus order.
    pub occurrences: Vec<usize>,
}

impl EmbeddedCorpus {
    pub fn new(corpus: &LabeledCorpus, provider: &dyn SentenceEmbedder) -> Result<Self> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut unique_texts = Vec::new();
        let mut occurrences = Vec::with_capacity(corpus.total_sentences);
        for s in corpus.sentences() {
            let next = unique_texts.len();
            let id = *index.entry(s).or_insert_with(|| {
                unique_texts.push(s.to_owned());
                next
            });
            occurrences.push(id);
        }
        let unique = embed_sentences(unique_texts.iter().map(String::as_str), provider)?;

        let mut docs = Vec::with_capacity(corpus.len());
        let mut cursor = 0;
        for doc in &corpus.documents {
            let mut m = Matrix::zeros(doc.len(), unique.cols());
            for t in 0..doc.len() {
                m.row_mut(t).copy_from_slice(unique.row(occurrences[cursor + t]));
            }
            cursor += doc.len();
            docs.push(m);
        }
        Ok(Self {
            docs,
            labels: corpus.documents.iter().map(|d| d.label.clone()).collect(),
            unique_texts,
            unique,
            occurrences,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Occurrence count of each distinct sentence.
    pub fn counts(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.unique.rows()];
        for &o in &self.occurrences {
            c[o] += 1.0;
        }
        c
    }

    /// Embeddings of every sentence occurrence, S×J.
    pub fn all_sentences(&self) -> Matrix {
        self.rows_for(&self.occurrences)
    }

    fn rows_for(&self, ids: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(ids.len(), self.unique.cols());
        for (r, &id) in ids.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.unique.row(id));
        }
        m
    }
}

/// k-medoids over the training sentences; prototypes start at the medoids.
pub fn init_prototypes(
    corpus: &LabeledCorpus,
    provider: &dyn SentenceEmbedder,
    k: usize,
    metric: &dyn DistanceMetric,
    seed: u64,
    max_iter: usize,
    cap: usize,
) -> Result<PrototypeSet> {
    let embedded = EmbeddedCorpus::new(corpus, provider)?;
    init_prototypes_embedded(&embedded, k, metric, seed, max_iter, cap)
}

/// Distinct sentences are clustered with their occurrence counts as weights,
/// which gives the same costs as clustering every occurrence.
pub fn init_prototypes_embedded(
    corpus: &EmbeddedCorpus,
    k: usize,
    metric: &dyn DistanceMetric,
    seed: u64,
    max_iter: usize,
    cap: usize,
) -> Result<PrototypeSet> {
    let total = corpus.occurrences.len();
    if k > total {
        return Err(Error::Invalid(format!(
            "{k} prototypes requested but the corpus has only {total} sentences"
        )));
    }
    let distinct = corpus.unique.rows();
    if k > distinct {
        return Err(Error::Invalid(format!(
            "{k} prototypes requested but the corpus has only {distinct} distinct sentences"
        )));
    }
    let picked = subsample_indices(distinct, cap.max(k), seed);
    let points = corpus.rows_for(&picked);
    let counts = corpus.counts();
    let weights: Vec<f64> = picked.iter().map(|&i| counts[i]).collect();
    let result = kmedoids_weighted(&points, &weights, k, metric, seed, max_iter)?;
    log::debug!(
        "k-medoids: {} points, cost {:.6} after {} iterations",
        points.rows(),
        result.total_cost,
        result.iterations
    );

    let sources: Vec<usize> = result.medoid_indices.iter().map(|&m| picked[m]).collect();
    let mut set = PrototypeSet::new(corpus.rows_for(&sources))?;
    set.texts = Some(sources.iter().map(|&i| corpus.unique_texts[i].clone()).collect());
    Ok(set)
}

/// Replaces each prototype by its nearest training sentence (lowest corpus
/// position on ties) and records that sentence as its text.
pub fn project_prototypes(
    model: &mut ModelState,
    corpus: &LabeledCorpus,
    provider: &dyn SentenceEmbedder,
) -> Result<()> {
    let embedded = EmbeddedCorpus::new(corpus, provider)?;
    project_prototypes_embedded(model, &embedded)
}

pub fn project_prototypes_embedded(model: &mut ModelState, corpus: &EmbeddedCorpus) -> Result<()> {
    if corpus.unique.rows() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let metric = &*model.config.similarity.metric;
    let protos = &model.prototypes.vectors;
    // First occurrences keep corpus order, so the first minimum is the
    // lowest-position sentence.
    let nearest: Vec<usize> = (0..protos.rows())
        .into_par_iter()
        .map(|k| {
            let mut best = (0, f64::INFINITY);
            for i in 0..corpus.unique.rows() {
                let d = metric.distance(corpus.unique.row(i), protos.row(k))?;
                if d < best.1 {
                    best = (i, d);
                }
            }
            Ok(best.0)
        })
        .collect::<Result<_>>()?;

    for (k, &i) in nearest.iter().enumerate() {
        model
            .prototypes
            .vectors
            .row_mut(k)
            .copy_from_slice(corpus.unique.row(i));
    }
    model.prototypes.texts = Some(nearest.iter().map(|&i| corpus.unique_texts[i].clone()).collect());
    model.prototypes.sentiment_scores = None;
    Ok(())
}

/// Positive-class output for each prototype fed alone as a one-sentence document.
pub fn score_prototype_sentiments(
    model: &ModelState,
    provider: &dyn SentenceEmbedder,
) -> Result<Vec<f64>> {
    let texts = model.prototypes.texts.as_ref().ok_or(Error::Unprojected)?;
    let class = model.config.positive_class;
    if class >= model.num_classes() {
        return Err(Error::Config(format!(
            "positive class {class} out of range for {} classes",
            model.num_classes()
        )));
    }
    texts
        .iter()
        .map(|text| {
            let e = embed_sentences([text.as_str()], provider)?;
            Ok(predict_embedded(model, &e)?.y_hat[class])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

pub fn evaluate_embedded(model: &ModelState, corpus: &EmbeddedCorpus) -> Result<EvalReport> {
    let c = model.num_classes();
    let predicted: Vec<usize> = corpus
        .docs
        .par_iter()
        .map(|e| predict_embedded(model, e).map(|p| p.class))
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0; c]; c];
    let mut correct = 0;
    for (label, &p) in corpus.labels.iter().zip(&predicted) {
        let truth = label.iter().position(|&v| v > 0.5).unwrap_or(0);
        if truth >= c {
            return Err(Error::Shape(format!("label class {truth} >= model classes {c}")));
        }
        confusion[truth][p] += 1;
        if truth == p {
            correct += 1;
        }
    }
    let count = predicted.len();
    Ok(EvalReport {
        accuracy: if count == 0 { 0.0 } else { correct as f64 / count as f64 },
        confusion,
        count,
    })
}

pub fn evaluate(
    model: &ModelState,
    corpus: &LabeledCorpus,
    provider: &dyn SentenceEmbedder,
) -> Result<EvalReport> {
    evaluate_embedded(model, &EmbeddedCorpus::new(corpus, provider)?)
}

/// Seeded split of a corpus into (train, validation), each keeping corpus order.
pub fn split_validation(corpus: &LabeledCorpus, fraction: f64, seed: u64) -> (LabeledCorpus, Option<LabeledCorpus>) {
    let n = corpus.len();
    let n_val = ((n as f64) * fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    if n_val == 0 {
        return (corpus.clone(), None);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from_be_bytes(*b"\0\0\0\0\0val")])));
    let mut val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |idx: &[usize]| -> Vec<Document> { idx.iter().map(|&i| corpus.documents[i].clone()).collect() };
    (
        LabeledCorpus::new(pick(&train_idx), corpus.num_classes),
        Some(LabeledCorpus::new(pick(&val_idx), corpus.num_classes)),
    )
}

/// Mixes `parts` into `seed` (splitmix64 finalizer per part).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |acc, &p| {
        let mut z = acc ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub history: Vec<EpochRecord>,
}

/// Trains with a validation split carved from `corpus`.
pub fn train(
    corpus: &LabeledCorpus,
    provider: &dyn SentenceEmbedder,
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<TrainOutcome> {
    let (train_part, val_part) = split_validation(corpus, train_cfg.validation_fraction, train_cfg.seed);
    train_with_validation(&train_part, val_part.as_ref(), provider, train_cfg, model_cfg)
}

/// Trains on `corpus`, early-stopping on `validation` when given.
///
/// Checkpoint candidates are the post-projection states (every
/// `projection_period` epochs and after the last epoch). The returned model
/// is the candidate with the best validation accuracy, later ones winning
/// ties, so it is always projected.
pub fn train_with_validation(
    corpus: &LabeledCorpus,
    validation: Option<&LabeledCorpus>,
    provider: &dyn SentenceEmbedder,
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let seed = train_cfg.seed;
    let data = EmbeddedCorpus::new(corpus, provider)?;
    let val = validation.map(|v| EmbeddedCorpus::new(v, provider)).transpose()?;
    let metric = &*model_cfg.similarity.metric;

    let prototypes = init_prototypes_embedded(
        &data,
        model_cfg.num_prototypes,
        metric,
        derive_seed(seed, &[1]),
        train_cfg.kmedoids_max_iter,
        train_cfg.kmedoids_cap,
    )?;
    let backbone = BackboneParams::init(
        model_cfg.num_prototypes,
        model_cfg.hidden_size,
        model_cfg.num_layers,
        corpus.num_classes,
        derive_seed(seed, &[2]),
    )?;
    let mut model = ModelState::new(prototypes, backbone, model_cfg.clone())?;
    model.meta.seed = seed;
    let mut adam = AdamState::new(train_cfg.adam.clone(), &model.tensor_shapes());

    let all_sentences = data.all_sentences();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(f64, ModelState)> = None;
    let mut best_val_any = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut epochs_run = 0;

    let val_accuracy = |m: &ModelState| -> Result<Option<f64>> {
        val.as_ref().map(|v| evaluate_embedded(m, v).map(|r| r.accuracy)).transpose()
    };

    for epoch in 1..=train_cfg.epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let mut batches = 0usize;
        let mut correct = 0usize;

        for (b, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            let items: Vec<BatchItem<'_>> = batch
                .iter()
                .map(|&i| BatchItem {
                    embeddings: &data.docs[i],
                    label: &data.labels[i],
                    dropout_seed: derive_seed(seed, &[4, epoch as u64, i as u64]),
                })
                .collect();
            let sampled;
            let proto_sentences = if data.occurrences.len() <= train_cfg.proto_sample {
                &all_sentences
            } else {
                let ids: Vec<usize> = (0..train_cfg.proto_sample)
                    .map(|_| data.occurrences[rng.gen_range(0..data.occurrences.len())])
                    .collect();
                sampled = data.rows_for(&ids);
                &sampled
            };

            let out = batch_objective(&model, &items, proto_sentences, true, true)?;
            if let Some(term) = out.loss.non_finite_term() {
                return Err(Error::NonFinite {
                    term,
                    epoch,
                    batch: b,
                });
            }
            let grads = out.grads.expect("gradients requested");
            adam.update(model.tensors_mut(), grads.tensors())?;
            model.prototypes.mark_moved();

            for (pred, item) in out.predictions.iter().zip(&items) {
                if argmax(pred) == argmax(item.label) {
                    correct += 1;
                }
            }
            sums.acc += out.loss.acc;
            sums.div += out.loss.div;
            sums.proto += out.loss.proto;
            sums.total += out.loss.total;
            batches += 1;
        }

        let is_last = epoch == train_cfg.epochs;
        let projected = epoch % train_cfg.projection_period == 0 || is_last;
        if projected {
            project_prototypes_embedded(&mut model, &data)?;
        }
        let val_acc = val_accuracy(&model)?;
        let nb = batches.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            loss: LossBreakdown {
                acc: sums.acc / nb,
                div: sums.div / nb,
                proto: sums.proto / nb,
                total: sums.total / nb,
            },
            train_accuracy: correct as f64 / data.len() as f64,
            val_accuracy: val_acc,
            projected,
        });
        log::info!(
            "epoch {epoch}: loss {:.6} train acc {:.4} val acc {}",
            sums.total / nb,
            correct as f64 / data.len() as f64,
            val_acc.map_or("-".to_string(), |v| format!("{v:.4}"))
        );

        if let Some(v) = val_acc {
            if projected && best.as_ref().is_none_or(|(b, _)| v >= *b) {
                let mut snapshot = model.clone();
                snapshot.optimizer = Some(adam.clone());
                snapshot.meta.best_epoch = Some(epoch);
                best = Some((v, snapshot));
            }
            if v > best_val_any {
                best_val_any = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= train_cfg.patience && !is_last {
                    log::info!("early stop after epoch {epoch}");
                    if !projected {
                        project_prototypes_embedded(&mut model, &data)?;
                        let v = val_accuracy(&model)?.expect("validation present");
                        if let Some(last) = history.last_mut() {
                            last.projected = true;
                            last.val_accuracy = Some(v);
                        }
                        if best.as_ref().is_none_or(|(b, _)| v >= *b) {
                            let mut snapshot = model.clone();
                            snapshot.optimizer = Some(adam.clone());
                            snapshot.meta.best_epoch = Some(epoch);
                            best = Some((v, snapshot));
                        }
                    }
                    break;
                }
            }
        }
    }

    let mut model = match best {
        Some((_, snapshot)) => snapshot,
        None => {
            if train_cfg.epochs == 0 {
                project_prototypes_embedded(&mut model, &data)?;
            }
            model.optimizer = Some(adam);
            model.meta.best_epoch = Some(epochs_run);
            model
        }
    };
    model.meta.epochs_run = epochs_run;
    model.meta.history = history.clone();
    let scores = score_prototype_sentiments(&model, provider)?;
    model.prototypes.sentiment_scores = Some(scores);
    Ok(TrainOutcome { model, history })
}
