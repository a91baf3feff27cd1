use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use prototraj::embedding::{load_cache, write_cache, EmbedderSpec, SentenceEmbedder};
use prototraj::explain::{explain_document, registry as renderers};
use prototraj::model::{predict_embedded, EpochRecord};
use prototraj::synthetic::{generate, SynthSpec};
use prototraj::text::{multi_hot, write_jsonl};
use prototraj::trainer::{evaluate, train as train_model, train_with_validation, EmbeddedCorpus};
use prototraj::{load_dataset, load_model, save_model, Document, Error, LabeledCorpus, ModelState};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{require_path, RunConfig};
use crate::CliError;

pub const DEFAULT_CACHE: &str = "embeddings.ptec";
pub const UNCOVERED: &str = "uncovered.txt";
pub const METRICS: &str = "metrics.json";
pub const LOSS_HISTORY: &str = "loss_history.csv";
pub const EVAL_REPORT: &str = "eval.json";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const EXPLANATIONS_DIR: &str = "explanations";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn load(cfg: &RunConfig, path: &Path, num_classes: Option<usize>) -> Result<LabeledCorpus, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("dataset {} does not exist", path.display())));
    }
    let corpus = load_dataset(path, cfg.dataset_format(path)?, num_classes)?;
    if corpus.dropped > 0 {
        log::warn!("{}: dropped {} empty document(s)", path.display(), corpus.dropped);
    }
    Ok(corpus)
}

pub fn embed_cache(cfg: &RunConfig, datasets: &[PathBuf]) -> Result<(), CliError> {
    let paths: Vec<PathBuf> = if datasets.is_empty() {
        [&cfg.train_path, &cfg.val_path, &cfg.test_path]
            .into_iter()
            .flatten()
            .cloned()
            .collect()
    } else {
        datasets.to_vec()
    };
    if paths.is_empty() {
        return Err(CliError::Config("no dataset given and no dataset paths configured".into()));
    }

    let mut seen = HashSet::new();
    let mut sentences = Vec::new();
    for path in &paths {
        let corpus = load(cfg, path, cfg.num_classes)?;
        for s in corpus.sentences() {
            if seen.insert(s.to_owned()) {
                sentences.push(s.to_owned());
            }
        }
    }

    let spec = cfg.embedder_spec()?;
    let cache_path = cfg
        .cache_path
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(DEFAULT_CACHE));
    let uncovered: Vec<&String> = match spec.source.as_str() {
        "cache" => {
            let existing = if cache_path.exists() {
                Some(load_cache(&cache_path)?)
            } else {
                None
            };
            sentences
                .iter()
                .filter(|s| existing.as_ref().is_none_or(|c| !c.contains(s)))
                .collect()
        }
        _ => {
            let embedder = spec.build()?;
            let entries: Vec<(&str, Vec<f32>)> = sentences
                .iter()
                .map(|s| {
                    let v = embedder.lookup(s).ok_or_else(|| Error::CacheMiss(vec![s.clone()]))?;
                    Ok((s.as_str(), v.into_iter().map(|x| x as f32).collect()))
                })
                .collect::<prototraj::Result<_>>()?;
            write_cache(&cache_path, &entries)?;
            Vec::new()
        }
    };

    let mut listing = String::new();
    for s in &uncovered {
        listing.push_str(s);
        listing.push('\n');
    }
    write(&cfg.out_dir.join(UNCOVERED), listing)?;
    cfg.write_effective(&cfg.out_dir)?;
    println!(
        "{} distinct sentences, {} uncovered, cache {}",
        sentences.len(),
        uncovered.len(),
        cache_path.display()
    );
    Ok(())
}

pub fn synth(spec: &SynthSpec, output: &Path) -> Result<(), CliError> {
    let corpus = generate(spec)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_jsonl(output, &corpus)?;
    println!("{} documents written to {}", corpus.len(), output.display());
    Ok(())
}

#[derive(Serialize)]
struct EpochMetrics {
    epoch: usize,
    train_accuracy: f64,
    val_accuracy: Option<f64>,
    loss: f64,
    projected: bool,
}

#[derive(Serialize)]
struct TrainMetrics {
    epochs_run: usize,
    best_epoch: Option<usize>,
    validation_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    epochs: Vec<EpochMetrics>,
}

pub fn loss_history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,total,accuracy_term,diversity_term,prototypicality_term,train_accuracy,val_accuracy,projected\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            h.epoch,
            h.loss.total,
            h.loss.acc,
            h.loss.div,
            h.loss.proto,
            h.train_accuracy,
            h.val_accuracy.map_or(String::new(), |v| v.to_string()),
            h.projected
        );
    }
    s
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let spec = cfg.embedder_spec()?;
    let train_path = require_path(&cfg.train_path, "train_path")?;
    let corpus = load(cfg, train_path, cfg.num_classes)?;
    let c = Some(corpus.num_classes);
    let val = cfg.val_path.as_deref().map(|p| load(cfg, p, c)).transpose()?;
    let test = cfg.test_path.as_deref().map(|p| load(cfg, p, c)).transpose()?;
    let provider = spec.build()?;

    let outcome = match &val {
        Some(v) => train_with_validation(&corpus, Some(v), &*provider, &train_cfg, &model_cfg)?,
        None => train_model(&corpus, &*provider, &train_cfg, &model_cfg)?,
    };
    let mut model = outcome.model;
    model.meta.embedder = Some(spec);

    let test_accuracy = test
        .as_ref()
        .map(|t| evaluate(&model, t, &*provider).map(|r| r.accuracy))
        .transpose()?;
    let best = model.meta.best_epoch;
    let metrics = TrainMetrics {
        epochs_run: model.meta.epochs_run,
        best_epoch: best,
        validation_accuracy: best
            .and_then(|b| outcome.history.iter().find(|h| h.epoch == b))
            .and_then(|h| h.val_accuracy),
        test_accuracy,
        epochs: outcome
            .history
            .iter()
            .map(|h| EpochMetrics {
                epoch: h.epoch,
                train_accuracy: h.train_accuracy,
                val_accuracy: h.val_accuracy,
                loss: h.loss.total,
                projected: h.projected,
            })
            .collect(),
    };

    let model_path = cfg.model_file();
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_model(&model, &model_path)?;
    write(
        &cfg.out_dir.join(METRICS),
        serde_json::to_vec_pretty(&metrics).map_err(Error::from)?,
    )?;
    write(&cfg.out_dir.join(LOSS_HISTORY), loss_history_csv(&outcome.history))?;
    cfg.write_effective(&cfg.out_dir)?;
    println!(
        "trained {} epochs (best {}), model {}{}",
        model.meta.epochs_run,
        best.map_or("-".into(), |b| b.to_string()),
        model_path.display(),
        test_accuracy.map_or(String::new(), |a| format!(", test accuracy {a:.4}"))
    );
    Ok(())
}

fn load_model_and_provider(cfg: &RunConfig) -> Result<(ModelState, Arc<dyn SentenceEmbedder>), CliError> {
    let path = cfg.model_file();
    if !path.exists() {
        return Err(CliError::Config(format!("model {} does not exist", path.display())));
    }
    let model = load_model(&path)?;
    // The embedder the model was trained with, when recorded.
    let spec: EmbedderSpec = match &model.meta.embedder {
        Some(s) => s.clone(),
        None => cfg.embedder_spec()?,
    };
    let provider = spec.build()?;
    Ok((model, provider))
}

pub fn eval(cfg: &RunConfig, dataset: Option<PathBuf>) -> Result<(), CliError> {
    let (model, provider) = load_model_and_provider(cfg)?;
    let dataset = dataset.or_else(|| cfg.test_path.clone());
    let path = require_path(&dataset, "dataset")?;
    let corpus = load(cfg, path, Some(model.num_classes()))?;
    let report = evaluate(&model, &corpus, &*provider)?;
    write(
        &cfg.out_dir.join(EVAL_REPORT),
        serde_json::to_vec_pretty(&report).map_err(Error::from)?,
    )?;
    cfg.write_effective(&cfg.out_dir)?;
    println!("accuracy {:.4} on {} documents", report.accuracy, report.count);
    Ok(())
}

/// Documents to predict or explain.
pub enum Input {
    Dataset(Option<PathBuf>),
    Text(String),
}

impl Input {
    pub fn resolve(dataset: Option<PathBuf>, text: Option<String>) -> Self {
        match text {
            Some(t) => Input::Text(t),
            None => Input::Dataset(dataset),
        }
    }

    fn documents(self, cfg: &RunConfig, num_classes: usize) -> Result<Vec<Document>, CliError> {
        match self {
            Input::Text(t) => {
                let doc = Document::from_text("text", &t, multi_hot(0, num_classes))
                    .ok_or_else(|| Error::Invalid("text has no sentences".into()))?;
                Ok(vec![doc])
            }
            Input::Dataset(d) => {
                let d = d.or_else(|| cfg.test_path.clone());
                let path = require_path(&d, "dataset")?;
                Ok(load(cfg, path, Some(num_classes))?.documents)
            }
        }
    }
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    doc_id: &'a str,
    predicted_class: usize,
    prediction: &'a [f64],
    trajectory: &'a [usize],
}

pub fn predict(cfg: &RunConfig, input: Input) -> Result<(), CliError> {
    let (model, provider) = load_model_and_provider(cfg)?;
    let docs = input.documents(cfg, model.num_classes())?;
    let corpus = LabeledCorpus::new(docs, model.num_classes());
    let embedded = EmbeddedCorpus::new(&corpus, &*provider)?;
    let preds = embedded
        .docs
        .par_iter()
        .map(|e| predict_embedded(&model, e))
        .collect::<prototraj::Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (doc, p) in corpus.documents.iter().zip(&preds) {
        serde_json::to_writer(
            &mut out,
            &PredictionLine {
                doc_id: &doc.source_id,
                predicted_class: p.class,
                prediction: &p.y_hat,
                trajectory: &p.trajectory,
            },
        )
        .map_err(Error::from)?;
        out.push(b'\n');
    }
    write(&cfg.out_dir.join(PREDICTIONS), &out)?;
    cfg.write_effective(&cfg.out_dir)?;
    if preds.len() == 1 {
        print!("{}", String::from_utf8_lossy(&out));
    } else {
        println!("{} predictions written", preds.len());
    }
    Ok(())
}

/// Keeps `[A-Za-z0-9._-]`, maps everything else to `_`.
pub fn file_stem(doc_id: &str) -> String {
    let s: String = doc_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("doc{s}")
    } else {
        s
    }
}

pub fn explain(cfg: &RunConfig, input: Input, formats: &[String], limit: Option<usize>) -> Result<(), CliError> {
    let renderers = formats
        .iter()
        .map(|f| renderers().create(f, &()))
        .collect::<prototraj::Result<Vec<_>>>()?;
    let (model, provider) = load_model_and_provider(cfg)?;
    let mut docs = input.documents(cfg, model.num_classes())?;
    if let Some(n) = limit {
        docs.truncate(n);
    }
    let dir = cfg.out_dir.join(EXPLANATIONS_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let reports = docs
        .par_iter()
        .map(|doc| {
            let exp = explain_document(&model, doc, &*provider)?;
            Ok(renderers
                .iter()
                .map(|r| (format!("{}.{}", file_stem(&doc.source_id), r.extension()), r.render(&exp)))
                .collect::<Vec<_>>())
        })
        .collect::<prototraj::Result<Vec<_>>>()?;
    let mut written = 0;
    for (name, bytes) in reports.into_iter().flatten() {
        write(&dir.join(name), bytes)?;
        written += 1;
    }
    cfg.write_effective(&cfg.out_dir)?;
    println!("{written} report file(s) written to {}", dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("line12"), "line12");
        assert_eq!(file_stem("a/b c"), "a_b_c");
        assert_eq!(file_stem(".."), "doc..");
        assert_eq!(file_stem(""), "doc");
    }

    #[test]
    fn loss_csv_has_one_row_per_epoch() {
        let h = vec![EpochRecord { epoch: 1, ..Default::default() }, EpochRecord { epoch: 2, val_accuracy: Some(0.5), ..Default::default() }];
        let csv = loss_history_csv(&h);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().contains(",0.5,"));
    }
}
