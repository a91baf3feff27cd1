//! Prototype-trajectory explanations.
//!
//! Each sentence of a document is paired with the prototype the backbone
//! actually consumed for it, that prototype's text and sentiment score, and
//! the sentence-prototype similarity.

mod render;

use serde::{Deserialize, Serialize};

use crate::embedding::{embed_document, SentenceEmbedder};
use crate::error::{Error, Result};
use crate::linalg::argmax;
use crate::backbone::Mode;
use crate::model::{forward_document, ModelState};
use crate::text::Document;

pub use render::{registry, render_report, JsonRenderer, MarkdownRenderer, ReportRenderer, SvgRenderer};

pub const EXPLANATION_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub sentence: String,
    pub prototype_index: usize,
    pub prototype_text: String,
    /// Dense similarity between the sentence and its prototype, in (0, 1].
    pub similarity: f64,
    pub prototype_sentiment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub version: u32,
    pub doc_id: String,
    pub prediction: Vec<f64>,
    pub predicted_class: usize,
    pub steps: Vec<TrajectoryStep>,
}

/// Requires a projected model with sentiment scores.
pub fn explain_document(model: &ModelState, doc: &Document, provider: &dyn SentenceEmbedder) -> Result<Explanation> {
    let texts = model.prototypes.texts.as_ref().ok_or(Error::Unprojected)?;
    let scores = model.prototypes.sentiment_scores.as_ref().ok_or(Error::Unprojected)?;
    let embeddings = embed_document(doc, provider)?;
    // Same pass predict() runs, so the trajectory is the one the backbone saw.
    let pass = forward_document(model, &embeddings, Mode::Eval)?;
    let sim = &pass.similarity;
    let steps = doc
        .sentences
        .iter()
        .zip(&sim.argmax_indices)
        .enumerate()
        .map(|(t, (sentence, &k))| TrajectoryStep {
            t,
            sentence: sentence.clone(),
            prototype_index: k,
            prototype_text: texts[k].clone(),
            similarity: sim.dense.get(t, k),
            prototype_sentiment: scores[k],
        })
        .collect();
    Ok(Explanation {
        version: EXPLANATION_VERSION,
        doc_id: doc.source_id.clone(),
        predicted_class: argmax(pass.y_hat()),
        prediction: pass.backbone.y_hat,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneParams;
    use crate::embedding::HashEmbedder;
    use crate::linalg::Matrix;
    use crate::model::{predict, ModelConfig};
    use crate::prototype::PrototypeSet;

    fn model(provider: &HashEmbedder) -> ModelState {
        let texts = ["great fun", "awful mess", "plain day"];
        let rows: Vec<Vec<f64>> = texts.iter().map(|t| provider.lookup(t).unwrap()).collect();
        let mut set = PrototypeSet::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        set.texts = Some(texts.iter().map(|s| s.to_string()).collect());
        set.sentiment_scores = Some(vec![0.9, 0.1, 0.5]);
        let cfg = ModelConfig {
            num_prototypes: 3,
            hidden_size: 3,
            num_layers: 1,
            ..Default::default()
        };
        ModelState::new(set, BackboneParams::init(3, 3, 1, 2, 4).unwrap(), cfg).unwrap()
    }

    #[test]
    fn prototype_text_maps_to_itself() {
        let provider = HashEmbedder::new(16, 2);
        let m = model(&provider);
        let doc = Document::from_text("d", "awful mess. great fun! plain day", vec![0.0, 1.0]).unwrap();
        let exp = explain_document(&m, &doc, &provider).unwrap();
        assert_eq!(exp.steps.len(), 3);
        let ks: Vec<usize> = exp.steps.iter().map(|s| s.prototype_index).collect();
        assert_eq!(ks, vec![1, 0, 2]);
        assert!(exp.steps.iter().all(|s| s.similarity == 1.0));
        let p = predict(&doc, &m, &provider).unwrap();
        assert_eq!(p.trajectory, ks);
        assert_eq!(p.y_hat, exp.prediction);
        assert_eq!(p.class, exp.predicted_class);
    }

    #[test]
    fn unprojected_model_rejected() {
        let provider = HashEmbedder::new(16, 2);
        let mut m = model(&provider);
        m.prototypes.mark_moved();
        let doc = Document::from_text("d", "great fun", vec![0.0, 1.0]).unwrap();
        assert!(matches!(explain_document(&m, &doc, &provider), Err(Error::Unprojected)));
    }
}
