//! Interpretable sequence classification over prototype trajectories.
//!
//! Each sentence of a document is matched to its nearest trainable
//! prototype; the resulting (sparsified) similarity rows drive an LSTM
//! classifier, and every prediction can be explained as the sequence of
//! prototypes it passed through. All gradients are derived by hand.

pub mod backbone;
pub mod clustering;
pub mod embedding;
pub mod error;
pub mod explain;
pub mod linalg;
pub mod loss;
pub mod metric;
pub mod model;
pub mod model_file;
pub mod optim;
pub mod prototype;
pub mod registry;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use embedding::{EmbedderSpec, SentenceEmbedder};
pub use error::{Error, Result};
pub use explain::{explain_document, render_report, Explanation, TrajectoryStep};
pub use linalg::Matrix;
pub use loss::{LossBreakdown, LossConfig};
pub use metric::{DistanceMetric, Metric};
pub use model::{predict, ModelConfig, ModelState, Prediction};
pub use model_file::{load_model, save_model};
pub use optim::{AdamConfig, AdamState};
pub use prototype::{PrototypeSet, SimilarityConfig};
pub use text::{load_dataset, Document, LabeledCorpus};
pub use trainer::{train, train_with_validation, TrainConfig, TrainOutcome};
