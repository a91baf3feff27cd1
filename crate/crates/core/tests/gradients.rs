//! Central finite differences of the total loss against the analytic
//! gradient, for every trainable tensor.

use prototraj::backbone::BackboneParams;
use prototraj::model::{batch_objective, BatchItem};
use prototraj::text::multi_hot;
use prototraj::{LossConfig, Matrix, Metric, ModelConfig, ModelState, PrototypeSet, SimilarityConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    model: ModelState,
    docs: Vec<Matrix>,
    labels: Vec<Vec<f64>>,
    sentences: Matrix,
}

fn instance(seed: u64, similarity: SimilarityConfig, dropout: f64) -> Instance {
    let (j, k, t, hs, c) = (6, 3, 4, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = |r: usize| Matrix::from_vec(r, j, (0..r * j).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let protos = gen(k);
    let docs: Vec<Matrix> = (0..3).map(|_| gen(t)).collect();
    let sentences = Matrix::from_rows(&docs.iter().flat_map(|d| d.iter_rows().map(<[f64]>::to_vec)).collect::<Vec<_>>()).unwrap();
    let config = ModelConfig {
        similarity,
        // α and β raised so the regularizer gradients are not lost in rounding.
        loss: LossConfig { alpha: 0.7, beta: 0.3, ..Default::default() },
        num_prototypes: k,
        hidden_size: hs,
        num_layers: 2,
        dropout,
        positive_class: 1,
    };
    let model = ModelState::new(
        PrototypeSet::new(protos).unwrap(),
        BackboneParams::init(k, hs, 2, c, seed ^ 0xabc).unwrap(),
        config,
    )
    .unwrap();
    let labels = (0..3).map(|i| multi_hot((seed as usize + i) % c, c)).collect();
    Instance { model, docs, labels, sentences }
}

fn max_rel_error(inst: &Instance, training: bool) -> (f64, String) {
    let items: Vec<BatchItem<'_>> = inst
        .docs
        .iter()
        .zip(&inst.labels)
        .enumerate()
        .map(|(i, (e, y))| BatchItem { embeddings: e, label: y, dropout_seed: 31 + i as u64 })
        .collect();
    let total = |m: &ModelState| batch_objective(m, &items, &inst.sentences, training, false).unwrap().loss.total;
    let grads = batch_objective(&inst.model, &items, &inst.sentences, training, true)
        .unwrap()
        .grads
        .unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|m| m.as_slice().to_vec()).collect();
    let names = inst.model.tensor_names();
    let h = 1e-6;
    let mut worst = (0.0, String::new());
    for (ti, name) in names.iter().enumerate() {
        for (i, &a) in analytic[ti].iter().enumerate() {
            let mut plus = inst.model.clone();
            plus.tensors_mut()[ti].as_mut_slice()[i] += h;
            let mut minus = inst.model.clone();
            minus.tensors_mut()[ti].as_mut_slice()[i] -= h;
            let num = (total(&plus) - total(&minus)) / (2.0 * h);
            let e = (a - num).abs() / a.abs().max(num.abs()).max(1e-5);
            if e > worst.0 {
                worst = (e, format!("{name}[{i}]: analytic {a} numeric {num}"));
            }
        }
    }
    worst
}

fn check(metric: &str, gamma: f64, sparse: bool, dropout: f64, training: bool) {
    for seed in 0..6u64 {
        let sim = SimilarityConfig { metric: Metric::by_name(metric).unwrap(), psi: 0.9, gamma, sparse };
        let inst = instance(seed, sim, dropout);
        let (e, at) = max_rel_error(&inst, training);
        assert!(e < 1e-4, "{metric} γ={gamma} sparse={sparse} seed {seed}: {e:.3e} at {at}");
    }
}

#[test]
fn euclidean_sparse() {
    check("euclidean", 1.0, true, 0.0, false);
    check("euclidean", 10.0, true, 0.0, false);
}

#[test]
fn euclidean_dense() {
    check("euclidean", 10.0, false, 0.0, false);
}

#[test]
fn cosine_and_squared_euclidean() {
    check("cosine", 10.0, true, 0.0, false);
    check("sqeuclidean", 1.0, true, 0.0, false);
}

#[test]
fn with_dropout_mask_in_training_mode() {
    check("euclidean", 10.0, true, 0.4, true);
}
