//! Prototype layer: sentence-to-prototype proximities and the sparsity
//! transformation that reduces each row to (approximately) its maximum.
//!
//! Proximity is `s = exp(-d(e, p) / ψ²)`. The sparse row is
//! `w ⊙ s` with `w = softmax(γ·s)`, which for large γ keeps only the row
//! maximum at its dense value. At γ around 1e6 the selection weights are
//! numerically one-hot, so their gradient vanishes and only the selected
//! entry passes gradient back to its prototype.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::metric::Metric;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub metric: Metric,
    /// Kernel width ψ.
    pub psi: f64,
    /// Softmax sharpness γ of the selection weights.
    pub gamma: f64,
    /// Feed the sparsified rows (true) or the dense rows (false) to the backbone.
    pub sparse: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            metric: Metric::euclidean(),
            psi: 1.0,
            gamma: 1e6,
            sparse: true,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.psi > 0.0 && self.psi.is_finite()) {
            return Err(Error::Config(format!("psi must be positive, got {}", self.psi)));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    /// K×J, row k is prototype k.
    pub vectors: Matrix,
    /// Source sentence of each prototype; set only while every vector equals
    /// the embedding of its text (after initialization or projection).
    pub texts: Option<Vec<String>>,
    pub sentiment_scores: Option<Vec<f64>>,
}

impl PrototypeSet {
    pub fn new(vectors: Matrix) -> Result<Self> {
        if vectors.rows() < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 prototypes, got {}",
                vectors.rows()
            )));
        }
        if !vectors.is_finite() {
            return Err(Error::Invalid("prototype vectors must be finite".into()));
        }
        Ok(Self {
            vectors,
            texts: None,
            sentiment_scores: None,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Drops texts and scores after the vectors moved off their sentences.
    pub fn mark_moved(&mut self) {
        self.texts = None;
        self.sentiment_scores = None;
    }
}

/// Forward output of the prototype layer for one document, kept for backward.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    /// T×K distances.
    pub distances: Matrix,
    /// T×K proximities in (0, 1].
    pub dense: Matrix,
    /// T×K selection weights `softmax(γ·dense_row)`.
    pub selection: Matrix,
    /// T×K `selection ⊙ dense`.
    pub sparse: Matrix,
    /// Per-row argmax of `dense`, lowest index on ties.
    pub argmax_indices: Vec<usize>,
}

impl SimilarityMatrix {
    /// The rows the backbone consumes under `cfg`.
    pub fn backbone_input(&self, cfg: &SimilarityConfig) -> &Matrix {
        if cfg.sparse {
            &self.sparse
        } else {
            &self.dense
        }
    }
}

pub fn similarity_from_distance(d: f64, psi: f64) -> f64 {
    (-d / (psi * psi)).exp()
}

pub fn similarity(e: &[f64], p: &[f64], cfg: &SimilarityConfig) -> Result<f64> {
    Ok(similarity_from_distance(cfg.metric.distance(e, p)?, cfg.psi))
}

/// Row-wise `softmax(γ·row)` with max subtraction.
pub fn selection_weights(dense: &Matrix, gamma: f64) -> Matrix {
    let mut w = Matrix::zeros(dense.rows(), dense.cols());
    for t in 0..dense.rows() {
        let row = dense.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = w.row_mut(t);
        let mut z = 0.0;
        for (o, &s) in out.iter_mut().zip(row) {
            *o = (gamma * (s - max)).exp();
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }
    w
}

/// Sparsity transformation: `sparse[t][k] = softmax(γ·dense[t])[k] · dense[t][k]`.
pub fn sparsify(dense: &Matrix, gamma: f64) -> Matrix {
    let mut out = selection_weights(dense, gamma);
    for (o, s) in out.as_mut_slice().iter_mut().zip(dense.as_slice()) {
        *o *= s;
    }
    out
}

pub fn similarity_matrix(
    embeddings: &Matrix,
    prototypes: &Matrix,
    cfg: &SimilarityConfig,
) -> Result<SimilarityMatrix> {
    if embeddings.cols() != prototypes.cols() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs prototype dim {}",
            embeddings.cols(),
            prototypes.cols()
        )));
    }
    let (t_len, k_len) = (embeddings.rows(), prototypes.rows());
    let mut distances = Matrix::zeros(t_len, k_len);
    let mut dense = Matrix::zeros(t_len, k_len);
    for t in 0..t_len {
        let e = embeddings.row(t);
        for k in 0..k_len {
            let d = cfg.metric.distance(e, prototypes.row(k))?;
            distances.set(t, k, d);
            dense.set(t, k, similarity_from_distance(d, cfg.psi));
        }
    }
    let selection = selection_weights(&dense, cfg.gamma);
    let mut sparse = selection.clone();
    for (o, s) in sparse.as_mut_slice().iter_mut().zip(dense.as_slice()) {
        *o *= s;
    }
    let argmax_indices = dense.iter_rows().map(argmax).collect();
    Ok(SimilarityMatrix {
        distances,
        dense,
        selection,
        sparse,
        argmax_indices,
    })
}

/// Gradients of the prototype layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub embeddings: Matrix,
    pub prototypes: Matrix,
}

/// Backpropagates `upstream` (gradient on the backbone input rows) to the
/// embeddings and prototypes.
pub fn layer_backward(
    upstream: &Matrix,
    forward: &SimilarityMatrix,
    embeddings: &Matrix,
    prototypes: &Matrix,
    cfg: &SimilarityConfig,
) -> LayerGrads {
    let (t_len, k_len) = forward.dense.shape();
    debug_assert_eq!(upstream.shape(), (t_len, k_len));
    let mut grads = LayerGrads {
        embeddings: Matrix::zeros(t_len, embeddings.cols()),
        prototypes: Matrix::zeros(k_len, prototypes.cols()),
    };
    let inv_psi2 = 1.0 / (cfg.psi * cfg.psi);
    let mut g_dense = vec![0.0; k_len];

    for t in 0..t_len {
        let g = upstream.row(t);
        let s = forward.dense.row(t);
        if cfg.sparse {
            // y_k = w_k s_k, w = softmax(γ s):
            // ∂L/∂s_j = g_j w_j + γ w_j (g_j s_j − Σ_k g_k s_k w_k)
            let w = forward.selection.row(t);
            let mean: f64 = (0..k_len).map(|k| g[k] * s[k] * w[k]).sum();
            for j in 0..k_len {
                g_dense[j] = g[j] * w[j] + cfg.gamma * w[j] * (g[j] * s[j] - mean);
            }
        } else {
            g_dense.copy_from_slice(g);
        }

        let e = embeddings.row(t);
        for k in 0..k_len {
            if g_dense[k] == 0.0 {
                continue;
            }
            let d = forward.distances.get(t, k);
            let g_d = -g_dense[k] * s[k] * inv_psi2;
            cfg.metric.accumulate_grad(
                e,
                prototypes.row(k),
                d,
                g_d,
                Some(grads.embeddings.row_mut(t)),
                Some(grads.prototypes.row_mut(k)),
            );
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(gamma: f64, sparse: bool) -> SimilarityConfig {
        SimilarityConfig {
            gamma,
            sparse,
            ..Default::default()
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn kernel_values() {
        let c = SimilarityConfig::default();
        assert_eq!(similarity(&[0.3, 0.4], &[0.3, 0.4], &c).unwrap(), 1.0);
        assert!((similarity_from_distance(1.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((similarity_from_distance(8.0, 2.0) - 0.135_335_283_236_612_7).abs() < 1e-15);
    }

    #[test]
    fn sparsify_saturated_row_keeps_max() {
        let dense = Matrix::from_rows(&[vec![0.2, 0.9, 0.5]]).unwrap();
        let s = sparsify(&dense, 1e6);
        assert!(s.get(0, 0).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.9).abs() < 1e-12);
        assert!(s.get(0, 2).abs() < 1e-12);
    }

    #[test]
    fn sparsify_uniform_row_splits_evenly() {
        let dense = Matrix::from_rows(&[vec![0.6; 4]]).unwrap();
        for gamma in [1.0, 10.0, 1e6] {
            let s = sparsify(&dense, gamma);
            for k in 0..4 {
                assert!((s.get(0, k) - 0.15).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sparsify_moderate_gamma_matches_hand_evaluation() {
        // w = softmax(5, 6); sparse = w ⊙ (0.5, 0.6)
        let e5 = 5.0f64.exp();
        let e6 = 6.0f64.exp();
        let w = [e5 / (e5 + e6), e6 / (e5 + e6)];
        let dense = Matrix::from_rows(&[vec![0.5, 0.6]]).unwrap();
        let s = sparsify(&dense, 10.0);
        assert!((s.get(0, 0) - w[0] * 0.5).abs() < 1e-15);
        assert!((s.get(0, 1) - w[1] * 0.6).abs() < 1e-15);
        assert!((s.get(0, 0) - 0.1345).abs() < 1e-4);
        assert!((s.get(0, 1) - 0.4387).abs() < 1e-4);
    }

    #[test]
    fn matrix_matches_scalar_calls_and_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_matrix(&mut rng, 3, 5);
        let mut p = random_matrix(&mut rng, 4, 5);
        p.row_mut(2).copy_from_slice(e.row(1));
        let c = cfg(10.0, true);
        let sim = similarity_matrix(&e, &p, &c).unwrap();
        for t in 0..3 {
            for k in 0..4 {
                assert_eq!(sim.dense.get(t, k), similarity(e.row(t), p.row(k), &c).unwrap());
            }
        }
        assert_eq!(sim.dense.get(1, 2), 1.0);
        assert_eq!(sim.argmax_indices[1], 2);
    }

    #[test]
    fn argmax_of_simple_row() {
        let dense = Matrix::from_rows(&[vec![0.3, 0.9]]).unwrap();
        let s = sparsify(&dense, 1.0);
        assert_eq!(argmax(s.row(0)), 1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let e = Matrix::zeros(2, 3);
        let p = Matrix::zeros(2, 4);
        assert!(matches!(
            similarity_matrix(&e, &p, &SimilarityConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_matrix(&mut rng, 2, 4);
        let p = random_matrix(&mut rng, 3, 4);
        let c = cfg(10.0, true);
        let sim = similarity_matrix(&e, &p, &c).unwrap();
        let g = layer_backward(&Matrix::zeros(2, 3), &sim, &e, &p, &c);
        assert!(g.embeddings.as_slice().iter().all(|&x| x == 0.0));
        assert!(g.prototypes.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn coincident_points_have_finite_grads() {
        let e = Matrix::from_rows(&[vec![0.5, -0.5]]).unwrap();
        let p = Matrix::from_rows(&[vec![0.5, -0.5], vec![1.0, 1.0]]).unwrap();
        let c = cfg(10.0, true);
        let sim = similarity_matrix(&e, &p, &c).unwrap();
        let up = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let g = layer_backward(&up, &sim, &e, &p, &c);
        assert!(g.embeddings.is_finite() && g.prototypes.is_finite());
    }

    /// Sum of upstream ⊙ layer output, the scalar whose gradient the backward returns.
    fn probe(e: &Matrix, p: &Matrix, up: &Matrix, c: &SimilarityConfig) -> f64 {
        let sim = similarity_matrix(e, p, c).unwrap();
        let out = sim.backbone_input(c);
        out.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
    }

    fn max_rel_err(analytic: &Matrix, fd: &Matrix) -> f64 {
        analytic
            .as_slice()
            .iter()
            .zip(fd.as_slice())
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-5))
            .fold(0.0, f64::max)
    }

    fn central_difference(
        target: &Matrix,
        f: impl Fn(&Matrix) -> f64,
    ) -> Matrix {
        let h = 1e-6;
        let mut out = Matrix::zeros(target.rows(), target.cols());
        for i in 0..target.as_slice().len() {
            let mut plus = target.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = target.clone();
            minus.as_mut_slice()[i] -= h;
            out.as_mut_slice()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, metric) in (0..20u64).zip(["euclidean", "cosine", "sqeuclidean"].iter().cycle()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_matrix(&mut rng, 2, 4);
            let p = random_matrix(&mut rng, 3, 4);
            let up = random_matrix(&mut rng, 2, 3);
            for (gamma, sparse) in [(1.0, true), (10.0, true), (1.0, false)] {
                let c = SimilarityConfig {
                    metric: Metric::by_name(metric).unwrap(),
                    psi: 0.8,
                    gamma,
                    sparse,
                };
                let sim = similarity_matrix(&e, &p, &c).unwrap();
                let g = layer_backward(&up, &sim, &e, &p, &c);
                let fd_e = central_difference(&e, |x| probe(x, &p, &up, &c));
                let fd_p = central_difference(&p, |x| probe(&e, x, &up, &c));
                let err = max_rel_err(&g.embeddings, &fd_e).max(max_rel_err(&g.prototypes, &fd_p));
                assert!(err < 1e-4, "seed {seed} {metric} γ={gamma} sparse={sparse}: {err}");
            }
        }
    }

    #[test]
    fn prototype_set_requires_two_rows() {
        assert!(PrototypeSet::new(Matrix::zeros(1, 3)).is_err());
        assert!(PrototypeSet::new(Matrix::zeros(2, 3)).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(SimilarityConfig { psi: 0.0, ..Default::default() }.validate().is_err());
        assert!(SimilarityConfig { gamma: 0.5, ..Default::default() }.validate().is_err());
        assert!(SimilarityConfig::default().validate().is_ok());
    }
}
