//! Training objectives: square-error accuracy, prototype diversity and
//! prototypicality, and their weighted sum.
//!
//! Minimums over pairs or prototypes take the lowest-index minimizer, which
//! is also where the subgradient goes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Matrix};
use crate::metric::DistanceMetric;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the diversity term.
    pub alpha: f64,
    /// Weight of the prototypicality term.
    pub beta: f64,
    /// Target minimum separation between prototypes.
    pub delta: f64,
    /// Sigmoid sharpness of the diversity term.
    pub eta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 1e-4,
            delta: 0.5,
            eta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.alpha, self.beta, self.delta, self.eta]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("loss coefficients must be finite".into()));
        }
        if self.delta <= 0.0 {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.eta <= 0.0 {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }

    pub fn combine(&self, acc: f64, div: f64, proto: f64) -> LossBreakdown {
        LossBreakdown {
            acc,
            div,
            proto,
            total: acc + self.alpha * div + self.beta * proto,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub acc: f64,
    pub div: f64,
    pub proto: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Name of the first non-finite term, checked in the order acc, div, proto, total.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("accuracy", self.acc),
            ("diversity", self.div),
            ("prototypicality", self.proto),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// `(1/N) Σ ‖y − ŷ‖²`
pub fn accuracy_loss<P: AsRef<[f64]>, L: AsRef<[f64]>>(preds: &[P], labels: &[L]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (p, y) in preds.iter().zip(labels) {
        let (p, y) = (p.as_ref(), y.as_ref());
        if p.len() != y.len() {
            return Err(Error::Shape(format!("prediction width {} vs label width {}", p.len(), y.len())));
        }
        sum += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / preds.len() as f64)
}

/// Per-sample `∂L_acc/∂ŷ` when the batch has `batch_len` samples.
pub fn accuracy_loss_grad(pred: &[f64], label: &[f64], batch_len: usize) -> Vec<f64> {
    let k = 2.0 / batch_len as f64;
    pred.iter().zip(label).map(|(p, y)| k * (p - y)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPair {
    pub first: usize,
    pub second: usize,
    pub distance: f64,
}

/// Closest unordered prototype pair, lexicographically first on ties.
pub fn closest_pair(prototypes: &Matrix, metric: &dyn DistanceMetric) -> Result<ClosestPair> {
    let k = prototypes.rows();
    if k < 2 {
        return Err(Error::Invalid(format!("diversity needs at least 2 prototypes, got {k}")));
    }
    let mut best = ClosestPair {
        first: 0,
        second: 1,
        distance: f64::INFINITY,
    };
    for i in 0..k {
        for j in i + 1..k {
            let d = metric.distance(prototypes.row(i), prototypes.row(j))?;
            if d < best.distance {
                best = ClosestPair {
                    first: i,
                    second: j,
                    distance: d,
                };
            }
        }
    }
    Ok(best)
}

/// `σ(η(δ − d_min))`
pub fn diversity_loss(prototypes: &Matrix, cfg: &LossConfig, metric: &dyn DistanceMetric) -> Result<f64> {
    let pair = closest_pair(prototypes, metric)?;
    Ok(sigmoid(cfg.eta * (cfg.delta - pair.distance)))
}

pub fn diversity_loss_grad(
    prototypes: &Matrix,
    cfg: &LossConfig,
    metric: &dyn DistanceMetric,
) -> Result<(f64, Matrix)> {
    let pair = closest_pair(prototypes, metric)?;
    let loss = sigmoid(cfg.eta * (cfg.delta - pair.distance));
    let mut grad = Matrix::zeros(prototypes.rows(), prototypes.cols());
    let d_dmin = -cfg.eta * loss * (1.0 - loss);
    let (a, b) = (prototypes.row(pair.first), prototypes.row(pair.second));
    let mut ga = vec![0.0; prototypes.cols()];
    let mut gb = vec![0.0; prototypes.cols()];
    metric.accumulate_grad(a, b, pair.distance, d_dmin, Some(&mut ga), Some(&mut gb));
    grad.row_mut(pair.first).copy_from_slice(&ga);
    grad.row_mut(pair.second).copy_from_slice(&gb);
    Ok((loss, grad))
}

fn nearest(e: &[f64], prototypes: &Matrix, metric: &dyn DistanceMetric) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for k in 0..prototypes.rows() {
        let d = metric.distance(e, prototypes.row(k))?;
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best)
}

/// `(1/S) Σ_sentences min_k d(e, p_k)`
pub fn prototypicality_loss(
    sentences: &Matrix,
    prototypes: &Matrix,
    metric: &dyn DistanceMetric,
) -> Result<f64> {
    if sentences.rows() == 0 {
        return Err(Error::Invalid("prototypicality needs at least one sentence".into()));
    }
    let mut sum = 0.0;
    for e in sentences.iter_rows() {
        sum += nearest(e, prototypes, metric)?.1;
    }
    Ok(sum / sentences.rows() as f64)
}

/// Loss and gradient with respect to the prototypes only.
pub fn prototypicality_loss_grad(
    sentences: &Matrix,
    prototypes: &Matrix,
    metric: &dyn DistanceMetric,
) -> Result<(f64, Matrix)> {
    if sentences.rows() == 0 {
        return Err(Error::Invalid("prototypicality needs at least one sentence".into()));
    }
    let scale = 1.0 / sentences.rows() as f64;
    let mut grad = Matrix::zeros(prototypes.rows(), prototypes.cols());
    let mut sum = 0.0;
    for e in sentences.iter_rows() {
        let (k, d) = nearest(e, prototypes, metric)?;
        sum += d;
        metric.accumulate_grad(e, prototypes.row(k), d, scale, None, Some(grad.row_mut(k)));
    }
    Ok((sum * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Euclidean;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_loss(&[vec![0.3, 0.7]], &[vec![0.3, 0.7]]).unwrap(), 0.0);
        assert_eq!(accuracy_loss(&[vec![0.5, 0.5]], &[vec![1.0, 0.0]]).unwrap(), 0.5);
        let preds = [vec![0.2, 0.9], vec![0.6, 0.1]];
        let labels: [Vec<f64>; 2] = [vec![0.0, 1.0], vec![1.0, 0.0]];
        let mut oracle = 0.0_f64;
        for (p, y) in preds.iter().zip(&labels) {
            for c in 0..2 {
                oracle += (y[c] - p[c]).powi(2);
            }
        }
        oracle /= 2.0;
        assert!((accuracy_loss(&preds, &labels).unwrap() - oracle).abs() < 1e-15);
        assert!(accuracy_loss(&[vec![0.0]], &[vec![0.0], vec![1.0]]).is_err());
    }

    #[test]
    fn diversity_boundary_and_analytic() {
        let cfg = LossConfig { delta: 1.0, eta: 1.0, ..Default::default() };
        let p = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]]).unwrap();
        assert!((diversity_loss(&p, &cfg, &Euclidean).unwrap() - 0.5).abs() < 1e-12);
        let far = Matrix::from_rows(&[vec![0.0], vec![3.0]]).unwrap();
        let expected = 1.0 / (1.0 + 2.0f64.exp());
        assert!((diversity_loss(&far, &cfg, &Euclidean).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.119203).abs() < 1e-6);
    }

    #[test]
    fn diversity_needs_a_pair() {
        let one = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(diversity_loss(&one, &LossConfig::default(), &Euclidean).is_err());
    }

    #[test]
    fn closest_pair_matches_brute_force() {
        let p = Matrix::from_rows(&[vec![0.1, 0.9, -0.3], vec![0.7, -0.2, 0.4], vec![0.2, 0.8, 0.1]]).unwrap();
        let mut brute = f64::INFINITY;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let d: f64 = p.row(i).iter().zip(p.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            brute = brute.min(d);
        }
        let pair = closest_pair(&p, &Euclidean).unwrap();
        assert_eq!((pair.first, pair.second), (0, 2));
        assert!((pair.distance - brute).abs() < 1e-15);
    }

    #[test]
    fn prototypicality_examples() {
        let p = Matrix::from_rows(&[vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 9.0]]).unwrap();
        assert_eq!(prototypicality_loss(&p, &p, &Euclidean).unwrap(), 0.0);
        let s = Matrix::from_rows(&[vec![0.0, 2.0]]).unwrap();
        assert_eq!(prototypicality_loss(&s, &p, &Euclidean).unwrap(), 2.0);
        assert!(prototypicality_loss(&Matrix::zeros(0, 2), &p, &Euclidean).is_err());
    }

    #[test]
    fn prototypicality_matches_double_loop() {
        let s = Matrix::from_rows(&[
            vec![0.3, -0.1],
            vec![1.2, 0.8],
            vec![-0.7, 0.4],
            vec![0.0, 0.0],
            vec![2.0, -1.5],
        ])
        .unwrap();
        let p = Matrix::from_rows(&[vec![0.5, 0.5], vec![-1.0, 0.0]]).unwrap();
        let mut oracle = 0.0;
        for i in 0..5 {
            let mut best = f64::INFINITY;
            for k in 0..2 {
                let dx = s.get(i, 0) - p.get(k, 0);
                let dy = s.get(i, 1) - p.get(k, 1);
                best = best.min((dx * dx + dy * dy).sqrt());
            }
            oracle += best;
        }
        oracle /= 5.0;
        assert!((prototypicality_loss(&s, &p, &Euclidean).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn combination_and_linearity() {
        let cfg = LossConfig::default();
        let b = cfg.combine(0.5, 0.5, 10.0);
        assert!((b.total - 0.551).abs() < 1e-12);
        let zero = LossConfig { alpha: 0.0, beta: 0.0, ..cfg.clone() };
        assert_eq!(zero.combine(0.5, 0.5, 10.0).total, 0.5);

        let doubled = LossConfig { alpha: 2.0 * cfg.alpha, beta: 2.0 * cfg.beta, ..cfg.clone() };
        let (acc, div, proto) = (0.37, 0.61, 2.3);
        let diff = doubled.combine(acc, div, proto).total - cfg.combine(acc, div, proto).total;
        assert!((diff - (cfg.alpha * div + cfg.beta * proto)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_term_is_named() {
        let b = LossBreakdown { acc: 0.1, div: f64::NAN, proto: 0.0, total: f64::NAN };
        assert_eq!(b.non_finite_term(), Some("diversity"));
        assert_eq!(LossBreakdown::default().non_finite_term(), None);
    }

    fn fd(p: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut out = Matrix::zeros(p.rows(), p.cols());
        for i in 0..p.as_slice().len() {
            let mut a = p.clone();
            a.as_mut_slice()[i] += h;
            let mut b = p.clone();
            b.as_mut_slice()[i] -= h;
            out.as_mut_slice()[i] = (f(&a) - f(&b)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = LossConfig { delta: 2.0, ..Default::default() };
        let p = Matrix::from_rows(&[vec![0.1, 0.9, -0.3], vec![0.7, -0.2, 0.4], vec![0.2, 0.5, 0.1]]).unwrap();
        let s = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.5], vec![0.3, 0.3, 0.3]]).unwrap();
        let (_, g) = diversity_loss_grad(&p, &cfg, &Euclidean).unwrap();
        let n = fd(&p, |x| diversity_loss(x, &cfg, &Euclidean).unwrap());
        for (a, b) in g.as_slice().iter().zip(n.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
        let (_, g) = prototypicality_loss_grad(&s, &p, &Euclidean).unwrap();
        let n = fd(&p, |x| prototypicality_loss(&s, x, &Euclidean).unwrap());
        for (a, b) in g.as_slice().iter().zip(n.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn diversity_in_open_unit_interval_and_decreasing(d1 in 0.0f64..20.0, gap in 0.01f64..5.0) {
            let cfg = LossConfig::default();
            let a = Matrix::from_rows(&[vec![0.0], vec![d1]]).unwrap();
            let b = Matrix::from_rows(&[vec![0.0], vec![d1 + gap]]).unwrap();
            let la = diversity_loss(&a, &cfg, &Euclidean).unwrap();
            let lb = diversity_loss(&b, &cfg, &Euclidean).unwrap();
            prop_assert!(la > 0.0 && la < 1.0);
            prop_assert!(lb < la);
        }

        #[test]
        fn prototypicality_ignores_order_and_duplicates(
            sents in proptest::collection::vec(-3.0f64..3.0, 2..20),
            protos in proptest::collection::vec(-3.0f64..3.0, 4..8),
        ) {
            let s = Matrix::from_vec(sents.len() / 2, 2, sents[..sents.len() / 2 * 2].to_vec()).unwrap();
            let p = Matrix::from_vec(protos.len() / 2, 2, protos[..protos.len() / 2 * 2].to_vec()).unwrap();
            let base = prototypicality_loss(&s, &p, &Euclidean).unwrap();
            let rows: Vec<Vec<f64>> = p.iter_rows().rev().map(<[f64]>::to_vec).collect();
            let reversed = Matrix::from_rows(&rows).unwrap();
            let mut dup_rows = rows.clone();
            dup_rows.push(rows[0].clone());
            let duplicated = Matrix::from_rows(&dup_rows).unwrap();
            prop_assert_eq!(prototypicality_loss(&s, &reversed, &Euclidean).unwrap(), base);
            prop_assert_eq!(prototypicality_loss(&s, &duplicated, &Euclidean).unwrap(), base);
        }

        #[test]
        fn accuracy_zero_iff_equal(a in proptest::collection::vec(0.0f64..1.0, 2), b in proptest::collection::vec(0.0f64..1.0, 2)) {
            let l = accuracy_loss(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, a == b);
        }
    }
}
