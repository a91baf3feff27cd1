//! Distance metrics between embedding vectors.

use std::fmt;
use std::sync::Arc;

use once_cell::sync::Lazy;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::registry::Registry;

/// Guard for the Euclidean derivative at coincident points.
pub const EUCLIDEAN_GRAD_EPS: f64 = 1e-12;

pub trait DistanceMetric: Send + Sync {
    fn name(&self) -> &'static str;

    fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64>;

    /// Adds `scale · ∂d/∂a` to `grad_a` and `scale · ∂d/∂b` to `grad_b`,
    /// where `d` is `distance(a, b)` computed beforehand.
    fn accumulate_grad(
        &self,
        a: &[f64],
        b: &[f64],
        d: f64,
        scale: f64,
        grad_a: Option<&mut [f64]>,
        grad_b: Option<&mut [f64]>,
    );
}

/// `‖a − b‖₂`
#[derive(Debug, Default, Clone, Copy)]
pub struct Euclidean;

impl DistanceMetric for Euclidean {
    fn name(&self) -> &'static str {
        "euclidean"
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt())
    }

    fn accumulate_grad(
        &self,
        a: &[f64],
        b: &[f64],
        d: f64,
        scale: f64,
        grad_a: Option<&mut [f64]>,
        grad_b: Option<&mut [f64]>,
    ) {
        let k = scale / d.max(EUCLIDEAN_GRAD_EPS);
        if let Some(ga) = grad_a {
            for ((g, x), y) in ga.iter_mut().zip(a).zip(b) {
                *g += k * (x - y);
            }
        }
        if let Some(gb) = grad_b {
            for ((g, x), y) in gb.iter_mut().zip(a).zip(b) {
                *g -= k * (x - y);
            }
        }
    }
}

/// `‖a − b‖₂²`, kept for experimentation.
#[derive(Debug, Default, Clone, Copy)]
pub struct SquaredEuclidean;

impl DistanceMetric for SquaredEuclidean {
    fn name(&self) -> &'static str {
        "sqeuclidean"
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
    }

    fn accumulate_grad(
        &self,
        a: &[f64],
        b: &[f64],
        _d: f64,
        scale: f64,
        grad_a: Option<&mut [f64]>,
        grad_b: Option<&mut [f64]>,
    ) {
        let k = 2.0 * scale;
        if let Some(ga) = grad_a {
            for ((g, x), y) in ga.iter_mut().zip(a).zip(b) {
                *g += k * (x - y);
            }
        }
        if let Some(gb) = grad_b {
            for ((g, x), y) in gb.iter_mut().zip(a).zip(b) {
                *g -= k * (x - y);
            }
        }
    }
}

/// `1 − a·b / (‖a‖‖b‖)`
#[derive(Debug, Default, Clone, Copy)]
pub struct Cosine;

impl DistanceMetric for Cosine {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let (na, nb) = (norm(a), norm(b));
        if na == 0.0 || nb == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(1.0 - dot(a, b) / (na * nb))
    }

    fn accumulate_grad(
        &self,
        a: &[f64],
        b: &[f64],
        d: f64,
        scale: f64,
        grad_a: Option<&mut [f64]>,
        grad_b: Option<&mut [f64]>,
    ) {
        let (na, nb) = (norm(a), norm(b));
        let cos = 1.0 - d;
        let inv = 1.0 / (na * nb);
        // ∂d/∂a = −(b/(‖a‖‖b‖) − cos·a/‖a‖²)
        if let Some(ga) = grad_a {
            let ca = cos / (na * na);
            for ((g, x), y) in ga.iter_mut().zip(a).zip(b) {
                *g -= scale * (y * inv - ca * x);
            }
        }
        if let Some(gb) = grad_b {
            let cb = cos / (nb * nb);
            for ((g, x), y) in gb.iter_mut().zip(a).zip(b) {
                *g -= scale * (x * inv - cb * y);
            }
        }
    }
}

static REGISTRY: Lazy<Registry<(), dyn DistanceMetric>> = Lazy::new(|| {
    let mut reg = Registry::new("metric");
    reg.register("euclidean", |_| Ok(Arc::new(Euclidean) as Arc<dyn DistanceMetric>))
        .expect("fresh registry");
    reg.register("cosine", |_| Ok(Arc::new(Cosine) as Arc<dyn DistanceMetric>))
        .expect("fresh registry");
    reg.register("sqeuclidean", |_| {
        Ok(Arc::new(SquaredEuclidean) as Arc<dyn DistanceMetric>)
    })
    .expect("fresh registry");
    reg
});

pub fn registry() -> &'static Registry<(), dyn DistanceMetric> {
    &REGISTRY
}

/// Shared handle to a registered metric. Serializes as its name.
#[derive(Clone)]
pub struct Metric(Arc<dyn DistanceMetric>);

impl Metric {
    pub fn by_name(name: &str) -> Result<Self> {
        registry().create(name, &()).map(Metric)
    }

    pub fn euclidean() -> Self {
        Metric(Arc::new(Euclidean))
    }

    pub fn cosine() -> Self {
        Metric(Arc::new(Cosine))
    }

    pub fn from_impl(inner: Arc<dyn DistanceMetric>) -> Self {
        Metric(inner)
    }
}

impl Default for Metric {
    fn default() -> Self {
        Metric::euclidean()
    }
}

impl std::ops::Deref for Metric {
    type Target = dyn DistanceMetric;

    fn deref(&self) -> &Self::Target {
        &*self.0
    }
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Metric({})", self.0.name())
    }
}

impl PartialEq for Metric {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Metric::by_name(&name).map_err(serde::de::Error::custom)
    }
}
