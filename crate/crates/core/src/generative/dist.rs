//! Labeled categorical distributions and the clamped information measures
//! built on them.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Floor applied to every probability before taking its logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// `ln(max(x, LOG_FLOOR))`. The clamped copy is never renormalized.
#[inline]
pub fn ln_clamped(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// Surprise reported when an observation carries no evidence at all.
pub fn surprise_ceiling() -> f64 {
    -ln_clamped(0.0)
}

/// `Σ p ln(p / q)` with clamped logarithms.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * (ln_clamped(pi) - ln_clamped(qi)))
        .sum()
}

/// Shannon entropy in nats with clamped logarithms.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&pi| pi * ln_clamped(pi)).sum::<f64>()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Shift log-values so that `exp` of them sums to one.
pub fn log_normalize(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    values.iter().map(|v| v - lse).collect()
}

/// Normalized probability vector over an ordered set of labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDist {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl CategoricalDist {
    /// Builds a distribution from non-negative weights, renormalizing them.
    pub fn new(labels: Vec<String>, weights: Vec<f64>) -> Result<Self, ModelError> {
        if labels.is_empty() {
            return Err(ModelError::EmptySupport);
        }
        if labels.len() != weights.len() {
            return Err(ModelError::Dimension {
                what: "distribution".into(),
                expected: labels.len(),
                found: weights.len(),
            });
        }
        if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(ModelError::InvalidProbability(*bad));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(ModelError::ZeroMass);
        }
        let probs = weights.iter().map(|w| w / total).collect();
        Ok(Self { labels, probs })
    }

    pub fn uniform(labels: Vec<String>) -> Result<Self, ModelError> {
        let n = labels.len();
        Self::new(labels, vec![1.0; n])
    }

    pub fn one_hot(labels: Vec<String>, index: usize) -> Result<Self, ModelError> {
        let mut w = vec![0.0; labels.len()];
        if index >= w.len() {
            return Err(ModelError::UnknownLabel(format!("index {index}")));
        }
        w[index] = 1.0;
        Self::new(labels, w)
    }

    /// Distribution proportional to `exp(log_weights)`.
    pub fn from_log_weights(labels: Vec<String>, log_weights: &[f64]) -> Result<Self, ModelError> {
        if log_weights.iter().any(|v| v.is_nan()) {
            return Err(ModelError::InvalidProbability(f64::NAN));
        }
        let normalized = log_normalize(log_weights);
        Self::new(labels, normalized.iter().map(|v| v.exp()).collect())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        self.index_of(label).map(|i| self.probs[i])
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Same support, new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(self.labels.clone(), weights)
    }

    /// Convex mixture `(1 - w) * self + w * uniform`.
    pub fn mix_with_uniform(&self, w: f64) -> Self {
        let n = self.probs.len() as f64;
        let probs = self.probs.iter().map(|p| (1.0 - w) * p + w / n).collect();
        Self::new(self.labels.clone(), probs).expect("mixture of valid distributions is valid")
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}
