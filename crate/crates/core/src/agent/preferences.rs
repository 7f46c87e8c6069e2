//! Layered preferences. Layer 0 holds the seed constraints and is frozen at
//! construction; layers 1.. are written by operators or parents.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AgentError;
use crate::generative::dist::log_normalize;
use crate::generative::PreferenceModel;
use crate::trace::LayerSnapshot;

/// A sparse log-preference contribution plus constraint edits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceFragment {
    #[serde(default)]
    pub log_pref: BTreeMap<String, f64>,
    #[serde(default)]
    pub hard_constraints: BTreeSet<String>,
    /// Constraints from other mutable layers this fragment releases.
    #[serde(default)]
    pub lift_constraints: BTreeSet<String>,
    #[serde(default = "one")]
    pub precision: f64,
}

fn one() -> f64 {
    1.0
}

impl PreferenceFragment {
    pub fn new(log_pref: impl IntoIterator<Item = (String, f64)>, precision: f64) -> Self {
        Self { log_pref: log_pref.into_iter().collect(), precision, ..Self::default() }
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("fragments always serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    fn validate(&self, labels: &[String]) -> Result<(), AgentError> {
        let known = |l: &String| labels.contains(l);
        if let Some(bad) = self
            .log_pref
            .keys()
            .chain(&self.hard_constraints)
            .chain(&self.lift_constraints)
            .find(|l| !known(l))
        {
            return Err(AgentError::VocabularyMismatch(bad.clone()));
        }
        if !(self.precision >= 0.0 && self.precision.is_finite()) {
            return Err(AgentError::InvalidFragment(format!("precision {}", self.precision)));
        }
        if self.log_pref.values().any(|v| !v.is_finite()) {
            return Err(AgentError::InvalidFragment("non-finite log preference".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceLayer {
    pub fragment: PreferenceFragment,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceStack {
    observation_labels: Vec<String>,
    annotations: Vec<String>,
    layers: Vec<PreferenceLayer>,
    spawn_hash: String,
}

impl PreferenceStack {
    /// Builds the stack from seed preferences, which become layer 0.
    pub fn from_seed(seed: &PreferenceModel) -> Self {
        let labels = seed.observation_labels().to_vec();
        let fragment = PreferenceFragment {
            log_pref: labels.iter().cloned().zip(seed.log_pref().iter().copied()).collect(),
            hard_constraints: seed.hard_constraints().clone(),
            lift_constraints: BTreeSet::new(),
            precision: seed.precision(),
        };
        let spawn_hash = fragment.content_hash();
        Self {
            observation_labels: labels,
            annotations: seed.annotations().to_vec(),
            layers: vec![PreferenceLayer { fragment, provenance: "seed".into() }],
            spawn_hash,
        }
    }

    /// A stack sharing this one's layer 0 verbatim and no mutable layers.
    pub fn inherit_protected(&self) -> Self {
        Self {
            observation_labels: self.observation_labels.clone(),
            annotations: self.annotations.clone(),
            layers: vec![self.layers[0].clone()],
            spawn_hash: self.spawn_hash.clone(),
        }
    }

    pub fn observation_labels(&self) -> &[String] {
        &self.observation_labels
    }

    pub fn layers(&self) -> &[PreferenceLayer] {
        &self.layers
    }

    /// Hash of layer 0 recorded when the stack was created.
    pub fn spawn_hash(&self) -> &str {
        &self.spawn_hash
    }

    /// Hash of layer 0 recomputed from its current content.
    pub fn layer0_hash(&self) -> String {
        self.layers[0].fragment.content_hash()
    }

    pub fn layer_hash(&self, index: usize) -> Option<String> {
        self.layers.get(index).map(|l| l.fragment.content_hash())
    }

    /// Hash over every layer in order.
    pub fn stack_hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            h.update(l.fragment.content_hash().as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn protected_constraints(&self) -> &BTreeSet<String> {
        &self.layers[0].fragment.hard_constraints
    }

    pub fn snapshots(&self) -> Vec<LayerSnapshot> {
        self.layers
            .iter()
            .map(|l| LayerSnapshot {
                hash: l.fragment.content_hash(),
                log_pref: l.fragment.log_pref.clone(),
                precision: l.fragment.precision,
            })
            .collect()
    }

    /// Replaces (or appends, when `index == len`) a mutable layer.
    pub fn write_layer(&mut self, index: usize, layer: PreferenceLayer) -> Result<Option<String>, AgentError> {
        if index == 0 {
            return Err(AgentError::ImmutableLayer);
        }
        if index > self.layers.len() {
            return Err(AgentError::LayerOutOfRange { index, len: self.layers.len() });
        }
        layer.fragment.validate(&self.observation_labels)?;
        if index == self.layers.len() {
            self.layers.push(layer);
            Ok(None)
        } else {
            let before = self.layers[index].fragment.content_hash();
            self.layers[index] = layer;
            Ok(Some(before))
        }
    }

    /// Effective preferences of the stack alone.
    pub fn effective(&self) -> PreferenceModel {
        self.compose(None).expect("stored layers are validated")
    }

    /// Effective preferences with an extra precision-weighted fragment on top.
    ///
    /// Log preferences add up across layers scaled by each layer's precision
    /// and are then normalized. Forbidden observations are layer 0's set plus
    /// any mutable-layer constraint not lifted by a mutable layer.
    pub fn compose(&self, extra: Option<&PreferenceFragment>) -> Result<PreferenceModel, AgentError> {
        if let Some(f) = extra {
            f.validate(&self.observation_labels)?;
        }
        let mutable = self.layers[1..].iter().map(|l| &l.fragment).chain(extra);
        let mut total = vec![0.0; self.observation_labels.len()];
        let mut added = BTreeSet::new();
        let mut lifted = BTreeSet::new();
        for frag in std::iter::once(&self.layers[0].fragment).chain(mutable.clone()) {
            for (i, label) in self.observation_labels.iter().enumerate() {
                if let Some(v) = frag.log_pref.get(label) {
                    total[i] += frag.precision * v;
                }
            }
        }
        for frag in mutable {
            added.extend(frag.hard_constraints.iter().cloned());
            lifted.extend(frag.lift_constraints.iter().cloned());
        }
        let mut forbidden: BTreeSet<String> = added.difference(&lifted).cloned().collect();
        forbidden.extend(self.protected_constraints().iter().cloned());
        let annotations = self.annotations.clone();
        Ok(PreferenceModel::new(self.observation_labels.clone(), log_normalize(&total), forbidden, annotations, 1.0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed() -> PreferenceModel {
        let labels: Vec<String> = ["good", "bad", "harm"].iter().map(|s| s.to_string()).collect();
        PreferenceModel::new(labels, vec![1.0, -1.0, 0.0], ["harm".to_string()].into(), vec![], 1.0).unwrap()
    }

    fn layer(pairs: &[(&str, f64)], precision: f64) -> PreferenceLayer {
        PreferenceLayer {
            fragment: PreferenceFragment::new(pairs.iter().map(|(k, v)| (k.to_string(), *v)), precision),
            provenance: "test".into(),
        }
    }

    #[test]
    fn layer_zero_rejects_writes() {
        let mut s = PreferenceStack::from_seed(&seed());
        let before = s.stack_hash();
        assert_eq!(s.write_layer(0, layer(&[("bad", 5.0)], 1.0)), Err(AgentError::ImmutableLayer));
        assert_eq!(s.stack_hash(), before);
        assert_eq!(s.layer0_hash(), s.spawn_hash());
    }

    #[test]
    fn zero_precision_is_identity() {
        let s = PreferenceStack::from_seed(&seed());
        let base = s.effective();
        let extra = PreferenceFragment::new([("bad".to_string(), 100.0)], 0.0);
        let composed = s.compose(Some(&extra)).unwrap();
        for (a, b) in base.log_pref().iter().zip(composed.log_pref()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn high_precision_dominates() {
        let s = PreferenceStack::from_seed(&seed());
        let extra = PreferenceFragment::new([("bad".to_string(), 1.0)], 1e6);
        let c = s.compose(Some(&extra)).unwrap();
        assert_eq!(c.preferred_outcomes().argmax(), 1);
    }

    #[test]
    fn protected_constraint_survives_lift() {
        let mut s = PreferenceStack::from_seed(&seed());
        let mut frag = PreferenceFragment::new([("harm".to_string(), 50.0)], 10.0);
        frag.lift_constraints.insert("harm".into());
        frag.hard_constraints.insert("bad".into());
        s.write_layer(1, PreferenceLayer { fragment: frag, provenance: "op".into() }).unwrap();
        let c = s.effective();
        assert!(c.hard_constraints().contains("harm"));
        assert!(c.hard_constraints().contains("bad"));
        let mut lift = PreferenceFragment::default();
        lift.lift_constraints.insert("bad".into());
        s.write_layer(2, PreferenceLayer { fragment: lift, provenance: "op".into() }).unwrap();
        assert!(!s.effective().hard_constraints().contains("bad"));
    }

    #[test]
    fn vocabulary_and_range_errors() {
        let mut s = PreferenceStack::from_seed(&seed());
        assert_eq!(
            s.write_layer(1, layer(&[("nope", 1.0)], 1.0)),
            Err(AgentError::VocabularyMismatch("nope".into()))
        );
        assert_eq!(s.write_layer(3, layer(&[], 1.0)), Err(AgentError::LayerOutOfRange { index: 3, len: 1 }));
    }

    #[test]
    fn rewrite_reports_previous_hash() {
        let mut s = PreferenceStack::from_seed(&seed());
        assert_eq!(s.write_layer(1, layer(&[("good", 1.0)], 1.0)).unwrap(), None);
        let h = s.layer_hash(1).unwrap();
        assert_eq!(s.write_layer(1, layer(&[("good", 1.0)], 1.0)).unwrap(), Some(h.clone()));
        assert_eq!(s.layer_hash(1).unwrap(), h);
    }
}
