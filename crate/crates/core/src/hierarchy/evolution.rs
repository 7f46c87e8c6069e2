//! Specialization by clustering experience, and paradigm shifts for agents
//! stuck at high free energy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::topology::BlanketTopology;
use super::HierarchyError;
use crate::agent::{AgentNode, Episode, PlateauDetector, PlateauTarget, PreferenceFragment, PreferenceLayer};
use crate::generative::{CategoricalDist, PriorBelief};
use crate::trace::{Event, TraceLog};

/// A series plus the detector that is claimed to fire on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauEvidence {
    pub detector: PlateauDetector,
    pub series: Vec<f64>,
}

impl PlateauEvidence {
    pub fn efe_of(agent: &AgentNode) -> Self {
        let c = agent.config();
        Self {
            detector: PlateauDetector { window: c.plateau_window, epsilon: c.plateau_epsilon, target: PlateauTarget::Efe },
            series: agent.efe_history().iter().map(|(_, g)| *g).collect(),
        }
    }

    pub fn vfe_of(agent: &AgentNode) -> Self {
        let c = agent.config();
        Self {
            detector: PlateauDetector { window: c.plateau_window, epsilon: c.plateau_epsilon, target: PlateauTarget::Vfe },
            series: agent.vfe_history().iter().map(|(_, f)| *f).collect(),
        }
    }

    fn fired(&self, target: PlateauTarget) -> bool {
        self.detector.target == target && self.detector.detect(&self.series)
    }

    /// Mean of the detection window.
    pub fn level(&self) -> f64 {
        let w = self.detector.window.min(self.series.len()).max(1);
        let tail = &self.series[self.series.len().saturating_sub(w)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Deterministic k-means. Centroids start from the first point and then the
/// point farthest from all chosen centroids (lowest index on ties).
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centroids = vec![points[0].clone()];
    while centroids.len() < k.min(n) {
        let (far, _) = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, centroids.iter().map(|c| dist(p, c)).fold(f64::INFINITY, f64::min)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        centroids.push(points[far].clone());
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (j, dist(p, c)))
                    .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
                    .0
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for (j, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (d, v) in c.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    assign
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistRequest {
    pub k: usize,
    /// Permits k = 1.
    #[serde(default)]
    pub force: bool,
    /// Episode outcome term to role name.
    #[serde(default)]
    pub roles: BTreeMap<String, String>,
}

impl Default for SpecialistRequest {
    fn default() -> Self {
        Self { k: 3, force: false, roles: BTreeMap::new() }
    }
}

fn role_for(episodes: &[&Episode], roles: &BTreeMap<String, String>) -> String {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in episodes {
        let term = roles.get(&e.outcome).cloned().unwrap_or_else(|| format!("specialist for {}", e.outcome));
        *counts.entry(term).or_default() += 1;
    }
    counts
        .into_iter()
        .fold((String::new(), 0), |best, (term, c)| if c > best.1 { (term, c) } else { best })
        .0
}

/// Clusters the parent's episodes and builds one child per cluster.
///
/// Each child keeps the parent's layer 0, gets a layer-1 preference that
/// favours the observations seen in its cluster, and a prior reweighted by
/// how well each state explains those observations.
pub fn spawn_specialists(
    parent: &mut AgentNode,
    trigger: &PlateauEvidence,
    request: &SpecialistRequest,
    topology: &mut BlanketTopology,
    trace: &mut TraceLog,
) -> Result<Vec<AgentNode>, HierarchyError> {
    if !trigger.fired(PlateauTarget::Efe) {
        return Err(HierarchyError::PreconditionFailed("expected free energy has not plateaued".into()));
    }
    let k = request.k;
    let episodes: Vec<&Episode> = parent.episodic.episodes().iter().collect();
    if k == 0 || (k == 1 && !request.force) || episodes.len() < 2 * k {
        return Err(HierarchyError::InsufficientEpisodes { clusters: k, found: episodes.len() });
    }
    let points: Vec<Vec<f64>> = episodes.iter().map(|e| e.features.clone()).collect();
    let assign = kmeans(&points, k, 100);

    let model = parent.model().clone();
    let labels = model.observation_labels().to_vec();
    let parent_pref = parent.preferences().effective();
    let floor = parent_pref.log_pref().iter().cloned().fold(f64::INFINITY, f64::min);
    let mut children = Vec::new();
    for j in 0..k {
        let members: Vec<&Episode> = episodes.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(e, _)| *e).collect();
        if members.is_empty() {
            continue;
        }
        let seen: BTreeSet<&String> = members.iter().flat_map(|e| e.observations.iter()).collect();
        let fragment = PreferenceFragment::new(
            labels.iter().enumerate().map(|(i, l)| {
                let v = if seen.contains(l) { parent_pref.log_pref()[i] } else { floor - 1.0 };
                (l.clone(), v)
            }),
            1.0,
        );
        let a = model.likelihood();
        let weights: Vec<f64> = model
            .prior()
            .dist
            .probs()
            .iter()
            .enumerate()
            .map(|(s, d)| {
                let support: f64 = members
                    .iter()
                    .flat_map(|e| e.observations.iter())
                    .filter_map(|o| model.observation_index(o).ok())
                    .map(|o| a.p(s, o))
                    .sum();
                d * (1.0 + support)
            })
            .collect();
        let prior = PriorBelief::new(model.prior().dist.with_weights(weights)?, model.prior().annotations.clone());
        let child_model = model.with_prior(prior)?;
        let mut stack = parent.preferences().inherit_protected();
        stack.write_layer(1, PreferenceLayer { fragment, provenance: format!("cluster {j} of {}", parent.id()) })?;
        let id = format!("{}.s{}", parent.id(), j);
        let role = role_for(&members, &request.roles);
        let mut child = AgentNode::from_parts(&id, &role, child_model, stack, parent.config().clone())?;
        child.parent = Some(parent.id().to_string());
        child.generation = parent.generation + 1;
        child.capabilities = members.iter().map(|e| e.outcome.clone()).collect();
        topology.add_child(parent.id(), &id)?;
        parent.children.push(id);
        children.push(child);
    }
    trace.emit(
        parent.id(),
        Event::SpecialistsSpawned {
            children: children.iter().map(|c| c.id().to_string()).collect(),
            roles: children.iter().map(|c| c.role_description().to_string()).collect(),
        },
    );
    for c in &children {
        c.announce(trace);
    }
    Ok(children)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeBelief {
    /// Prior annotation this entry replaces.
    pub replaces: String,
    pub annotation: String,
    #[serde(default)]
    pub preference: Option<PreferenceFragment>,
}

/// Retired agents, kept for later study.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    retired: BTreeMap<String, AgentNode>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &str) -> Option<&AgentNode> {
        self.retired.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.retired.keys()
    }

    pub fn len(&self) -> usize {
        self.retired.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retired.is_empty()
    }
}

/// Replaces an agent whose free energy plateaued above its high threshold.
///
/// The replacement's prior is the old one mixed 50/50 with uniform, its
/// belief annotations swap in the first matching library entry, and its
/// layer 0 is copied verbatim. The old agent goes to the archive.
pub fn paradigm_shift(
    creator: &str,
    stuck: AgentNode,
    trigger: &PlateauEvidence,
    library: &[AlternativeBelief],
    new_id: &str,
    topology: &mut BlanketTopology,
    archive: &mut Archive,
    trace: &mut TraceLog,
) -> Result<AgentNode, HierarchyError> {
    if !trigger.fired(PlateauTarget::Vfe) {
        return Err(HierarchyError::PreconditionFailed("free energy has not plateaued".into()));
    }
    let theta_hi = stuck.config().thresholds.theta_hi;
    if trigger.level() <= theta_hi {
        return Err(HierarchyError::PreconditionFailed(format!(
            "plateau level {:.4} is not above θ_hi = {theta_hi}",
            trigger.level()
        )));
    }
    let model = stuck.model();
    let before = model.prior().annotations.clone();
    let pick = library
        .iter()
        .find(|alt| before.contains(&alt.replaces))
        .or_else(|| library.first());
    let mut after = before.clone();
    if let Some(alt) = pick {
        match after.iter_mut().find(|a| **a == alt.replaces) {
            Some(slot) => *slot = alt.annotation.clone(),
            None => after.push(alt.annotation.clone()),
        }
    }
    let mixed: CategoricalDist = model.prior().dist.mix_with_uniform(0.5);
    let new_model = model.with_prior(PriorBelief::new(mixed, after.clone()))?;
    let mut stack = stuck.preferences().inherit_protected();
    if let Some(frag) = pick.and_then(|a| a.preference.clone()) {
        stack.write_layer(1, PreferenceLayer { fragment: frag, provenance: format!("paradigm shift by {creator}") })?;
    }
    let mut fresh = AgentNode::from_parts(new_id, stuck.role_description(), new_model, stack, stuck.config().clone())?;
    fresh.parent = stuck.parent.clone();
    fresh.children = stuck.children.clone();
    fresh.capabilities = stuck.capabilities.clone();
    fresh.generation = stuck.generation + 1;
    fresh.budget = stuck.budget.clone();
    fresh.budget.reset();
    fresh.budget.lifetime_units = 0;

    topology.retire(stuck.id(), Some(new_id))?;
    trace.emit(
        creator,
        Event::ParadigmShift {
            old: stuck.id().to_string(),
            new: new_id.to_string(),
            annotation_before: before,
            annotation_after: after,
        },
    );
    trace.emit(stuck.id(), Event::AgentRetired { replaced_by: Some(new_id.to_string()) });
    fresh.announce(trace);
    archive.retired.insert(stuck.id().to_string(), stuck);
    Ok(fresh)
}
