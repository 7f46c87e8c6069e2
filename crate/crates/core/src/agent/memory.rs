//! Working, episodic and procedural memory.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::generative::dist::cosine_similarity;
use crate::generative::FreeEnergyReport;

pub const DEFAULT_WORKING_CAPACITY: usize = 32;
pub const DEFAULT_RETRIEVAL_K: usize = 5;
/// Recurrences in successful episodes needed before a subsequence becomes a tool.
pub const TOOL_RECURRENCE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingEntry {
    pub observation: String,
    pub action: Option<String>,
    pub report: FreeEnergyReport,
}

/// Bounded FIFO of recent evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingMemory {
    entries: VecDeque<WorkingEntry>,
    capacity: usize,
}

impl WorkingMemory {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self { entries: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, entry: WorkingEntry) -> Option<WorkingEntry> {
        let evicted = if self.entries.len() == self.capacity { self.entries.pop_front() } else { None };
        self.entries.push_back(entry);
        evicted
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &WorkingEntry> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

impl Default for WorkingMemory {
    fn default() -> Self {
        Self::new(DEFAULT_WORKING_CAPACITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task_id: String,
    pub observations: Vec<String>,
    pub actions: Vec<String>,
    pub outcome: String,
    pub final_f: f64,
    pub features: Vec<f64>,
    /// Stored from a rising-F episode; never replayed.
    pub avoid: bool,
    /// Stack hash of the preferences in force when the episode ran.
    pub preference_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved<'a> {
    pub index: usize,
    pub similarity: f64,
    pub episode: &'a Episode,
}

/// Append-only experience store with cosine retrieval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodicMemory {
    episodes: Vec<Episode>,
}

impl EpisodicMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, episode: Episode) -> usize {
        self.episodes.push(episode);
        self.episodes.len() - 1
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Up to `k` episodes passing `filter`, by descending similarity then
    /// insertion order.
    pub fn retrieve<F>(&self, features: &[f64], k: usize, filter: F) -> Vec<Retrieved<'_>>
    where
        F: Fn(&Episode) -> bool,
    {
        let mut hits: Vec<Retrieved<'_>> = self
            .episodes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.features.len() == features.len() && filter(e))
            .map(|(index, episode)| Retrieved { index, similarity: cosine_similarity(features, &episode.features), episode })
            .collect();
        hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.index.cmp(&b.index)));
        hits.truncate(k);
        hits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub input_contract: String,
    pub output_contract: String,
    /// Action sequence the tool expands to.
    pub executable: Vec<String>,
    pub usage_count: u64,
    pub mean_f_delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProceduralMemory {
    tools: BTreeMap<String, Tool>,
}

impl ProceduralMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tool; returns false when the name is taken.
    pub fn register(&mut self, tool: Tool) -> bool {
        if self.tools.contains_key(&tool.name) {
            return false;
        }
        self.tools.insert(tool.name.clone(), tool);
        true
    }

    pub fn get(&self, name: &str) -> Option<&Tool> {
        self.tools.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn tools(&self) -> impl Iterator<Item = &Tool> {
        self.tools.values()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Counts one use and folds `f_delta` into the running mean.
    pub fn record_use(&mut self, name: &str, f_delta: f64) -> bool {
        match self.tools.get_mut(name) {
            Some(t) => {
                t.usage_count += 1;
                t.mean_f_delta += (f_delta - t.mean_f_delta) / t.usage_count as f64;
                true
            }
            None => false,
        }
    }
}

/// Contiguous action subsequences of length ≥ 2 present in at least
/// [`TOOL_RECURRENCE`] of the given sequences, shortest first.
pub fn recurring_subsequences(sequences: &[&[String]]) -> Vec<Vec<String>> {
    let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for seq in sequences {
        let mut seen = std::collections::BTreeSet::new();
        for len in 2..=seq.len() {
            for w in seq.windows(len) {
                seen.insert(w.to_vec());
            }
        }
        for s in seen {
            *counts.entry(s).or_default() += 1;
        }
    }
    let mut out: Vec<Vec<String>> =
        counts.into_iter().filter(|(_, c)| *c >= TOOL_RECURRENCE).map(|(s, _)| s).collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: usize) -> WorkingEntry {
        WorkingEntry {
            observation: format!("o{i}"),
            action: None,
            report: FreeEnergyReport::maximal_surprise("x"),
        }
    }

    fn episode(features: Vec<f64>) -> Episode {
        Episode {
            task_id: "t".into(),
            observations: vec![],
            actions: vec![],
            outcome: "ok".into(),
            final_f: 0.0,
            features,
            avoid: false,
            preference_hash: String::new(),
        }
    }

    #[test]
    fn working_memory_is_fifo() {
        let mut w = WorkingMemory::new(3);
        for i in 0..3 {
            assert!(w.push(entry(i)).is_none());
        }
        let evicted = w.push(entry(3)).unwrap();
        assert_eq!(evicted.observation, "o0");
        assert_eq!(w.len(), 3);
        assert_eq!(w.iter().next().unwrap().observation, "o1");
    }

    #[test]
    fn retrieval_orders_by_similarity() {
        let mut m = EpisodicMemory::new();
        m.write(episode(vec![0.0, 1.0]));
        m.write(episode(vec![1.0, 0.0]));
        m.write(episode(vec![1.0, 0.1]));
        let hits = m.retrieve(&[1.0, 0.0], 2, |_| true);
        assert_eq!(hits.iter().map(|h| h.index).collect::<Vec<_>>(), vec![1, 2]);
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
        assert!(m.retrieve(&[1.0, 0.0, 0.0], 5, |_| true).is_empty());
    }

    #[test]
    fn subsequence_threshold() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let a = s(&["rotate", "verify", "submit"]);
        let b = s(&["load", "rotate", "verify"]);
        let c = s(&["rotate", "verify"]);
        let found = recurring_subsequences(&[&a, &b, &c]);
        assert_eq!(found, vec![s(&["rotate", "verify"])]);
        assert!(recurring_subsequences(&[&a, &b]).is_empty());
    }

    #[test]
    fn tool_registry_names_are_unique() {
        let mut p = ProceduralMemory::new();
        let t = Tool {
            name: "x".into(),
            input_contract: String::new(),
            output_contract: String::new(),
            executable: vec![],
            usage_count: 0,
            mean_f_delta: 0.0,
        };
        assert!(p.register(t.clone()));
        assert!(!p.register(t));
        p.record_use("x", -1.0);
        p.record_use("x", -3.0);
        let t = p.get("x").unwrap();
        assert_eq!(t.usage_count, 2);
        assert!((t.mean_f_delta + 2.0).abs() < 1e-12);
    }
}
