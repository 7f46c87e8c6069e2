//! VFE-based reputation and budget allocation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::trace::{Event, TraceRecord};

pub const DEFAULT_DECAY: f64 = 0.9;
pub const COMPETENCE_THRESHOLD: f64 = 0.8;
pub const DEFAULT_TEMPERATURE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub ewma: f64,
    pub task_count: u64,
    pub last_seen: u64,
}

/// Per-agent EWMA of reported free energy. The first report seeds the
/// average; later ones update it as `λ·ewma + (1-λ)·f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReputationLedger {
    pub decay: f64,
    entries: BTreeMap<String, LedgerEntry>,
}

impl Default for ReputationLedger {
    fn default() -> Self {
        Self::new(DEFAULT_DECAY)
    }
}

impl ReputationLedger {
    pub fn new(decay: f64) -> Self {
        Self { decay, entries: BTreeMap::new() }
    }

    pub fn record(&mut self, agent: &str, f: f64, tick: u64) -> &LedgerEntry {
        let f = f.max(0.0);
        let decay = self.decay;
        let e = self
            .entries
            .entry(agent.to_string())
            .and_modify(|e| {
                e.ewma = decay * e.ewma + (1.0 - decay) * f;
                e.task_count += 1;
                e.last_seen = tick;
            })
            .or_insert(LedgerEntry { ewma: f, task_count: 1, last_seen: tick });
        e
    }

    pub fn get(&self, agent: &str) -> Option<&LedgerEntry> {
        self.entries.get(agent)
    }

    pub fn ewma(&self, agent: &str) -> Option<f64> {
        self.entries.get(agent).map(|e| e.ewma)
    }

    pub fn entries(&self) -> &BTreeMap<String, LedgerEntry> {
        &self.entries
    }

    /// Rebuilds the ledger from the `LedgerUpdate` events of a trace.
    pub fn replay(records: &[TraceRecord], decay: f64) -> Self {
        let mut ledger = Self::new(decay);
        for r in records {
            if let Event::LedgerUpdate { subject, reported_f, .. } = &r.event {
                ledger.record(subject, *reported_f, r.tick);
            }
        }
        ledger
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationParams {
    pub temperature: f64,
    pub competence_threshold: f64,
}

impl Default for AllocationParams {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, competence_threshold: COMPETENCE_THRESHOLD }
    }
}

/// Real-valued shares before rounding.
pub fn allocation_weights(ewmas: &[Option<f64>], params: &AllocationParams) -> Vec<f64> {
    let n = ewmas.len();
    let min = ewmas.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    if min >= params.competence_threshold {
        return vec![1.0 / n as f64; n];
    }
    let logits: Vec<f64> = ewmas.iter().map(|e| e.map_or(f64::NEG_INFINITY, |v| -v / params.temperature)).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Integer budget shares summing exactly to `budget`.
///
/// Weights follow a softmax over `-EWMA/τ` when some candidate is competent
/// and are uniform otherwise. Rounding uses largest remainders with ties going
/// to the smaller candidate id, so results do not depend on input order.
/// Candidates absent from the ledger get no softmax weight.
pub fn allocate_resources(ledger: &ReputationLedger, candidates: &[String], budget: u64, params: &AllocationParams) -> Vec<u64> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let ewmas: Vec<Option<f64>> = candidates.iter().map(|c| ledger.ewma(c)).collect();
    let weights = allocation_weights(&ewmas, params);
    let exact: Vec<f64> = weights.iter().map(|w| w * budget as f64).collect();
    let mut shares: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = shares.iter().sum();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then_with(|| candidates[a].cmp(&candidates[b]))
    });
    for &i in order.iter().take(budget.saturating_sub(assigned) as usize) {
        shares[i] += 1;
    }
    shares
}
