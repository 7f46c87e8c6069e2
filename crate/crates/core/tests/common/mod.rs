//! Random model generation and reference computations shared by the
//! property tests and the acceptance harness. The oracles below work on raw
//! matrices with their own arithmetic and never call the library's
//! free-energy code.

#![allow(dead_code)]

use aif_core::generative::{
    CategoricalDist, GenerativeModel, LikelihoodModel, PreferenceModel, PriorBelief, TransitionModel,
};
use rand::Rng;

/// Smallest weight drawn for any model entry, keeping supports full.
pub const WEIGHT_FLOOR: f64 = 1e-6;
pub const MAX_DIM: usize = 8;

pub fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn random_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(WEIGHT_FLOOR..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Raw matrices of a random model.
#[derive(Debug, Clone)]
pub struct RawModel {
    /// `a[s][o] = P(o | s)`
    pub a: Vec<Vec<f64>>,
    /// `b[u][s][t] = P(t | s, u)`
    pub b: Vec<Vec<Vec<f64>>>,
    pub log_pref: Vec<f64>,
    pub precision: f64,
    pub d: Vec<f64>,
}

impl RawModel {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.gen_range(1..=MAX_DIM);
        let m = rng.gen_range(1..=MAX_DIM);
        let k = rng.gen_range(1..=3);
        Self {
            a: (0..n).map(|_| random_weights(rng, m)).collect(),
            b: (0..k).map(|_| (0..n).map(|_| random_weights(rng, n)).collect()).collect(),
            log_pref: (0..m).map(|_| rng.gen_range(-4.0..4.0)).collect(),
            precision: rng.gen_range(0.25..4.0),
            d: random_weights(rng, n),
        }
    }

    pub fn states(&self) -> usize {
        self.d.len()
    }

    pub fn observations(&self) -> usize {
        self.log_pref.len()
    }

    pub fn actions(&self) -> usize {
        self.b.len()
    }

    pub fn build(&self) -> GenerativeModel {
        let (n, m, k) = (self.states(), self.observations(), self.actions());
        let s = labels("s", n);
        let o = labels("o", m);
        let a = LikelihoodModel::from_matrix(&o, &self.a, vec![String::new(); n]).unwrap();
        let b = TransitionModel::from_matrices(&s, labels("u", k), &self.b, vec![String::new(); k]).unwrap();
        let c = PreferenceModel::new(o, self.log_pref.clone(), Default::default(), vec![], self.precision).unwrap();
        let d = PriorBelief::new(CategoricalDist::new(s, self.d.clone()).unwrap(), vec![]);
        GenerativeModel::new(a, b, c, d).unwrap()
    }

    /// `P(o | C)` as a softmax of the precision-scaled log preferences.
    pub fn preferred(&self) -> Vec<f64> {
        let scaled: Vec<f64> = self.log_pref.iter().map(|v| v * self.precision).collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

pub fn ln(x: f64) -> f64 {
    x.max(1e-12).ln()
}

/// `F = Σ_s q(s) [ln q(s) − ln P(o, s)]`, straight from the definition.
pub fn vfe_definition(q: &[f64], raw: &RawModel, o: usize) -> f64 {
    q.iter()
        .enumerate()
        .filter(|(_, &qs)| qs > 0.0)
        .map(|(s, &qs)| qs * (qs.ln() - (raw.d[s] * raw.a[s][o]).ln()))
        .sum()
}

/// `P(o) = Σ_s D(s) A(o|s)`.
pub fn evidence(raw: &RawModel, o: usize) -> f64 {
    raw.d.iter().enumerate().map(|(s, d)| d * raw.a[s][o]).sum()
}

pub fn posterior(raw: &RawModel, o: usize) -> Vec<f64> {
    let z = evidence(raw, o);
    raw.d.iter().enumerate().map(|(s, d)| d * raw.a[s][o] / z).collect()
}

/// Reference expected free energy: returns `(g_form1, g_form2)`.
///
/// Information gain is computed as the mutual information between predicted
/// states and observations, `Σ_{s,o} q(s) A(o|s) ln(A(o|s) / q(o))`.
pub fn efe_reference(raw: &RawModel, belief: &[f64], policy: &[usize]) -> (f64, f64) {
    let c = raw.preferred();
    let (mut g1, mut g2) = (0.0, 0.0);
    let mut q = belief.to_vec();
    for &u in policy {
        let mut next = vec![0.0; q.len()];
        for (s, qs) in q.iter().enumerate() {
            for (t, p) in raw.b[u][s].iter().enumerate() {
                next[t] += qs * p;
            }
        }
        q = next;
        let m = raw.observations();
        let qo: Vec<f64> = (0..m).map(|o| q.iter().enumerate().map(|(s, qs)| qs * raw.a[s][o]).sum()).collect();
        let mut mutual = 0.0;
        let mut ambiguity = 0.0;
        for (s, qs) in q.iter().enumerate() {
            for o in 0..m {
                let p = raw.a[s][o];
                if p > 0.0 && *qs > 0.0 {
                    mutual += qs * p * (p / qo[o]).ln();
                    ambiguity -= qs * p * p.ln();
                }
            }
        }
        let pragmatic: f64 = (0..m).map(|o| qo[o] * ln(c[o])).sum();
        let risk: f64 = (0..m).filter(|&o| qo[o] > 0.0).map(|o| qo[o] * (qo[o].ln() - ln(c[o]))).sum();
        g1 += -mutual - pragmatic;
        g2 += ambiguity + risk;
    }
    (g1, g2)
}
