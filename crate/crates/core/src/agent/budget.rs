//! Complexity thermostat and plateau detection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exhausted {
    PlanningCycles,
    ReasoningUnits,
}

/// Per-task caps on planning cycles and reasoning units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityBudget {
    pub max_planning_cycles: u64,
    pub max_reasoning_units: u64,
    #[serde(default)]
    pub consumed_cycles: u64,
    #[serde(default)]
    pub consumed_units: u64,
    /// Units charged across every task; never reset.
    #[serde(default)]
    pub lifetime_units: u64,
}

impl ComplexityBudget {
    pub fn new(max_planning_cycles: u64, max_reasoning_units: u64) -> Self {
        Self { max_planning_cycles, max_reasoning_units, consumed_cycles: 0, consumed_units: 0, lifetime_units: 0 }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX, u64::MAX)
    }

    pub fn start_cycle(&mut self) -> Result<(), Exhausted> {
        if self.consumed_cycles >= self.max_planning_cycles {
            return Err(Exhausted::PlanningCycles);
        }
        self.consumed_cycles += 1;
        Ok(())
    }

    pub fn charge(&mut self, units: u64) -> Result<(), Exhausted> {
        match self.consumed_units.checked_add(units) {
            Some(total) if total <= self.max_reasoning_units => {
                self.consumed_units = total;
                self.lifetime_units += units;
                Ok(())
            }
            _ => Err(Exhausted::ReasoningUnits),
        }
    }

    pub fn reset(&mut self) {
        self.consumed_cycles = 0;
        self.consumed_units = 0;
    }
}

impl Default for ComplexityBudget {
    fn default() -> Self {
        Self::new(64, 4096)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauTarget {
    Vfe,
    Efe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauDetector {
    pub window: usize,
    pub epsilon: f64,
    pub target: PlateauTarget,
}

impl PlateauDetector {
    pub fn new(target: PlateauTarget) -> Self {
        Self { window: 8, epsilon: 0.02, target }
    }

    /// True when the range of the last `window` values is within
    /// `epsilon · max(|mean|, 1e-6)`.
    pub fn detect(&self, series: &[f64]) -> bool {
        if self.window == 0 || series.len() < self.window {
            return false;
        }
        let tail = &series[series.len() - self.window..];
        let max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        max - min <= self.epsilon * mean.abs().max(1e-6)
    }
}
