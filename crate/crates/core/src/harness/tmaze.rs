//! T-maze: a cue location reveals which arm holds the reward.
//!
//! Hidden state is location × reward side. Entering an arm ends the
//! episode, and an episode allows at most two moves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{AgentConfig, AgentNode, PreferenceFragment};
use crate::generative::{
    CategoricalDist, GenerativeModel, LikelihoodModel, ModelError, PreferenceModel, PriorBelief, TransitionModel,
};
use crate::hierarchy::Pathway;
use crate::trace::{Event, TraceLog};

pub const LOCATIONS: [&str; 4] = ["start", "cue", "left", "right"];
pub const OBSERVATIONS: [&str; 7] =
    ["start", "cue_left", "cue_right", "left_reward", "left_no_reward", "right_reward", "right_no_reward"];
pub const ACTIONS: [&str; 3] = ["go_cue", "go_left", "go_right"];
pub const MAX_MOVES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TMazeParams {
    pub cue_accuracy: f64,
    pub reward_probability: f64,
    pub reward_pref: f64,
    pub punishment_pref: f64,
}

impl Default for TMazeParams {
    fn default() -> Self {
        Self { cue_accuracy: 0.98, reward_probability: 0.9, reward_pref: 3.0, punishment_pref: -6.0 }
    }
}

pub fn state_labels() -> Vec<String> {
    LOCATIONS.iter().flat_map(|l| ["left", "right"].map(|s| format!("{l}|reward_{s}"))).collect()
}

fn labels(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Observation probabilities at `location` when the reward is on `side`.
fn emission(p: &TMazeParams, location: usize, side: usize) -> Vec<f64> {
    let mut row = vec![0.0; OBSERVATIONS.len()];
    let (acc, rew) = (p.cue_accuracy, p.reward_probability);
    match location {
        0 => row[0] = 1.0,
        1 => {
            row[1 + side] = acc;
            row[2 - side] = 1.0 - acc;
        }
        arm => {
            let base = if arm == 2 { 3 } else { 5 };
            let hit = if arm - 2 == side { rew } else { 1.0 - rew };
            row[base] = hit;
            row[base + 1] = 1.0 - hit;
        }
    }
    row
}

/// The generative model with `P(reward on left) = prior_left`.
pub fn tmaze_model(prior_left: f64, p: &TMazeParams) -> Result<GenerativeModel, ModelError> {
    let states = state_labels();
    let obs = labels(&OBSERVATIONS);
    let rows: Vec<Vec<f64>> = (0..8).map(|s| emission(p, s / 2, s % 2)).collect();
    let notes = states.iter().map(|s| format!("emissions at {s}")).collect();
    let a = LikelihoodModel::from_matrix(&obs, &rows, notes)?;
    let matrices: Vec<Vec<Vec<f64>>> = (1..=3)
        .map(|target| {
            (0..8)
                .map(|s| {
                    let (loc, side) = (s / 2, s % 2);
                    let next = if loc >= 2 { loc } else { target };
                    let mut row = vec![0.0; 8];
                    row[next * 2 + side] = 1.0;
                    row
                })
                .collect()
        })
        .collect();
    let b = TransitionModel::from_matrices(
        &states,
        labels(&ACTIONS),
        &matrices,
        vec!["walk to the cue".into(), "enter the left arm".into(), "enter the right arm".into()],
    )?;
    let (r, q) = (p.reward_pref, p.punishment_pref);
    let c = PreferenceModel::new(obs, vec![0.0, 0.0, 0.0, r, q, r, q], Default::default(), vec![], 1.0)?;
    let mut d = vec![0.0; 8];
    d[0] = prior_left;
    d[1] = 1.0 - prior_left;
    GenerativeModel::new(a, b, c, PriorBelief::new(CategoricalDist::new(states, d)?, vec![]))
}

/// A T-maze agent planning two moves ahead.
pub fn tmaze_agent(id: &str, prior_left: f64, p: &TMazeParams) -> Result<AgentNode, ModelError> {
    let config = AgentConfig { horizon: 2, ..AgentConfig::default() };
    Ok(AgentNode::new(id, "T-maze forager", tmaze_model(prior_left, p)?, config))
}

/// Layer-1 fragment that makes the right arm the preferred one: left
/// outcomes drop to the punishment level and right outcomes rise to the
/// reward level.
pub fn flip_fragment(p: &TMazeParams) -> PreferenceFragment {
    let d = p.reward_pref - p.punishment_pref;
    PreferenceFragment::new([("left_reward".to_string(), -d), ("right_no_reward".to_string(), d)], 1.0)
}

#[derive(Debug, Clone)]
pub struct TMazeEnv {
    pub params: TMazeParams,
    pub reward_side: Side,
    pub location: usize,
    pub moves: u32,
    fixed_side: Option<Side>,
    rng: ChaCha8Rng,
}

impl TMazeEnv {
    pub fn new(seed: u64, params: TMazeParams) -> Self {
        Self { params, reward_side: Side::Left, location: 0, moves: 0, fixed_side: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Keeps the reward on one side in every episode.
    pub fn with_side(mut self, side: Side) -> Self {
        self.fixed_side = Some(side);
        self
    }

    pub fn reset(&mut self) -> String {
        self.reward_side = self.fixed_side.unwrap_or_else(|| if self.rng.gen_bool(0.5) { Side::Left } else { Side::Right });
        self.location = 0;
        self.moves = 0;
        self.observe()
    }

    pub fn finished(&self) -> bool {
        self.location >= 2 || self.moves >= MAX_MOVES
    }

    fn observe(&mut self) -> String {
        let side = match self.reward_side {
            Side::Left => 0,
            Side::Right => 1,
        };
        let row = emission(&self.params, self.location, side);
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return OBSERVATIONS[i].to_string();
            }
        }
        OBSERVATIONS[row.iter().rposition(|p| *p > 0.0).unwrap_or(0)].to_string()
    }

    pub fn step(&mut self, action: &str) -> Result<String, HarnessError> {
        let target = ACTIONS
            .iter()
            .position(|a| *a == action)
            .ok_or_else(|| HarnessError::InvalidRequest(format!("unknown T-maze action '{action}'")))?
            + 1;
        if self.location < 2 {
            self.location = target;
        }
        self.moves += 1;
        Ok(self.observe())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub reward_side: Side,
    pub moves: Vec<String>,
    pub observations: Vec<String>,
    pub outcome: Option<String>,
}

impl EpisodeLog {
    pub fn first_move(&self) -> Option<&str> {
        self.moves.first().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickOutcome {
    Moved,
    EpisodeFinished,
}

/// Episode loop advanced one tick at a time, so callers can intervene
/// between ticks.
#[derive(Debug, Clone)]
pub struct TMazeRun {
    pub agent: AgentNode,
    pub env: TMazeEnv,
    pub log: Vec<EpisodeLog>,
    current: Option<EpisodeLog>,
    pending: String,
    episode: u64,
}

impl TMazeRun {
    pub fn new(agent: AgentNode, env: TMazeEnv) -> Self {
        Self { agent, env, log: Vec::new(), current: None, pending: String::new(), episode: 0 }
    }

    pub fn in_episode(&self) -> bool {
        self.current.is_some()
    }

    pub fn episodes_done(&self) -> u64 {
        self.log.len() as u64
    }

    /// One perception-planning-action cycle.
    pub fn step(&mut self, trace: &mut TraceLog) -> Result<TickOutcome, HarnessError> {
        if self.current.is_none() {
            self.episode += 1;
            self.agent.begin_task(&format!("tmaze-{}", self.episode), vec![1.0], None, trace);
            self.pending = self.env.reset();
            self.current = Some(EpisodeLog {
                episode: self.episode,
                reward_side: self.env.reward_side,
                moves: Vec::new(),
                observations: Vec::new(),
                outcome: None,
            });
        }
        trace.advance_tick();
        let obs = std::mem::take(&mut self.pending);
        self.agent.perceive(&obs, trace)?;
        self.agent.heartbeat(trace);
        let ep = self.current.as_mut().expect("episode in progress");
        ep.observations.push(obs.clone());
        if self.env.finished() {
            let outcome = (self.env.location >= 2).then(|| obs.clone());
            return self.finish(outcome, trace);
        }
        self.agent.select_mode(trace)?;
        let plan = self.agent.plan(trace)?;
        let Some(action) = plan.next_action.filter(|_| !plan.postponed) else {
            return self.finish(None, trace);
        };
        self.agent.act(&action, Pathway::DirectExecution, trace)?;
        self.pending = self.env.step(&action)?;
        self.current.as_mut().expect("episode in progress").moves.push(action);
        Ok(TickOutcome::Moved)
    }

    fn finish(&mut self, outcome: Option<String>, trace: &mut TraceLog) -> Result<TickOutcome, HarnessError> {
        let mut ep = self.current.take().expect("episode in progress");
        ep.outcome = outcome;
        let rewarded = ep.outcome.as_deref().is_some_and(|o| o.ends_with("_reward") && !o.ends_with("no_reward"));
        self.agent.consolidate(ep.outcome.as_deref().unwrap_or("none"), rewarded, trace);
        trace.emit(
            self.agent.id(),
            Event::TMazeEpisode {
                episode: ep.episode,
                reward_side: ep.reward_side.name().to_string(),
                first_move: ep.first_move().map(str::to_string),
                outcome: ep.outcome.clone(),
            },
        );
        self.log.push(ep);
        Ok(TickOutcome::EpisodeFinished)
    }
}

/// Runs whole episodes and returns the choice log.
pub fn run_tmaze(agent: AgentNode, episodes: u64, seed: u64, trace: &mut TraceLog) -> Result<Vec<EpisodeLog>, HarnessError> {
    let params = TMazeParams::default();
    let mut run = TMazeRun::new(agent, TMazeEnv::new(seed, params));
    run.agent.announce(trace);
    while run.episodes_done() < episodes {
        run.step(trace)?;
    }
    Ok(run.log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::{compute_efe, Policy};

    fn g(model: &GenerativeModel, actions: &[&str]) -> f64 {
        let p = Policy { id: 0, actions: labels(actions) };
        compute_efe(&p, model, &model.prior().dist).unwrap().g_form2
    }

    #[test]
    fn model_rows_are_distributions() {
        let m = tmaze_model(0.5, &TMazeParams::default()).unwrap();
        assert_eq!(m.state_labels().len(), 8);
        assert_eq!(m.observation_labels().len(), 7);
    }

    #[test]
    fn cue_first_under_uniform_prior() {
        let m = tmaze_model(0.5, &TMazeParams::default()).unwrap();
        assert!(g(&m, &["go_cue", "go_left"]) < g(&m, &["go_left", "go_left"]));
        assert!(g(&m, &["go_cue", "go_right"]) < g(&m, &["go_right", "go_right"]));
        let m = tmaze_model(0.99, &TMazeParams::default()).unwrap();
        assert!(g(&m, &["go_left", "go_left"]) < g(&m, &["go_cue", "go_left"]));
    }

    #[test]
    fn first_moves_follow_the_prior() {
        let p = TMazeParams::default();
        let mut trace = TraceLog::new();
        let log = run_tmaze(tmaze_agent("a", 0.5, &p).unwrap(), 3, 1, &mut trace).unwrap();
        assert!(log.iter().all(|e| e.first_move() == Some("go_cue")));
        let log = run_tmaze(tmaze_agent("b", 0.99, &p).unwrap(), 3, 1, &mut TraceLog::new()).unwrap();
        assert!(log.iter().all(|e| e.first_move() == Some("go_left")));
        assert!(log.iter().all(|e| e.moves.len() <= 2));
    }

    #[test]
    fn cue_then_matching_arm() {
        let p = TMazeParams::default();
        let mut trace = TraceLog::new();
        let log = run_tmaze(tmaze_agent("a", 0.5, &p).unwrap(), 20, 4, &mut trace).unwrap();
        for e in &log {
            if e.observations.get(1).map(String::as_str) == Some("cue_left") {
                assert_eq!(e.moves.get(1).map(String::as_str), Some("go_left"));
            }
            if e.observations.get(1).map(String::as_str) == Some("cue_right") {
                assert_eq!(e.moves.get(1).map(String::as_str), Some("go_right"));
            }
        }
    }

    #[test]
    fn flip_mid_episode_changes_the_arm() {
        let p = TMazeParams::default();
        let mut trace = TraceLog::new();
        let env = TMazeEnv::new(2, p.clone()).with_side(Side::Left);
        let mut run = TMazeRun::new(tmaze_agent("a", 0.5, &p).unwrap(), env);
        run.step(&mut trace).unwrap();
        assert_eq!(run.env.location, 1);
        run.agent.update_preferences(1, flip_fragment(&p), "operator", &mut trace).unwrap();
        run.step(&mut trace).unwrap();
        assert_eq!(run.log.len(), 0);
        assert_eq!(run.env.location, 3);
    }
}
