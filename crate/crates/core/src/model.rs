//! Game structure: states, actions, typed agent populations and the
//! distribution-dependent transition/reward kernel.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Row-sum tolerance for transition rows and policy rows.
pub const STOCHASTIC_TOL: f64 = 1e-9;
/// Conservation tolerance for state distributions.
pub const CONSERVATION_TOL: f64 = 1e-6;

/// One refined outcome of taking `a` in `s`: where the agent ends up, whether
/// the move was involuntary (hired), with what probability and payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionOutcome {
    pub destination: usize,
    pub hired: bool,
    pub probability: f64,
    pub payoff: f64,
}

/// Transition and reward generators of a game. Both may depend on the epoch
/// `t` and on the live aggregate distribution `d` (agent counts per state).
pub trait Kernel: Send + Sync {
    fn num_states(&self) -> usize;

    fn num_actions(&self) -> usize;

    /// Actions selectable in `state`, sorted ascending. Policies never put
    /// mass outside this set.
    fn allowed_actions(&self, state: usize) -> &[usize];

    /// Writes `phi^t_d(s, a, .)` into `out` (length = number of states).
    fn transition(&self, t: usize, d: &[f64], s: usize, a: usize, out: &mut [f64]);

    /// Expected payoff of the transition `s --a--> next`.
    fn reward(&self, t: usize, d: &[f64], s: usize, a: usize, next: usize) -> f64;

    /// Transition row and per-destination rewards in one pass. Rewards of
    /// zero-probability destinations are left at 0.
    fn step(&self, t: usize, d: &[f64], s: usize, a: usize, probs: &mut [f64], rewards: &mut [f64]) {
        self.transition(t, d, s, a, probs);
        for (next, (p, r)) in probs.iter().zip(rewards.iter_mut()).enumerate() {
            *r = if *p > 0.0 { self.reward(t, d, s, a, next) } else { 0.0 };
        }
    }

    /// Outcome list used by Monte Carlo simulation. The default has one
    /// voluntary outcome per reachable destination.
    fn outcomes(&self, t: usize, d: &[f64], s: usize, a: usize) -> Vec<TransitionOutcome> {
        let n = self.num_states();
        let mut probs = vec![0.0; n];
        let mut rewards = vec![0.0; n];
        self.step(t, d, s, a, &mut probs, &mut rewards);
        probs
            .iter()
            .zip(&rewards)
            .enumerate()
            .filter(|(_, (p, _))| **p > 0.0)
            .map(|(destination, (&probability, &payoff))| TransitionOutcome {
                destination,
                hired: false,
                probability,
                payoff,
            })
            .collect()
    }

    /// Customer demand leaving `s` during `t`, if the domain has such a notion.
    fn demand(&self, _t: usize, _s: usize) -> Option<f64> {
        None
    }
}

/// How an agent type values outcomes and forms its policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rationality {
    /// Soft-max best responses against the full population, full horizon.
    PerfectlyRational { lambda: f64 },
    /// Quantal level-`level` reasoning with look-ahead `lookahead`;
    /// `level_mix[h]` is the perceived share of level-h agents (h < level).
    CognitiveHierarchy {
        lambda: f64,
        level: usize,
        lookahead: usize,
        level_mix: Vec<f64>,
    },
    /// Plans as if no other agent existed (distribution fixed at zero).
    LocallyRational { lambda: f64 },
}

impl Rationality {
    pub fn lambda(&self) -> f64 {
        match *self {
            Rationality::PerfectlyRational { lambda }
            | Rationality::LocallyRational { lambda }
            | Rationality::CognitiveHierarchy { lambda, .. } => lambda,
        }
    }

    /// Whether the agent evaluates rewards and transitions with `d = 0`.
    pub fn ignores_others(&self) -> bool {
        matches!(self, Rationality::LocallyRational { .. })
    }

    pub fn label(&self) -> String {
        match self {
            Rationality::PerfectlyRational { lambda } => format!("sofa(lambda={lambda})"),
            Rationality::LocallyRational { lambda } => format!("local(lambda={lambda})"),
            Rationality::CognitiveHierarchy {
                lambda,
                level,
                lookahead,
                ..
            } => format!("ch_qr(lambda={lambda},L={level},T={lookahead})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentType {
    pub id: String,
    pub count: usize,
    pub rationality: Rationality,
    /// Reporting group, e.g. all levels of one cognitive-hierarchy mix.
    #[serde(default)]
    pub group: String,
}

impl AgentType {
    pub fn new(id: impl Into<String>, count: usize, rationality: Rationality) -> Self {
        let id = id.into();
        AgentType {
            group: id.clone(),
            id,
            count,
            rationality,
        }
    }

    pub fn in_group(mut self, group: impl Into<String>) -> Self {
        self.group = group.into();
        self
    }
}

/// Expected (possibly fractional) number of agents per state at epoch `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    pub time: usize,
    pub counts: Vec<f64>,
}

impl StateDistribution {
    pub fn new(time: usize, counts: Vec<f64>) -> Self {
        StateDistribution { time, counts }
    }

    pub fn zeros(time: usize, states: usize) -> Self {
        StateDistribution {
            time,
            counts: vec![0.0; states],
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Time-indexed stochastic policy `pi^t(s, a)` covering epochs
/// `start .. start + epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub owner: String,
    pub start: usize,
    pub epochs: usize,
    pub states: usize,
    pub actions: usize,
    pub probs: Vec<f64>,
}

impl PolicyTable {
    /// Uniform over each state's allowed actions, for every epoch.
    pub fn uniform(kernel: &dyn Kernel, horizon: usize, owner: impl Into<String>) -> Self {
        Self::uniform_window(kernel, 0, horizon, owner)
    }

    pub fn uniform_window(kernel: &dyn Kernel, start: usize, epochs: usize, owner: impl Into<String>) -> Self {
        let states = kernel.num_states();
        let actions = kernel.num_actions();
        let mut probs = vec![0.0; epochs * states * actions];
        for t in 0..epochs {
            for s in 0..states {
                let allowed = kernel.allowed_actions(s);
                let w = 1.0 / allowed.len() as f64;
                let base = (t * states + s) * actions;
                for &a in allowed {
                    probs[base + a] = w;
                }
            }
        }
        PolicyTable {
            owner: owner.into(),
            start,
            epochs,
            states,
            actions,
            probs,
        }
    }

    pub fn zeros(owner: impl Into<String>, start: usize, epochs: usize, states: usize, actions: usize) -> Self {
        PolicyTable {
            owner: owner.into(),
            start,
            epochs,
            states,
            actions,
            probs: vec![0.0; epochs * states * actions],
        }
    }

    pub fn covers(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.epochs
    }

    #[inline]
    fn offset(&self, t: usize, s: usize) -> usize {
        debug_assert!(self.covers(t), "epoch {t} outside policy window");
        ((t - self.start) * self.states + s) * self.actions
    }

    #[inline]
    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.probs[self.offset(t, s) + a]
    }

    #[inline]
    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        let o = self.offset(t, s);
        &self.probs[o..o + self.actions]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize, s: usize) -> &mut [f64] {
        let o = self.offset(t, s);
        &mut self.probs[o..o + self.actions]
    }

    /// Copies epoch `t` of `other` into this table.
    pub fn copy_epoch_from(&mut self, other: &PolicyTable, t: usize) {
        for s in 0..self.states {
            self.row_mut(t, s).copy_from_slice(other.row(t, s));
        }
    }

    /// Largest absolute entry-wise difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &PolicyTable) -> f64 {
        if self.start != other.start || self.probs.len() != other.probs.len() {
            return f64::INFINITY;
        }
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// First `(t, s, row_sum)` violating row-stochasticity, if any.
    pub fn stochastic_violation(&self, tol: f64) -> Option<(usize, usize, f64)> {
        for t in self.start..self.start + self.epochs {
            for s in 0..self.states {
                let row = self.row(t, s);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > tol || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Some((t, s, sum));
                }
            }
        }
        None
    }
}

/// The full game: states, actions, horizon, typed populations, initial
/// distribution and the transition/reward kernel.
#[derive(Clone)]
pub struct DaapModel {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub horizon: usize,
    pub agent_types: Vec<AgentType>,
    pub initial_distribution: StateDistribution,
    pub kernel: Arc<dyn Kernel>,
}

impl fmt::Debug for DaapModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DaapModel")
            .field("states", &self.states.len())
            .field("actions", &self.actions.len())
            .field("horizon", &self.horizon)
            .field("agent_types", &self.agent_types)
            .finish_non_exhaustive()
    }
}

impl DaapModel {
    pub fn new(
        kernel: Arc<dyn Kernel>,
        horizon: usize,
        agent_types: Vec<AgentType>,
        initial_counts: Vec<f64>,
    ) -> Self {
        let states = (0..kernel.num_states()).map(|s| format!("s{s}")).collect();
        let actions = (0..kernel.num_actions()).map(|a| format!("a{a}")).collect();
        DaapModel {
            states,
            actions,
            horizon,
            agent_types,
            initial_distribution: StateDistribution::new(0, initial_counts),
            kernel,
        }
    }

    pub fn with_agent_types(mut self, agent_types: Vec<AgentType>) -> Self {
        self.agent_types = agent_types;
        self
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Total population `|P|`.
    pub fn population(&self) -> usize {
        self.agent_types.iter().map(|t| t.count).sum()
    }

    pub fn type_index(&self, id: &str) -> Option<usize> {
        self.agent_types.iter().position(|t| t.id == id)
    }
}

/// A structural invariant broken by a model, with its witness.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoStates,
    NoActions,
    ZeroHorizon,
    NoAgentTypes,
    KernelShape { states: usize, actions: usize },
    ZeroCount { agent_type: String },
    DuplicateType { agent_type: String },
    NegativeLambda { agent_type: String },
    LevelMixLength { agent_type: String, level: usize, found: usize },
    LevelMixSum { agent_type: String, sum: f64 },
    Lookahead { agent_type: String, lookahead: usize, horizon: usize },
    NoAllowedActions { state: usize },
    ActionOutOfRange { state: usize, action: usize },
    InitialLength { expected: usize, found: usize },
    NegativeInitialCount { state: usize, count: f64 },
    Conservation { expected: f64, found: f64 },
    TransitionRowSum { t: usize, probe: &'static str, state: usize, action: usize, sum: f64 },
    TransitionValue { t: usize, probe: &'static str, state: usize, action: usize, next: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoStates => write!(f, "model has no states"),
            NoActions => write!(f, "model has no actions"),
            ZeroHorizon => write!(f, "horizon must be at least 1"),
            NoAgentTypes => write!(f, "model has no agent types"),
            KernelShape { states, actions } => {
                write!(f, "kernel shape {states}x{actions} does not match state/action labels")
            }
            ZeroCount { agent_type } => write!(f, "agent type `{agent_type}` has count 0"),
            DuplicateType { agent_type } => write!(f, "agent type `{agent_type}` declared twice"),
            NegativeLambda { agent_type } => write!(f, "agent type `{agent_type}` has negative or non-finite lambda"),
            LevelMixLength { agent_type, level, found } => write!(
                f,
                "agent type `{agent_type}` at level {level} needs {level} level-mix entries, found {found}"
            ),
            LevelMixSum { agent_type, sum } => {
                write!(f, "level mix of `{agent_type}` sums to {sum}, not 1")
            }
            Lookahead { agent_type, lookahead, horizon } => write!(
                f,
                "agent type `{agent_type}` look-ahead {lookahead} outside 1..={horizon}"
            ),
            NoAllowedActions { state } => write!(f, "state {state} has no allowed actions"),
            ActionOutOfRange { state, action } => {
                write!(f, "state {state} allows out-of-range action {action}")
            }
            InitialLength { expected, found } => {
                write!(f, "initial distribution has {found} entries, expected {expected}")
            }
            NegativeInitialCount { state, count } => {
                write!(f, "initial count {count} at state {state} is negative")
            }
            Conservation { expected, found } => {
                write!(f, "initial distribution sums to {found}, population is {expected}")
            }
            TransitionRowSum { t, probe, state, action, sum } => write!(
                f,
                "transition row (t={t}, d={probe}, s={state}, a={action}) sums to {sum}"
            ),
            TransitionValue { t, probe, state, action, next, value } => write!(
                f,
                "transition (t={t}, d={probe}, s={state}, a={action}, s'={next}) = {value} outside [0,1]"
            ),
        }
    }
}

/// Checks every structural invariant of `model`. Transition rows are probed
/// at the initial distribution, the empty distribution and a uniform spread
/// of the population; each offending `(t, s, a)` is reported once.
pub fn validate_model(model: &DaapModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = model.num_states();
    let m = model.num_actions();
    if n == 0 {
        out.push(Violation::NoStates);
    }
    if m == 0 {
        out.push(Violation::NoActions);
    }
    if model.horizon == 0 {
        out.push(Violation::ZeroHorizon);
    }
    if model.agent_types.is_empty() {
        out.push(Violation::NoAgentTypes);
    }
    let kernel = model.kernel.as_ref();
    if kernel.num_states() != n || kernel.num_actions() != m {
        out.push(Violation::KernelShape {
            states: kernel.num_states(),
            actions: kernel.num_actions(),
        });
        return out;
    }

    let mut seen = HashSet::new();
    for ty in &model.agent_types {
        let id = ty.id.clone();
        if ty.count == 0 {
            out.push(Violation::ZeroCount { agent_type: id.clone() });
        }
        if !seen.insert(ty.id.as_str()) {
            out.push(Violation::DuplicateType { agent_type: id.clone() });
        }
        let lambda = ty.rationality.lambda();
        if !(lambda.is_finite() && lambda >= 0.0) {
            out.push(Violation::NegativeLambda { agent_type: id.clone() });
        }
        if let Rationality::CognitiveHierarchy {
            level,
            lookahead,
            level_mix,
            ..
        } = &ty.rationality
        {
            if level_mix.len() != *level {
                out.push(Violation::LevelMixLength {
                    agent_type: id.clone(),
                    level: *level,
                    found: level_mix.len(),
                });
            } else if *level >= 1 {
                let sum: f64 = level_mix.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL || level_mix.iter().any(|g| *g < 0.0) {
                    out.push(Violation::LevelMixSum { agent_type: id.clone(), sum });
                }
            }
            if *lookahead == 0 || *lookahead > model.horizon {
                out.push(Violation::Lookahead {
                    agent_type: id,
                    lookahead: *lookahead,
                    horizon: model.horizon,
                });
            }
        }
    }

    for s in 0..n {
        let allowed = kernel.allowed_actions(s);
        if allowed.is_empty() {
            out.push(Violation::NoAllowedActions { state: s });
        }
        for &a in allowed {
            if a >= m {
                out.push(Violation::ActionOutOfRange { state: s, action: a });
            }
        }
    }

    let d0 = &model.initial_distribution.counts;
    if d0.len() != n {
        out.push(Violation::InitialLength {
            expected: n,
            found: d0.len(),
        });
        return out;
    }
    for (s, &c) in d0.iter().enumerate() {
        if c < 0.0 {
            out.push(Violation::NegativeInitialCount { state: s, count: c });
        }
    }
    let population = model.population() as f64;
    let total: f64 = d0.iter().sum();
    if (total - population).abs() > CONSERVATION_TOL {
        out.push(Violation::Conservation {
            expected: population,
            found: total,
        });
    }
    if out.iter().any(|v| matches!(v, Violation::ActionOutOfRange { .. })) {
        return out;
    }

    let probes: [(&'static str, Vec<f64>); 3] = [
        ("d0", d0.clone()),
        ("zero", vec![0.0; n]),
        ("uniform", vec![population / n.max(1) as f64; n]),
    ];
    let mut row = vec![0.0; n];
    for t in 0..model.horizon {
        for s in 0..n {
            for &a in kernel.allowed_actions(s) {
                let mut sum_reported = false;
                let mut value_reported = false;
                for (probe, d) in &probes {
                    kernel.transition(t, d, s, a, &mut row);
                    let sum: f64 = row.iter().sum();
                    if !sum_reported && (sum - 1.0).abs() > STOCHASTIC_TOL {
                        out.push(Violation::TransitionRowSum { t, probe, state: s, action: a, sum });
                        sum_reported = true;
                    }
                    if !value_reported {
                        if let Some((next, &value)) = row
                            .iter()
                            .enumerate()
                            .find(|(_, p)| !(0.0..=1.0).contains(*p))
                        {
                            out.push(Violation::TransitionValue { t, probe, state: s, action: a, next, value });
                            value_reported = true;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Uniform policy over allowed actions (the lambda = 0 quantal policy).
pub fn uniform_policy(model: &DaapModel) -> PolicyTable {
    PolicyTable::uniform(model.kernel.as_ref(), model.horizon, "uniform")
}

/// Plain tabular kernel with an optional linear congestion penalty
/// `reward - congestion * d[next]`. Useful for small hand-built games.
#[derive(Debug, Clone)]
pub struct TabularKernel {
    states: usize,
    actions: usize,
    horizon: usize,
    /// `[t][s][a][s']`, flattened.
    transition: Vec<f64>,
    /// `[t][s][a][s']`, flattened.
    reward: Vec<f64>,
    congestion: f64,
    allowed: Vec<Vec<usize>>,
}

impl TabularKernel {
    pub fn new(
        states: usize,
        actions: usize,
        horizon: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        congestion: f64,
    ) -> Self {
        let len = horizon * states * actions * states;
        assert_eq!(transition.len(), len, "transition tensor shape");
        assert_eq!(reward.len(), len, "reward tensor shape");
        TabularKernel {
            states,
            actions,
            horizon,
            transition,
            reward,
            congestion,
            allowed: (0..states).map(|_| (0..actions).collect()).collect(),
        }
    }

    /// Deterministic "go to state `a`" dynamics (requires states == actions).
    pub fn deterministic_moves(states: usize, horizon: usize, reward: Vec<f64>, congestion: f64) -> Self {
        let mut transition = vec![0.0; horizon * states * states * states];
        for t in 0..horizon {
            for s in 0..states {
                for a in 0..states {
                    transition[((t * states + s) * states + a) * states + a] = 1.0;
                }
            }
        }
        Self::new(states, states, horizon, transition, reward, congestion)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    fn idx(&self, t: usize, s: usize, a: usize) -> usize {
        ((t * self.states + s) * self.actions + a) * self.states
    }
}

impl Kernel for TabularKernel {
    fn num_states(&self) -> usize {
        self.states
    }

    fn num_actions(&self) -> usize {
        self.actions
    }

    fn allowed_actions(&self, state: usize) -> &[usize] {
        &self.allowed[state]
    }

    fn transition(&self, t: usize, _d: &[f64], s: usize, a: usize, out: &mut [f64]) {
        let i = self.idx(t, s, a);
        out.copy_from_slice(&self.transition[i..i + self.states]);
    }

    fn reward(&self, t: usize, d: &[f64], s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.idx(t, s, a) + next] - self.congestion * d[next]
    }
}
