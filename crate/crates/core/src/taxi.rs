//! Taxi-fleet instance of the game.
//!
//! Zones are both states and actions (the zone a driver intends to move
//! to). A taxi in zone `s` is hired with a probability that depends on how
//! the outgoing customer flow `F = sum_j fl(s, j)` compares with the number
//! of taxis `d_s` in the zone:
//!
//! - `F >= d_s`: every taxi is hired, destination drawn from the flows;
//! - `F < d_s`: a taxi is hired towards `j` with probability `fl(s, j) / d_s`,
//!   and otherwise moves voluntarily (and deterministically) to its action.
//!
//! Hired moves earn `Re(s, j) - Co(s, j)`; voluntary moves cost `Co(s, a)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DaapError, Result};
use crate::model::{AgentType, DaapModel, Kernel, Rationality, StateDistribution, TransitionOutcome};

/// A zone-by-zone matrix that is either constant over time or given per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMatrix {
    /// Row-major `zones x zones`.
    Static(Vec<f64>),
    /// Row-major `horizon x zones x zones`.
    PerEpoch(Vec<f64>),
}

impl TimeMatrix {
    #[inline]
    pub fn get(&self, t: usize, i: usize, j: usize, zones: usize) -> f64 {
        match self {
            TimeMatrix::Static(m) => m[i * zones + j],
            TimeMatrix::PerEpoch(m) => m[(t * zones + i) * zones + j],
        }
    }

    fn expected_len(&self, horizon: usize, zones: usize) -> usize {
        match self {
            TimeMatrix::Static(_) => zones * zones,
            TimeMatrix::PerEpoch(_) => horizon * zones * zones,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            TimeMatrix::Static(m) | TimeMatrix::PerEpoch(m) => m,
        }
    }
}

/// Zones, time-indexed customer flows, revenue/cost tables and the fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxiScenario {
    pub zones: Vec<String>,
    pub horizon: usize,
    /// Dense `horizon x zones x zones` customer flows `fl^t(i, j)`.
    pub flows: Vec<f64>,
    pub revenue: TimeMatrix,
    pub cost: TimeMatrix,
    pub fleet_size: usize,
    pub initial_counts: Vec<f64>,
    /// Voluntary-move neighbours of each zone, sorted.
    pub adjacency: Vec<Vec<usize>>,
    out_flow: Vec<f64>,
}

impl TaxiScenario {
    /// Builds and validates a scenario. Adjacency lists are sorted and
    /// deduplicated.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        zones: Vec<String>,
        horizon: usize,
        flows: Vec<f64>,
        revenue: TimeMatrix,
        cost: TimeMatrix,
        fleet_size: usize,
        initial_counts: Vec<f64>,
        mut adjacency: Vec<Vec<usize>>,
    ) -> Result<Self> {
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        let n = zones.len();
        let mut scenario = TaxiScenario {
            zones,
            horizon,
            flows,
            revenue,
            cost,
            fleet_size,
            initial_counts,
            adjacency,
            out_flow: Vec::new(),
        };
        let problems = scenario.problems();
        if !problems.is_empty() {
            return Err(DaapError::InvalidScenario(problems));
        }
        scenario.out_flow = (0..horizon * n)
            .map(|ti| scenario.flows[ti * n..(ti + 1) * n].iter().sum())
            .collect();
        Ok(scenario)
    }

    fn problems(&self) -> Vec<String> {
        let n = self.zones.len();
        let h = self.horizon;
        let mut out = Vec::new();
        if n == 0 {
            out.push("zones: empty".to_string());
        }
        if h == 0 {
            out.push("horizon: must be at least 1".to_string());
        }
        if self.flows.len() != h * n * n {
            out.push(format!("flows: expected {} entries, found {}", h * n * n, self.flows.len()));
        } else if let Some(i) = self.flows.iter().position(|f| !(f.is_finite() && *f >= 0.0)) {
            out.push(format!("flows: entry {i} is negative or non-finite"));
        }
        for (name, m) in [("revenue", &self.revenue), ("cost", &self.cost)] {
            let len = m.expected_len(h, n);
            if m.values().len() != len {
                out.push(format!("{name}: expected {len} entries, found {}", m.values().len()));
            } else if m.values().iter().any(|v| !v.is_finite()) {
                out.push(format!("{name}: non-finite entry"));
            }
        }
        if self.cost.values().iter().any(|c| *c < 0.0) {
            out.push("cost: negative entry".to_string());
        }
        if self.initial_counts.len() != n {
            out.push(format!(
                "initial_counts: expected {n} entries, found {}",
                self.initial_counts.len()
            ));
        } else {
            if self.initial_counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                out.push("initial_counts: negative or non-finite entry".to_string());
            }
            let total: f64 = self.initial_counts.iter().sum();
            if (total - self.fleet_size as f64).abs() > 1e-6 {
                out.push(format!(
                    "initial_counts: sum {total} differs from fleet_size {}",
                    self.fleet_size
                ));
            }
        }
        if self.adjacency.len() != n {
            out.push(format!("adjacency: expected {n} lists, found {}", self.adjacency.len()));
        } else {
            for (z, adj) in self.adjacency.iter().enumerate() {
                if adj.is_empty() {
                    out.push(format!("adjacency: zone {z} has no voluntary neighbour"));
                }
                if adj.iter().any(|&j| j >= n) {
                    out.push(format!("adjacency: zone {z} lists an out-of-range zone"));
                }
            }
        }
        out
    }

    pub fn num_zones(&self) -> usize {
        self.zones.len()
    }

    #[inline]
    pub fn flow(&self, t: usize, i: usize, j: usize) -> f64 {
        let n = self.zones.len();
        self.flows[(t * n + i) * n + j]
    }

    /// Total customer flow out of zone `i` during epoch `t`.
    #[inline]
    pub fn out_flow(&self, t: usize, i: usize) -> f64 {
        self.out_flow[t * self.zones.len() + i]
    }

    #[inline]
    pub fn revenue(&self, t: usize, i: usize, j: usize) -> f64 {
        self.revenue.get(t, i, j, self.zones.len())
    }

    #[inline]
    pub fn cost(&self, t: usize, i: usize, j: usize) -> f64 {
        self.cost.get(t, i, j, self.zones.len())
    }

    pub fn total_flow(&self) -> f64 {
        self.out_flow.iter().sum()
    }

    /// Splits the move mass of `(t, s, a)` into hired mass per destination
    /// and the voluntary mass that lands on `a`.
    fn split(&self, t: usize, taxis: f64, s: usize, hired: &mut [f64]) -> f64 {
        let n = self.zones.len();
        let total = self.out_flow(t, s);
        let row = &self.flows[(t * n + s) * n..(t * n + s + 1) * n];
        if total >= taxis {
            if total > 0.0 {
                for (h, f) in hired.iter_mut().zip(row) {
                    *h = f / total;
                }
                0.0
            } else {
                // no taxis and no customers
                hired.fill(0.0);
                1.0
            }
        } else {
            for (h, f) in hired.iter_mut().zip(row) {
                *h = f / taxis;
            }
            1.0 - total / taxis
        }
    }

    fn check_action(&self, s: usize, a: usize) -> Result<()> {
        let n = self.zones.len();
        if s >= n || a >= n {
            return Err(DaapError::param("zone", format!("zone index out of range (s={s}, a={a})")));
        }
        if self.adjacency[s].binary_search(&a).is_err() {
            return Err(DaapError::param(
                "action",
                format!("zone {a} is not a voluntary neighbour of zone {s}"),
            ));
        }
        Ok(())
    }

    fn check_distribution(&self, t: usize, d: &[f64]) -> Result<()> {
        if t >= self.horizon {
            return Err(DaapError::param("t", format!("epoch {t} outside horizon {}", self.horizon)));
        }
        if d.len() != self.zones.len() {
            return Err(DaapError::param(
                "d",
                format!("distribution has {} entries, expected {}", d.len(), self.zones.len()),
            ));
        }
        Ok(())
    }
}

/// Destination distribution of a taxi in `s` intending to move to `a`.
pub fn taxi_transition(
    scenario: &TaxiScenario,
    t: usize,
    d: &StateDistribution,
    s: usize,
    a: usize,
) -> Result<Vec<f64>> {
    scenario.check_distribution(t, &d.counts)?;
    scenario.check_action(s, a)?;
    let mut row = vec![0.0; scenario.num_zones()];
    scenario.transition(t, &d.counts, s, a, &mut row);
    Ok(row)
}

/// Hired/voluntary refinement of [`taxi_transition`].
pub fn taxi_outcomes(
    scenario: &TaxiScenario,
    t: usize,
    d: &StateDistribution,
    s: usize,
    a: usize,
) -> Result<Vec<TransitionOutcome>> {
    scenario.check_distribution(t, &d.counts)?;
    scenario.check_action(s, a)?;
    Ok(scenario.outcomes(t, &d.counts, s, a))
}

/// Probability-weighted payoff of the outcomes that land on `next`.
pub fn taxi_reward(
    scenario: &TaxiScenario,
    t: usize,
    d: &StateDistribution,
    s: usize,
    a: usize,
    next: usize,
) -> Result<f64> {
    let outcomes = taxi_outcomes(scenario, t, d, s, a)?;
    let (mass, weighted) = outcomes
        .iter()
        .filter(|o| o.destination == next)
        .fold((0.0, 0.0), |(m, w), o| (m + o.probability, w + o.probability * o.payoff));
    if mass <= 0.0 {
        return Err(DaapError::UndefinedDestination {
            t,
            state: s,
            action: a,
            next,
        });
    }
    Ok(weighted / mass)
}

impl Kernel for TaxiScenario {
    fn num_states(&self) -> usize {
        self.zones.len()
    }

    fn num_actions(&self) -> usize {
        self.zones.len()
    }

    fn allowed_actions(&self, state: usize) -> &[usize] {
        &self.adjacency[state]
    }

    fn transition(&self, t: usize, d: &[f64], s: usize, a: usize, out: &mut [f64]) {
        let voluntary = self.split(t, d[s], s, out);
        out[a] += voluntary;
    }

    fn reward(&self, t: usize, d: &[f64], s: usize, a: usize, next: usize) -> f64 {
        let n = self.zones.len();
        let mut probs = vec![0.0; n];
        let mut rewards = vec![0.0; n];
        self.step(t, d, s, a, &mut probs, &mut rewards);
        rewards[next]
    }

    fn step(&self, t: usize, d: &[f64], s: usize, a: usize, probs: &mut [f64], rewards: &mut [f64]) {
        let voluntary = self.split(t, d[s], s, probs);
        for (j, (p, r)) in probs.iter().zip(rewards.iter_mut()).enumerate() {
            *r = if *p > 0.0 {
                self.revenue(t, s, j) - self.cost(t, s, j)
            } else {
                0.0
            };
        }
        if voluntary > 0.0 {
            let hired = probs[a];
            let idle = -self.cost(t, s, a);
            probs[a] = hired + voluntary;
            rewards[a] = (hired * rewards[a] + voluntary * idle) / probs[a];
        }
    }

    fn outcomes(&self, t: usize, d: &[f64], s: usize, a: usize) -> Vec<TransitionOutcome> {
        let n = self.zones.len();
        let mut hired = vec![0.0; n];
        let voluntary = self.split(t, d[s], s, &mut hired);
        let mut out: Vec<TransitionOutcome> = hired
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(j, &p)| TransitionOutcome {
                destination: j,
                hired: true,
                probability: p,
                payoff: self.revenue(t, s, j) - self.cost(t, s, j),
            })
            .collect();
        if voluntary > 0.0 {
            out.push(TransitionOutcome {
                destination: a,
                hired: false,
                probability: voluntary,
                payoff: -self.cost(t, s, a),
            });
        }
        out
    }

    fn demand(&self, t: usize, s: usize) -> Option<f64> {
        Some(self.out_flow(t, s))
    }
}

/// Compiles a scenario into a game with a single perfectly rational type
/// (lambda = 1) covering the whole fleet.
pub fn compile_to_daap(scenario: &TaxiScenario) -> Result<DaapModel> {
    compile_with_types(
        scenario,
        vec![AgentType::new(
            "sofa",
            scenario.fleet_size,
            Rationality::PerfectlyRational { lambda: 1.0 },
        )],
    )
}

/// Compiles a scenario with an explicit population. Type counts must add up
/// to the fleet size.
pub fn compile_with_types(scenario: &TaxiScenario, agent_types: Vec<AgentType>) -> Result<DaapModel> {
    let problems = scenario.problems();
    if !problems.is_empty() {
        return Err(DaapError::InvalidScenario(problems));
    }
    let kernel: Arc<dyn Kernel> = Arc::new(scenario.clone());
    let model = DaapModel {
        states: scenario.zones.clone(),
        actions: scenario.zones.clone(),
        horizon: scenario.horizon,
        agent_types,
        initial_distribution: StateDistribution::new(0, scenario.initial_counts.clone()),
        kernel,
    };
    let violations = crate::model::validate_model(&model);
    if !violations.is_empty() {
        return Err(DaapError::InvalidModel(violations.iter().map(|v| v.to_string()).collect()));
    }
    Ok(model)
}
