//! Soft-max flow averaging (SoFA): fictitious play over state-action flows
//! with soft-max best responses against the aggregate population.

use serde::{Deserialize, Serialize};

use crate::behavior::{quantal_response, rolling_ch_policy, Level0Behavior};
use crate::dynamics::{
    check_profile, evaluate_policy, propagate, propagate_window_tables, view_sequence, DistView,
    DistributionTrajectory, StepTable,
};
use crate::error::{DaapError, Result};
use crate::model::{validate_model, DaapModel, Kernel, PolicyTable, Rationality};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Overrides every type's own temperature when set.
    pub lambda: Option<f64>,
    /// Max-norm policy change that counts as converged.
    pub tolerance: f64,
    /// Cap on full sweeps over the agent types.
    pub max_iterations: usize,
    pub seed: u64,
    /// Whether the responding type's own mass is part of the distribution
    /// it responds to. When false, a single agent's expected occupancy is
    /// removed from the aggregate.
    pub include_self_in_aggregate: bool,
    pub level0: Level0Behavior,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: None,
            tolerance: 1e-6,
            max_iterations: 10_000,
            seed: 0,
            include_self_in_aggregate: true,
            level0: Level0Behavior::Uniform,
        }
    }
}

impl SolverConfig {
    fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(DaapError::param("tolerance", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(DaapError::param("max_iterations", "must be at least 1"));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(DaapError::param("lambda", "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// State-action flows `x^t(s, a)` laid out like a [`PolicyTable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    pub epochs: usize,
    pub states: usize,
    pub actions: usize,
    pub values: Vec<f64>,
}

impl FlowTable {
    fn zeros(epochs: usize, states: usize, actions: usize) -> Self {
        FlowTable {
            epochs,
            states,
            actions,
            values: vec![0.0; epochs * states * actions],
        }
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize, a: usize) -> f64 {
        self.values[(t * self.states + s) * self.actions + a]
    }

    fn row(&self, t: usize, s: usize) -> &[f64] {
        let o = (t * self.states + s) * self.actions;
        &self.values[o..o + self.actions]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub policies: Vec<PolicyTable>,
    pub converged: bool,
    /// Completed sweeps over all types.
    pub iterations: usize,
    /// Per-type updates performed (the averaging counter).
    pub type_updates: usize,
    /// Max-norm policy change after each sweep.
    pub residual_history: Vec<f64>,
    pub flow_tables: Vec<FlowTable>,
}

impl SolveResult {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Soft-max best response of one type: the policy, its value table and the
/// flows it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub policy: PolicyTable,
    /// `V^t(s)` for `t = 0 ..= H`.
    pub values: Vec<Vec<f64>>,
    pub flows: FlowTable,
}

/// Soft-max backward induction over prebuilt step tables covering epochs
/// `start .. start + tables.len()`. Terminal value is zero.
pub(crate) fn softmax_backward(
    tables: &[StepTable],
    states: usize,
    actions: usize,
    start: usize,
    lambda: f64,
    owner: &str,
) -> (PolicyTable, Vec<Vec<f64>>) {
    let epochs = tables.len();
    let mut policy = PolicyTable::zeros(owner, start, epochs, states, actions);
    let mut values = vec![vec![0.0; states]; epochs + 1];
    for k in (0..epochs).rev() {
        let table = &tables[k];
        let q = table.q_values(&values[k + 1]);
        for s in 0..states {
            let slots = table.slots(s);
            let probs = quantal_response(&q[slots.clone()], lambda);
            let row = policy.row_mut(start + k, s);
            let mut v = 0.0;
            for (slot, p) in slots.zip(probs) {
                row[table.action(slot)] = p;
                v += p * q[slot];
            }
            values[k][s] = v;
        }
    }
    (policy, values)
}

/// Exact (hard-max) best-response value table; ties go to the lowest action.
pub(crate) fn hardmax_backward(tables: &[StepTable], states: usize, actions: usize) -> (PolicyTable, Vec<Vec<f64>>) {
    let epochs = tables.len();
    let mut policy = PolicyTable::zeros("best_response", 0, epochs, states, actions);
    let mut values = vec![vec![0.0; states]; epochs + 1];
    for t in (0..epochs).rev() {
        let table = &tables[t];
        let q = table.q_values(&values[t + 1]);
        for s in 0..states {
            let best = table
                .slots(s)
                .fold(None, |acc: Option<usize>, k| match acc {
                    Some(b) if q[b] >= q[k] => Some(b),
                    _ => Some(k),
                })
                .expect("state without allowed actions");
            policy.row_mut(t, s)[table.action(best)] = 1.0;
            values[t][s] = q[best];
        }
    }
    (policy, values)
}

fn build_tables(kernel: &dyn Kernel, ds: &[Vec<f64>]) -> Vec<StepTable> {
    ds.iter().enumerate().map(|(t, d)| StepTable::build(kernel, t, d)).collect()
}

/// Occupancy-weighted flows `p^t(s) * pi^t(s, a)` of `policy` when the
/// population moves along `tables`, starting from `p0`.
fn flows_of(tables: &[StepTable], policy: &PolicyTable, p0: &[f64]) -> FlowTable {
    let mut flows = FlowTable::zeros(tables.len(), policy.states, policy.actions);
    let mut p = p0.to_vec();
    for (t, table) in tables.iter().enumerate() {
        for (s, &mass) in p.iter().enumerate() {
            let o = (t * policy.states + s) * policy.actions;
            for (x, pi) in flows.values[o..o + policy.actions].iter_mut().zip(policy.row(t, s)) {
                *x = mass * pi;
            }
        }
        p = table.advance(policy, t, &p);
    }
    flows
}

fn type_lambda(rationality: &Rationality, config: &SolverConfig) -> f64 {
    config.lambda.unwrap_or_else(|| rationality.lambda())
}

/// Soft-max best response of `focal_type` against the distributions of
/// `trajectory` (zero distributions for locally rational types).
pub fn softmax_best_response(
    model: &DaapModel,
    focal_type: usize,
    trajectory: &DistributionTrajectory,
    lambda: f64,
) -> Result<BestResponse> {
    let ty = model
        .agent_types
        .get(focal_type)
        .ok_or_else(|| DaapError::param("focal_type", format!("no agent type {focal_type}")))?;
    let kernel = model.kernel.as_ref();
    let h = model.horizon;
    let population: Vec<Vec<f64>> = trajectory.distributions[..h].iter().map(|d| d.counts.clone()).collect();
    let real = build_tables(kernel, &population);
    let view = view_sequence(model, DistView::for_rationality(&ty.rationality), Some(trajectory))?;
    let planned = if ty.rationality.ignores_others() {
        build_tables(kernel, &view)
    } else {
        Vec::new()
    };
    let plan_tables = if planned.is_empty() { &real } else { &planned };
    let (policy, values) = softmax_backward(plan_tables, model.num_states(), model.num_actions(), 0, lambda, &ty.id);
    let flows = flows_of(&real, &policy, &trajectory.occupancy[focal_type][0]);
    Ok(BestResponse { policy, values, flows })
}

/// One fictitious-play averaging step: `x <- (iter * x + x_new) / (iter + 1)`.
pub fn average_flows(current: &mut FlowTable, response: &FlowTable, iter: usize) {
    let w = iter as f64;
    for (x, y) in current.values.iter_mut().zip(&response.values) {
        *x = (w * *x + y) / (w + 1.0);
    }
}

/// Normalises flows into a policy; states with no flow fall back to uniform
/// over their allowed actions.
pub fn flows_to_policy(kernel: &dyn Kernel, flows: &FlowTable, owner: &str) -> PolicyTable {
    let mut policy = PolicyTable::zeros(owner, 0, flows.epochs, flows.states, flows.actions);
    for t in 0..flows.epochs {
        for s in 0..flows.states {
            let x = flows.row(t, s);
            let total: f64 = x.iter().sum();
            let row = policy.row_mut(t, s);
            if total > 0.0 {
                for (p, v) in row.iter_mut().zip(x) {
                    *p = v / total;
                }
            } else {
                let allowed = kernel.allowed_actions(s);
                for &a in allowed {
                    row[a] = 1.0 / allowed.len() as f64;
                }
            }
        }
    }
    policy
}

/// Runs SoFA until the max-norm change of every policy over a sweep is
/// within tolerance, or the sweep cap is reached.
pub fn sofa_solve(model: &DaapModel, config: &SolverConfig) -> Result<SolveResult> {
    config.check()?;
    let violations = validate_model(model);
    if !violations.is_empty() {
        return Err(DaapError::InvalidModel(violations.iter().map(|v| v.to_string()).collect()));
    }
    let kernel = model.kernel.as_ref();
    let h = model.horizon;
    let n = model.num_states();
    let m = model.num_actions();
    let types = &model.agent_types;
    let counts: Vec<f64> = types.iter().map(|t| t.count as f64).collect();
    let d0 = &model.initial_distribution.counts;
    let zero_tables = types
        .iter()
        .any(|t| t.rationality.ignores_others())
        .then(|| build_tables(kernel, &vec![vec![0.0; n]; h]));

    let mut policies: Vec<PolicyTable> = types.iter().map(|t| PolicyTable::uniform(kernel, h, &t.id)).collect();
    let mut flows: Vec<FlowTable> = {
        let refs: Vec<&PolicyTable> = policies.iter().collect();
        let (_, occupancy, tables) = propagate_window_tables(kernel, &refs, &counts, d0, 0, h, true);
        policies
            .iter()
            .zip(&occupancy)
            .map(|(pi, occ)| flows_of(&tables, pi, &occ[0]))
            .collect()
    };

    let mut iter = 0usize;
    let mut history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < config.max_iterations {
        let previous = policies.clone();
        for (k, ty) in types.iter().enumerate() {
            let refs: Vec<&PolicyTable> = policies.iter().collect();
            let (ds, occupancy, real) = propagate_window_tables(kernel, &refs, &counts, d0, 0, h, true);
            let lambda = type_lambda(&ty.rationality, config);
            let response = match &ty.rationality {
                Rationality::LocallyRational { .. } => {
                    softmax_backward(zero_tables.as_ref().unwrap(), n, m, 0, lambda, &ty.id).0
                }
                Rationality::PerfectlyRational { .. } => {
                    if config.include_self_in_aggregate {
                        softmax_backward(&real, n, m, 0, lambda, &ty.id).0
                    } else {
                        let others: Vec<Vec<f64>> = ds[..h]
                            .iter()
                            .zip(&occupancy[k])
                            .map(|(d, p)| d.iter().zip(p).map(|(x, y)| (x - y).max(0.0)).collect())
                            .collect();
                        softmax_backward(&build_tables(kernel, &others), n, m, 0, lambda, &ty.id).0
                    }
                }
                Rationality::CognitiveHierarchy {
                    level,
                    lookahead,
                    level_mix,
                    ..
                } => rolling_ch_policy(model, *level, lambda, *lookahead, level_mix, &ds[..h], config.level0)?,
            };
            let response_flows = flows_of(&real, &response, &occupancy[k][0]);
            average_flows(&mut flows[k], &response_flows, iter);
            policies[k] = flows_to_policy(kernel, &flows[k], &ty.id);
            iter += 1;
        }
        sweeps += 1;
        let residual = policies
            .iter()
            .zip(&previous)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        history.push(residual);
        if residual <= config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        policies,
        converged,
        iterations: sweeps,
        type_updates: iter,
        residual_history: history,
        flow_tables: flows,
    })
}

/// Best value a single deviating agent of `focal_type` can gain over its
/// current policy, holding the population distribution fixed.
pub fn equilibrium_gap(model: &DaapModel, policies: &[PolicyTable], focal_type: usize) -> Result<f64> {
    let (best, current) = deviation_values(model, policies, focal_type)?;
    Ok((best - current).max(0.0))
}

/// `(best deterministic deviation value, current value)` for `focal_type`.
pub fn deviation_values(model: &DaapModel, policies: &[PolicyTable], focal_type: usize) -> Result<(f64, f64)> {
    check_profile(model, policies)?;
    let ty = model
        .agent_types
        .get(focal_type)
        .ok_or_else(|| DaapError::param("focal_type", format!("no agent type {focal_type}")))?;
    let trajectory = propagate(model, policies, &model.initial_distribution)?;
    let ds = view_sequence(model, DistView::for_rationality(&ty.rationality), Some(&trajectory))?;
    let kernel = model.kernel.as_ref();
    let tables = build_tables(kernel, &ds);
    let (_, values) = hardmax_backward(&tables, model.num_states(), model.num_actions());
    let p0 = &trajectory.occupancy[focal_type][0];
    let best: f64 = p0.iter().zip(&values[0]).map(|(p, v)| p * v).sum();
    let current = evaluate_policy(kernel, &policies[focal_type], &ds, p0, model.horizon).total;
    Ok((best, current))
}
