//! Expected-distribution propagation, policy evaluation, the potential
//! function and Monte Carlo welfare simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DaapError, Result};
use crate::model::{DaapModel, Kernel, PolicyTable, StateDistribution, TransitionOutcome, CONSERVATION_TOL};
use crate::util::derive_seed;

/// Transition rows and expected immediate rewards of every allowed
/// `(s, a)` pair at one epoch, for one fixed distribution.
pub(crate) struct StepTable {
    n: usize,
    offsets: Vec<usize>,
    actions: Vec<usize>,
    probs: Vec<f64>,
    rewards: Vec<f64>,
}

const PARALLEL_WORK: usize = 1 << 16;

impl StepTable {
    pub(crate) fn build(kernel: &dyn Kernel, t: usize, d: &[f64]) -> Self {
        let n = kernel.num_states();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut actions = Vec::new();
        offsets.push(0);
        for s in 0..n {
            actions.extend_from_slice(kernel.allowed_actions(s));
            offsets.push(actions.len());
        }
        let per_state = |s: usize| {
            let allowed = kernel.allowed_actions(s);
            let mut probs = vec![0.0; allowed.len() * n];
            let mut next = vec![0.0; n];
            let mut rewards = Vec::with_capacity(allowed.len());
            for (k, &a) in allowed.iter().enumerate() {
                let p = &mut probs[k * n..(k + 1) * n];
                kernel.step(t, d, s, a, p, &mut next);
                rewards.push(p.iter().zip(&next).map(|(p, r)| p * r).sum::<f64>());
            }
            (probs, rewards)
        };
        let parts: Vec<_> = if actions.len() * n * n >= PARALLEL_WORK {
            (0..n).into_par_iter().map(per_state).collect()
        } else {
            (0..n).map(per_state).collect()
        };
        let mut probs = Vec::with_capacity(actions.len() * n);
        let mut rewards = Vec::with_capacity(actions.len());
        for (p, r) in parts {
            probs.extend(p);
            rewards.extend(r);
        }
        StepTable {
            n,
            offsets,
            actions,
            probs,
            rewards,
        }
    }

    /// Slot range of state `s`.
    #[inline]
    pub(crate) fn slots(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    #[inline]
    pub(crate) fn action(&self, slot: usize) -> usize {
        self.actions[slot]
    }

    #[inline]
    pub(crate) fn row(&self, slot: usize) -> &[f64] {
        &self.probs[slot * self.n..(slot + 1) * self.n]
    }

    #[inline]
    pub(crate) fn expected_reward(&self, slot: usize) -> f64 {
        self.rewards[slot]
    }

    /// `Q(s, a) = r(s, a) + sum_s' phi(s, a, s') * next_value(s')` for every slot.
    pub(crate) fn q_values(&self, next_value: &[f64]) -> Vec<f64> {
        (0..self.actions.len())
            .map(|k| {
                self.rewards[k]
                    + self
                        .row(k)
                        .iter()
                        .zip(next_value)
                        .map(|(p, v)| p * v)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Pushes occupancy `p` one step forward under `policy` at epoch `t`.
    pub(crate) fn advance(&self, policy: &PolicyTable, t: usize, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (s, &mass) in p.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let pi = policy.row(t, s);
            for k in self.slots(s) {
                let w = mass * pi[self.actions[k]];
                if w == 0.0 {
                    continue;
                }
                for (o, q) in out.iter_mut().zip(self.row(k)) {
                    *o += w * q;
                }
            }
        }
        out
    }
}

/// Which distribution an evaluation plugs into the kernel.
#[derive(Debug, Clone, Copy)]
pub enum DistView<'a> {
    /// The expected population distribution induced by the profile.
    Population,
    /// The empty distribution (locally rational view).
    Zero,
    /// A caller-supplied sequence `d^0 .. d^{H-1}` (at least `H` entries).
    Fixed(&'a [StateDistribution]),
}

impl DistView<'_> {
    /// The view an agent of the given rationality evaluates with.
    pub fn for_rationality(r: &crate::model::Rationality) -> DistView<'static> {
        if r.ignores_others() {
            DistView::Zero
        } else {
            DistView::Population
        }
    }
}

/// Expected distributions `d^0 .. d^H` and per-type occupancy `p_tau^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTrajectory {
    pub distributions: Vec<StateDistribution>,
    /// `[type][t][s]`.
    pub occupancy: Vec<Vec<Vec<f64>>>,
}

impl DistributionTrajectory {
    pub fn counts(&self, t: usize) -> &[f64] {
        &self.distributions[t].counts
    }
}

pub(crate) fn check_profile(model: &DaapModel, policies: &[PolicyTable]) -> Result<()> {
    if policies.len() != model.agent_types.len() {
        return Err(DaapError::ProfileMismatch(format!(
            "{} policies for {} agent types",
            policies.len(),
            model.agent_types.len()
        )));
    }
    for (pi, ty) in policies.iter().zip(&model.agent_types) {
        if pi.start != 0 || pi.epochs < model.horizon {
            return Err(DaapError::ProfileMismatch(format!(
                "policy for `{}` covers epochs {}..{}, horizon is {}",
                ty.id,
                pi.start,
                pi.start + pi.epochs,
                model.horizon
            )));
        }
        if pi.states != model.num_states() || pi.actions != model.num_actions() {
            return Err(DaapError::ProfileMismatch(format!(
                "policy for `{}` is {}x{}, model is {}x{}",
                ty.id,
                pi.states,
                pi.actions,
                model.num_states(),
                model.num_actions()
            )));
        }
    }
    Ok(())
}

/// Propagates a group mixture from an observed distribution at `t0` over
/// epochs `t0 .. t1`. Every group starts from `d_start / sum(counts)`.
/// Returns `d^t0 .. d^t1` and per-group occupancies.
pub(crate) fn propagate_window(
    kernel: &dyn Kernel,
    policies: &[&PolicyTable],
    counts: &[f64],
    d_start: &[f64],
    t0: usize,
    t1: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let (ds, occ, _) = propagate_window_tables(kernel, policies, counts, d_start, t0, t1, false);
    (ds, occ)
}

/// As [`propagate_window`], optionally keeping the step table of each epoch.
pub(crate) fn propagate_window_tables(
    kernel: &dyn Kernel,
    policies: &[&PolicyTable],
    counts: &[f64],
    d_start: &[f64],
    t0: usize,
    t1: usize,
    keep_tables: bool,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<StepTable>) {
    let total: f64 = counts.iter().sum();
    let p0: Vec<f64> = if total > 0.0 {
        d_start.iter().map(|c| c / total).collect()
    } else {
        vec![0.0; d_start.len()]
    };
    let mut occupancy: Vec<Vec<Vec<f64>>> = policies.iter().map(|_| vec![p0.clone()]).collect();
    let mut ds = Vec::with_capacity(t1 - t0 + 1);
    let mut tables = Vec::new();
    for t in t0..=t1 {
        let n = d_start.len();
        let mut d = vec![0.0; n];
        for (occ, &c) in occupancy.iter().zip(counts) {
            let p = occ.last().unwrap();
            for (x, q) in d.iter_mut().zip(p) {
                *x += q * c;
            }
        }
        if t < t1 {
            let table = StepTable::build(kernel, t, &d);
            for (occ, pi) in occupancy.iter_mut().zip(policies) {
                let next = table.advance(pi, t, occ.last().unwrap());
                occ.push(next);
            }
            if keep_tables {
                tables.push(table);
            }
        }
        ds.push(d);
    }
    (ds, occupancy, tables)
}

/// Expected state distributions under the typed profile, starting from `d0`.
pub fn propagate(
    model: &DaapModel,
    policies: &[PolicyTable],
    d0: &StateDistribution,
) -> Result<DistributionTrajectory> {
    check_profile(model, policies)?;
    let population = model.population() as f64;
    if d0.counts.len() != model.num_states() || (d0.total() - population).abs() > CONSERVATION_TOL {
        return Err(DaapError::ProfileMismatch(format!(
            "initial distribution sums to {}, population is {population}",
            d0.total()
        )));
    }
    let counts: Vec<f64> = model.agent_types.iter().map(|t| t.count as f64).collect();
    let refs: Vec<&PolicyTable> = policies.iter().collect();
    let (ds, occupancy) = propagate_window(model.kernel.as_ref(), &refs, &counts, &d0.counts, 0, model.horizon);
    Ok(DistributionTrajectory {
        distributions: ds
            .into_iter()
            .enumerate()
            .map(|(t, c)| StateDistribution::new(t, c))
            .collect(),
        occupancy,
    })
}

/// Expected total payoff per agent of one type, plus the per-epoch value table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub total: f64,
    /// `V^t(s)` for `t = 0 ..= H` (the last row is zero).
    pub table: Vec<Vec<f64>>,
}

/// Evaluates `policy` against the distribution sequence `ds` from occupancy
/// `p0`, both forward (occupancy-weighted rewards) and backward.
pub(crate) fn evaluate_policy(
    kernel: &dyn Kernel,
    policy: &PolicyTable,
    ds: &[Vec<f64>],
    p0: &[f64],
    horizon: usize,
) -> PolicyValue {
    let n = kernel.num_states();
    let tables: Vec<StepTable> = (0..horizon).map(|t| StepTable::build(kernel, t, &ds[t])).collect();
    let mut total = 0.0;
    let mut p = p0.to_vec();
    for (t, table) in tables.iter().enumerate() {
        for (s, &mass) in p.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let pi = policy.row(t, s);
            for k in table.slots(s) {
                total += mass * pi[table.action(k)] * table.expected_reward(k);
            }
        }
        p = table.advance(policy, t, &p);
    }
    let mut values = vec![vec![0.0; n]; horizon + 1];
    for (t, table) in tables.iter().enumerate().rev() {
        let q = table.q_values(&values[t + 1]);
        for s in 0..n {
            let pi = policy.row(t, s);
            values[t][s] = table.slots(s).map(|k| pi[table.action(k)] * q[k]).sum();
        }
    }
    PolicyValue { total, table: values }
}

pub(crate) fn view_sequence(
    model: &DaapModel,
    view: DistView<'_>,
    trajectory: Option<&DistributionTrajectory>,
) -> Result<Vec<Vec<f64>>> {
    let n = model.num_states();
    match view {
        DistView::Zero => Ok(vec![vec![0.0; n]; model.horizon]),
        DistView::Fixed(seq) => {
            if seq.len() < model.horizon || seq.iter().any(|d| d.counts.len() != n) {
                return Err(DaapError::ProfileMismatch(format!(
                    "fixed distribution sequence has {} epochs, horizon is {}",
                    seq.len(),
                    model.horizon
                )));
            }
            Ok(seq[..model.horizon].iter().map(|d| d.counts.clone()).collect())
        }
        DistView::Population => {
            let traj = trajectory.expect("population view needs a trajectory");
            Ok(traj.distributions[..model.horizon].iter().map(|d| d.counts.clone()).collect())
        }
    }
}

/// Expected total payoff of an agent of `focal_type` under the profile.
pub fn policy_value(
    model: &DaapModel,
    policies: &[PolicyTable],
    focal_type: usize,
    view: DistView<'_>,
) -> Result<PolicyValue> {
    if focal_type >= model.agent_types.len() {
        return Err(DaapError::param("focal_type", format!("no agent type {focal_type}")));
    }
    let traj = propagate(model, policies, &model.initial_distribution)?;
    let ds = view_sequence(model, view, Some(&traj))?;
    let p0 = &traj.occupancy[focal_type][0];
    Ok(evaluate_policy(model.kernel.as_ref(), &policies[focal_type], &ds, p0, model.horizon))
}

/// Sum of every agent's own-rationality value: `sum_tau |P_tau| V_tau`.
pub fn potential(model: &DaapModel, policies: &[PolicyTable]) -> Result<f64> {
    let traj = propagate(model, policies, &model.initial_distribution)?;
    potential_inner(model, policies, &traj, None)
}

/// Potential with the population distribution frozen at `ds` (the
/// measure-zero deviator view of the value recursion).
pub fn potential_against(model: &DaapModel, policies: &[PolicyTable], ds: &[StateDistribution]) -> Result<f64> {
    let traj = propagate(model, policies, &model.initial_distribution)?;
    potential_inner(model, policies, &traj, Some(ds))
}

fn potential_inner(
    model: &DaapModel,
    policies: &[PolicyTable],
    traj: &DistributionTrajectory,
    frozen: Option<&[StateDistribution]>,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, ty) in model.agent_types.iter().enumerate() {
        let view = match (ty.rationality.ignores_others(), frozen) {
            (true, _) => DistView::Zero,
            (false, Some(ds)) => DistView::Fixed(ds),
            (false, None) => DistView::Population,
        };
        let ds = view_sequence(model, view, Some(traj))?;
        let v = evaluate_policy(model.kernel.as_ref(), &policies[i], &ds, &traj.occupancy[i][0], model.horizon);
        total += ty.count as f64 * v.total;
    }
    Ok(total)
}

/// Mean and sample standard deviation across runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }

    /// Standard error of the mean over `runs` samples.
    pub fn stderr(&self, runs: usize) -> f64 {
        self.std / (runs as f64).sqrt()
    }
}

/// Welfare of one slice of the population (a type or a reporting group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWelfare {
    pub name: String,
    pub agents: usize,
    pub average_payoff: Stat,
    pub minimum_payoff: Stat,
}

/// Simulation metrics averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub runs: usize,
    pub average_payoff: Stat,
    pub minimum_payoff: Stat,
    /// Unserved share of customer demand; `None` when the kernel has no
    /// demand notion.
    pub starvation: Option<Stat>,
    /// Mean payoff per agent earned during each epoch.
    pub per_epoch_payoff: Vec<Stat>,
    pub per_type: Vec<GroupWelfare>,
    pub per_group: Vec<GroupWelfare>,
    /// Realised agent counts per `[t][s]`, `t = 0 ..= H`.
    pub occupancy: Vec<Vec<Stat>>,
}

/// Source of per-agent action distributions during a simulated episode.
pub(crate) trait EpochPolicies {
    /// Called once per epoch with the realised counts before actions are drawn.
    fn begin_epoch(&mut self, _t: usize, _counts: &[f64]) {}

    fn row(&self, agent_type: usize, t: usize, s: usize) -> &[f64];
}

struct FixedPolicies<'a>(&'a [PolicyTable]);

impl EpochPolicies for FixedPolicies<'_> {
    fn row(&self, agent_type: usize, t: usize, s: usize) -> &[f64] {
        self.0[agent_type].row(t, s)
    }
}

pub(crate) struct Episode {
    pub payoffs: Vec<f64>,
    pub epoch_payoff: Vec<f64>,
    pub occupancy: Vec<Vec<f64>>,
    pub unserved: f64,
    pub demand: Option<f64>,
}

/// One seeded episode. `agent_types[i]` is the type index of agent `i`.
/// `observe(agent, t, s, a, outcome)` sees every realised move.
pub(crate) fn run_episode(
    model: &DaapModel,
    agent_types: &[usize],
    policies: &mut dyn EpochPolicies,
    rng: &mut ChaCha8Rng,
    observe: &mut dyn FnMut(usize, usize, usize, usize, &TransitionOutcome),
) -> Episode {
    let kernel = model.kernel.as_ref();
    let n = model.num_states();
    let m = model.num_actions();
    let agents = agent_types.len();
    let mut states = initial_states(&model.initial_distribution.counts, agents, rng);
    let mut payoffs = vec![0.0; agents];
    let mut epoch_payoff = Vec::with_capacity(model.horizon);
    let mut occupancy = Vec::with_capacity(model.horizon + 1);
    let mut unserved = 0.0;
    let mut demand_total = 0.0;
    let mut has_demand = true;
    let mut cache: Vec<Option<Vec<TransitionOutcome>>> = vec![None; n * m];
    for t in 0..model.horizon {
        let mut counts = vec![0.0; n];
        for &s in &states {
            counts[s] += 1.0;
        }
        for (s, &c) in counts.iter().enumerate() {
            match kernel.demand(t, s) {
                Some(f) => {
                    unserved += (f - c).max(0.0);
                    demand_total += f;
                }
                None => has_demand = false,
            }
        }
        policies.begin_epoch(t, &counts);
        cache.iter_mut().for_each(|c| *c = None);
        let mut earned = 0.0;
        for (i, s) in states.iter_mut().enumerate() {
            let a = sample_index(policies.row(agent_types[i], t, *s), rng);
            let outcomes = cache[*s * m + a].get_or_insert_with(|| kernel.outcomes(t, &counts, *s, a));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = outcomes[outcomes.len() - 1];
            for o in outcomes.iter() {
                acc += o.probability;
                if u < acc {
                    chosen = *o;
                    break;
                }
            }
            observe(i, t, *s, a, &chosen);
            payoffs[i] += chosen.payoff;
            earned += chosen.payoff;
            *s = chosen.destination;
        }
        epoch_payoff.push(if agents > 0 { earned / agents as f64 } else { 0.0 });
        occupancy.push(counts);
    }
    let mut counts = vec![0.0; n];
    for &s in &states {
        counts[s] += 1.0;
    }
    occupancy.push(counts);
    Episode {
        payoffs,
        epoch_payoff,
        occupancy,
        unserved,
        demand: has_demand.then_some(demand_total),
    }
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Integral initial counts are dealt out exactly (shuffled over agents);
/// otherwise each agent's start is drawn from `d0 / |P|`.
fn initial_states(d0: &[f64], agents: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let integral = d0.iter().all(|c| (c - c.round()).abs() < 1e-9)
        && d0.iter().map(|c| c.round() as usize).sum::<usize>() == agents;
    if integral {
        let mut states: Vec<usize> = d0
            .iter()
            .enumerate()
            .flat_map(|(s, c)| std::iter::repeat(s).take(c.round() as usize))
            .collect();
        for i in (1..states.len()).rev() {
            let j = rng.gen_range(0..=i);
            states.swap(i, j);
        }
        states
    } else {
        (0..agents).map(|_| sample_index(d0, rng)).collect()
    }
}

pub(crate) fn agent_type_list(model: &DaapModel) -> Vec<usize> {
    model
        .agent_types
        .iter()
        .enumerate()
        .flat_map(|(i, t)| std::iter::repeat(i).take(t.count))
        .collect()
}

/// Monte Carlo simulation of the profile over `runs` independent, seeded
/// episodes. Runs execute in parallel; results are reduced in run order.
pub fn simulate(model: &DaapModel, policies: &[PolicyTable], runs: usize, seed: u64) -> Result<WelfareReport> {
    check_profile(model, policies)?;
    if runs == 0 {
        return Err(DaapError::param("runs", "must be at least 1"));
    }
    let agent_types = agent_type_list(model);
    let episodes: Vec<Episode> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, run as u64));
            let mut fixed = FixedPolicies(policies);
            run_episode(model, &agent_types, &mut fixed, &mut rng, &mut |_, _, _, _, _| {})
        })
        .collect();
    Ok(summarize(model, &agent_types, &episodes))
}

pub(crate) fn summarize(model: &DaapModel, agent_types: &[usize], episodes: &[Episode]) -> WelfareReport {
    let runs = episodes.len();
    let column = |f: &dyn Fn(&Episode) -> f64| Stat::of(&episodes.iter().map(f).collect::<Vec<_>>());
    let slice_welfare = |name: &str, members: &[usize]| GroupWelfare {
        name: name.to_string(),
        agents: members.len(),
        average_payoff: column(&|e| {
            members.iter().map(|&i| e.payoffs[i]).sum::<f64>() / members.len().max(1) as f64
        }),
        minimum_payoff: column(&|e| members.iter().map(|&i| e.payoffs[i]).fold(f64::INFINITY, f64::min)),
    };
    let per_type = model
        .agent_types
        .iter()
        .enumerate()
        .map(|(k, ty)| {
            let members: Vec<usize> = (0..agent_types.len()).filter(|&i| agent_types[i] == k).collect();
            slice_welfare(&ty.id, &members)
        })
        .collect();
    let mut groups: Vec<&str> = Vec::new();
    for ty in &model.agent_types {
        if !groups.contains(&ty.group.as_str()) {
            groups.push(&ty.group);
        }
    }
    let per_group = groups
        .iter()
        .map(|g| {
            let members: Vec<usize> = (0..agent_types.len())
                .filter(|&i| model.agent_types[agent_types[i]].group == *g)
                .collect();
            slice_welfare(g, &members)
        })
        .collect();
    let all: Vec<usize> = (0..agent_types.len()).collect();
    let overall = slice_welfare("all", &all);
    let starvation = episodes.iter().all(|e| e.demand.is_some()).then(|| {
        column(&|e| {
            let demand = e.demand.unwrap();
            if demand > 0.0 {
                e.unserved / demand
            } else {
                0.0
            }
        })
    });
    let per_epoch_payoff = (0..model.horizon).map(|t| column(&|e| e.epoch_payoff[t])).collect();
    let occupancy = (0..=model.horizon)
        .map(|t| (0..model.num_states()).map(|s| column(&|e| e.occupancy[t][s])).collect())
        .collect();
    WelfareReport {
        runs,
        average_payoff: overall.average_payoff,
        minimum_payoff: overall.minimum_payoff,
        starvation,
        per_epoch_payoff,
        per_type,
        per_group,
        occupancy,
    }
}
