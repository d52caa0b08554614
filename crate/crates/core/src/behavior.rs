//! Bounded-rationality strategies: quantal responses and quantal
//! cognitive-hierarchy policies with finite look-ahead.
//!
//! A level-`L` agent believes the rest of the population is a mixture of
//! levels `0 .. L-1` weighted by its perceived mix `g_L`. Starting from the
//! distribution it observes at the planning epoch, it propagates that mixture
//! over its look-ahead window and plays the quantal (soft-max) best response
//! against the resulting distributions.

use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_window, StepTable};
use crate::error::{DaapError, Result};
use crate::model::{DaapModel, Kernel, PolicyTable};
use crate::solver::softmax_backward;

/// `p(a) ∝ exp(lambda * u(a))`, stabilised by subtracting the maximum.
/// An infinite `lambda` spreads mass evenly over the maximisers.
pub fn quantal_response(utilities: &[f64], lambda: f64) -> Vec<f64> {
    if utilities.is_empty() {
        return Vec::new();
    }
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lambda.is_infinite() {
        let ties = utilities.iter().filter(|&&u| u == max).count() as f64;
        return utilities.iter().map(|&u| if u == max { 1.0 / ties } else { 0.0 }).collect();
    }
    let weights: Vec<f64> = utilities.iter().map(|&u| (lambda * (u - max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// What level-0 agents do.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level0Behavior {
    /// Uniform over allowed actions.
    #[default]
    Uniform,
    /// Quantal response that ignores every other agent (zero distribution).
    LocallyRational,
}

/// Population mix over reasoning levels `0 ..= max_level` plus the shared
/// temperature and look-ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelProfile {
    pub max_level: usize,
    pub population_fractions: Vec<f64>,
    pub lambda: f64,
    pub lookahead: usize,
}

impl LevelProfile {
    pub fn new(population_fractions: Vec<f64>, lambda: f64, lookahead: usize) -> Result<Self> {
        if population_fractions.is_empty() {
            return Err(DaapError::param("population_fractions", "empty level mix"));
        }
        let sum: f64 = population_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || population_fractions.iter().any(|f| *f < 0.0) {
            return Err(DaapError::param("population_fractions", format!("sums to {sum}, not 1")));
        }
        Ok(LevelProfile {
            max_level: population_fractions.len() - 1,
            population_fractions,
            lambda,
            lookahead,
        })
    }

    /// Perceived mix `g_L(h) = f(h) / sum_{l < L} f(l)` for `h < L`.
    pub fn perceived_mix(&self, level: usize) -> Vec<f64> {
        perceived_mix(&self.population_fractions, level)
    }
}

/// `g_L` from weights `f`; uniform over lower levels if they carry no mass.
pub fn perceived_mix(fractions: &[f64], level: usize) -> Vec<f64> {
    let lower = &fractions[..level.min(fractions.len())];
    let total: f64 = lower.iter().sum();
    if total > 0.0 {
        lower.iter().map(|f| f / total).collect()
    } else {
        vec![1.0 / level as f64; level]
    }
}

fn window_len(model: &DaapModel, t0: usize, lookahead: usize) -> usize {
    lookahead.max(1).min(model.horizon - t0)
}

fn level0_policy(
    model: &DaapModel,
    t0: usize,
    epochs: usize,
    lambda: f64,
    behavior: Level0Behavior,
) -> PolicyTable {
    let kernel = model.kernel.as_ref();
    match behavior {
        Level0Behavior::Uniform => PolicyTable::uniform_window(kernel, t0, epochs, "level0"),
        Level0Behavior::LocallyRational => {
            let zero = vec![0.0; model.num_states()];
            let tables: Vec<StepTable> = (t0..t0 + epochs).map(|t| StepTable::build(kernel, t, &zero)).collect();
            softmax_backward(&tables, model.num_states(), model.num_actions(), t0, lambda, "level0").0
        }
    }
}

/// Policies of levels `0 ..= weights.len()` planned at `t0` from the observed
/// distribution `d_start`. Level `L` perceives the mix `weights[..L]`
/// (renormalised), so every lower level in the recursion is exactly the
/// standalone computation with truncated weights.
pub fn level_policies(
    model: &DaapModel,
    weights: &[f64],
    lambda: f64,
    lookahead: usize,
    t0: usize,
    d_start: &[f64],
    level0: Level0Behavior,
) -> Result<Vec<PolicyTable>> {
    if t0 >= model.horizon {
        return Err(DaapError::param("t0", format!("epoch {t0} outside horizon {}", model.horizon)));
    }
    if d_start.len() != model.num_states() {
        return Err(DaapError::param("d_start", "length differs from the number of states"));
    }
    let kernel: &dyn Kernel = model.kernel.as_ref();
    let epochs = window_len(model, t0, lookahead);
    let population: f64 = d_start.iter().sum();
    let mut levels = vec![level0_policy(model, t0, epochs, lambda, level0)];
    for level in 1..=weights.len() {
        let mix = perceived_mix(weights, level);
        let counts: Vec<f64> = mix.iter().map(|g| g * population).collect();
        let refs: Vec<&PolicyTable> = levels.iter().collect();
        let (ds, _) = propagate_window(kernel, &refs, &counts, d_start, t0, t0 + epochs);
        let tables: Vec<StepTable> = ds[..epochs]
            .iter()
            .enumerate()
            .map(|(k, d)| StepTable::build(kernel, t0 + k, d))
            .collect();
        let owner = format!("level{level}");
        let (pi, _) = softmax_backward(&tables, model.num_states(), model.num_actions(), t0, lambda, &owner);
        levels.push(pi);
    }
    Ok(levels)
}

/// Level-`level` quantal policy for epochs `t0 .. t0 + T` (truncated at the
/// horizon), given the perceived mix over lower levels and the distribution
/// observed at `t0`.
#[allow(clippy::too_many_arguments)]
pub fn level_policy(
    model: &DaapModel,
    level: usize,
    lambda: f64,
    lookahead: usize,
    perceived: &[f64],
    t0: usize,
    d_start: &[f64],
    level0: Level0Behavior,
) -> Result<PolicyTable> {
    if perceived.len() != level {
        return Err(DaapError::param(
            "perceived_mix",
            format!("level {level} needs {level} entries, got {}", perceived.len()),
        ));
    }
    let mut all = level_policies(model, perceived, lambda, lookahead, t0, d_start, level0)?;
    Ok(all.swap_remove(level))
}

/// Full-horizon receding-horizon policy: at each epoch the agent plans
/// `lookahead` steps from the distribution observed then and keeps the first
/// step. A look-ahead covering the horizon is a single plan from `observed[0]`.
pub fn rolling_ch_policy(
    model: &DaapModel,
    level: usize,
    lambda: f64,
    lookahead: usize,
    perceived: &[f64],
    observed: &[Vec<f64>],
    level0: Level0Behavior,
) -> Result<PolicyTable> {
    let h = model.horizon;
    if observed.len() < h {
        return Err(DaapError::param("observed", format!("{} epochs observed, horizon is {h}", observed.len())));
    }
    if lookahead >= h {
        return level_policy(model, level, lambda, h, perceived, 0, &observed[0], level0);
    }
    let mut policy = PolicyTable::zeros(format!("level{level}"), 0, h, model.num_states(), model.num_actions());
    for (t0, d) in observed.iter().take(h).enumerate() {
        let slice = level_policy(model, level, lambda, lookahead, perceived, t0, d, level0)?;
        policy.copy_epoch_from(&slice, t0);
    }
    Ok(policy)
}

/// Receding-horizon policies of every level `0 ..= weights.len()` at once.
pub fn rolling_level_policies(
    model: &DaapModel,
    weights: &[f64],
    lambda: f64,
    lookahead: usize,
    observed: &[Vec<f64>],
    level0: Level0Behavior,
) -> Result<Vec<PolicyTable>> {
    let h = model.horizon;
    if lookahead >= h {
        return level_policies(model, weights, lambda, h, 0, &observed[0], level0);
    }
    let mut out: Vec<PolicyTable> = (0..=weights.len())
        .map(|l| PolicyTable::zeros(format!("level{l}"), 0, h, model.num_states(), model.num_actions()))
        .collect();
    for (t0, d) in observed.iter().take(h).enumerate() {
        let slices = level_policies(model, weights, lambda, lookahead, t0, d, level0)?;
        for (full, slice) in out.iter_mut().zip(&slices) {
            full.copy_epoch_from(slice, t0);
        }
    }
    Ok(out)
}
