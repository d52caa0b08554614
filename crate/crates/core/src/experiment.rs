//! Experiment descriptions, population building and the file formats the
//! command-line tool reads and writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{Stat, WelfareReport};
use crate::error::{DaapError, Result};
use crate::inference::LevelPosterior;
use crate::model::{AgentType, PolicyTable, Rationality, STOCHASTIC_TOL};
use crate::scenario::{generate, load_scenario, GeneratorParams};
use crate::solver::SolverConfig;
use crate::taxi::TaxiScenario;
use crate::util::largest_remainder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    File(PathBuf),
    Generate(GeneratorParams),
}

impl ScenarioSource {
    /// Relative file paths are resolved against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<TaxiScenario> {
        match self {
            ScenarioSource::File(p) => match base {
                Some(b) if p.is_relative() => load_scenario(b.join(p)),
                _ => load_scenario(p),
            },
            ScenarioSource::Generate(params) => generate(params),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

/// One slice of the fleet. `fraction`s across the population must sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationEntry {
    Sofa {
        fraction: f64,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default)]
        id: Option<String>,
    },
    LocallyRational {
        fraction: f64,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default)]
        id: Option<String>,
    },
    /// A single reasoning level with an explicit perceived mix.
    CognitiveHierarchy {
        fraction: f64,
        #[serde(default = "one")]
        lambda: f64,
        level: usize,
        #[serde(default = "one_usize")]
        lookahead: usize,
        level_mix: Vec<f64>,
        #[serde(default)]
        id: Option<String>,
    },
    /// A population of levels `0 ..= L` in proportions `level_mix`; level
    /// `l` perceives the renormalised shares of the levels below it.
    ChMix {
        fraction: f64,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one_usize")]
        lookahead: usize,
        level_mix: Vec<f64>,
        #[serde(default)]
        id: Option<String>,
    },
}

impl PopulationEntry {
    pub fn fraction(&self) -> f64 {
        match *self {
            PopulationEntry::Sofa { fraction, .. }
            | PopulationEntry::LocallyRational { fraction, .. }
            | PopulationEntry::CognitiveHierarchy { fraction, .. }
            | PopulationEntry::ChMix { fraction, .. } => fraction,
        }
    }

    /// `(id, group, rationality, weight)` of each type this entry expands to.
    fn expand(&self) -> Vec<(String, String, Rationality, f64)> {
        match self {
            PopulationEntry::Sofa { fraction, lambda, id } => {
                let id = id.clone().unwrap_or_else(|| "sofa".into());
                vec![(id.clone(), id, Rationality::PerfectlyRational { lambda: *lambda }, *fraction)]
            }
            PopulationEntry::LocallyRational { fraction, lambda, id } => {
                let id = id.clone().unwrap_or_else(|| "local".into());
                vec![(id.clone(), id, Rationality::LocallyRational { lambda: *lambda }, *fraction)]
            }
            PopulationEntry::CognitiveHierarchy {
                fraction,
                lambda,
                level,
                lookahead,
                level_mix,
                id,
            } => {
                let id = id.clone().unwrap_or_else(|| format!("ch-L{level}"));
                let r = Rationality::CognitiveHierarchy {
                    lambda: *lambda,
                    level: *level,
                    lookahead: *lookahead,
                    level_mix: level_mix.clone(),
                };
                vec![(id.clone(), id, r, *fraction)]
            }
            PopulationEntry::ChMix {
                fraction,
                lambda,
                lookahead,
                level_mix,
                id,
            } => {
                let group = id.clone().unwrap_or_else(|| "ch".into());
                let total: f64 = level_mix.iter().sum();
                level_mix
                    .iter()
                    .enumerate()
                    .map(|(l, w)| {
                        let r = Rationality::CognitiveHierarchy {
                            lambda: *lambda,
                            level: l,
                            lookahead: *lookahead,
                            level_mix: crate::behavior::perceived_mix(level_mix, l),
                        };
                        (format!("{group}-L{l}"), group.clone(), r, fraction * w / total)
                    })
                    .collect()
            }
        }
    }
}

/// Turns fractional population entries into integer agent types that sum to
/// `fleet_size` exactly (largest remainder, ties to the earlier entry).
/// Types that receive no agents are dropped.
pub fn build_population(entries: &[PopulationEntry], fleet_size: usize) -> Result<Vec<AgentType>> {
    if entries.is_empty() {
        return Err(DaapError::param("population", "no entries"));
    }
    if entries.iter().any(|e| !(e.fraction().is_finite() && e.fraction() >= 0.0)) {
        return Err(DaapError::param("population", "fractions must be non-negative"));
    }
    let sum: f64 = entries.iter().map(PopulationEntry::fraction).sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(DaapError::param("population", format!("fractions sum to {sum}, not 1")));
    }
    for e in entries {
        if let PopulationEntry::ChMix { level_mix, .. } = e {
            if level_mix.is_empty() || level_mix.iter().any(|w| *w < 0.0) || level_mix.iter().sum::<f64>() <= 0.0 {
                return Err(DaapError::param("level_mix", "needs non-negative shares with a positive sum"));
            }
        }
    }
    let expanded: Vec<_> = entries.iter().flat_map(PopulationEntry::expand).collect();
    let weights: Vec<f64> = expanded.iter().map(|e| e.3).collect();
    let counts = largest_remainder(fleet_size, &weights);
    Ok(expanded
        .into_iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|((id, group, rationality, _), count)| AgentType {
            id,
            count,
            rationality,
            group,
        })
        .collect())
}

fn default_runs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub scenario: Option<ScenarioSource>,
    pub population: Vec<PopulationEntry>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// A fully rational population with default settings.
    pub fn homogeneous_sofa() -> Self {
        ExperimentSpec {
            scenario: None,
            population: vec![PopulationEntry::Sofa { fraction: 1.0, lambda: 1.0, id: None }],
            solver: SolverConfig::default(),
            runs: default_runs(),
            seed: 0,
            output_dir: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

/// Reads a JSON document, reporting syntax and schema errors with their line.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| DaapError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DaapError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub const POLICY_FORMAT: &str = "daap-policies";
pub const POLICY_VERSION: &str = "v1";

/// Solved policies together with the population they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format: String,
    pub version: String,
    pub agent_types: Vec<AgentType>,
    pub policies: Vec<PolicyTable>,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    /// Equilibrium gap per type; `None` for types that are not perfectly rational.
    pub gaps: Vec<Option<f64>>,
}

impl PolicyFile {
    pub fn new(
        agent_types: Vec<AgentType>,
        policies: Vec<PolicyTable>,
        converged: bool,
        iterations: usize,
        final_residual: f64,
        gaps: Vec<Option<f64>>,
    ) -> Self {
        PolicyFile {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION.into(),
            agent_types,
            policies,
            converged,
            iterations,
            final_residual,
            gaps,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("policies serialise");
        std::fs::write(path, text).map_err(|e| DaapError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: PolicyFile = read_json(path)?;
        if file.format != POLICY_FORMAT {
            return Err(DaapError::Parse {
                path: path.display().to_string(),
                line: 1,
                message: format!("format: expected \"{POLICY_FORMAT}\""),
            });
        }
        if file.version != POLICY_VERSION {
            return Err(DaapError::Version {
                what: "policy file",
                found: file.version,
                expected: POLICY_VERSION,
            });
        }
        if file.policies.len() != file.agent_types.len() {
            return Err(DaapError::ProfileMismatch(format!(
                "{} policies for {} agent types",
                file.policies.len(),
                file.agent_types.len()
            )));
        }
        if let Some(p) = file.policies.iter().find(|p| p.stochastic_violation(1e-6).is_some()) {
            return Err(DaapError::ProfileMismatch(format!("policy `{}` is not row-stochastic", p.owner)));
        }
        Ok(file)
    }
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// `sweep,residual`, one row per SoFA sweep.
pub fn write_trace(residuals: &[f64], out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sweep", "residual"]).map_err(csv_err)?;
    for (i, r) in residuals.iter().enumerate() {
        w.write_record([(i + 1).to_string(), r.to_string()]).map_err(csv_err)?;
    }
    w.flush()
}

/// Whether a standard deviation is worth printing next to its mean
/// (more than 0.1% of the mean's magnitude).
pub fn stddev_shown(stat: &Stat) -> bool {
    stat.std > 1e-3 * stat.mean.abs()
}

/// Welfare table with columns `metric,type,epoch,mean,stddev,stddev_shown`.
///
/// `type` is `all`, an agent type id, or `group:<name>`; `epoch` is empty
/// except for the `epoch_payoff` series.
pub fn write_welfare(report: &WelfareReport, out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "type", "epoch", "mean", "stddev", "stddev_shown"])
        .map_err(csv_err)?;
    let mut row = |metric: &str, who: &str, epoch: Option<usize>, s: &Stat| {
        w.write_record([
            metric.to_string(),
            who.to_string(),
            epoch.map(|e| e.to_string()).unwrap_or_default(),
            s.mean.to_string(),
            s.std.to_string(),
            u8::from(stddev_shown(s)).to_string(),
        ])
        .map_err(csv_err)
    };
    row("average_payoff", "all", None, &report.average_payoff)?;
    row("minimum_payoff", "all", None, &report.minimum_payoff)?;
    if let Some(s) = &report.starvation {
        row("starvation", "all", None, s)?;
    }
    for g in &report.per_type {
        row("average_payoff", &g.name, None, &g.average_payoff)?;
        row("minimum_payoff", &g.name, None, &g.minimum_payoff)?;
    }
    for g in &report.per_group {
        let who = format!("group:{}", g.name);
        row("average_payoff", &who, None, &g.average_payoff)?;
        row("minimum_payoff", &who, None, &g.minimum_payoff)?;
    }
    for (t, s) in report.per_epoch_payoff.iter().enumerate() {
        row("epoch_payoff", "all", Some(t), s)?;
    }
    w.flush()
}

/// Population mix per iteration: `iteration,level,fraction`, with the
/// initial prior as iteration 0, followed by `mean_level` rows.
pub fn write_posterior(post: &LevelPosterior, out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "level", "fraction"]).map_err(csv_err)?;
    for (it, f) in post.history.iter().enumerate() {
        for (l, v) in f.iter().enumerate() {
            w.write_record([it.to_string(), l.to_string(), v.to_string()]).map_err(csv_err)?;
        }
    }
    for (it, f) in post.history.iter().enumerate() {
        w.write_record([it.to_string(), "mean_level".to_string(), crate::inference::mean_level(f).to_string()])
            .map_err(csv_err)?;
    }
    w.flush()
}

/// Final per-agent posteriors: `agent,level,probability`.
pub fn write_agent_posteriors(post: &LevelPosterior, out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["agent", "level", "probability"]).map_err(csv_err)?;
    for (a, p) in post.agents.iter().zip(&post.per_agent) {
        for (l, v) in p.iter().enumerate() {
            w.write_record([a.clone(), l.to_string(), v.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()
}
