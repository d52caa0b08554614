//! Iterative Bayesian inference of reasoning levels from the voluntary moves
//! of free agents.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{level_policies, Level0Behavior};
use crate::dynamics::{run_episode, EpochPolicies};
use crate::error::{DaapError, Result};
use crate::model::{DaapModel, PolicyTable};
use crate::util::{derive_seed, largest_remainder};

/// First line of an observation log file.
pub const LOG_MAGIC: &str = "#daap-observations v1";
/// Column header of an observation log file.
pub const LOG_HEADER: &str = "agent_id,epoch,zone,action_zone,hired";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub agent: String,
    pub epoch: usize,
    pub zone: usize,
    pub action: usize,
    pub hired: bool,
}

impl ObservationRecord {
    /// Only free (unhired) moves reveal an agent's choice.
    pub fn is_valid(&self) -> bool {
        !self.hired
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObservationLog {
    pub records: Vec<ObservationRecord>,
}

impl ObservationLog {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| DaapError::io(path, e))?;
        Self::parse(std::io::BufReader::new(file), &path.display().to_string())
    }

    /// Parses the v1 text format: a magic line, the column header, then one
    /// comma-separated record per line.
    pub fn parse(reader: impl BufRead, name: &str) -> Result<Self> {
        let err = |line: usize, message: String| DaapError::Parse {
            path: name.to_string(),
            line,
            message,
        };
        let mut lines = reader.lines().enumerate();
        let next_line = |lines: &mut std::iter::Enumerate<std::io::Lines<_>>| -> Result<Option<(usize, String)>> {
            match lines.next() {
                None => Ok(None),
                Some((i, Ok(l))) => Ok(Some((i + 1, l))),
                Some((i, Err(e))) => Err(err(i + 1, e.to_string())),
            }
        };
        match next_line(&mut lines)? {
            Some((_, l)) if l.trim() == LOG_MAGIC => {}
            Some((_, l)) if l.starts_with("#daap-observations") => {
                return Err(DaapError::Version {
                    what: "observation log",
                    found: l.trim().trim_start_matches("#daap-observations").trim().to_string(),
                    expected: "v1",
                })
            }
            Some((n, _)) => return Err(err(n, format!("expected `{LOG_MAGIC}`"))),
            None => return Err(DaapError::EmptyLog),
        }
        match next_line(&mut lines)? {
            Some((_, l)) if l.trim() == LOG_HEADER => {}
            Some((n, l)) => return Err(err(n, format!("expected header `{LOG_HEADER}`, found `{l}`"))),
            None => return Err(DaapError::EmptyLog),
        }
        let mut records = Vec::new();
        while let Some((n, line)) = next_line(&mut lines)? {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(err(n, format!("expected 5 fields, found {}", fields.len())));
            }
            let num = |i: usize, col: &str| -> Result<usize> {
                fields[i].parse().map_err(|_| err(n, format!("{col}: `{}` is not a non-negative integer", fields[i])))
            };
            let hired = match fields[4] {
                "0" => false,
                "1" => true,
                other => return Err(err(n, format!("hired: `{other}` is not 0 or 1"))),
            };
            if fields[0].is_empty() {
                return Err(err(n, "agent_id: empty".to_string()));
            }
            records.push(ObservationRecord {
                agent: fields[0].to_string(),
                epoch: num(1, "epoch")?,
                zone: num(2, "zone")?,
                action: num(3, "action_zone")?,
                hired,
            });
        }
        Ok(ObservationLog { records })
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{LOG_MAGIC}")?;
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.agent, r.epoch, r.zone, r.action, u8::from(r.hired))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| DaapError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w).and_then(|_| w.flush()).map_err(|e| DaapError::io(path, e))
    }

    pub fn valid_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_valid()).count()
    }
}

/// Empirical distribution per epoch of a slice of records, scaled so that
/// each observed epoch totals `population`. Unobserved epochs are empty.
pub fn empirical_distributions(
    records: &[ObservationRecord],
    states: usize,
    horizon: usize,
    population: f64,
) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; states]; horizon];
    for r in records {
        counts[r.epoch][r.zone] += 1.0;
    }
    for row in &mut counts {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            let scale = population / total;
            row.iter_mut().for_each(|c| *c *= scale);
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub lambda: f64,
    pub lookahead: usize,
    pub max_level: usize,
    pub max_iterations: usize,
    /// Early stop once the population mix moves less than this (max-norm).
    pub tolerance: f64,
    /// Records per chunk; `None` treats the whole log as one chunk.
    pub chunk_records: Option<usize>,
    pub level0: Level0Behavior,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            lambda: 1.0,
            lookahead: 1,
            max_level: 4,
            max_iterations: 20,
            tolerance: 1e-6,
            chunk_records: None,
            level0: Level0Behavior::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPosterior {
    pub agents: Vec<String>,
    /// `Pr_i(L)` per agent, in `agents` order.
    pub per_agent: Vec<Vec<f64>>,
    /// `f(L)`, the mean of the per-agent posteriors.
    pub population: Vec<f64>,
    pub mean_level: f64,
    /// `f` at the start of each iteration followed by the final mix.
    pub history: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Expected level `sum_L L * f(L)`.
pub fn mean_level(fractions: &[f64]) -> f64 {
    fractions.iter().enumerate().map(|(l, f)| l as f64 * f).sum()
}

impl LevelPosterior {
    pub fn mean_level(&self) -> f64 {
        mean_level(&self.population)
    }
}

/// Iterated Bayesian updates of per-agent level posteriors.
///
/// Every iteration starts each agent from the uniform prior, rebuilds the
/// level strategies from the current population mix and the log's own
/// empirical distributions, and multiplies in the likelihood of every free
/// move. The new mix is the mean of the posteriors.
pub fn infer_levels(model: &DaapModel, log: &ObservationLog, config: &InferenceConfig) -> Result<LevelPosterior> {
    if log.records.is_empty() {
        return Err(DaapError::EmptyLog);
    }
    if config.max_level == 0 {
        return Err(DaapError::param("max_level", "must be at least 1"));
    }
    if config.lookahead == 0 {
        return Err(DaapError::param("lookahead", "must be at least 1"));
    }
    let n = model.num_states();
    let h = model.horizon;
    for (i, r) in log.records.iter().enumerate() {
        if r.epoch >= h || r.zone >= n || r.action >= model.num_actions() {
            return Err(DaapError::Parse {
                path: "observation log".into(),
                line: i + 3,
                message: format!("record ({}, {}, {}) outside the scenario", r.epoch, r.zone, r.action),
            });
        }
    }
    let levels = config.max_level + 1;
    let mut agents: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let agent_of: Vec<usize> = log
        .records
        .iter()
        .map(|r| {
            *index.entry(r.agent.as_str()).or_insert_with(|| {
                agents.push(r.agent.clone());
                agents.len() - 1
            })
        })
        .collect();
    let chunk = config.chunk_records.unwrap_or(log.records.len()).max(1);
    let population = model.population() as f64;
    let prior = vec![1.0 / levels as f64; levels];

    let mut f = prior.clone();
    let mut history = vec![f.clone()];
    let mut per_agent = vec![prior.clone(); agents.len()];
    let mut iterations = 0;
    while iterations < config.max_iterations {
        per_agent = vec![prior.clone(); agents.len()];
        // level L perceives f over 0..L-1
        let weights = &f[..config.max_level];
        for (c, records) in log.records.chunks(chunk).enumerate() {
            let offset = c * chunk;
            let ds = empirical_distributions(records, n, h, population);
            let mut planned: Vec<Option<Vec<PolicyTable>>> = vec![None; h];
            for (k, r) in records.iter().enumerate() {
                if !r.is_valid() {
                    continue;
                }
                if planned[r.epoch].is_none() {
                    planned[r.epoch] = Some(level_policies(
                        model,
                        weights,
                        config.lambda,
                        config.lookahead,
                        r.epoch,
                        &ds[r.epoch],
                        config.level0,
                    )?);
                }
                let strategies = planned[r.epoch].as_ref().unwrap();
                let post = &mut per_agent[agent_of[offset + k]];
                let mut total = 0.0;
                for (p, pi) in post.iter_mut().zip(strategies) {
                    *p *= pi.prob(r.epoch, r.zone, r.action);
                    total += *p;
                }
                if !(total > 0.0) {
                    return Err(DaapError::ZeroLikelihood {
                        agent: r.agent.clone(),
                        epoch: r.epoch,
                    });
                }
                post.iter_mut().for_each(|p| *p /= total);
            }
        }
        let next: Vec<f64> = (0..levels)
            .map(|l| per_agent.iter().map(|p| p[l]).sum::<f64>() / agents.len() as f64)
            .collect();
        let delta = next.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        f = next;
        history.push(f.clone());
        iterations += 1;
        if delta < config.tolerance {
            break;
        }
    }
    Ok(LevelPosterior {
        agents,
        per_agent,
        mean_level: mean_level(&f),
        population: f,
        history,
        iterations,
    })
}

/// Settings for generating a planted-truth observation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLogConfig {
    /// True population share of each level `0 ..= L`.
    pub level_mix: Vec<f64>,
    pub lambda: f64,
    pub lookahead: usize,
    /// Independent simulated days; each contributes `population * horizon` records.
    pub days: usize,
    pub seed: u64,
    #[serde(default)]
    pub level0: Level0Behavior,
}

struct ReplanningLevels<'a> {
    model: &'a DaapModel,
    weights: &'a [f64],
    lambda: f64,
    lookahead: usize,
    level0: Level0Behavior,
    current: Vec<PolicyTable>,
    failure: Option<DaapError>,
}

impl EpochPolicies for ReplanningLevels<'_> {
    fn begin_epoch(&mut self, t: usize, counts: &[f64]) {
        match level_policies(self.model, self.weights, self.lambda, self.lookahead, t, counts, self.level0) {
            Ok(p) => self.current = p,
            Err(e) => self.failure = Some(e),
        }
    }

    fn row(&self, agent_type: usize, t: usize, s: usize) -> &[f64] {
        self.current[agent_type].row(t, s)
    }
}

/// Simulates the whole population with levels assigned by largest remainder
/// over `level_mix`; every agent replans each epoch from the realised
/// counts. Returns the log and each agent's true level.
pub fn synthesize_log(model: &DaapModel, config: &SyntheticLogConfig) -> Result<(ObservationLog, Vec<usize>)> {
    if config.level_mix.len() < 2 {
        return Err(DaapError::param("level_mix", "needs at least levels 0 and 1"));
    }
    let agents = model.population();
    let counts = largest_remainder(agents, &config.level_mix);
    let levels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(l, &c)| std::iter::repeat(l).take(c))
        .collect();
    let weights = &config.level_mix[..config.level_mix.len() - 1];
    let mut records = Vec::with_capacity(config.days * agents * model.horizon);
    for day in 0..config.days {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, day as u64));
        let mut planner = ReplanningLevels {
            model,
            weights,
            lambda: config.lambda,
            lookahead: config.lookahead,
            level0: config.level0,
            current: Vec::new(),
            failure: None,
        };
        run_episode(model, &levels, &mut planner, &mut rng, &mut |agent, epoch, zone, action, outcome| {
            records.push(ObservationRecord {
                agent: format!("a{agent}"),
                epoch,
                zone,
                action,
                hired: outcome.hired,
            });
        });
        if let Some(e) = planner.failure {
            return Err(e);
        }
    }
    Ok((ObservationLog { records }, levels))
}
