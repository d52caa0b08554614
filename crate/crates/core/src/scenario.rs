//! Synthetic taxi scenarios and the versioned scenario file format.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DaapError, Result};
use crate::taxi::{TaxiScenario, TimeMatrix};
use crate::util::largest_remainder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneKind {
    Residential,
    Entertainment,
    Office,
    Hospital,
}

impl ZoneKind {
    pub const ALL: [ZoneKind; 4] = [
        ZoneKind::Residential,
        ZoneKind::Entertainment,
        ZoneKind::Office,
        ZoneKind::Hospital,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ZoneKind::Residential => "residential",
            ZoneKind::Entertainment => "entertainment",
            ZoneKind::Office => "office",
            ZoneKind::Hospital => "hospital",
        }
    }

    /// Relative (origin, destination) weights at hour-of-day `hour`.
    fn weights(self, hour: f64) -> (f64, f64) {
        let bump = |centre: f64, width: f64| {
            let d = (hour - centre).abs().min(24.0 - (hour - centre).abs());
            (-0.5 * (d / width).powi(2)).exp()
        };
        let morning = bump(8.0, 1.5);
        let evening = bump(18.5, 1.5);
        let night = bump(22.5, 1.5);
        match self {
            ZoneKind::Residential => (1.0 + 3.0 * morning, 1.0 + 2.0 * evening + night),
            ZoneKind::Office => (0.5 + 3.0 * evening, 0.5 + 3.0 * morning),
            ZoneKind::Entertainment => (0.5 + 2.0 * night, 0.5 + 3.0 * evening),
            ZoneKind::Hospital => (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub zone_count: usize,
    pub neighbors_per_zone: usize,
    /// Weights over residential, entertainment, office, hospital.
    pub zone_type_mix: [f64; 4],
    pub fleet_size: usize,
    /// Expected customer trips over the whole horizon.
    pub total_daily_demand: f64,
    /// Half-open epoch intervals `[start, end)` whose flows are multiplied
    /// by `peak_factor`.
    pub peak_hours: Vec<[usize; 2]>,
    pub peak_factor: f64,
    pub horizon: usize,
    pub epoch_minutes: f64,
    pub flagfall: f64,
    pub revenue_per_km: f64,
    pub cost_per_km: f64,
    /// Side of the square the zone centres are scattered over.
    pub area_km: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            zone_count: 10,
            neighbors_per_zone: 3,
            zone_type_mix: [0.4, 0.2, 0.3, 0.1],
            fleet_size: 200,
            total_daily_demand: 4000.0,
            peak_hours: vec![[14, 19], [34, 39]],
            peak_factor: 2.0,
            horizon: 48,
            epoch_minutes: 30.0,
            flagfall: 3.0,
            revenue_per_km: 0.7,
            cost_per_km: 0.25,
            area_km: 20.0,
            seed: 0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.zone_count < 2 {
            return Err(DaapError::param("zone_count", "must be at least 2"));
        }
        if self.neighbors_per_zone == 0 {
            return Err(DaapError::param("neighbors_per_zone", "must be at least 1"));
        }
        if self.neighbors_per_zone >= self.zone_count {
            return Err(DaapError::param(
                "neighbors_per_zone",
                format!("{} neighbours cannot fit among {} zones", self.neighbors_per_zone, self.zone_count),
            ));
        }
        if self.horizon == 0 {
            return Err(DaapError::param("horizon", "must be at least 1"));
        }
        if !(self.total_daily_demand.is_finite() && self.total_daily_demand >= 0.0) {
            return Err(DaapError::param("total_daily_demand", "must be finite and non-negative"));
        }
        if self.zone_type_mix.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.zone_type_mix.iter().sum::<f64>() <= 0.0
        {
            return Err(DaapError::param("zone_type_mix", "weights must be non-negative with a positive sum"));
        }
        for &[a, b] in &self.peak_hours {
            if a >= b || b > self.horizon {
                return Err(DaapError::param(
                    "peak_hours",
                    format!("interval [{a}, {b}) is empty or exceeds the horizon {}", self.horizon),
                ));
            }
        }
        if !(self.peak_factor.is_finite() && self.peak_factor > 0.0) {
            return Err(DaapError::param("peak_factor", "must be positive"));
        }
        if !(self.epoch_minutes > 0.0) {
            return Err(DaapError::param("epoch_minutes", "must be positive"));
        }
        for (name, v) in [
            ("flagfall", self.flagfall),
            ("revenue_per_km", self.revenue_per_km),
            ("cost_per_km", self.cost_per_km),
            ("area_km", self.area_km),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DaapError::param(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn is_peak(&self, t: usize) -> bool {
        self.peak_hours.iter().any(|&[a, b]| (a..b).contains(&t))
    }
}

/// Zone kinds in zone order as drawn by [`generate`].
pub fn zone_kinds(params: &GeneratorParams) -> Result<Vec<ZoneKind>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    Ok(draw_layout(params, &mut rng).0)
}

fn draw_layout(params: &GeneratorParams, rng: &mut ChaCha8Rng) -> (Vec<ZoneKind>, Vec<(f64, f64)>) {
    let n = params.zone_count;
    let counts = largest_remainder(n, &params.zone_type_mix);
    let mut kinds: Vec<ZoneKind> = ZoneKind::ALL
        .iter()
        .zip(&counts)
        .flat_map(|(k, &c)| std::iter::repeat(*k).take(c))
        .collect();
    kinds.shuffle(rng);
    let points = (0..n)
        .map(|_| (rng.gen::<f64>() * params.area_km, rng.gen::<f64>() * params.area_km))
        .collect();
    (kinds, points)
}

/// k-nearest-neighbour graph, made symmetric and then connected by joining
/// the closest pair across the cut until one component remains.
fn build_graph(points: &[(f64, f64)], k: usize) -> (Vec<Vec<usize>>, Vec<f64>) {
    let n = points.len();
    let dist = |i: usize, j: usize| {
        let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
        (dx * dx + dy * dy).sqrt()
    };
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)).then(a.cmp(&b)));
        for &j in &others[..k] {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    loop {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        if seen.iter().all(|&s| s) {
            break;
        }
        let mut best = (f64::INFINITY, 0, 0);
        for u in (0..n).filter(|&u| seen[u]) {
            for v in (0..n).filter(|&v| !seen[v]) {
                if dist(u, v) < best.0 {
                    best = (dist(u, v), u, v);
                }
            }
        }
        adj[best.1].push(best.2);
        adj[best.2].push(best.1);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    // Floyd-Warshall over edge lengths
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
        for &j in &adj[i] {
            d[i * n + j] = dist(i, j);
        }
    }
    for m in 0..n {
        for i in 0..n {
            let dim = d[i * n + m];
            if dim.is_infinite() {
                continue;
            }
            for j in 0..n {
                let via = dim + d[m * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    // trips inside a zone cover half the distance to its nearest neighbour
    for i in 0..n {
        let nearest = adj[i].iter().map(|&j| d[i * n + j]).fold(f64::INFINITY, f64::min);
        d[i * n + i] = 0.5 * nearest;
    }
    (adj, d)
}

/// Generates a random scenario. Deterministic in `params` (including the seed).
///
/// Each zone's voluntary moves are itself and its graph neighbours. Every
/// epoch gets the same base trip mass, multiplied by `peak_factor` inside
/// peak intervals, and is spread over origin/destination pairs by the zone
/// archetypes; the total is then scaled to `total_daily_demand`.
pub fn generate(params: &GeneratorParams) -> Result<TaxiScenario> {
    params.validate()?;
    let n = params.zone_count;
    let h = params.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (kinds, points) = draw_layout(params, &mut rng);
    let (neighbours, dist) = build_graph(&points, params.neighbors_per_zone);

    // mild per-zone popularity noise so same-kind zones differ
    let popularity: Vec<f64> = (0..n).map(|_| 0.75 + 0.5 * rng.gen::<f64>()).collect();
    let mut flows = vec![0.0; h * n * n];
    let mut total = 0.0;
    for t in 0..h {
        let hour = (t as f64 + 0.5) * params.epoch_minutes / 60.0 % 24.0;
        let w: Vec<(f64, f64)> = kinds.iter().map(|k| k.weights(hour)).collect();
        let block = &mut flows[t * n * n..(t + 1) * n * n];
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let v = w[i].0 * popularity[i] * w[j].1 * popularity[j] / (1.0 + dist[i * n + j]);
                    block[i * n + j] = v;
                    mass += v;
                }
            }
        }
        let factor = if params.is_peak(t) { params.peak_factor } else { 1.0 };
        let scale = if mass > 0.0 { factor / mass } else { 0.0 };
        block.iter_mut().for_each(|v| *v *= scale);
        total += factor;
    }
    let scale = params.total_daily_demand / total;
    flows.iter_mut().for_each(|v| *v *= scale);

    let revenue: Vec<f64> = dist.iter().map(|d| params.flagfall + params.revenue_per_km * d).collect();
    // staying put is free
    let cost: Vec<f64> = (0..n * n)
        .map(|ij| if ij / n == ij % n { 0.0 } else { params.cost_per_km * dist[ij] })
        .collect();

    let residential: Vec<f64> = kinds
        .iter()
        .map(|k| if *k == ZoneKind::Residential { 1.0 } else { 0.0 })
        .collect();
    let weights = if residential.iter().sum::<f64>() > 0.0 { residential } else { vec![1.0; n] };
    let initial_counts = largest_remainder(params.fleet_size, &weights)
        .into_iter()
        .map(|c| c as f64)
        .collect();
    let adjacency = neighbours
        .into_iter()
        .enumerate()
        .map(|(i, mut a)| {
            a.push(i);
            a
        })
        .collect();
    let zones = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| format!("z{i}-{}", k.name()))
        .collect();
    TaxiScenario::new(
        zones,
        h,
        flows,
        TimeMatrix::Static(revenue),
        TimeMatrix::Static(cost),
        params.fleet_size,
        initial_counts,
        adjacency,
    )
}

pub const SCENARIO_FORMAT: &str = "daap-scenario";
pub const SCENARIO_VERSION: &str = "v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    format: String,
    version: String,
    zones: Vec<String>,
    horizon: usize,
    fleet_size: usize,
    initial_counts: Vec<f64>,
    adjacency: Vec<Vec<usize>>,
    /// Nonzero flows as `[epoch, origin, destination, value]`.
    flows: Vec<(usize, usize, usize, f64)>,
    revenue: TimeMatrix,
    cost: TimeMatrix,
}

#[derive(Deserialize)]
struct FileHeader {
    format: Option<String>,
    version: Option<String>,
}

pub fn scenario_to_json(scenario: &TaxiScenario) -> String {
    let n = scenario.num_zones();
    let flows = scenario
        .flows
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(k, v)| (k / (n * n), k / n % n, k % n, *v))
        .collect();
    let file = ScenarioFile {
        format: SCENARIO_FORMAT.into(),
        version: SCENARIO_VERSION.into(),
        zones: scenario.zones.clone(),
        horizon: scenario.horizon,
        fleet_size: scenario.fleet_size,
        initial_counts: scenario.initial_counts.clone(),
        adjacency: scenario.adjacency.clone(),
        flows,
        revenue: scenario.revenue.clone(),
        cost: scenario.cost.clone(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("scenario serialises");
    out.push('\n');
    out
}

/// Parses a scenario document. `name` is used in error messages.
pub fn scenario_from_json(text: &str, name: &str) -> Result<TaxiScenario> {
    let parse_err = |e: serde_json::Error| DaapError::Parse {
        path: name.to_string(),
        line: e.line(),
        message: e.to_string(),
    };
    let header: FileHeader = serde_json::from_str(text).map_err(parse_err)?;
    if header.format.as_deref() != Some(SCENARIO_FORMAT) {
        return Err(DaapError::Parse {
            path: name.to_string(),
            line: 1,
            message: format!("format: expected \"{SCENARIO_FORMAT}\""),
        });
    }
    match header.version.as_deref() {
        Some(SCENARIO_VERSION) => {}
        other => {
            return Err(DaapError::Version {
                what: "scenario",
                found: other.unwrap_or("<missing>").to_string(),
                expected: SCENARIO_VERSION,
            })
        }
    }
    let file: ScenarioFile = serde_json::from_str(text).map_err(parse_err)?;
    let n = file.zones.len();
    let h = file.horizon;
    let mut flows = vec![0.0; h * n * n];
    let mut seen = vec![false; h * n * n];
    for (k, &(t, i, j, v)) in file.flows.iter().enumerate() {
        if t >= h || i >= n || j >= n {
            return Err(DaapError::InvalidScenario(vec![format!(
                "flows[{k}]: index ({t}, {i}, {j}) outside horizon {h} x {n} zones"
            )]));
        }
        let idx = (t * n + i) * n + j;
        if seen[idx] {
            return Err(DaapError::InvalidScenario(vec![format!(
                "flows[{k}]: duplicate entry for ({t}, {i}, {j})"
            )]));
        }
        seen[idx] = true;
        flows[idx] = v;
    }
    TaxiScenario::new(
        file.zones,
        h,
        flows,
        file.revenue,
        file.cost,
        file.fleet_size,
        file.initial_counts,
        file.adjacency,
    )
}

pub fn save_scenario(scenario: &TaxiScenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scenario_to_json(scenario)).map_err(|e| DaapError::io(path, e))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<TaxiScenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DaapError::io(path, e))?;
    scenario_from_json(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let p = GeneratorParams::default();
        let a = generate(&p).unwrap();
        let b = generate(&p).unwrap();
        assert_eq!(a, b);
        let c = generate(&GeneratorParams { seed: 1, ..p }).unwrap();
        assert_ne!(a.flows, c.flows);
    }

    #[test]
    fn totals_and_fleet_match_params() {
        let p = GeneratorParams::default();
        let s = generate(&p).unwrap();
        assert!((s.total_flow() - p.total_daily_demand).abs() < 1e-6 * p.total_daily_demand);
        assert_eq!(s.initial_counts.iter().sum::<f64>(), p.fleet_size as f64);
        let kinds = zone_kinds(&p).unwrap();
        for (k, c) in kinds.iter().zip(&s.initial_counts) {
            if *k != ZoneKind::Residential {
                assert_eq!(*c, 0.0);
            }
        }
    }

    #[test]
    fn graph_is_connected_with_requested_degree() {
        let p = GeneratorParams { zone_count: 25, neighbors_per_zone: 2, seed: 7, ..Default::default() };
        let s = generate(&p).unwrap();
        for (i, adj) in s.adjacency.iter().enumerate() {
            assert!(adj.contains(&i));
            assert!(adj.len() > p.neighbors_per_zone);
        }
        let mut seen = vec![false; 25];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &s.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn bad_params_are_rejected() {
        let p = GeneratorParams { zone_count: 4, neighbors_per_zone: 4, ..Default::default() };
        assert!(matches!(generate(&p), Err(DaapError::InvalidParameter { name: "neighbors_per_zone", .. })));
        let p = GeneratorParams { peak_hours: vec![[40, 50]], ..Default::default() };
        assert!(generate(&p).is_err());
    }

    #[test]
    fn peak_epochs_carry_more_flow() {
        let p = GeneratorParams::default();
        let s = generate(&p).unwrap();
        let n = s.num_zones();
        let epoch_total = |t: usize| s.flows[t * n * n..(t + 1) * n * n].iter().sum::<f64>();
        let peak_min = (0..p.horizon).filter(|&t| p.is_peak(t)).map(epoch_total).fold(f64::INFINITY, f64::min);
        let off_max = (0..p.horizon).filter(|&t| !p.is_peak(t)).map(epoch_total).fold(0.0, f64::max);
        assert!(peak_min >= off_max);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = generate(&GeneratorParams { zone_count: 6, horizon: 8, peak_hours: vec![[2, 4]], ..Default::default() })
            .unwrap();
        let text = scenario_to_json(&s);
        assert_eq!(scenario_from_json(&text, "mem").unwrap(), s);
    }

    #[test]
    fn truncated_and_wrong_version_files_fail() {
        let s = generate(&GeneratorParams { zone_count: 4, horizon: 4, peak_hours: vec![], ..Default::default() })
            .unwrap();
        let text = scenario_to_json(&s);
        let cut = &text[..text.len() / 2];
        assert!(matches!(scenario_from_json(cut, "f"), Err(DaapError::Parse { .. })));
        let v2 = text.replace("\"v1\"", "\"v2\"");
        assert!(matches!(scenario_from_json(&v2, "f"), Err(DaapError::Version { .. })));
    }
}
