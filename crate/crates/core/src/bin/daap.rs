use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use daap::dynamics::simulate;
use daap::experiment::{
    build_population, write_agent_posteriors, write_posterior, write_trace, write_welfare, ExperimentSpec, PolicyFile,
};
use daap::inference::{infer_levels, synthesize_log, InferenceConfig, ObservationLog, SyntheticLogConfig};
use daap::model::Rationality;
use daap::scenario::{generate, load_scenario, save_scenario, GeneratorParams};
use daap::solver::{equilibrium_gap, sofa_solve};
use daap::taxi::compile_with_types;
use daap::{DaapError, Result};

/// Congestion-game solver and fleet simulator.
#[derive(Parser)]
#[command(name = "daap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic taxi scenario.
    Generate {
        /// Generator parameters (JSON); defaults are used when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Overrides the seed in the parameters.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for equilibrium policies with SoFA.
    Solve {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Experiment spec (JSON); a homogeneous SoFA population by default.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverFlags,
        /// Output directory; receives policies.json and trace.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate solved policies and report welfare metrics.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        policies: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Welfare table path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Infer the distribution of reasoning levels from an observation log.
    Infer {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1)]
        lookahead: usize,
        #[arg(long, default_value_t = 4)]
        max_level: usize,
        #[arg(long, default_value_t = 20)]
        max_iterations: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Records per processing chunk; whole log when omitted.
        #[arg(long)]
        chunk: Option<usize>,
        /// Posterior table path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-agent posteriors here.
        #[arg(long)]
        agents_out: Option<PathBuf>,
    },
    /// Simulate a population with known levels and write its observation log.
    SynthLog {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated population shares of levels 0, 1, ...
        #[arg(long, value_delimiter = ',', required = true)]
        level_mix: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1)]
        lookahead: usize,
        #[arg(long, default_value_t = 1)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| DaapError::io(path, e))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn io_at(path: Option<&Path>) -> impl Fn(std::io::Error) -> DaapError + '_ {
    move |e| DaapError::io(path.unwrap_or(Path::new("<stdout>")), e)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { params, seed, out } => {
            let mut p: GeneratorParams = match params {
                Some(path) => daap::experiment::read_json(&path)?,
                None => GeneratorParams::default(),
            };
            if let Some(s) = seed {
                p.seed = s;
            }
            let scenario = generate(&p)?;
            save_scenario(&scenario, &out)?;
            eprintln!("wrote {} zones, horizon {} to {}", scenario.num_zones(), scenario.horizon, out.display());
        }
        Command::Solve { scenario, spec, solver, out } => {
            let (spec, base) = match &spec {
                Some(p) => (ExperimentSpec::load(p)?, p.parent().map(Path::to_path_buf)),
                None => (ExperimentSpec::homogeneous_sofa(), None),
            };
            let scenario = match (&scenario, &spec.scenario) {
                (Some(p), _) => load_scenario(p)?,
                (None, Some(src)) => src.load(base.as_deref())?,
                (None, None) => return Err(DaapError::param("scenario", "pass --scenario or set it in the spec")),
            };
            let mut config = spec.solver.clone();
            config.lambda = solver.lambda.or(config.lambda);
            config.tolerance = solver.tolerance.unwrap_or(config.tolerance);
            config.max_iterations = solver.max_iterations.unwrap_or(config.max_iterations);
            config.seed = solver.seed.unwrap_or(config.seed);
            let types = build_population(&spec.population, scenario.fleet_size)?;
            let model = compile_with_types(&scenario, types.clone())?;
            let result = sofa_solve(&model, &config)?;
            let gaps = types
                .iter()
                .enumerate()
                .map(|(k, t)| match t.rationality {
                    Rationality::PerfectlyRational { .. } => equilibrium_gap(&model, &result.policies, k).map(Some),
                    _ => Ok(None),
                })
                .collect::<Result<Vec<_>>>()?;
            std::fs::create_dir_all(&out).map_err(|e| DaapError::io(&out, e))?;
            let file = PolicyFile::new(
                types,
                result.policies.clone(),
                result.converged,
                result.iterations,
                result.final_residual(),
                gaps,
            );
            file.save(out.join("policies.json"))?;
            let trace = out.join("trace.csv");
            write_trace(&result.residual_history, create(&trace)?).map_err(|e| DaapError::io(&trace, e))?;
            println!(
                "converged={} iterations={} residual={:e}",
                result.converged,
                result.iterations,
                result.final_residual()
            );
        }
        Command::Simulate { scenario, policies, runs, seed, out } => {
            let scenario = load_scenario(&scenario)?;
            let file = PolicyFile::load(&policies)?;
            let model = compile_with_types(&scenario, file.agent_types.clone())?;
            let report = simulate(&model, &file.policies, runs, seed)?;
            write_welfare(&report, output(out.as_deref())?).map_err(io_at(out.as_deref()))?;
        }
        Command::Infer {
            scenario,
            log,
            lambda,
            lookahead,
            max_level,
            max_iterations,
            tolerance,
            chunk,
            out,
            agents_out,
        } => {
            let scenario = load_scenario(&scenario)?;
            let model = daap::taxi::compile_to_daap(&scenario)?;
            let log = ObservationLog::read(&log)?;
            let config = InferenceConfig {
                lambda,
                lookahead,
                max_level,
                max_iterations,
                tolerance,
                chunk_records: chunk,
                ..InferenceConfig::default()
            };
            let post = infer_levels(&model, &log, &config)?;
            write_posterior(&post, output(out.as_deref())?).map_err(io_at(out.as_deref()))?;
            if let Some(p) = agents_out {
                write_agent_posteriors(&post, create(&p)?).map_err(|e| DaapError::io(&p, e))?;
            }
            eprintln!("mean_level={:.4} iterations={}", post.mean_level, post.iterations);
        }
        Command::SynthLog {
            scenario,
            level_mix,
            lambda,
            lookahead,
            days,
            seed,
            out,
        } => {
            let scenario = load_scenario(&scenario)?;
            let model = daap::taxi::compile_to_daap(&scenario)?;
            let config = SyntheticLogConfig {
                level_mix,
                lambda,
                lookahead,
                days,
                seed,
                level0: Default::default(),
            };
            let (log, _) = synthesize_log(&model, &config)?;
            log.save(&out)?;
            eprintln!("wrote {} records ({} free moves) to {}", log.records.len(), log.valid_count(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}
