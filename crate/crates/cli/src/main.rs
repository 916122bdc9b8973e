mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;
use serde_json::json;

use reachguide::hand_model::{
    read_demonstrations, synthetic_default_model, CommandModel, HandModelError,
};
use reachguide::product_map::{read_frames, MapError, ProductMap, TargetDescriptor};
use reachguide::reach_mdp::{
    plan_overview, solve, GridSpec, MdpError, QueryResult, ReachPolicy, SolveConfig,
    DEFAULT_EXTENT, DEFAULT_GAMMA, DEFAULT_MAX_SWEEPS, DEFAULT_RESOLUTION, DEFAULT_TOLERANCE,
};
use reachguide::scoring::select_best;
use reachguide::session::PlannerMode;
use reachguide::simulator::{compare, simulate_batch, write_trials_csv, SimError};
use reachguide::Direction;
use reachguide_service::{AppState, ServiceConfig};

use config::FileConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    NonConvergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::NonConvergence(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NonConvergence(m) => m,
        }
    }
}

impl From<MdpError> for CliError {
    fn from(e: MdpError) -> Self {
        match e {
            MdpError::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            MdpError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<HandModelError> for CliError {
    fn from(e: HandModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::OutsideWorkspace(_) | SimError::InvalidHuman(_) | SimError::MissingPolicy => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(
    name = "reachguide",
    version,
    about = "Verbal guidance for fine-grain reaching"
)]
struct Cli {
    /// TOML file with defaults for any flag; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit movement Gaussians from demonstrations (CSV: command_id,dx,dy,dz).
    Fit {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the reaching MDP into a policy file.
    Build {
        /// Command model; the synthetic default model when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resolution: Option<f64>,
        #[arg(long)]
        extent: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        max_sweeps: Option<usize>,
        /// Also write the values and actions as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Look up the next command for a target-minus-hand offset.
    Query {
        #[arg(long)]
        policy: PathBuf,
        /// dx,dy,dz in meters.
        #[arg(long, allow_hyphen_values = true)]
        offset: String,
        /// Direction of the previous command.
        #[arg(long)]
        prev: Option<Direction>,
    },
    /// Simulate guidance episodes for one planner and write per-trial metrics.
    Simulate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        mode: Option<PlannerMode>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-trial event logs.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Paired comparison of the discrete and continuous planners.
    Compare {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-trial CSV, both planners.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Build a product map from a detection stream and pick the grasp target.
    Ingest {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Hand position x,y,z in the world frame, meters.
        #[arg(long, allow_hyphen_values = true)]
        hand: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the live guidance service.
    Serve {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        /// Directory for completed session transcripts.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
}

fn parse_vec3(s: &str, what: &str) -> Result<Vector3<f64>, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Usage(format!("{what} must be x,y,z in meters, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut v = Vector3::zeros();
    for (k, p) in parts.iter().enumerate() {
        v[k] = p.parse::<f64>().map_err(|_| bad())?;
        if !v[k].is_finite() {
            return Err(bad());
        }
    }
    Ok(v)
}

fn load_policy(path: &Path) -> Result<Arc<ReachPolicy>, CliError> {
    Ok(Arc::new(ReachPolicy::load(path)?))
}

fn parse_mode(s: &str) -> Result<PlannerMode, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(io_err(p)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Fit { demos, out } => {
            let f = File::open(&demos).map_err(io_err(&demos))?;
            let rows = read_demonstrations(BufReader::new(f))?;
            let model = reachguide::hand_model::fit(&rows)?;
            model.save(&out)?;
            let fallback = model
                .gaussians()
                .iter()
                .filter(|g| g.source == reachguide::hand_model::GaussianSource::Fallback)
                .count();
            println!(
                "fitted {} commands from {} demonstrations ({fallback} fell back to the default); wrote {}",
                model.len(),
                rows.len(),
                out.display()
            );
        }
        Command::Build {
            model,
            out,
            resolution,
            extent,
            gamma,
            tolerance,
            max_sweeps,
            json,
        } => {
            let b = &cfg.build;
            let resolution = resolution.or(b.resolution).unwrap_or(DEFAULT_RESOLUTION);
            let extent = extent.or(b.extent).unwrap_or(DEFAULT_EXTENT);
            let model = match model {
                Some(p) => CommandModel::load(&p)?,
                None => synthetic_default_model(),
            };
            let solve_cfg = SolveConfig {
                grid: GridSpec::cuboid(resolution, extent)?,
                gamma: gamma.or(b.gamma).unwrap_or(DEFAULT_GAMMA),
                tolerance: tolerance.or(b.tolerance).unwrap_or(DEFAULT_TOLERANCE),
                max_sweeps: max_sweeps.or(b.max_sweeps).unwrap_or(DEFAULT_MAX_SWEEPS),
                ..SolveConfig::default()
            };
            let started = std::time::Instant::now();
            let policy = solve(&model, &solve_cfg)?;
            policy.save(&out)?;
            if let Some(j) = json {
                std::fs::write(&j, policy.to_json()?).map_err(io_err(&j))?;
            }
            let m = policy.metadata();
            println!(
                "states {}  sweeps {}  final delta {:.6}  resolution {}  extent {}  gamma {}  {:.2}s; wrote {}",
                m.grid.n_states(),
                m.convergence.sweeps,
                m.convergence.final_delta,
                m.resolution,
                m.extent,
                m.gamma,
                started.elapsed().as_secs_f64(),
                out.display()
            );
        }
        Command::Query {
            policy,
            offset,
            prev,
        } => {
            let policy = load_policy(&policy)?;
            let offset = parse_vec3(&offset, "--offset")?;
            match policy.query_offset(&offset, prev) {
                QueryResult::Done => println!("Done"),
                QueryResult::Command(id) => {
                    let spec = policy.command(id).ok_or_else(|| {
                        CliError::Data(format!("policy names unknown command {id}"))
                    })?;
                    println!("{}", spec.utterance);
                    let cells = policy.grid().discretize(&offset);
                    let descriptor = json!({
                        "command_id": id,
                        "direction": spec.direction,
                        "magnitude_m": spec.nominal_magnitude,
                        "cells": cells,
                        "prev": prev,
                    });
                    println!("{descriptor}");
                }
            }
        }
        Command::Simulate {
            policy,
            mode,
            trials,
            seed,
            out,
            events,
        } => {
            let s = &cfg.simulate;
            let mode = match mode {
                Some(m) => m,
                None => parse_mode(s.mode.as_deref().unwrap_or("discrete"))?,
            };
            let trials = trials.or(s.trials).unwrap_or(100);
            let seed = seed.or(s.seed).unwrap_or(0);
            let policy = load_policy(&policy)?;
            let model = policy.metadata().model.clone();
            let records =
                simulate_batch(mode, &policy, &model, &cfg.sim, &cfg.start, trials, seed)?;
            let f = File::create(&out).map_err(io_err(&out))?;
            write_trials_csv(&records, BufWriter::new(f))
                .map_err(|e| CliError::Data(e.to_string()))?;
            write_sidecar(&out, &cfg, trials, seed, Some(mode), &policy)?;
            if let Some(dir) = events {
                std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                for (i, r) in records.iter().enumerate() {
                    let p = dir.join(format!("trial-{i:05}-{mode}.jsonl"));
                    let f = File::create(&p).map_err(io_err(&p))?;
                    reachguide::session::write_event_log(&r.events, BufWriter::new(f))
                        .map_err(io_err(&p))?;
                }
            }
            let ok = records.iter().filter(|r| r.metrics.success).count();
            println!(
                "{trials} {mode} trials, {ok} succeeded; wrote {}",
                out.display()
            );
        }
        Command::Compare {
            policy,
            trials,
            seed,
            out,
            json,
        } => {
            let s = &cfg.compare;
            let trials = trials.or(s.trials).unwrap_or(1000);
            let seed = seed.or(s.seed).unwrap_or(0);
            if trials < 2 {
                return Err(CliError::Usage("compare needs at least 2 trials".into()));
            }
            let policy = load_policy(&policy)?;
            let model = policy.metadata().model.clone();
            let (summary, records) = compare(&policy, &model, &cfg.sim, &cfg.start, trials, seed)?;
            if let Some(out) = out {
                let f = File::create(&out).map_err(io_err(&out))?;
                write_trials_csv(&records, BufWriter::new(f))
                    .map_err(|e| CliError::Data(e.to_string()))?;
                write_sidecar(&out, &cfg, trials, seed, None, &policy)?;
            }
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&summary).expect("summary serializes")
                );
            } else {
                print!("{}", summary.table());
            }
        }
        Command::Ingest {
            stream,
            target,
            hand,
            out,
        } => {
            let hand = parse_vec3(&hand, "--hand")?;
            let f = File::open(&stream).map_err(io_err(&stream))?;
            let frames = read_frames(BufReader::new(f))?;
            let text = std::fs::read_to_string(&target).map_err(io_err(&target))?;
            let target: TargetDescriptor = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", target.display())))?;
            let mut map = ProductMap::new(cfg.map);
            let mut skipped = 0;
            let mut below = 0;
            let mut pruned = 0;
            for frame in &frames {
                let report = map.ingest(frame, &target)?;
                for s in &report.skipped {
                    eprintln!(
                        "t={}: skipped detection {}: {}",
                        report.t, s.index, s.reason
                    );
                }
                skipped += report.skipped.len();
                below += report.below_threshold.len();
                pruned += report.pruned.len();
            }
            let t_end = frames.last().map_or(0.0, |f| f.t);
            let best = if map.is_empty() {
                eprintln!("no instance matched the target");
                None
            } else {
                Some(select_best(map.instances(), &hand, &cfg.scoring).expect("map is non-empty"))
            };
            let overview = best
                .as_ref()
                .map(|b| plan_overview(&hand, &Vector3::from(b.position)).utterance());
            let value = json!({
                "frames": frames.len(),
                "skipped_detections": skipped,
                "below_threshold": below,
                "pruned": pruned,
                "snapshot": map.snapshot(t_end),
                "target": best,
                "overview": overview,
            });
            write_json(out.as_deref(), &value)?;
        }
        Command::Serve {
            policy,
            port,
            host,
            transcripts,
        } => {
            let s = &cfg.serve;
            let policy = policy.map(|p| load_policy(&p)).transpose()?;
            let mut service = ServiceConfig {
                session: cfg.sim.session,
                ..ServiceConfig::default()
            };
            if let Some(t) = s.idle_timeout {
                service.idle_timeout = t;
            }
            if let Some(dir) = &transcripts {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            let host = host
                .or(s.host.clone())
                .unwrap_or_else(|| "127.0.0.1".into());
            let port = port.or(s.port).unwrap_or(8765);
            let state = Arc::new(AppState::new(policy, service, transcripts));
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| CliError::Data(format!("bind {host}:{port}: {e}")))?;
                let addr = listener
                    .local_addr()
                    .map_err(|e| CliError::Data(e.to_string()))?;
                println!("listening on ws://{addr}/ws");
                reachguide_service::serve(listener, state)
                    .await
                    .map_err(|e| CliError::Data(e.to_string()))
            })?;
        }
    }
    Ok(())
}

/// Parameters behind a metrics CSV, next to it as `<file>.meta.json`.
fn write_sidecar(
    out: &Path,
    cfg: &FileConfig,
    trials: usize,
    seed: u64,
    mode: Option<PlannerMode>,
    policy: &ReachPolicy,
) -> Result<(), CliError> {
    let m = policy.metadata();
    let value = json!({
        "note": "human parameters are synthetic placeholders, not measured values",
        "trials": trials,
        "master_seed": seed,
        "mode": mode,
        "sim": cfg.sim,
        "start_distribution": cfg.start,
        "policy": {
            "resolution": m.resolution,
            "extent": m.extent,
            "gamma": m.gamma,
            "tolerance": m.tolerance,
            "reward": m.reward,
            "vocabulary_hash": m.vocabulary_hash,
            "sweeps": m.convergence.sweeps,
        },
    });
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    write_json(Some(Path::new(&name)), &value)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
