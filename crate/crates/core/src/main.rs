use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use camnet::eval::{align_to_ground_truth, flat_fit, link_precision_recall, reid_accuracy, topology_distance, Metrics};
use camnet::io::{export_events, ground_truth_path, import_events, read_json, write_json};
use camnet::pipeline::{event_correlation_baseline, exhaustive_baseline, run_test, run_training};
use camnet::report::{dump_plots, write_confidence_maps, TestReport, Timings, TrainingReport};
use camnet::simgen::{default_scenario, micro_scenario, simulate, GroundTruth, ScenarioSpec};
use camnet::topology::filter_reliable;
use camnet::types::{Correspondence, PipelineConfig, TopologyGraph, TopologyLevel};

#[derive(Parser)]
#[command(name = "camnet", version, about = "Camera network topology inference and person re-identification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration JSON; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration (and of the scenario for `simulate`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event stream with ground truth.
    Simulate {
        /// `default`, `micro`, or a scenario JSON file.
        #[arg(long, default_value = "default")]
        scenario: String,
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Infer the topology and correspondences of an event stream.
    Train {
        #[arg(long)]
        events: PathBuf,
    },
    /// Re-identify on a new stream with a frozen topology.
    Test {
        #[arg(long)]
        events: PathBuf,
        /// `topology.json` written by `train`.
        #[arg(long)]
        topology: PathBuf,
    },
    /// Run a reference method.
    Baseline {
        #[arg(value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        events: PathBuf,
    },
    /// Score correspondences and a topology against ground truth.
    Evaluate {
        #[arg(long)]
        events: PathBuf,
        /// Ground truth; defaults to the file next to the events.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Any report with a `correspondences` list.
        #[arg(long)]
        correspondences: Option<PathBuf>,
        #[arg(long)]
        topology: Option<PathBuf>,
    },
    /// Write one histogram CSV per link of a topology.
    DumpPlots {
        #[arg(long)]
        topology: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Exhaustive,
    EventCorr,
}

#[derive(Deserialize)]
struct WithCorrespondences {
    correspondences: Vec<Correspondence>,
}

fn load_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &common.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_scenario(name: &str) -> anyhow::Result<ScenarioSpec> {
    Ok(match name {
        "default" => default_scenario(),
        "micro" => micro_scenario(),
        path => read_json(Path::new(path))?,
    })
}

fn out_path(common: &Common, name: &str) -> PathBuf {
    common.out_dir.join(name)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = &cli.common;
    fs::create_dir_all(&common.out_dir).with_context(|| format!("creating {}", common.out_dir.display()))?;
    match cli.command {
        Command::Simulate {
            scenario,
            identities,
            noise,
        } => {
            let mut spec = load_scenario(&scenario)?;
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            if let Some(n) = identities {
                spec.identities = n;
            }
            if let Some(x) = noise {
                spec.noise = x;
            }
            let (stream, gt) = simulate(&spec)?;
            let events = out_path(common, "events.jsonl");
            export_events(&stream, Some(&gt), &events)?;
            write_json(&out_path(common, "scenario.json"), &spec)?;
            println!(
                "{} tracks, {} ground-truth correspondences -> {}",
                stream.len(),
                gt.correspondences.len(),
                events.display()
            );
        }
        Command::Train { events } => {
            let cfg = load_config(common)?;
            let (stream, gt) = import_events(&events)?;
            let run = run_training(&stream, &cfg, gt.as_ref())?;
            write_json(&out_path(common, "report.json"), &TrainingReport::new(&run, &stream, &cfg))?;
            write_json(&out_path(common, "topology.json"), &run.state.topology)?;
            write_json(&out_path(common, "camera_topology.json"), &run.state.camera_topology)?;
            write_confidence_maps(&run.state.camera_topology, &common.out_dir)?;
            let mut timings = run.wall_time_seconds.clone();
            for h in &run.state.history {
                timings.insert(format!("iteration_{}", h.iteration), h.wall_time_seconds);
            }
            write_json(&out_path(common, "timings.json"), &timings)?;
            println!(
                "{} valid zone links after {} iterations, {} correspondences ({} reliable)",
                run.state.topology.valid_edges().count(),
                run.state.iteration,
                run.result.correspondences.len(),
                run.result.reliable.len()
            );
        }
        Command::Test { events, topology } => {
            let cfg = load_config(common)?;
            let (stream, _) = import_events(&events)?;
            let topo: TopologyGraph = read_json(&topology)?;
            let results = run_test(&stream, &topo, &cfg)?;
            write_json(&out_path(common, "test_report.json"), &TestReport::new(&results, &topo, &stream, &cfg))?;
            write_json(
                &out_path(common, "timings.json"),
                &Timings::from([("test".to_string(), results.wall_time_seconds)]),
            )?;
            println!(
                "{} correspondences ({} reliable)",
                results.correspondences.len(),
                results.reliable.len()
            );
        }
        Command::Baseline { method, events } => {
            let cfg = load_config(common)?;
            let (stream, _) = import_events(&events)?;
            let started = Instant::now();
            let (name, timing) = match method {
                BaselineMethod::Exhaustive => {
                    let results = exhaustive_baseline(&stream, &cfg)?;
                    let topo = TopologyGraph::empty(TopologyLevel::Zone);
                    write_json(
                        &out_path(common, "baseline_exhaustive.json"),
                        &TestReport::new(&results, &topo, &stream, &cfg),
                    )?;
                    println!(
                        "{} correspondences, {} comparisons",
                        results.correspondences.len(),
                        results.comparisons
                    );
                    ("exhaustive", results.wall_time_seconds)
                }
                BaselineMethod::EventCorr => {
                    let topo = event_correlation_baseline(&stream, &cfg)?;
                    write_json(&out_path(common, "baseline_event_corr.json"), &topo)?;
                    println!("{} valid zone links", topo.valid_edges().count());
                    ("event_corr", started.elapsed().as_secs_f64())
                }
            };
            write_json(
                &out_path(common, "timings.json"),
                &Timings::from([(name.to_string(), timing)]),
            )?;
        }
        Command::Evaluate {
            events,
            gt,
            correspondences,
            topology,
        } => {
            let cfg = load_config(common)?;
            let gt_path = gt.unwrap_or_else(|| ground_truth_path(&events));
            if !gt_path.exists() {
                bail!("no ground truth at {}", gt_path.display());
            }
            let gt: GroundTruth = read_json(&gt_path)?;
            let mut metrics = Metrics::default();
            if let Some(path) = &correspondences {
                let pred: WithCorrespondences = read_json(path)?;
                metrics.reid_accuracy = Some(reid_accuracy(&pred.correspondences, &gt)?);
                let reliable = filter_reliable(&pred.correspondences, cfg.theta_sim);
                metrics.reid_accuracy_reliable = Some(reid_accuracy(&reliable, &gt)?);
                let timings = path.with_file_name("timings.json");
                if timings.exists() {
                    metrics.wall_time_seconds = read_json(&timings)?;
                }
            }
            if let Some(path) = &topology {
                let inferred: TopologyGraph = read_json(path)?;
                let aligned = align_to_ground_truth(&inferred, &gt);
                let truth = gt.topology();
                let d = topology_distance(&aligned, &truth, flat_fit(cfg.initial_window_t))?;
                let (p, r) = link_precision_recall(&aligned, &truth);
                metrics.topology_distance_matched = d.matched;
                metrics.topology_distance_penalized = Some(d.penalized);
                metrics.link_precision = Some(p);
                metrics.link_recall = Some(r);
                metrics.missing_links = Some(d.missing);
            }
            if correspondences.is_none() && topology.is_none() {
                bail!("nothing to evaluate: pass --correspondences and/or --topology");
            }
            write_json(&out_path(common, "metrics.json"), &metrics)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::DumpPlots { topology } => {
            let topo: TopologyGraph = read_json(&topology)?;
            let files = dump_plots(&topo, &common.out_dir)?;
            if topo.level == TopologyLevel::Camera {
                write_confidence_maps(&topo, &common.out_dir)?;
            }
            println!("{} link files in {}", files.len(), common.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
