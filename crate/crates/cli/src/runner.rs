//! Command orchestration: episode pool, file layout, manifests.
//!
//! Layout under the output directory:
//!   trajectories/<id>.jsonl           one serialized trajectory per line
//!   trajectories/<id>.partial.jsonl   aborted episodes, kept for forensics
//!   reports/<id>.report.json          one evaluation report per trajectory
//!   summary.txt                       per-model mean ± std grid
//!   sft.jsonl / dpo.jsonl             dataset exports with manifests
//!   <command>.manifest.json           config snapshot + per-item status

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use troupe_core::datagen::{self, ScoredTrajectory};
use troupe_core::evaluation::{evaluate_trajectory, render_grid, summarize_reports};
use troupe_core::fixture::{self, FixtureSpec};
use troupe_core::gateway::Gateway;
use troupe_core::persona::{load_bank, sample_personas, Persona};
use troupe_core::simulation::{simulate_one, EpisodeGateways, EpisodeModels, SimulateError};
use troupe_core::{EvaluationReport, Trajectory};

use crate::config::{BackendEntry, RunConfig};

fn now_iso() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest<Row: Serialize> {
    command: String,
    config_hash: String,
    started_at: String,
    finished_at: String,
    config: RunConfig,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub trajectory_id: String,
    pub persona_id: String,
    pub repeat: u32,
    pub status: String,
    pub rounds: usize,
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn write_manifest<Row: Serialize>(
    out: &Path,
    command: &str,
    config: &RunConfig,
    started_at: String,
    rows: Vec<Row>,
) -> Result<()> {
    let manifest = Manifest {
        command: command.to_string(),
        config_hash: config.hash(),
        started_at,
        finished_at: now_iso(),
        config: config.clone(),
        rows,
    };
    let path = out.join(format!("{command}.manifest.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn gateway_for(config: &RunConfig, name: &str) -> Result<Arc<Gateway>> {
    let entry: &BackendEntry = config
        .backends
        .get(name)
        .with_context(|| format!("missing [backends.{name}] section"))?;
    // Script paths were already resolved against the config dir at load.
    let backend = entry.to_backend_config(name, Path::new("."))?;
    Ok(Arc::new(Gateway::new(backend)?))
}

/// Run `jobs` closures over a bounded worker pool, preserving job order in
/// the returned vector regardless of completion order.
fn run_pool<T: Send, F: Fn(usize) -> T + Sync>(jobs: usize, parallelism: usize, work: F) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallelism.max(1).min(jobs.max(1)) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= jobs {
                    break;
                }
                let result = work(index);
                results.lock().unwrap()[index] = Some(result);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("job completed")).collect()
}

pub fn cmd_simulate(config: &RunConfig) -> Result<bool> {
    config.validate()?;
    let started_at = now_iso();
    let started = Instant::now();

    let bank = load_bank(&config.bank)?;
    let personas = sample_personas(&bank, config.sample_n, config.seed)?;
    let gateways = EpisodeGateways {
        protagonist: gateway_for(config, "protagonist")?,
        npc: gateway_for(config, "npc")?,
        environment: gateway_for(config, "environment")?,
    };
    let models = EpisodeModels {
        protagonist: config.models.protagonist.clone(),
        npc: config.models.npc.clone(),
        environment: config.models.environment.clone(),
    };
    let sim_config = config.simulation_config();

    let trajectories_dir = config.out.join("trajectories");
    fs::create_dir_all(&trajectories_dir)?;

    let jobs: Vec<(Persona, u32)> = personas
        .iter()
        .flat_map(|p| (0..config.repeats).map(move |r| (p.clone(), r)))
        .collect();

    let outcomes = run_pool(jobs.len(), config.parallelism, |index| {
        let (persona, repeat) = &jobs[index];
        simulate_one(persona, *repeat, &models, &gateways, &sim_config)
    });

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut all_ok = true;
    for ((persona, repeat), outcome) in jobs.iter().zip(outcomes) {
        let row = match outcome {
            Ok(trajectory) => {
                let path = trajectories_dir.join(format!("{}.jsonl", trajectory.trajectory_id));
                fs::write(&path, format!("{}\n", trajectory.to_jsonl_line()))?;
                EpisodeRow {
                    trajectory_id: trajectory.trajectory_id.clone(),
                    persona_id: persona.id.clone(),
                    repeat: *repeat,
                    status: "ok".to_string(),
                    rounds: trajectory.rounds.len(),
                    wall_ms: trajectory.wall_time_ms,
                    error: None,
                }
            }
            Err(SimulateError::Aborted(aborted)) => {
                all_ok = false;
                let id = aborted.partial.trajectory_id.clone();
                let path = trajectories_dir.join(format!("{id}.partial.jsonl"));
                fs::write(&path, format!("{}\n", aborted.partial.to_jsonl_line()))?;
                EpisodeRow {
                    trajectory_id: id,
                    persona_id: persona.id.clone(),
                    repeat: *repeat,
                    status: "aborted".to_string(),
                    rounds: aborted.partial.rounds.len(),
                    wall_ms: aborted.partial.wall_time_ms,
                    error: Some(aborted.cause.clone()),
                }
            }
            Err(SimulateError::Setup(err)) => {
                all_ok = false;
                EpisodeRow {
                    trajectory_id: troupe_core::trajectory_id(
                        &models.protagonist,
                        &persona.id,
                        *repeat,
                    ),
                    persona_id: persona.id.clone(),
                    repeat: *repeat,
                    status: "setup_failed".to_string(),
                    rounds: 0,
                    wall_ms: 0,
                    error: Some(err.to_string()),
                }
            }
        };
        rows.push(row);
    }

    for row in &rows {
        match &row.error {
            None => println!("ok      {:<40} rounds={}", row.trajectory_id, row.rounds),
            Some(error) => {
                println!("FAILED  {:<40} rounds={} error={error}", row.trajectory_id, row.rounds)
            }
        }
    }
    println!(
        "simulated {} episode(s) in {:.1}s ({} failed)",
        rows.len(),
        started.elapsed().as_secs_f64(),
        rows.iter().filter(|r| r.error.is_some()).count(),
    );

    write_manifest(&config.out, "simulate", config, started_at, rows)?;
    Ok(all_ok)
}

/// Non-partial trajectory files under out/trajectories, sorted by name.
fn trajectory_files(out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("trajectories");
    if !dir.exists() {
        bail!("{} does not exist; run `simulate` first", dir.display());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.ends_with(".jsonl") && !n.ends_with(".partial.jsonl"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_trajectories(out: &Path) -> Result<Vec<Trajectory>> {
    let mut trajectories = Vec::new();
    for path in trajectory_files(out)? {
        let text = fs::read_to_string(&path)?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            trajectories
                .push(Trajectory::from_jsonl_line(line).with_context(|| path.display().to_string())?);
        }
    }
    Ok(trajectories)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub trajectory_id: String,
    pub status: String,
    pub overall: Option<f64>,
    pub disputed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<bool> {
    let started_at = now_iso();
    let trajectories = load_trajectories(&config.out)?;
    if trajectories.is_empty() {
        println!("(no trajectories to evaluate)");
        write_manifest(&config.out, "evaluate", config, started_at, Vec::<ReportRow>::new())?;
        return Ok(true);
    }
    let gateway = gateway_for(config, config.judge_backend_name())?;
    let eval_config = config.evaluation_config();

    let reports_dir = config.out.join("reports");
    fs::create_dir_all(&reports_dir)?;

    let outcomes = run_pool(trajectories.len(), config.parallelism, |index| {
        evaluate_trajectory(&trajectories[index], &gateway, &eval_config)
    });

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut all_ok = true;
    for (trajectory, outcome) in trajectories.iter().zip(outcomes) {
        match outcome {
            Ok(report) => {
                let path =
                    reports_dir.join(format!("{}.report.json", report.trajectory_id));
                fs::write(&path, report.to_json())?;
                rows.push(ReportRow {
                    trajectory_id: report.trajectory_id.clone(),
                    status: "ok".to_string(),
                    overall: Some(report.overall),
                    disputed: report.disputed_metrics.len(),
                    error: None,
                });
                reports.push(report);
            }
            Err(err) => {
                all_ok = false;
                rows.push(ReportRow {
                    trajectory_id: trajectory.trajectory_id.clone(),
                    status: "failed".to_string(),
                    overall: None,
                    disputed: 0,
                    error: Some(err.to_string()),
                });
            }
        }
    }

    for row in &rows {
        match &row.error {
            None => println!(
                "ok      {:<40} overall={:.3} disputed={}",
                row.trajectory_id,
                row.overall.unwrap_or(f64::NAN),
                row.disputed
            ),
            Some(error) => println!("FAILED  {:<40} error={error}", row.trajectory_id),
        }
    }

    let grid = render_grid(&summarize_reports(&reports));
    print!("{grid}");
    fs::write(config.out.join("summary.txt"), &grid)?;

    write_manifest(&config.out, "evaluate", config, started_at, rows)?;
    Ok(all_ok)
}

fn load_reports(out: &Path) -> Result<Vec<EvaluationReport>> {
    let dir = out.join("reports");
    if !dir.exists() {
        bail!("{} does not exist; run `evaluate` first", dir.display());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".report.json")))
        .collect();
    paths.sort();
    let mut reports = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path)?;
        reports.push(EvaluationReport::from_json(&text).with_context(|| path.display().to_string())?);
    }
    Ok(reports)
}

fn load_pool(config: &RunConfig) -> Result<Vec<ScoredTrajectory>> {
    let trajectories = load_trajectories(&config.out)?;
    let reports = load_reports(&config.out)?;
    Ok(datagen::pair_pool(trajectories, reports)?)
}

pub fn cmd_export_sft(config: &RunConfig, top_k_flag: Option<usize>) -> Result<bool> {
    let started_at = now_iso();
    let pool = load_pool(config)?;
    let requested = top_k_flag.unwrap_or(config.export.sft_top_k);
    let top_k = requested.min(pool.len());
    if top_k < requested {
        log::info!("pool holds {} trajectories; exporting top {top_k}", pool.len());
    }
    let instances = datagen::export_sft(&pool, top_k)?;
    datagen::write_sft_export(&config.out, &instances, &pool, top_k)?;
    println!(
        "wrote {} SFT instance(s) from top {top_k} of {} trajectories to {}",
        instances.len(),
        pool.len(),
        config.out.join("sft.jsonl").display(),
    );
    #[derive(Serialize)]
    struct Row {
        instances: usize,
        top_k: usize,
        pool: usize,
    }
    write_manifest(
        &config.out,
        "export-sft",
        config,
        started_at,
        vec![Row { instances: instances.len(), top_k, pool: pool.len() }],
    )?;
    Ok(true)
}

pub fn cmd_export_dpo(config: &RunConfig, top_n_flag: Option<usize>) -> Result<bool> {
    let started_at = now_iso();
    let pool = load_pool(config)?;
    let top_n = top_n_flag.unwrap_or(config.export.dpo_top_n);
    let pairs = datagen::build_dpo_pairs(&pool, top_n)?;
    datagen::write_dpo_export(&config.out, &pairs, &pool, top_n)?;
    println!(
        "wrote {} DPO pair(s) from top {top_n} trajectory pairs to {}",
        pairs.len(),
        config.out.join("dpo.jsonl").display(),
    );
    #[derive(Serialize)]
    struct Row {
        pairs: usize,
        top_n: usize,
        pool: usize,
    }
    write_manifest(
        &config.out,
        "export-dpo",
        config,
        started_at,
        vec![Row { pairs: pairs.len(), top_n, pool: pool.len() }],
    )?;
    Ok(true)
}

pub fn cmd_report(config: &RunConfig) -> Result<bool> {
    let reports = load_reports(&config.out)?;
    let grid = render_grid(&summarize_reports(&reports));
    print!("{grid}");
    fs::write(config.out.join("summary.txt"), &grid)?;
    Ok(true)
}

/// Write a fully scripted offline demo: bank, scripts, and ready-to-run
/// configs (including a no-early-stop variant).
pub fn cmd_gen_demo(dir: &Path, spec: &FixtureSpec) -> Result<()> {
    let fixture = fixture::generate(spec);
    let paths = fixture::write_to_dir(&fixture, dir)?;

    let file_name = |p: &Path| p.file_name().unwrap().to_str().unwrap().to_string();
    let mut backends: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    for (name, script) in [
        ("protagonist", &paths.protagonist_script),
        ("npc", &paths.npc_script),
        ("environment", &paths.environment_script),
        ("judge", &paths.judge_script),
    ] {
        backends.insert(
            name.to_string(),
            serde_json::json!({ "kind": "scripted", "script": file_name(script) }),
        );
    }

    let config = serde_json::json!({
        "bank": file_name(&paths.bank),
        "out": "out",
        "sample_n": spec.sample_n,
        "seed": spec.seed,
        "repeats": spec.repeats,
        "parallelism": 4,
        "models": {
            "protagonist": spec.models[0],
            "npc": "npc-backbone",
            "environment": "env-backbone",
        },
        "turn_control": {
            "dim_quorum": 4,
            "stall_rounds": 2,
            "evidence_quorum": 1,
            "max_turns": spec.max_turns,
            "early_stop_enabled": true,
        },
        "evaluation": {
            "judges": spec.judges,
            "arbiter": spec.arbiter,
            "dispute_threshold": 1.0,
        },
        "export": { "sft_top_k": 50, "dpo_top_n": 50 },
        "backends": backends,
    });
    let toml_text = toml::to_string_pretty(&config).context("rendering demo config")?;
    fs::write(dir.join("run.toml"), &toml_text)?;

    let no_early = toml_text.replace("early_stop_enabled = true", "early_stop_enabled = false");
    fs::write(dir.join("run-no-early-stop.toml"), no_early)?;

    println!("demo written to {}", dir.display());
    println!("  troupe simulate --config {}/run.toml", dir.display());
    for model in &spec.models[1..] {
        println!("  troupe simulate --config {}/run.toml --model {model}", dir.display());
    }
    println!("  troupe evaluate --config {}/run.toml", dir.display());
    println!("  troupe export-sft --config {}/run.toml", dir.display());
    println!("  troupe export-dpo --config {}/run.toml", dir.display());
    Ok(())
}
