//! Fine-tuning dataset construction from scored trajectories.
//!
//! Trajectories are ranked by their overall evaluation scores; the top ones
//! are decomposed into behavior-level instances (one per protagonist event)
//! for supervised fine-tuning, and same-persona trajectory pairs from
//! different protagonist models become preference pairs ranked by score gap.
//!
//! Prompts are never stored during simulation; they are replayed through the
//! same assemblers the agents used, purely from trajectory state.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{render_act_prompt, render_reaction_prompt, ActTemplate, EventKind};
use crate::evaluation::EvaluationReport;
use crate::simulation::Trajectory;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("trajectory `{0}` has no finalized report")]
    MissingReport(String),
    #[error("report `{0}` has no matching trajectory")]
    OrphanReport(String),
    #[error("top-k {requested} exceeds pool size {available}")]
    TopKTooLarge { requested: usize, available: usize },
    #[error("pool contains a single protagonist model; preference pairs need at least two")]
    NoPairs,
    #[error("prompt replay failed for `{trajectory}`: {reason}")]
    ReplayFailed { trajectory: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A trajectory joined with its finalized evaluation report.
#[derive(Debug, Clone)]
pub struct ScoredTrajectory {
    pub trajectory: Trajectory,
    pub report: EvaluationReport,
}

/// Join trajectories with their reports by trajectory id.
pub fn pair_pool(
    trajectories: Vec<Trajectory>,
    reports: Vec<EvaluationReport>,
) -> Result<Vec<ScoredTrajectory>, DatagenError> {
    let mut by_id: BTreeMap<String, EvaluationReport> =
        reports.into_iter().map(|r| (r.trajectory_id.clone(), r)).collect();
    let mut pool = Vec::with_capacity(trajectories.len());
    for trajectory in trajectories {
        let report = by_id
            .remove(&trajectory.trajectory_id)
            .ok_or_else(|| DatagenError::MissingReport(trajectory.trajectory_id.clone()))?;
        pool.push(ScoredTrajectory { trajectory, report });
    }
    if let Some(orphan) = by_id.into_keys().next() {
        return Err(DatagenError::OrphanReport(orphan));
    }
    Ok(pool)
}

/// Descending by overall score; ties broken by trajectory id ascending, so
/// the ranking is a total order and stable across runs.
pub fn rank_trajectories(pool: &[ScoredTrajectory]) -> Vec<&ScoredTrajectory> {
    let mut ranked: Vec<&ScoredTrajectory> = pool.iter().collect();
    ranked.sort_by(|a, b| {
        b.report
            .overall
            .total_cmp(&a.report.overall)
            .then_with(|| a.trajectory.trajectory_id.cmp(&b.trajectory.trajectory_id))
    });
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub trajectory_id: String,
    pub round: u32,
    pub kind: EventKind,
}

/// One (prompt, protagonist response) pair extracted from a trajectory step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorInstance {
    pub prompt: String,
    pub response: String,
    pub meta: InstanceMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoMeta {
    pub chosen_traj: String,
    pub rejected_traj: String,
    pub round: u32,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoPair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
    pub meta: DpoMeta,
}

/// A protagonist step with its replayed prompt and the canonical alignment
/// key (whitespace-normalized, memory slots masked).
#[derive(Debug, Clone)]
pub struct ProtagonistStep {
    pub round: u32,
    pub kind: EventKind,
    pub response: String,
    pub prompt: String,
    pub canonical: String,
}

const MEMORY_MASK: &str = "[MEMORIES]";

/// Collapse all whitespace runs to single spaces.
pub fn canonicalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn act_template_from_name(versioned: &str) -> Option<ActTemplate> {
    match versioned.split('@').next() {
        Some("action") => Some(ActTemplate::Action),
        Some("dialogue") => Some(ActTemplate::Dialogue),
        _ => None,
    }
}

/// Replay every protagonist step of a trajectory through the prompt
/// assemblers, in trajectory order (within a round: action before reaction).
pub fn protagonist_steps(trajectory: &Trajectory) -> Result<Vec<ProtagonistStep>, DatagenError> {
    let replay_err = |reason: String| DatagenError::ReplayFailed {
        trajectory: trajectory.trajectory_id.clone(),
        reason,
    };
    let protagonist = trajectory.protagonist_name.as_str();
    let mut steps = Vec::new();

    for round in &trajectory.rounds {
        let bdi = trajectory
            .beliefs_before_round(round.index)
            .get(protagonist)
            .ok_or_else(|| replay_err(format!("no belief snapshot for round {}", round.index)))?
            .clone();

        if round.action.actor == protagonist {
            let template = act_template_from_name(&round.act_template)
                .ok_or_else(|| replay_err(format!("unknown template `{}`", round.act_template)))?;
            let prompt = render_act_prompt(
                template,
                &trajectory.protagonist_summary,
                &bdi,
                &round.view,
                &round.retrieved_memories,
            )
            .map_err(|e| replay_err(e.to_string()))?;
            let masked = render_act_prompt(
                template,
                &trajectory.protagonist_summary,
                &bdi,
                &round.view,
                &[MEMORY_MASK.to_string()],
            )
            .map_err(|e| replay_err(e.to_string()))?;
            steps.push(ProtagonistStep {
                round: round.index,
                kind: round.action.kind,
                response: round.action.content.clone(),
                prompt,
                canonical: canonicalize(&masked),
            });
        }

        if round.reaction.actor == protagonist {
            let incoming = format!("{}: {}", round.action.actor, round.action.content);
            let prompt = render_reaction_prompt(
                &trajectory.protagonist_summary,
                &bdi,
                &round.view,
                &incoming,
                &round.influence.impact,
            )
            .map_err(|e| replay_err(e.to_string()))?;
            steps.push(ProtagonistStep {
                round: round.index,
                kind: EventKind::Reaction,
                response: round.reaction.content.clone(),
                canonical: canonicalize(&prompt),
                prompt,
            });
        }
    }
    Ok(steps)
}

/// SFT export: behavior-level instances from exactly the top-k ranked
/// trajectories, one per protagonist event, in trajectory-then-round order.
pub fn export_sft(pool: &[ScoredTrajectory], top_k: usize) -> Result<Vec<BehaviorInstance>, DatagenError> {
    if top_k > pool.len() {
        return Err(DatagenError::TopKTooLarge { requested: top_k, available: pool.len() });
    }
    let ranked = rank_trajectories(pool);
    let mut instances = Vec::new();
    for scored in ranked.into_iter().take(top_k) {
        for step in protagonist_steps(&scored.trajectory)? {
            instances.push(BehaviorInstance {
                prompt: step.prompt,
                response: step.response,
                meta: InstanceMeta {
                    trajectory_id: scored.trajectory.trajectory_id.clone(),
                    round: step.round,
                    kind: step.kind,
                },
            });
        }
    }
    Ok(instances)
}

/// DPO export: same-persona trajectory pairs from different protagonist
/// models, ranked by overall-score gap descending, top-n retained, each
/// decomposed into step-aligned preference pairs.
pub fn build_dpo_pairs(pool: &[ScoredTrajectory], top_n: usize) -> Result<Vec<DpoPair>, DatagenError> {
    let mut models: Vec<&str> =
        pool.iter().map(|s| s.trajectory.protagonist_model_id.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    if models.len() < 2 {
        return Err(DatagenError::NoPairs);
    }

    // Candidate pairs: same persona, different model, nonzero gap.
    let mut candidates: Vec<(f64, &ScoredTrajectory, &ScoredTrajectory)> = Vec::new();
    for (i, a) in pool.iter().enumerate() {
        for b in &pool[i + 1..] {
            if a.trajectory.persona_id != b.trajectory.persona_id
                || a.trajectory.protagonist_model_id == b.trajectory.protagonist_model_id
            {
                continue;
            }
            let gap = a.report.overall - b.report.overall;
            if gap == 0.0 {
                continue;
            }
            let (chosen, rejected) = if gap > 0.0 { (a, b) } else { (b, a) };
            candidates.push((gap.abs(), chosen, rejected));
        }
    }
    candidates.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then_with(|| x.1.trajectory.trajectory_id.cmp(&y.1.trajectory.trajectory_id))
            .then_with(|| x.2.trajectory.trajectory_id.cmp(&y.2.trajectory.trajectory_id))
    });
    candidates.truncate(top_n);

    let mut pairs = Vec::new();
    for (gap, chosen, rejected) in candidates {
        let chosen_steps = protagonist_steps(&chosen.trajectory)?;
        let rejected_steps = protagonist_steps(&rejected.trajectory)?;

        // Group the rejected side by canonical key, preserving step order
        // within each key.
        let mut rejected_by_key: BTreeMap<&str, Vec<&ProtagonistStep>> = BTreeMap::new();
        for step in &rejected_steps {
            rejected_by_key.entry(step.canonical.as_str()).or_default().push(step);
        }
        let mut used: BTreeMap<&str, usize> = BTreeMap::new();

        let mut aligned = 0usize;
        for step in &chosen_steps {
            let Some(partners) = rejected_by_key.get(step.canonical.as_str()) else {
                continue;
            };
            let cursor = used.entry(step.canonical.as_str()).or_insert(0);
            let Some(partner) = partners.get(*cursor) else {
                continue;
            };
            *cursor += 1;
            if step.response == partner.response {
                continue;
            }
            aligned += 1;
            pairs.push(DpoPair {
                prompt: step.prompt.clone(),
                chosen: step.response.clone(),
                rejected: partner.response.clone(),
                chosen_score: chosen.report.overall,
                rejected_score: rejected.report.overall,
                meta: DpoMeta {
                    chosen_traj: chosen.trajectory.trajectory_id.clone(),
                    rejected_traj: rejected.trajectory.trajectory_id.clone(),
                    round: step.round,
                    gap,
                },
            });
        }
        if aligned == 0 {
            log::warn!(
                "no alignable steps between `{}` and `{}`; pair skipped",
                chosen.trajectory.trajectory_id,
                rejected.trajectory.trajectory_id
            );
        }
    }
    Ok(pairs)
}

/// Export manifest: counts, source hashes, and the export configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset: String,
    pub count: usize,
    /// trajectory id → sha256 of its serialized line.
    pub source_hashes: BTreeMap<String, String>,
    pub config: serde_json::Value,
}

pub fn source_hashes(pool: &[ScoredTrajectory]) -> BTreeMap<String, String> {
    pool.iter()
        .map(|s| {
            let digest = Sha256::digest(s.trajectory.to_jsonl_line().as_bytes());
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            (s.trajectory.trajectory_id.clone(), hex)
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DatagenError> {
    let io_err = |source| DatagenError::Io { path: path.display().to_string(), source };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for row in rows {
        let line = serde_json::to_string(row).expect("row serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Write `sft.jsonl` plus `sft.manifest.json` into `dir`.
pub fn write_sft_export(
    dir: &Path,
    instances: &[BehaviorInstance],
    pool: &[ScoredTrajectory],
    top_k: usize,
) -> Result<(), DatagenError> {
    write_jsonl(&dir.join("sft.jsonl"), instances)?;
    let manifest = DatasetManifest {
        dataset: "sft".to_string(),
        count: instances.len(),
        source_hashes: source_hashes(pool),
        config: serde_json::json!({ "top_k": top_k, "pool_size": pool.len() }),
    };
    let path = dir.join("sft.manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|source| DatagenError::Io { path: path.display().to_string(), source })
}

/// Write `dpo.jsonl` plus `dpo.manifest.json` into `dir`.
pub fn write_dpo_export(
    dir: &Path,
    pairs: &[DpoPair],
    pool: &[ScoredTrajectory],
    top_n: usize,
) -> Result<(), DatagenError> {
    write_jsonl(&dir.join("dpo.jsonl"), pairs)?;
    let manifest = DatasetManifest {
        dataset: "dpo".to_string(),
        count: pairs.len(),
        source_hashes: source_hashes(pool),
        config: serde_json::json!({ "top_n": top_n, "pool_size": pool.len() }),
    };
    let path = dir.join("dpo.manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|source| DatagenError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ActionEvent, BdiState};
    use crate::environment::{
        CheckpointCoverage, Influence, NpcSketch, Scene, StopReason, TurnDecision, TurnVerdict,
        WorldState,
    };
    use crate::evaluation::{EvaluationReport, MetricVector, REPORT_SCHEMA};
    use crate::simulation::{Round, Trajectory, TRAJECTORY_SCHEMA};
    use std::collections::{BTreeMap, BTreeSet};

    fn bdi() -> BdiState {
        BdiState {
            self_belief: "I am Ada".to_string(),
            env_belief: "calm".to_string(),
            desire: "connect".to_string(),
            intention: "greet".to_string(),
        }
    }

    fn event(actor: &str, kind: EventKind, content: &str, round: u32, target: Option<&str>) -> ActionEvent {
        ActionEvent {
            round,
            actor: actor.to_string(),
            kind,
            content: content.to_string(),
            raw_content: content.to_string(),
            target: target.map(str::to_string),
            timestamp: "2025-01-01T00:00:00Z".to_string(),
        }
    }

    /// Build a trajectory with `rounds` rounds. Odd rounds: Ada acts, Bo
    /// reacts. Even rounds: Bo acts, Ada reacts. One protagonist event per
    /// round either way.
    fn trajectory(id: &str, model: &str, persona: &str, rounds: u32, response_tag: &str) -> Trajectory {
        let scene = Scene {
            scene_id: format!("scene-{persona}"),
            event_description: "A gathering.".to_string(),
            time: "noon".to_string(),
            place: "plaza".to_string(),
            protagonist_name: "Ada".to_string(),
            protagonist_sketch: "Ada arrives.".to_string(),
            npc_sketches: vec![
                NpcSketch { name: "Bo".to_string(), sketch: "vendor".to_string() },
                NpcSketch { name: "Cy".to_string(), sketch: "poet".to_string() },
            ],
            initial_actions: BTreeMap::new(),
        };
        let mut beliefs = BTreeMap::new();
        for c in ["Ada", "Bo", "Cy"] {
            beliefs.insert(c.to_string(), bdi());
        }
        let mut round_list = Vec::new();
        for index in 1..=rounds {
            let protagonist_acts = index % 2 == 1;
            let (action, reaction) = if protagonist_acts {
                (
                    event("Ada", EventKind::Action, &format!("Ada {response_tag} move {index}."), index, None),
                    event("Bo", EventKind::Reaction, &format!("Bo replies {index}."), index, Some("Ada")),
                )
            } else {
                (
                    event("Bo", EventKind::Action, &format!("Bo prompt {index}."), index, None),
                    event("Ada", EventKind::Reaction, &format!("Ada {response_tag} reacts {index}."), index, Some("Bo")),
                )
            };
            let responder = reaction.actor.clone();
            round_list.push(Round {
                index,
                view: format!("plaza, round {index}"),
                act_template: "action@v1".to_string(),
                retrieved_memories: if protagonist_acts && index > 1 {
                    // Memories diverge across models; masking must hide them.
                    vec![format!("[round {}] {response_tag} private memory", index - 1)]
                } else {
                    Vec::new()
                },
                action,
                influence: Influence { responder, impact: format!("impact {index}") },
                reaction,
                summary: format!("summary {index}"),
                state_updates: BTreeMap::new(),
                env_changed: false,
                decision: TurnDecision {
                    verdict: if index == rounds {
                        TurnVerdict::Stop(StopReason::MaxTurns)
                    } else {
                        TurnVerdict::Continue
                    },
                    coverage_after: CheckpointCoverage::new(),
                },
                belief_snapshots: beliefs.clone(),
            });
        }
        Trajectory {
            schema: TRAJECTORY_SCHEMA.to_string(),
            trajectory_id: id.to_string(),
            persona_id: persona.to_string(),
            repeat: 0,
            protagonist_model_id: model.to_string(),
            protagonist_name: "Ada".to_string(),
            protagonist_summary: "Ada, librarian.".to_string(),
            persona_facts: "Background: coastal".to_string(),
            scene: scene.clone(),
            initial_world: WorldState::initial(&scene),
            initial_beliefs: beliefs,
            rounds: round_list,
            coverage_final: CheckpointCoverage::new(),
            stop_reason: Some(StopReason::MaxTurns),
            aborted: false,
            wall_time_ms: 1000,
        }
    }

    fn report(id: &str, model: &str, persona: &str, overall: f64) -> EvaluationReport {
        EvaluationReport {
            schema: REPORT_SCHEMA.to_string(),
            trajectory_id: id.to_string(),
            persona_id: persona.to_string(),
            protagonist_model_id: model.to_string(),
            repeat: 0,
            judge_scores: vec![],
            disputed_metrics: BTreeSet::new(),
            arbitrations: BTreeMap::new(),
            final_scores: MetricVector::uniform(overall),
            overall,
        }
    }

    fn scored(id: &str, model: &str, persona: &str, rounds: u32, overall: f64) -> ScoredTrajectory {
        ScoredTrajectory {
            trajectory: trajectory(id, model, persona, rounds, model),
            report: report(id, model, persona, overall),
        }
    }

    #[test]
    fn ranking_is_descending_with_id_tiebreak() {
        let pool = vec![
            scored("t-b", "m", "p1", 2, 3.5),
            scored("t-a", "m", "p2", 2, 3.9),
            scored("t-c", "m", "p3", 2, 3.7),
        ];
        let ranked = rank_trajectories(&pool);
        let overalls: Vec<f64> = ranked.iter().map(|s| s.report.overall).collect();
        assert_eq!(overalls, vec![3.9, 3.7, 3.5]);

        let tied = vec![
            scored("t-z", "m", "p1", 2, 3.5),
            scored("t-a", "m", "p2", 2, 3.5),
        ];
        let ranked = rank_trajectories(&tied);
        assert_eq!(ranked[0].trajectory.trajectory_id, "t-a");
    }

    #[test]
    fn ranking_pool_of_one_is_itself() {
        let pool = vec![scored("only", "m", "p1", 2, 3.0)];
        assert_eq!(rank_trajectories(&pool)[0].trajectory.trajectory_id, "only");
    }

    #[test]
    fn pair_pool_requires_matching_reports() {
        let t = trajectory("t1", "m", "p1", 2, "m");
        let err = pair_pool(vec![t], vec![]).unwrap_err();
        assert!(matches!(err, DatagenError::MissingReport(id) if id == "t1"));

        let t = trajectory("t1", "m", "p1", 2, "m");
        let r1 = report("t1", "m", "p1", 3.0);
        let r2 = report("ghost", "m", "p1", 3.0);
        let err = pair_pool(vec![t], vec![r1, r2]).unwrap_err();
        assert!(matches!(err, DatagenError::OrphanReport(id) if id == "ghost"));
    }

    #[test]
    fn sft_instance_count_equals_protagonist_event_sum() {
        // Protagonist event counts 5, 4, 3; top 2 ranked are the 5- and
        // 4-event trajectories → 9 instances.
        let pool = vec![
            scored("t-five", "m", "p1", 5, 4.5),
            scored("t-four", "m", "p2", 4, 4.0),
            scored("t-three", "m", "p3", 3, 3.0),
        ];
        for s in &pool {
            assert_eq!(s.trajectory.protagonist_event_count() as u32, s.trajectory.rounds.len() as u32);
        }
        let instances = export_sft(&pool, 2).unwrap();
        assert_eq!(instances.len(), 9);
        // Trajectory-then-round order.
        assert_eq!(instances[0].meta.trajectory_id, "t-five");
        assert_eq!(instances[5].meta.trajectory_id, "t-four");
        let rounds: Vec<u32> = instances[..5].iter().map(|i| i.meta.round).collect();
        assert_eq!(rounds, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn sft_top_zero_is_empty() {
        let pool = vec![scored("t", "m", "p1", 3, 3.0)];
        assert!(export_sft(&pool, 0).unwrap().is_empty());
    }

    #[test]
    fn sft_top_k_beyond_pool_rejected() {
        let pool = vec![scored("t", "m", "p1", 3, 3.0)];
        assert!(matches!(
            export_sft(&pool, 2),
            Err(DatagenError::TopKTooLarge { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn sft_prompts_replay_from_trajectory_state() {
        let pool = vec![scored("t", "m", "p1", 3, 3.0)];
        let instances = export_sft(&pool, 1).unwrap();
        for instance in &instances {
            assert!(instance.prompt.contains("Ada, librarian."));
            assert!(!instance.response.is_empty());
        }
        // Round-2 step is a reaction: its prompt carries the incoming event.
        let reaction_instance = instances.iter().find(|i| i.meta.kind == EventKind::Reaction).unwrap();
        assert!(reaction_instance.prompt.contains("Bo prompt 2."));
        assert!(reaction_instance.prompt.contains("impact 2"));
    }

    #[test]
    fn dpo_single_model_pool_is_no_pairs() {
        let pool = vec![
            scored("t1", "m", "p1", 2, 4.0),
            scored("t2", "m", "p1", 2, 3.0),
        ];
        assert!(matches!(build_dpo_pairs(&pool, 10), Err(DatagenError::NoPairs)));
    }

    #[test]
    fn dpo_aligns_steps_and_chooses_higher_overall() {
        // Same persona, two models, identical views/BDI, different memories
        // (masked away) and different responses → every protagonist step
        // aligns.
        let pool = vec![
            scored("t-a", "model-a", "p1", 3, 4.0),
            scored("t-b", "model-b", "p1", 3, 3.0),
        ];
        let pairs = build_dpo_pairs(&pool, 10).unwrap();
        assert_eq!(pairs.len(), 3, "all three protagonist steps align");
        for pair in &pairs {
            assert!(pair.chosen_score > pair.rejected_score);
            assert_ne!(pair.chosen, pair.rejected);
            assert_eq!(pair.meta.chosen_traj, "t-a");
            assert!(pair.chosen.contains("model-a"));
            assert!(pair.rejected.contains("model-b"));
            assert_eq!(pair.meta.gap, 1.0);
        }
    }

    #[test]
    fn dpo_zero_gap_pairs_are_skipped() {
        let pool = vec![
            scored("t-a", "model-a", "p1", 2, 3.5),
            scored("t-b", "model-b", "p1", 2, 3.5),
        ];
        let pairs = build_dpo_pairs(&pool, 10).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn dpo_pairs_cross_personas_never() {
        let pool = vec![
            scored("t-a", "model-a", "p1", 2, 4.0),
            scored("t-b", "model-b", "p2", 2, 3.0),
        ];
        let pairs = build_dpo_pairs(&pool, 10).unwrap();
        assert!(pairs.is_empty(), "different personas must not pair");
    }

    #[test]
    fn dpo_top_n_truncates_candidate_pairs() {
        let pool = vec![
            scored("t-a1", "model-a", "p1", 2, 5.0),
            scored("t-b1", "model-b", "p1", 2, 3.0),
            scored("t-a2", "model-a", "p2", 2, 4.0),
            scored("t-b2", "model-b", "p2", 2, 3.9),
        ];
        // Two candidate pairs (p1 gap 2.0, p2 gap 0.1); top_n=1 keeps p1.
        let pairs = build_dpo_pairs(&pool, 1).unwrap();
        assert!(!pairs.is_empty());
        assert!(pairs.iter().all(|p| p.meta.chosen_traj == "t-a1"));
    }

    #[test]
    fn exports_write_jsonl_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let pool = vec![
            scored("t-a", "model-a", "p1", 2, 4.0),
            scored("t-b", "model-b", "p1", 2, 3.0),
        ];
        let instances = export_sft(&pool, 2).unwrap();
        write_sft_export(dir.path(), &instances, &pool, 2).unwrap();
        let sft_text = std::fs::read_to_string(dir.path().join("sft.jsonl")).unwrap();
        assert_eq!(sft_text.lines().count(), instances.len());
        let manifest: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("sft.manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest.count, instances.len());
        assert_eq!(manifest.source_hashes.len(), 2);

        let pairs = build_dpo_pairs(&pool, 10).unwrap();
        write_dpo_export(dir.path(), &pairs, &pool, 10).unwrap();
        let dpo_text = std::fs::read_to_string(dir.path().join("dpo.jsonl")).unwrap();
        assert_eq!(dpo_text.lines().count(), pairs.len());
    }
}
