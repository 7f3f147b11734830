//! Episode orchestration: the full round loop, recorded as a replayable
//! trajectory.
//!
//! Round pipeline: the acting character produces an event, the environment
//! routes it to the most-affected responder, the responder reacts, the
//! exchange is summarized, beliefs and character states of the involved
//! characters update, the environment synchronizes, and turn control decides
//! whether to continue. The protagonist initiates round 1; initiation then
//! alternates between the protagonist and the previous round's responder.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::{ActTemplate, ActionEvent, AgentKind, BdiState, CharacterAgent, EventKind};
use crate::clock::{Clock, ClockKind};
use crate::environment::{
    CharacterStateDelta, CheckpointCoverage, EnvironmentController, Influence, Scene, StopReason,
    TurnControlConfig, TurnDecision, TurnVerdict, WorldState,
};
use crate::gateway::TraceFilter;
use crate::persona::Persona;

pub const TRAJECTORY_SCHEMA: &str = "trajectory/v1";

/// Lowercase alphanumeric-and-dash slug for ids embedded in tags/filenames.
pub fn slug(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_dash = true;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            last_dash = false;
        } else if !last_dash {
            out.push('-');
            last_dash = true;
        }
    }
    out.trim_end_matches('-').to_string()
}

/// Canonical trajectory id (and scripted-tag scope): one per
/// (protagonist model, persona, repeat).
pub fn trajectory_id(model_id: &str, persona_id: &str, repeat: u32) -> String {
    format!("{}.{}.r{repeat}", slug(model_id), persona_id)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    pub turn_control: TurnControlConfig,
    pub agent_temperature: f64,
    pub retrieval_k: usize,
    pub clock: ClockKind,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 0,
            turn_control: TurnControlConfig::default(),
            agent_temperature: 0.7,
            retrieval_k: 5,
            clock: ClockKind::Logical,
        }
    }
}

impl SimulationConfig {
    pub fn max_turns(&self) -> u32 {
        self.turn_control.max_turns
    }
}

/// One completed round of the pipeline, with everything needed to replay
/// the prompts that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub index: u32,
    /// Environment view shown to the acting character.
    pub view: String,
    /// Versioned template the actor's prompt used, e.g. `action@v1`.
    pub act_template: String,
    /// Memory texts retrieved into the actor's prompt (protagonist only).
    pub retrieved_memories: Vec<String>,
    pub action: ActionEvent,
    pub influence: Influence,
    pub reaction: ActionEvent,
    pub summary: String,
    pub state_updates: BTreeMap<String, CharacterStateDelta>,
    pub env_changed: bool,
    pub decision: TurnDecision,
    /// Every character's BDI at end of round.
    pub belief_snapshots: BTreeMap<String, BdiState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema: String,
    pub trajectory_id: String,
    pub persona_id: String,
    /// Repeat index within a benchmarking run (0-based).
    pub repeat: u32,
    pub protagonist_model_id: String,
    pub protagonist_name: String,
    /// Full persona block the protagonist was prompted with.
    pub protagonist_summary: String,
    /// Rendered persona facts, as shown to turn control and judges.
    pub persona_facts: String,
    pub scene: Scene,
    pub initial_world: WorldState,
    pub initial_beliefs: BTreeMap<String, BdiState>,
    pub rounds: Vec<Round>,
    pub coverage_final: CheckpointCoverage,
    pub stop_reason: Option<StopReason>,
    pub aborted: bool,
    pub wall_time_ms: u64,
}

impl Trajectory {
    pub fn to_jsonl_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_jsonl_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn events(&self) -> impl Iterator<Item = &ActionEvent> {
        self.rounds.iter().flat_map(|r| [&r.action, &r.reaction])
    }

    pub fn protagonist_event_count(&self) -> usize {
        self.events().filter(|e| e.actor == self.protagonist_name).count()
    }

    /// BDI snapshots in force when round `index` (1-based) was prompted.
    pub fn beliefs_before_round(&self, index: u32) -> &BTreeMap<String, BdiState> {
        if index <= 1 {
            &self.initial_beliefs
        } else {
            &self.rounds[(index - 2) as usize].belief_snapshots
        }
    }

    /// Human-readable transcript for judging: scene, persona facts, then the
    /// filtered event stream.
    pub fn transcript(&self) -> String {
        let mut out = format!(
            "SCENE: {}\nTime: {}. Place: {}.\nProtagonist: {}\nSupporting characters: {}\n\nPROTAGONIST FACTS:\n{}\n\nEVENTS:\n",
            self.scene.event_description,
            self.scene.time,
            self.scene.place,
            self.protagonist_name,
            self.scene
                .npc_sketches
                .iter()
                .map(|n| n.name.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            self.persona_facts,
        );
        for round in &self.rounds {
            out.push_str(&format!("[round {}]\n", round.index));
            for event in [&round.action, &round.reaction] {
                let kind = match event.kind {
                    EventKind::Action => "acts",
                    EventKind::Dialogue => "says",
                    EventKind::Reaction => "reacts",
                };
                out.push_str(&format!("{} {}: {}\n", event.actor, kind, event.content));
            }
            out.push_str(&format!("summary: {}\n", round.summary));
        }
        out
    }

    /// Structural invariant check used by tests and batch verification.
    /// Returns human-readable violations; empty means clean.
    pub fn structural_violations(&self, max_turns: u32, filter: &TraceFilter) -> Vec<String> {
        let mut violations = Vec::new();
        if self.rounds.len() > max_turns as usize {
            violations.push(format!("{} rounds exceed max_turns {max_turns}", self.rounds.len()));
        }

        let npc_names: Vec<&str> =
            self.scene.npc_sketches.iter().map(|n| n.name.as_str()).collect();
        for npc in &npc_names {
            let initial = self.initial_beliefs.get(*npc).map(|b| b.self_belief.as_str());
            for round in &self.rounds {
                let current = round.belief_snapshots.get(*npc).map(|b| b.self_belief.as_str());
                if current != initial {
                    violations.push(format!(
                        "npc `{npc}` self-belief changed in round {}",
                        round.index
                    ));
                }
            }
        }

        let mut prev_covered = 0usize;
        for round in &self.rounds {
            if round.reaction.target.as_deref() != Some(round.action.actor.as_str()) {
                violations.push(format!("round {}: reaction target mismatch", round.index));
            }
            if round.influence.responder == round.action.actor {
                violations.push(format!("round {}: responder equals actor", round.index));
            }
            if !self.scene.contains_character(&round.action.actor)
                || !self.scene.contains_character(&round.reaction.actor)
            {
                violations.push(format!("round {}: event actor not in scene", round.index));
            }
            for event in [&round.action, &round.reaction] {
                match filter.strip(&event.content) {
                    Ok(stripped) if stripped == event.content => {}
                    _ => violations.push(format!(
                        "round {}: `{}` content is not a trace-filter fixed point",
                        round.index, event.actor
                    )),
                }
            }
            if round.summary.trim().is_empty() {
                violations.push(format!("round {}: empty summary", round.index));
            }
            let covered = round.decision.coverage_after.covered_count(1);
            if covered < prev_covered {
                violations.push(format!("round {}: coverage regressed", round.index));
            }
            prev_covered = covered;
        }
        violations
    }
}

#[derive(Debug, thiserror::Error)]
#[error("episode aborted at round {round}: {cause}")]
pub struct EpisodeAborted {
    pub cause: String,
    pub round: u32,
    /// Completed rounds are preserved for forensics.
    pub partial: Box<Trajectory>,
}

/// Deterministic initial BDI for the protagonist, assembled from the persona
/// record and the scene.
pub fn initial_protagonist_bdi(persona: &Persona, scene: &Scene) -> BdiState {
    BdiState {
        self_belief: format!(
            "I am {}, {}. I am {}.",
            persona.name,
            persona.facts.occupation,
            persona.facts.personality.join(", ")
        ),
        env_belief: format!(
            "{} I am here with {}.",
            scene.event_description,
            scene.npc_sketches.iter().map(|n| n.name.as_str()).collect::<Vec<_>>().join(" and ")
        ),
        desire: format!("Act true to my values: {}.", persona.facts.values.join(", ")),
        intention: scene
            .initial_actions
            .get(&persona.name)
            .cloned()
            .unwrap_or_else(|| "Take in the scene and respond naturally.".to_string()),
    }
}

/// Deterministic initial BDI for an NPC from its scene sketch.
pub fn initial_npc_bdi(sketch_name: &str, sketch: &str, scene: &Scene) -> BdiState {
    BdiState {
        self_belief: format!("I am {sketch_name}. {sketch}"),
        env_belief: format!(
            "{} {} is the center of this gathering.",
            scene.event_description, scene.protagonist_name
        ),
        desire: "Play my part in the scene convincingly.".to_string(),
        intention: scene
            .initial_actions
            .get(sketch_name)
            .cloned()
            .unwrap_or_else(|| "Observe and respond in character.".to_string()),
    }
}

/// Rendered persona facts used by turn control and embedded in the trajectory.
pub fn render_persona_facts(persona: &Persona) -> String {
    format!(
        "Background: {}\nPersonality: {}\nValues: {}\nInterests: {}\nExperiences:\n{}",
        persona.facts.demographics,
        persona.facts.personality.join(", "),
        persona.facts.values.join(", "),
        persona.facts.interests.join(", "),
        persona
            .facts
            .experiences
            .iter()
            .map(|e| format!("- {e}"))
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

/// Template policy: the protagonist alternates action/dialogue across its
/// initiative turns; NPC initiative turns use dialogue.
pub fn act_template_for(is_protagonist: bool, protagonist_initiative_count: u32) -> ActTemplate {
    if !is_protagonist {
        return ActTemplate::Dialogue;
    }
    if protagonist_initiative_count % 2 == 1 {
        ActTemplate::Action
    } else {
        ActTemplate::Dialogue
    }
}

fn agent_ref<'a>(
    protagonist: &'a CharacterAgent,
    npcs: &'a [CharacterAgent],
    id: &str,
) -> Option<&'a CharacterAgent> {
    if protagonist.character_id == id {
        Some(protagonist)
    } else {
        npcs.iter().find(|a| a.character_id == id)
    }
}

fn agent_mut<'a>(
    protagonist: &'a mut CharacterAgent,
    npcs: &'a mut [CharacterAgent],
    id: &str,
) -> Option<&'a mut CharacterAgent> {
    if protagonist.character_id == id {
        Some(protagonist)
    } else {
        npcs.iter_mut().find(|a| a.character_id == id)
    }
}

/// Run one episode to completion (or abort), returning the full trajectory.
/// Rounds are strictly sequential; determinism holds given identical scene,
/// scripts, seed, and config.
/// The three backend gateways an episode needs.
#[derive(Clone)]
pub struct EpisodeGateways {
    pub protagonist: std::sync::Arc<crate::gateway::Gateway>,
    pub npc: std::sync::Arc<crate::gateway::Gateway>,
    pub environment: std::sync::Arc<crate::gateway::Gateway>,
}

#[derive(Debug, Clone)]
pub struct EpisodeModels {
    pub protagonist: String,
    pub npc: String,
    pub environment: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error("scenario setup failed: {0}")]
    Setup(#[from] crate::environment::EnvironmentError),
    #[error(transparent)]
    Aborted(#[from] EpisodeAborted),
}

/// Set up a scenario for a persona and run one full episode against the
/// given backends. Convenience wrapper shared by the CLI and tests.
pub fn simulate_one(
    persona: &Persona,
    repeat: u32,
    models: &EpisodeModels,
    gateways: &EpisodeGateways,
    config: &SimulationConfig,
) -> Result<Trajectory, SimulateError> {
    let scope = trajectory_id(&models.protagonist, &persona.id, repeat);
    let env = EnvironmentController::new(
        gateways.environment.clone(),
        &models.environment,
        config.agent_temperature,
        &scope,
    );
    let scene = env.setup_scenario(persona)?;

    let mut protagonist = CharacterAgent::protagonist(
        &persona.name,
        &persona.name,
        &persona.summary(),
        initial_protagonist_bdi(persona, &scene),
        gateways.protagonist.clone(),
        &models.protagonist,
        config.agent_temperature,
        config.retrieval_k,
        &scope,
    )
    .with_memory_dim(gateways.protagonist.embed_dim());

    let mut npcs: Vec<CharacterAgent> = scene
        .npc_sketches
        .iter()
        .map(|sketch| {
            CharacterAgent::npc(
                &sketch.name,
                &sketch.name,
                &sketch.sketch,
                initial_npc_bdi(&sketch.name, &sketch.sketch, &scene),
                gateways.npc.clone(),
                &models.npc,
                config.agent_temperature,
                &scope,
            )
        })
        .collect();

    Ok(run_episode(persona, &scene, &mut protagonist, &mut npcs, &env, config, &scope, repeat)?)
}

#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    persona: &Persona,
    scene: &Scene,
    protagonist: &mut CharacterAgent,
    npcs: &mut [CharacterAgent],
    env: &EnvironmentController,
    config: &SimulationConfig,
    trajectory_id: &str,
    repeat: u32,
) -> Result<Trajectory, EpisodeAborted> {
    let clock = Clock::new(config.clock);
    let started = Instant::now();

    let mut initial_beliefs = BTreeMap::new();
    initial_beliefs.insert(protagonist.character_id.clone(), protagonist.bdi.clone());
    for npc in npcs.iter() {
        initial_beliefs.insert(npc.character_id.clone(), npc.bdi.clone());
    }

    let mut trajectory = Trajectory {
        schema: TRAJECTORY_SCHEMA.to_string(),
        trajectory_id: trajectory_id.to_string(),
        persona_id: persona.id.clone(),
        repeat,
        protagonist_model_id: protagonist.model_id().to_string(),
        protagonist_name: protagonist.character_id.clone(),
        protagonist_summary: protagonist.persona_summary.clone(),
        persona_facts: render_persona_facts(persona),
        scene: scene.clone(),
        initial_world: WorldState::initial(scene),
        initial_beliefs,
        rounds: Vec::new(),
        coverage_final: CheckpointCoverage::new(),
        stop_reason: None,
        aborted: false,
        wall_time_ms: 0,
    };

    let abort = |mut trajectory: Trajectory, round: u32, cause: String, started: Instant, clock: &Clock| {
        trajectory.aborted = true;
        trajectory.wall_time_ms = clock
            .logical_elapsed_ms()
            .unwrap_or_else(|| started.elapsed().as_millis() as u64);
        EpisodeAborted { cause, round, partial: Box::new(trajectory) }
    };

    if protagonist.kind != AgentKind::Protagonist {
        return Err(abort(trajectory, 0, "protagonist agent has wrong kind".to_string(), started, &clock));
    }
    if npcs.len() < 2 || npcs.len() > 3 {
        return Err(abort(trajectory, 0, format!("expected 2-3 npc agents, got {}", npcs.len()), started, &clock));
    }
    for npc in npcs.iter() {
        if npc.kind != AgentKind::Npc || !scene.contains_character(&npc.character_id) {
            return Err(abort(trajectory, 0, format!("npc `{}` invalid for scene", npc.character_id), started, &clock));
        }
    }

    let mut world = trajectory.initial_world.clone();
    let mut coverage = CheckpointCoverage::new();
    let mut last_summary = String::new();
    let mut prev_responder: Option<String> = None;
    let mut initiative_count = 0u32;

    for round_index in 1..=config.turn_control.max_turns {
        // Odd rounds: protagonist initiates. Even rounds: previous responder.
        let actor_id = if round_index % 2 == 1 {
            protagonist.character_id.clone()
        } else {
            prev_responder.clone().unwrap_or_else(|| protagonist.character_id.clone())
        };
        let is_protagonist_turn = actor_id == protagonist.character_id;
        if is_protagonist_turn {
            initiative_count += 1;
        }
        let template = act_template_for(is_protagonist_turn, initiative_count);

        let outcome = (|| -> Result<Round, String> {
            let view = crate::environment::render_view(scene, &world, &last_summary, round_index);

            let actor = agent_ref(protagonist, npcs, &actor_id)
                .ok_or_else(|| format!("actor `{actor_id}` not found"))?;
            let act = actor
                .act(&view, round_index, template, &clock)
                .map_err(|e| e.to_string())?;

            let influence =
                env.analyze_influence(scene, &act.event, &world).map_err(|e| e.to_string())?;

            let responder = agent_ref(protagonist, npcs, &influence.responder)
                .ok_or_else(|| format!("responder `{}` not found", influence.responder))?;
            let reaction = responder
                .react(&act.event, &influence.impact, &view, round_index, &clock)
                .map_err(|e| e.to_string())?;

            let summary =
                env.summarize_interaction(&act.event, &reaction).map_err(|e| e.to_string())?;

            // Belief updates for the involved characters only.
            for id in [&actor_id, &influence.responder] {
                let agent = agent_mut(protagonist, npcs, id)
                    .ok_or_else(|| format!("agent `{id}` not found"))?;
                agent.update_beliefs(&summary).map_err(|e| e.to_string())?;
            }

            // Character-state updates: the actor received the reaction as
            // feedback; the responder acted last and received none.
            let mut state_updates = BTreeMap::new();
            let actor_delta = env
                .update_character_state(&actor_id, &act.event, Some(&reaction), &summary, &mut world)
                .map_err(|e| e.to_string())?;
            state_updates.insert(actor_id.clone(), actor_delta);
            let responder_delta = env
                .update_character_state(&influence.responder, &reaction, None, &summary, &mut world)
                .map_err(|e| e.to_string())?;
            state_updates.insert(influence.responder.clone(), responder_delta);

            let round_events = [&act.event, &reaction];
            let (next_world, env_changed) =
                env.update_environment(&world, &round_events).map_err(|e| e.to_string())?;
            world = next_world;

            let decision = env
                .check_turn_control(
                    &trajectory.persona_facts,
                    &coverage,
                    &round_events,
                    &protagonist.character_id,
                    round_index,
                    &config.turn_control,
                )
                .map_err(|e| e.to_string())?;

            // Episodic memory: the protagonist remembers everything it
            // witnessed this round.
            protagonist.remember(round_index, &act.event.actor, &act.event.content).map_err(|e| e.to_string())?;
            protagonist.remember(round_index, &reaction.actor, &reaction.content).map_err(|e| e.to_string())?;
            protagonist.remember(round_index, "environment", &summary).map_err(|e| e.to_string())?;

            let mut belief_snapshots = BTreeMap::new();
            belief_snapshots.insert(protagonist.character_id.clone(), protagonist.bdi.clone());
            for npc in npcs.iter() {
                belief_snapshots.insert(npc.character_id.clone(), npc.bdi.clone());
            }

            Ok(Round {
                index: round_index,
                view,
                act_template: act.template,
                retrieved_memories: act.retrieved_memories,
                action: act.event,
                influence,
                reaction,
                summary,
                state_updates,
                env_changed,
                decision,
                belief_snapshots,
            })
        })();

        match outcome {
            Ok(round) => {
                coverage = round.decision.coverage_after.clone();
                last_summary = round.summary.clone();
                prev_responder = Some(round.influence.responder.clone());
                let verdict = round.decision.verdict;
                trajectory.rounds.push(round);
                if let TurnVerdict::Stop(reason) = verdict {
                    trajectory.stop_reason = Some(reason);
                    break;
                }
            }
            Err(cause) => return Err(abort(trajectory, round_index, cause, started, &clock)),
        }
    }

    trajectory.coverage_final = coverage;
    trajectory.wall_time_ms = clock
        .logical_elapsed_ms()
        .unwrap_or_else(|| started.elapsed().as_millis() as u64);
    Ok(trajectory)
}
