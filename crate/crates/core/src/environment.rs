//! The environment controller: scenario generation, interaction analysis,
//! interaction summarization, adaptive turn control, character-state and
//! world-state updates.
//!
//! All six operations run sequentially within a round; the controller owns
//! no cross-round state beyond what the caller threads through it.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::ActionEvent;
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::persona::Persona;
use crate::prompts::{self, bindings, PromptError};
use crate::structured::extract_json;

#[derive(Debug, thiserror::Error)]
pub enum EnvironmentError {
    #[error("generated scene invalid after retry: field `{0}`")]
    SceneInvalid(String),
    #[error("influence analysis named invalid responder `{0}` after retry")]
    InvalidResponder(String),
    #[error("environment backbone produced empty output twice")]
    EmptyGeneration,
    #[error("turn-control output unparseable after retry: {0}")]
    TurnControlUnparseable(String),
    #[error("character-state update unparseable after retry: {0}")]
    StateUpdateUnparseable(String),
    #[error("environment update unparseable after retry: {0}")]
    EnvUpdateUnparseable(String),
    #[error("`{0}` is not a scene character")]
    UnknownCharacter(String),
    #[error("reaction does not target the acting character")]
    MismatchedPair,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpcSketch {
    pub name: String,
    pub sketch: String,
}

/// A generated social scene: one protagonist, two or three NPCs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub event_description: String,
    pub time: String,
    pub place: String,
    pub protagonist_name: String,
    pub protagonist_sketch: String,
    pub npc_sketches: Vec<NpcSketch>,
    pub initial_actions: BTreeMap<String, String>,
}

impl Scene {
    /// Protagonist first, then NPCs in sketch order.
    pub fn characters(&self) -> Vec<&str> {
        let mut out = vec![self.protagonist_name.as_str()];
        out.extend(self.npc_sketches.iter().map(|n| n.name.as_str()));
        out
    }

    pub fn contains_character(&self, name: &str) -> bool {
        self.characters().iter().any(|c| *c == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub positions: BTreeMap<String, String>,
    pub emotional_states: BTreeMap<String, String>,
    pub environment_facts: Vec<String>,
}

impl WorldState {
    /// Initial world: everyone starts at the scene's place, composed.
    pub fn initial(scene: &Scene) -> Self {
        let mut positions = BTreeMap::new();
        let mut emotional_states = BTreeMap::new();
        for character in scene.characters() {
            positions.insert(character.to_string(), scene.place.clone());
            emotional_states.insert(character.to_string(), "neutral".to_string());
        }
        WorldState { positions, emotional_states, environment_facts: Vec::new() }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (character, position) in &self.positions {
            let emotion = self
                .emotional_states
                .get(character)
                .map(String::as_str)
                .unwrap_or("unknown");
            out.push_str(&format!("- {character}: at {position}, feeling {emotion}\n"));
        }
        if self.environment_facts.is_empty() {
            out.push_str("Environment: unremarkable so far.\n");
        } else {
            out.push_str("Environment:\n");
            for fact in &self.environment_facts {
                out.push_str(&format!("  * {fact}\n"));
            }
        }
        out
    }
}

/// Routing decision: which character an action lands on, and how.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Influence {
    pub responder: String,
    pub impact: String,
}

/// The five persona dimensions tracked by adaptive turn control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    Background,
    Personality,
    Values,
    Interests,
    Experiences,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Background,
        Dimension::Personality,
        Dimension::Values,
        Dimension::Interests,
        Dimension::Experiences,
    ];
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Dimension::Background => "Background",
            Dimension::Personality => "Personality",
            Dimension::Values => "Values",
            Dimension::Interests => "Interests",
            Dimension::Experiences => "Experiences",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub round: u32,
    pub quote: String,
}

/// Append-only evidence ledger over the five dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CheckpointCoverage {
    pub evidence: BTreeMap<Dimension, Vec<Evidence>>,
}

impl CheckpointCoverage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, dimension: Dimension, round: u32, quote: String) {
        self.evidence.entry(dimension).or_default().push(Evidence { round, quote });
    }

    pub fn evidence_count(&self, dimension: Dimension) -> usize {
        self.evidence.get(&dimension).map_or(0, Vec::len)
    }

    pub fn is_covered(&self, dimension: Dimension, evidence_quorum: usize) -> bool {
        self.evidence_count(dimension) >= evidence_quorum
    }

    pub fn covered_count(&self, evidence_quorum: usize) -> usize {
        Dimension::ALL
            .iter()
            .filter(|d| self.is_covered(**d, evidence_quorum))
            .count()
    }

    /// Latest round that contributed any evidence; 0 when none has.
    pub fn last_evidence_round(&self) -> u32 {
        self.evidence
            .values()
            .flat_map(|v| v.iter().map(|e| e.round))
            .max()
            .unwrap_or(0)
    }

    pub fn render(&self, evidence_quorum: usize) -> String {
        let mut out = String::new();
        for dim in Dimension::ALL {
            let n = self.evidence_count(dim);
            let status = if self.is_covered(dim, evidence_quorum) { "covered" } else { "open" };
            out.push_str(&format!("- {dim}: {n} piece(s) of evidence, {status}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AllCovered,
    QuorumCovered,
    Stalled,
    MaxTurns,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopReason::AllCovered => "all_covered",
            StopReason::QuorumCovered => "quorum_covered",
            StopReason::Stalled => "stalled",
            StopReason::MaxTurns => "max_turns",
        };
        f.write_str(s)
    }
}

/// Stop carries its reason by construction: no reason without a stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum TurnVerdict {
    Continue,
    Stop(StopReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnDecision {
    pub verdict: TurnVerdict,
    pub coverage_after: CheckpointCoverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnControlConfig {
    /// Stop once this many dimensions are covered (criterion b).
    pub dim_quorum: usize,
    /// Stop after this many consecutive evidence-free rounds, provided at
    /// least one dimension is covered (criterion c).
    pub stall_rounds: u32,
    /// Evidence pieces required before a dimension counts as covered.
    pub evidence_quorum: usize,
    pub max_turns: u32,
    /// When false, criteria (a)-(c) are disabled and episodes run to the
    /// turn limit.
    pub early_stop_enabled: bool,
}

impl Default for TurnControlConfig {
    fn default() -> Self {
        TurnControlConfig {
            dim_quorum: 4,
            stall_rounds: 2,
            evidence_quorum: 1,
            max_turns: 10,
            early_stop_enabled: true,
        }
    }
}

/// The multi-criteria stopping rule as a pure function of coverage state.
///
/// Precedence when several criteria hold: all-covered, quorum, stalled,
/// max-turns.
pub fn decide_turn(
    covered_count: usize,
    stall_count: u32,
    round: u32,
    config: &TurnControlConfig,
) -> TurnVerdict {
    if config.early_stop_enabled {
        if covered_count == Dimension::ALL.len() {
            return TurnVerdict::Stop(StopReason::AllCovered);
        }
        if covered_count >= config.dim_quorum {
            return TurnVerdict::Stop(StopReason::QuorumCovered);
        }
        if stall_count >= config.stall_rounds && covered_count >= 1 {
            return TurnVerdict::Stop(StopReason::Stalled);
        }
    }
    if round >= config.max_turns {
        return TurnVerdict::Stop(StopReason::MaxTurns);
    }
    TurnVerdict::Continue
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterStateDelta {
    pub position: String,
    pub emotional_state: String,
}

#[derive(Deserialize)]
struct RawScene {
    event_description: String,
    time: String,
    place: String,
    #[serde(default)]
    protagonist_sketch: String,
    npc_sketches: Vec<NpcSketch>,
    #[serde(default)]
    initial_actions: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawInfluence {
    responder: String,
    impact: String,
}

#[derive(Deserialize)]
struct DimensionRow {
    new_evidence: bool,
    #[serde(default)]
    quote: String,
}

#[derive(Deserialize)]
struct TurnControlOutput {
    dimensions: BTreeMap<String, DimensionRow>,
}

#[derive(Deserialize)]
struct RawEnvUpdate {
    changed: bool,
    #[serde(default)]
    facts: Vec<String>,
}

pub struct EnvironmentController {
    gateway: Arc<Gateway>,
    model_id: String,
    temperature: f64,
    max_tokens: u32,
    tag_scope: String,
}

impl EnvironmentController {
    pub fn new(gateway: Arc<Gateway>, model_id: &str, temperature: f64, tag_scope: &str) -> Self {
        EnvironmentController {
            gateway,
            model_id: model_id.to_string(),
            temperature,
            max_tokens: 1024,
            tag_scope: tag_scope.to_string(),
        }
    }

    fn complete(&self, tag_suffix: &str, user: String) -> Result<String, EnvironmentError> {
        let request = CompletionRequest::new(
            &self.model_id,
            vec![
                ChatMessage::system("You are the environment controller of a social simulation."),
                ChatMessage::user(user),
            ],
            self.temperature,
            self.max_tokens,
            format!("{}.{}", self.tag_scope, tag_suffix),
        )?;
        Ok(self.gateway.complete(&request)?.filtered_text)
    }

    /// Generate a scene for the persona; one regeneration retry before
    /// rejecting the output.
    pub fn setup_scenario(&self, persona: &Persona) -> Result<Scene, EnvironmentError> {
        let prompt = prompts::render("scene_setup", &bindings([("persona", persona.summary())]))?;
        let first = self.complete("scene", prompt.clone())?;
        match self.parse_scene(persona, &first) {
            Ok(scene) => Ok(scene),
            Err(_) => {
                let second = self.complete("scene", prompt)?;
                self.parse_scene(persona, &second)
            }
        }
    }

    fn parse_scene(&self, persona: &Persona, text: &str) -> Result<Scene, EnvironmentError> {
        let raw: RawScene =
            extract_json(text).map_err(|_| EnvironmentError::SceneInvalid("json".to_string()))?;
        let field_err = |f: &str| EnvironmentError::SceneInvalid(f.to_string());
        if raw.event_description.trim().is_empty() {
            return Err(field_err("event_description"));
        }
        if raw.time.trim().is_empty() {
            return Err(field_err("time"));
        }
        if raw.place.trim().is_empty() {
            return Err(field_err("place"));
        }
        if raw.npc_sketches.len() < 2 || raw.npc_sketches.len() > 3 {
            return Err(field_err("npc_sketches"));
        }
        let mut names: Vec<&str> = raw.npc_sketches.iter().map(|n| n.name.as_str()).collect();
        names.push(persona.name.as_str());
        let mut unique = names.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != names.len()
            || raw.npc_sketches.iter().any(|n| n.name.trim().is_empty() || n.sketch.trim().is_empty())
        {
            return Err(field_err("npc_sketches"));
        }
        for actor in raw.initial_actions.keys() {
            if !names.contains(&actor.as_str()) {
                return Err(field_err("initial_actions"));
            }
        }
        Ok(Scene {
            scene_id: format!("scene-{}", persona.id),
            event_description: raw.event_description,
            time: raw.time,
            place: raw.place,
            protagonist_name: persona.name.clone(),
            protagonist_sketch: raw.protagonist_sketch,
            npc_sketches: raw.npc_sketches,
            initial_actions: raw.initial_actions,
        })
    }

    /// Identify the character most affected by an action and the impact it
    /// has on them. The responder is never the actor.
    pub fn analyze_influence(
        &self,
        scene: &Scene,
        action: &ActionEvent,
        world: &WorldState,
    ) -> Result<Influence, EnvironmentError> {
        if !scene.contains_character(&action.actor) {
            return Err(EnvironmentError::UnknownCharacter(action.actor.clone()));
        }
        let prompt = prompts::render(
            "influence",
            &bindings([
                ("scene", render_scene_header(scene)),
                ("world", world.render()),
                ("actor", action.actor.clone()),
                ("action", action.content.clone()),
            ]),
        )?;
        let validate = |text: &str| -> Result<Influence, String> {
            let raw: RawInfluence = extract_json(text)?;
            if raw.responder == action.actor {
                return Err(format!("responder `{}` is the actor", raw.responder));
            }
            if !scene.contains_character(&raw.responder) {
                return Err(format!("responder `{}` not in scene", raw.responder));
            }
            if raw.impact.trim().is_empty() {
                return Err("empty impact".to_string());
            }
            Ok(Influence { responder: raw.responder, impact: raw.impact })
        };
        let first = self.complete("influence", prompt.clone())?;
        match validate(&first) {
            Ok(influence) => Ok(influence),
            Err(_) => {
                let second = self.complete("influence", prompt)?;
                validate(&second).map_err(EnvironmentError::InvalidResponder)
            }
        }
    }

    /// Summarize one action–reaction exchange as the round digest R.
    pub fn summarize_interaction(
        &self,
        action: &ActionEvent,
        reaction: &ActionEvent,
    ) -> Result<String, EnvironmentError> {
        if reaction.target.as_deref() != Some(action.actor.as_str()) {
            return Err(EnvironmentError::MismatchedPair);
        }
        let prompt = prompts::render(
            "summary",
            &bindings([
                ("actor", action.actor.clone()),
                ("action", action.content.clone()),
                ("responder", reaction.actor.clone()),
                ("reaction", reaction.content.clone()),
            ]),
        )?;
        let first = self.complete("summary", prompt.clone())?;
        if !first.trim().is_empty() {
            return Ok(first);
        }
        let second = self.complete("summary", prompt)?;
        if second.trim().is_empty() {
            return Err(EnvironmentError::EmptyGeneration);
        }
        Ok(second)
    }

    /// Checkpoint monitoring: ask which dimensions gained evidence from this
    /// round's protagonist events, append it, and apply the stopping rule.
    ///
    /// Rounds without protagonist events skip the model call; nothing can
    /// have been revealed.
    pub fn check_turn_control(
        &self,
        persona_facts: &str,
        coverage: &CheckpointCoverage,
        round_events: &[&ActionEvent],
        protagonist_name: &str,
        round: u32,
        config: &TurnControlConfig,
    ) -> Result<TurnDecision, EnvironmentError> {
        let protagonist_events: Vec<&ActionEvent> = round_events
            .iter()
            .copied()
            .filter(|e| e.actor == protagonist_name)
            .collect();

        let mut coverage_after = coverage.clone();
        if !protagonist_events.is_empty() {
            let events_text = protagonist_events
                .iter()
                .map(|e| e.content.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            let prompt = prompts::render(
                "turn_control",
                &bindings([
                    ("facts", persona_facts.to_string()),
                    ("coverage", coverage.render(config.evidence_quorum)),
                    ("events", events_text),
                ]),
            )?;
            let first = self.complete("turn", prompt.clone())?;
            let output = match parse_turn_control(&first) {
                Ok(o) => o,
                Err(_) => {
                    let second = self.complete("turn", prompt)?;
                    parse_turn_control(&second).map_err(EnvironmentError::TurnControlUnparseable)?
                }
            };
            for (dimension, row) in output {
                if !row.new_evidence {
                    continue;
                }
                let quote = row.quote.trim();
                let grounded =
                    !quote.is_empty() && protagonist_events.iter().any(|e| e.content.contains(quote));
                if grounded {
                    coverage_after.append(dimension, round, quote.to_string());
                } else {
                    log::warn!(
                        "turn control: dropping ungrounded {dimension} quote in round {round}: {quote:?}"
                    );
                }
            }
        }

        let covered = coverage_after.covered_count(config.evidence_quorum);
        let stall = if coverage_after.last_evidence_round() == 0 {
            round
        } else {
            round - coverage_after.last_evidence_round()
        };
        let verdict = decide_turn(covered, stall, round, config);
        Ok(TurnDecision { verdict, coverage_after })
    }

    /// Refresh one character's position and emotional state. Without received
    /// feedback the prompt contains only the character's own action.
    pub fn update_character_state(
        &self,
        character: &str,
        own_action: &ActionEvent,
        received_reaction: Option<&ActionEvent>,
        summary: &str,
        world: &mut WorldState,
    ) -> Result<CharacterStateDelta, EnvironmentError> {
        if !world.positions.contains_key(character) {
            return Err(EnvironmentError::UnknownCharacter(character.to_string()));
        }
        let current = format!(
            "position: {}; emotional state: {}",
            world.positions[character], world.emotional_states[character]
        );
        let received = match received_reaction {
            Some(reaction) => format!("{}: {}", reaction.actor, reaction.content),
            None => "(none)".to_string(),
        };
        let prompt = prompts::render(
            "char_update",
            &bindings([
                ("character", character.to_string()),
                ("current", current),
                ("own_action", own_action.content.clone()),
                ("received", received),
                ("summary", summary.to_string()),
            ]),
        )?;
        let tag = format!("state.{character}");
        let first = self.complete(&tag, prompt.clone())?;
        let delta: CharacterStateDelta = match extract_json(&first) {
            Ok(d) => d,
            Err(_) => {
                let second = self.complete(&tag, prompt)?;
                extract_json(&second).map_err(EnvironmentError::StateUpdateUnparseable)?
            }
        };
        world.positions.insert(character.to_string(), delta.position.clone());
        world
            .emotional_states
            .insert(character.to_string(), delta.emotional_state.clone());
        Ok(delta)
    }

    /// Synchronize the global environment with this round's events. When the
    /// classifier reports no environmental effect, the fact list is returned
    /// byte-identical; an empty round makes no model call at all.
    pub fn update_environment(
        &self,
        world: &WorldState,
        round_events: &[&ActionEvent],
    ) -> Result<(WorldState, bool), EnvironmentError> {
        if round_events.is_empty() {
            return Ok((world.clone(), false));
        }
        let events_text = round_events
            .iter()
            .map(|e| format!("{}: {}", e.actor, e.content))
            .collect::<Vec<_>>()
            .join("\n");
        let facts_text = if world.environment_facts.is_empty() {
            "(none recorded)".to_string()
        } else {
            world.environment_facts.join("\n")
        };
        let prompt = prompts::render(
            "env_update",
            &bindings([("world", facts_text), ("events", events_text)]),
        )?;
        let first = self.complete("env", prompt.clone())?;
        let update: RawEnvUpdate = match extract_json(&first) {
            Ok(u) => u,
            Err(_) => {
                let second = self.complete("env", prompt)?;
                extract_json(&second).map_err(EnvironmentError::EnvUpdateUnparseable)?
            }
        };
        let mut next = world.clone();
        if update.changed {
            next.environment_facts = update.facts;
        }
        Ok((next, update.changed))
    }
}

fn parse_turn_control(text: &str) -> Result<Vec<(Dimension, DimensionRow)>, String> {
    let output: TurnControlOutput = extract_json(text)?;
    let mut rows = Vec::with_capacity(Dimension::ALL.len());
    for dim in Dimension::ALL {
        let key = dim.to_string();
        let row = output
            .dimensions
            .get(&key)
            .ok_or_else(|| format!("missing dimension `{key}`"))?;
        rows.push((
            dim,
            DimensionRow { new_evidence: row.new_evidence, quote: row.quote.clone() },
        ));
    }
    Ok(rows)
}

fn render_scene_header(scene: &Scene) -> String {
    format!(
        "{}\nTime: {}. Place: {}.\nCharacters: {}.",
        scene.event_description,
        scene.time,
        scene.place,
        scene.characters().join(", ")
    )
}

/// The environment view presented to an acting character. Pure over its
/// inputs so trajectories can replay prompt assembly offline.
pub fn render_view(scene: &Scene, world: &WorldState, last_summary: &str, round: u32) -> String {
    let mut out = format!(
        "{}\nTime: {}. Place: {}.\nRound {round}.\n\nCharacter states:\n{}",
        scene.event_description,
        scene.time,
        scene.place,
        world.render(),
    );
    if round == 1 && !scene.initial_actions.is_empty() {
        out.push_str("\nOpening moves:\n");
        for (actor, opening) in &scene.initial_actions {
            out.push_str(&format!("- {actor}: {opening}\n"));
        }
    }
    if !last_summary.is_empty() {
        out.push_str(&format!("\nLast round: {last_summary}\n"));
    }
    out
}
