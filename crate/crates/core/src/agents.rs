//! Character agents: the evaluated protagonist and fixed-backbone NPCs.
//!
//! Both carry a BDI (belief–desire–intention) state as prompt-level text.
//! The protagonist updates self-belief and env-belief every round and draws
//! on episodic vector memory; NPCs keep self-belief frozen for the whole
//! episode and only revise their understanding of others and the situation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::memory::{retrieve, MemoryError, MemoryRecord, MemoryStore};
use crate::prompts::{self, bindings, PromptError};
use crate::structured::extract_json;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("agent `{actor}` produced empty output twice")]
    EmptyGeneration { actor: String },
    #[error("agent `{0}` cannot react to its own event")]
    SelfReaction(String),
    #[error("impact text must be non-empty")]
    EmptyImpact,
    #[error("belief update for `{actor}` unparseable after a retry: {reason}")]
    UnparseableBeliefs { actor: String, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Prompt-level belief–desire–intention state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BdiState {
    pub self_belief: String,
    pub env_belief: String,
    pub desire: String,
    pub intention: String,
}

impl BdiState {
    pub fn render(&self) -> String {
        format!(
            "Self-belief: {}\nEnv-belief: {}\nDesire: {}\nIntention: {}",
            self.self_belief, self.env_belief, self.desire, self.intention
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Protagonist,
    Npc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Action,
    Dialogue,
    Reaction,
}

/// One attributed event in a trajectory. `content` is trace-filtered;
/// `raw_content` keeps the unfiltered output for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub round: u32,
    pub actor: String,
    pub kind: EventKind,
    pub content: String,
    pub raw_content: String,
    pub target: Option<String>,
    pub timestamp: String,
}

/// Template used by [`CharacterAgent::act`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActTemplate {
    Action,
    Dialogue,
}

impl ActTemplate {
    pub fn template_name(&self) -> &'static str {
        match self {
            ActTemplate::Action => "action",
            ActTemplate::Dialogue => "dialogue",
        }
    }
}

/// Outcome of an act call: the event plus everything the trajectory must
/// record to make the prompt reproducible offline.
#[derive(Debug, Clone)]
pub struct ActOutcome {
    pub event: ActionEvent,
    pub retrieved_memories: Vec<String>,
    pub template: String,
}

pub struct CharacterAgent {
    pub character_id: String,
    pub display_name: String,
    pub kind: AgentKind,
    pub persona_summary: String,
    pub bdi: BdiState,
    gateway: Arc<Gateway>,
    /// Episodic memory; protagonist only.
    memory: Option<MemoryStore>,
    retrieval_k: usize,
    temperature: f64,
    max_tokens: u32,
    model_id: String,
    tag_scope: String,
}

impl CharacterAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn protagonist(
        character_id: &str,
        display_name: &str,
        persona_summary: &str,
        initial_bdi: BdiState,
        gateway: Arc<Gateway>,
        model_id: &str,
        temperature: f64,
        retrieval_k: usize,
        tag_scope: &str,
    ) -> Self {
        CharacterAgent {
            character_id: character_id.to_string(),
            display_name: display_name.to_string(),
            kind: AgentKind::Protagonist,
            persona_summary: persona_summary.to_string(),
            bdi: initial_bdi,
            memory: Some(MemoryStore::new(32)),
            retrieval_k,
            temperature,
            max_tokens: 512,
            model_id: model_id.to_string(),
            gateway,
            tag_scope: tag_scope.to_string(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn npc(
        character_id: &str,
        display_name: &str,
        sketch: &str,
        initial_bdi: BdiState,
        gateway: Arc<Gateway>,
        model_id: &str,
        temperature: f64,
        tag_scope: &str,
    ) -> Self {
        CharacterAgent {
            character_id: character_id.to_string(),
            display_name: display_name.to_string(),
            kind: AgentKind::Npc,
            persona_summary: sketch.to_string(),
            bdi: initial_bdi,
            memory: None,
            retrieval_k: 0,
            temperature,
            max_tokens: 512,
            model_id: model_id.to_string(),
            gateway,
            tag_scope: tag_scope.to_string(),
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn memory(&self) -> Option<&MemoryStore> {
        self.memory.as_ref()
    }

    /// Override the memory embedding dimensionality (must match the backend).
    pub fn with_memory_dim(mut self, dim: usize) -> Self {
        if self.kind == AgentKind::Protagonist {
            self.memory = Some(MemoryStore::new(dim));
        }
        self
    }

    fn complete_tagged(&self, tag: &str, system: String, user: String) -> Result<String, AgentError> {
        let request = CompletionRequest::new(
            &self.model_id,
            vec![ChatMessage::system(system), ChatMessage::user(user)],
            self.temperature,
            self.max_tokens,
            tag,
        )?;
        Ok(self.gateway.complete(&request)?.filtered_text)
    }

    /// Produce this round's action or dialogue. The protagonist retrieves
    /// top-k episodic memories into the prompt; one automatic re-prompt on
    /// empty output, then a hard error.
    pub fn act(
        &self,
        view: &str,
        round: u32,
        template: ActTemplate,
        clock: &Clock,
    ) -> Result<ActOutcome, AgentError> {
        let retrieved = self.retrieve_memories(view)?;
        let prompt = render_act_prompt(
            template,
            &self.persona_summary,
            &self.bdi,
            view,
            &retrieved,
        )?;
        let tag = format!("{}.act.{}", self.tag_scope, self.character_id);
        let system = "You are a character actor inside a social simulation.".to_string();

        let mut content = self.complete_tagged(&tag, system.clone(), prompt.clone())?;
        if content.trim().is_empty() {
            content = self.complete_tagged(&tag, system, prompt)?;
        }
        if content.trim().is_empty() {
            return Err(AgentError::EmptyGeneration { actor: self.character_id.clone() });
        }

        let raw_content = content.clone();
        let (kind, content) = classify_act_output(&content);
        Ok(ActOutcome {
            event: ActionEvent {
                round,
                actor: self.character_id.clone(),
                kind,
                content,
                raw_content,
                target: None,
                timestamp: clock.next_timestamp(),
            },
            retrieved_memories: retrieved,
            template: prompts::versioned_name(template.template_name()),
        })
    }

    /// React to another character's event given the environment's derived
    /// impact. Reaction events always target the original actor.
    pub fn react(
        &self,
        incoming: &ActionEvent,
        impact: &str,
        view: &str,
        round: u32,
        clock: &Clock,
    ) -> Result<ActionEvent, AgentError> {
        if incoming.actor == self.character_id {
            return Err(AgentError::SelfReaction(self.character_id.clone()));
        }
        if impact.trim().is_empty() {
            return Err(AgentError::EmptyImpact);
        }
        let prompt = render_reaction_prompt(
            &self.persona_summary,
            &self.bdi,
            view,
            &format!("{}: {}", incoming.actor, incoming.content),
            impact,
        )?;
        let tag = format!("{}.react.{}", self.tag_scope, self.character_id);
        let system = "You are a character actor inside a social simulation.".to_string();

        let mut content = self.complete_tagged(&tag, system.clone(), prompt.clone())?;
        if content.trim().is_empty() {
            content = self.complete_tagged(&tag, system, prompt)?;
        }
        if content.trim().is_empty() {
            return Err(AgentError::EmptyGeneration { actor: self.character_id.clone() });
        }

        Ok(ActionEvent {
            round,
            actor: self.character_id.clone(),
            kind: EventKind::Reaction,
            raw_content: content.clone(),
            content,
            target: Some(incoming.actor.clone()),
            timestamp: clock.next_timestamp(),
        })
    }

    /// Fold the round's interaction summary into the BDI state. An empty
    /// summary means the agent was uninvolved and nothing changes. NPC
    /// self-belief is never touched.
    pub fn update_beliefs(&mut self, summary: &str) -> Result<(), AgentError> {
        if summary.trim().is_empty() {
            return Ok(());
        }
        match self.kind {
            AgentKind::Protagonist => {
                let prompt = prompts::render(
                    "belief_update",
                    &bindings([
                        ("persona", self.persona_summary.clone()),
                        ("bdi", self.bdi.render()),
                        ("summary", summary.to_string()),
                    ]),
                )?;
                let tag = format!("{}.beliefs.{}", self.tag_scope, self.character_id);
                let system = "You maintain simulation state.".to_string();
                let text = self.complete_tagged(&tag, system.clone(), prompt.clone())?;
                let parsed: Result<BdiState, String> = extract_json(&text);
                let parsed = match parsed {
                    Ok(p) => p,
                    Err(_) => {
                        let text = self.complete_tagged(&tag, system, prompt)?;
                        extract_json(&text).map_err(|reason| AgentError::UnparseableBeliefs {
                            actor: self.character_id.clone(),
                            reason,
                        })?
                    }
                };
                self.bdi = parsed;
            }
            AgentKind::Npc => {
                #[derive(Deserialize)]
                struct EnvOnly {
                    env_belief: String,
                }
                let prompt = prompts::render(
                    "belief_update_npc",
                    &bindings([
                        ("persona", self.persona_summary.clone()),
                        ("bdi", self.bdi.env_belief.clone()),
                        ("summary", summary.to_string()),
                    ]),
                )?;
                let tag = format!("{}.beliefs.{}", self.tag_scope, self.character_id);
                let system = "You maintain simulation state.".to_string();
                let text = self.complete_tagged(&tag, system.clone(), prompt.clone())?;
                let parsed: Result<EnvOnly, String> = extract_json(&text);
                let parsed = match parsed {
                    Ok(p) => p,
                    Err(_) => {
                        let text = self.complete_tagged(&tag, system, prompt)?;
                        extract_json(&text).map_err(|reason| AgentError::UnparseableBeliefs {
                            actor: self.character_id.clone(),
                            reason,
                        })?
                    }
                };
                self.bdi.env_belief = parsed.env_belief;
            }
        }
        Ok(())
    }

    /// Append a record to the protagonist's episodic memory. No-op for NPCs.
    pub fn remember(&mut self, round: u32, author: &str, text: &str) -> Result<(), AgentError> {
        let Some(store) = self.memory.as_mut() else {
            return Ok(());
        };
        if text.trim().is_empty() {
            return Ok(());
        }
        let embedding = self.gateway.embed(text)?;
        store.append(MemoryRecord {
            round,
            author: author.to_string(),
            text: text.to_string(),
            embedding,
        })?;
        Ok(())
    }

    fn retrieve_memories(&self, view: &str) -> Result<Vec<String>, AgentError> {
        let Some(store) = self.memory.as_ref() else {
            return Ok(Vec::new());
        };
        if store.is_empty() || self.retrieval_k == 0 {
            return Ok(Vec::new());
        }
        let query = self.gateway.embed(view)?;
        let records = retrieve(store, &query, self.retrieval_k)?;
        Ok(records
            .into_iter()
            .map(|r| format!("[round {} / {}] {}", r.round, r.author, r.text))
            .collect())
    }
}

/// Assemble the action/dialogue prompt. Pure over its inputs, so datagen can
/// replay it byte-identically from a recorded trajectory.
pub fn render_act_prompt(
    template: ActTemplate,
    persona_summary: &str,
    bdi: &BdiState,
    view: &str,
    memories: &[String],
) -> Result<String, PromptError> {
    let memories_text = if memories.is_empty() {
        "(none yet)".to_string()
    } else {
        memories.join("\n")
    };
    prompts::render(
        template.template_name(),
        &bindings([
            ("persona", persona_summary.to_string()),
            ("bdi", bdi.render()),
            ("scene", view.to_string()),
            ("memories", memories_text),
        ]),
    )
}

/// Assemble the reaction prompt; pure for the same replay reason.
pub fn render_reaction_prompt(
    persona_summary: &str,
    bdi: &BdiState,
    view: &str,
    incoming: &str,
    impact: &str,
) -> Result<String, PromptError> {
    prompts::render(
        "reaction",
        &bindings([
            ("persona", persona_summary.to_string()),
            ("bdi", bdi.render()),
            ("scene", view.to_string()),
            ("incoming", incoming.to_string()),
            ("impact", impact.to_string()),
        ]),
    )
}

/// Classify a generated act as action or dialogue. A leading `[action]` /
/// `[dialogue]` tag wins and is stripped; otherwise output that opens with a
/// quote character reads as dialogue.
fn classify_act_output(text: &str) -> (EventKind, String) {
    let trimmed = text.trim();
    let lower = trimmed.to_lowercase();
    if lower.starts_with("[action]") {
        return (EventKind::Action, trimmed["[action]".len()..].trim().to_string());
    }
    if lower.starts_with("[dialogue]") {
        return (EventKind::Dialogue, trimmed["[dialogue]".len()..].trim().to_string());
    }
    if trimmed.starts_with('"') || trimmed.starts_with('\u{201C}') {
        (EventKind::Dialogue, trimmed.to_string())
    } else {
        (EventKind::Action, trimmed.to_string())
    }
}
