//! Engine for persona-grounded multi-agent social simulations: scripted or
//! live chat-completion backends drive character agents through generated
//! scenes, a multi-judge debate protocol scores the resulting trajectories,
//! and top trajectories export as SFT / preference-pair datasets.
//!
//! Everything is offline-testable: the scripted backend replays canned
//! responses deterministically, embeddings are content-hashed, and event
//! timestamps come from a logical clock by default.

pub mod agents;
pub mod clock;
pub mod datagen;
pub mod environment;
pub mod evaluation;
pub mod fixture;
pub mod gateway;
pub mod memory;
pub mod persona;
pub mod prompts;
pub mod simulation;
pub mod structured;

pub use agents::{ActionEvent, AgentKind, BdiState, CharacterAgent, EventKind};
pub use environment::{
    CheckpointCoverage, Dimension, EnvironmentController, Influence, Scene, StopReason,
    TurnControlConfig, TurnDecision, TurnVerdict, WorldState,
};
pub use evaluation::{
    aggregate_mean, detect_disagreement, evaluate_trajectory, pearson, EvaluationConfig,
    EvaluationReport, JudgeScore, Metric, MetricVector,
};
pub use gateway::{BackendConfig, BackendKind, Gateway, GatewayError, Script, TraceFilter};
pub use memory::{cosine_similarity, retrieve, MemoryRecord, MemoryStore};
pub use persona::{load_bank, sample_personas, serialize_bank, Persona, PersonaBank};
pub use simulation::{
    run_episode, trajectory_id, EpisodeAborted, Round, SimulationConfig, Trajectory,
};
