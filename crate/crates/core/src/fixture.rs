//! Deterministic fixture generation for offline runs.
//!
//! Produces a synthetic persona bank plus the scripted backend responses for
//! complete episodes, evaluations, and exports — the offline counterpart of
//! a live benchmarking run. Everything is a pure function of the spec, so
//! two generations with the same spec are byte-identical.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::gateway::Script;
use crate::persona::{sample_personas, Persona, PersonaBank, PersonaFacts};
use crate::simulation::trajectory_id;

const NPC_NAMES: [&str; 2] = ["Rory", "Sage"];
const FIRST_NAMES: [&str; 10] =
    ["Avery", "Blake", "Carmen", "Devon", "Elena", "Felix", "Greta", "Hugo", "Iris", "Jonas"];
const LAST_NAMES: [&str; 10] = [
    "Stone", "Alvarez", "Kim", "Okafor", "Novak", "Haddad", "Lindqvist", "Moreau", "Tanaka",
    "Whitfield",
];

/// Dimension → the word the protagonist drops when revealing it, and the
/// round where that happens. Quorum (4 dimensions) lands at round 5.
const REVEAL_SCHEDULE: [(&str, u32); 5] = [
    ("hometown", 2),     // Background
    ("temperament", 3),  // Personality
    ("principles", 4),   // Values
    ("hobbies", 5),      // Interests
    ("memories", 7),     // Experiences (reached only without early stop)
];

const DIMENSION_NAMES: [&str; 5] =
    ["Background", "Personality", "Values", "Interests", "Experiences"];

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub bank_size: usize,
    pub sample_n: usize,
    pub seed: u64,
    pub repeats: u32,
    pub max_turns: u32,
    /// Protagonist models to script episodes for, strongest first.
    pub models: Vec<String>,
    pub judges: Vec<String>,
    pub arbiter: String,
    /// Script a judge disagreement (and its arbitration) on KA for the
    /// first sampled persona of every model.
    pub with_dispute: bool,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            bank_size: 25,
            sample_n: 10,
            seed: 42,
            repeats: 1,
            max_turns: 10,
            models: vec!["model-alpha".to_string(), "model-beta".to_string()],
            judges: vec!["judge-a".to_string(), "judge-b".to_string(), "judge-c".to_string()],
            arbiter: "arbiter".to_string(),
            with_dispute: true,
        }
    }
}

/// Scripts split per backend role, ready to be written as script files.
#[derive(Debug, Clone, Default)]
pub struct FixtureScripts {
    pub protagonist: Script,
    pub npc: Script,
    pub environment: Script,
    pub judge: Script,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub bank: PersonaBank,
    pub scripts: FixtureScripts,
}

pub fn synthetic_persona(index: usize) -> Persona {
    let first = FIRST_NAMES[index % FIRST_NAMES.len()];
    let last = LAST_NAMES[(index / FIRST_NAMES.len()) % LAST_NAMES.len()];
    let name = format!("{first} {last}");
    let id = format!("p{index:04}");
    Persona {
        id,
        name: name.clone(),
        narrative: format!(
            "{name} grew up near the old harbor and still walks the pier at dawn. \
             Years of cataloguing local records taught {first} patience, and the \
             neighborhood book swap became a weekly anchor. Friends say {first} \
             listens first and speaks second."
        ),
        facts: PersonaFacts {
            demographics: format!("25-34, prefers not to say, harbor district #{index}"),
            occupation: "community archivist".to_string(),
            personality: vec!["patient".to_string(), "observant".to_string()],
            values: vec!["candor".to_string(), "neighborliness".to_string()],
            interests: vec!["local history".to_string(), "book swaps".to_string()],
            experiences: vec![format!("{name} once restored a water-damaged ship log.")],
        },
    }
}

pub fn build_bank(size: usize) -> PersonaBank {
    let personas = (0..size).map(synthetic_persona).collect();
    PersonaBank::from_personas(personas, "fixture").expect("synthetic bank is valid")
}

fn scene_json(persona: &Persona) -> String {
    json!({
        "event_description": format!(
            "The weekly book swap is settling in around a long table, and {} has \
             brought a crate of donated volumes to sort.", persona.name),
        "time": "Saturday morning",
        "place": "the harbor community hall",
        "protagonist_sketch": format!("{} sets the crate down and scans the room.", persona.name),
        "npc_sketches": [
            {"name": NPC_NAMES[0], "sketch": format!(
                "{}, a retired ferry engineer who trades maritime paperbacks and \
                 respects {}'s eye for {}.", NPC_NAMES[0], persona.name,
                 persona.facts.interests[0])},
            {"name": NPC_NAMES[1], "sketch": format!(
                "{}, a florist new to the district, drawn to the swap by a love of \
                 pressed-flower bookmarks and curious about the {}.", NPC_NAMES[1],
                 persona.facts.occupation)},
        ],
        "initial_actions": {
            persona.name.clone(): "Opens the crate and starts sorting paperbacks by decade.",
            NPC_NAMES[0]: "Waves from the kettle corner.",
        }
    })
    .to_string()
}

/// The word the protagonist's round-`r` line is built around.
fn reveal_word(round: u32) -> &'static str {
    REVEAL_SCHEDULE
        .iter()
        .find(|(_, at)| *at == round)
        .map(|(word, _)| *word)
        .unwrap_or("morning")
}

fn protagonist_line(model: &str, round: u32) -> String {
    if round % 2 == 1 {
        format!(
            "I slide a worn paperback across the table and mention my {} while \
             sorting the next stack. ({model}, round {round})",
            reveal_word(round)
        )
    } else {
        format!(
            "\"Funny you ask — that touches on my {}.\" I set the book down and \
             give Rory my full attention. ({model}, round {round})",
            reveal_word(round)
        )
    }
}

fn turn_control_json(round: u32) -> String {
    let mut dims = serde_json::Map::new();
    for (i, dim) in DIMENSION_NAMES.iter().enumerate() {
        let (word, at) = REVEAL_SCHEDULE[i];
        let hit = at == round;
        dims.insert(
            dim.to_string(),
            json!({
                "new_evidence": hit,
                "quote": if hit { format!("my {word}") } else { String::new() },
            }),
        );
    }
    json!({ "dimensions": dims }).to_string()
}

fn judge_vector_json(model_index: usize, judge_index: usize, persona_index: usize, dispute: bool) -> String {
    let base = 4i64.saturating_sub(model_index as i64).clamp(1, 5);
    let metrics = ["KA", "BA", "EE", "PT", "IM", "BC", "AD", "IR"];
    let mut obj = serde_json::Map::new();
    for (i, metric) in metrics.iter().enumerate() {
        // Mild per-judge texture that never crosses the dispute threshold.
        let tweak = if (i + persona_index) % metrics.len() == judge_index { 1 } else { 0 };
        obj.insert(metric.to_string(), json!((base + tweak).clamp(1, 5)));
    }
    if dispute {
        obj.insert("KA".to_string(), json!([1, 5, 3][judge_index % 3]));
    }
    serde_json::Value::Object(obj).to_string()
}

/// Script every episode, evaluation, and arbitration for the sampled
/// personas under each protagonist model.
pub fn generate(spec: &FixtureSpec) -> Fixture {
    let bank = build_bank(spec.bank_size);
    let sampled = sample_personas(&bank, spec.sample_n, spec.seed).expect("sample fits bank");

    let mut scripts = FixtureScripts::default();
    for (model_index, model) in spec.models.iter().enumerate() {
        for (persona_index, persona) in sampled.iter().enumerate() {
            for repeat in 0..spec.repeats {
                let scope = trajectory_id(model, &persona.id, repeat);
                script_episode(&mut scripts, spec, &scope, model, persona);
                script_evaluation(&mut scripts, spec, &scope, model_index, persona_index);
            }
        }
    }
    Fixture { bank, scripts }
}

fn script_episode(
    scripts: &mut FixtureScripts,
    spec: &FixtureSpec,
    scope: &str,
    model: &str,
    persona: &Persona,
) {
    let name = persona.name.as_str();
    let rory = NPC_NAMES[0];
    scripts.environment.push(&format!("{scope}.scene"), scene_json(persona));

    for round in 1..=spec.max_turns {
        let protagonist_acts = round % 2 == 1;
        let line = protagonist_line(model, round);

        if protagonist_acts {
            scripts.protagonist.push(&format!("{scope}.act.{name}"), line);
            scripts.environment.push(
                &format!("{scope}.influence"),
                json!({
                    "responder": rory,
                    "impact": format!("{rory} feels directly addressed. (round {round})"),
                })
                .to_string(),
            );
            scripts.npc.push(
                &format!("{scope}.react.{rory}"),
                format!("{rory} taps the kettle lid and leans in. (round {round})"),
            );
        } else {
            scripts.npc.push(
                &format!("{scope}.act.{rory}"),
                format!("\"And what keeps you sorting crates, {name}?\" (round {round})"),
            );
            scripts.environment.push(
                &format!("{scope}.influence"),
                json!({
                    "responder": name,
                    "impact": format!("{name} is invited to open up. (round {round})"),
                })
                .to_string(),
            );
            scripts.protagonist.push(&format!("{scope}.react.{name}"), line);
        }

        scripts.environment.push(
            &format!("{scope}.summary"),
            format!("Round {round}: {name} and {rory} traded a detail over the crate."),
        );

        // Belief updates for the two involved characters; identical wording
        // across models keeps step prompts alignable for preference pairs.
        scripts.protagonist.push(
            &format!("{scope}.beliefs.{name}"),
            json!({
                "self_belief": format!("I am {name}, a community archivist. (after round {round})"),
                "env_belief": format!("The swap is warming up. (after round {round})"),
                "desire": "Stay candid and neighborly.",
                "intention": "Keep sorting while the conversation unfolds.",
            })
            .to_string(),
        );
        scripts.npc.push(
            &format!("{scope}.beliefs.{rory}"),
            json!({
                "env_belief": format!("{name} rewards a direct question. (after round {round})"),
            })
            .to_string(),
        );

        for character in [name, rory] {
            scripts.environment.push(
                &format!("{scope}.state.{character}"),
                json!({
                    "position": format!("by the long table (round {round})"),
                    "emotional_state": "engaged",
                })
                .to_string(),
            );
        }

        let env_update = if round == 3 {
            json!({"changed": true, "facts": ["A kettle whistles in the corner."]})
        } else {
            json!({"changed": false, "facts": []})
        };
        scripts.environment.push(&format!("{scope}.env"), env_update.to_string());

        scripts.environment.push(&format!("{scope}.turn"), turn_control_json(round));
    }
}

fn script_evaluation(
    scripts: &mut FixtureScripts,
    spec: &FixtureSpec,
    scope: &str,
    model_index: usize,
    persona_index: usize,
) {
    let dispute = spec.with_dispute && persona_index == 0;
    for (judge_index, judge) in spec.judges.iter().enumerate() {
        scripts.judge.push(
            &format!("{scope}.judge.{judge}"),
            judge_vector_json(model_index, judge_index, persona_index, dispute),
        );
    }
    if dispute {
        for (judge_index, judge) in spec.judges.iter().enumerate() {
            let score = [1, 5, 3][judge_index % 3];
            scripts.judge.push(
                &format!("{scope}.critic.{judge}.KA"),
                json!({
                    "score": score,
                    "justification": format!("The hometown detail lands at score {score} for me."),
                    "evidence": ["my hometown"],
                })
                .to_string(),
            );
        }
        scripts.judge.push(
            &format!("{scope}.referee.KA"),
            json!({
                "score": 4,
                "rationale": "The grounded quotes support the higher readings; reconciled at 4.",
            })
            .to_string(),
        );
    }
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub bank: PathBuf,
    pub protagonist_script: PathBuf,
    pub npc_script: PathBuf,
    pub environment_script: PathBuf,
    pub judge_script: PathBuf,
}

/// Write bank and scripts into `dir` with conventional file names.
pub fn write_to_dir(fixture: &Fixture, dir: &Path) -> std::io::Result<FixturePaths> {
    std::fs::create_dir_all(dir)?;
    let paths = FixturePaths {
        bank: dir.join("personas.jsonl"),
        protagonist_script: dir.join("script.protagonist.json"),
        npc_script: dir.join("script.npc.json"),
        environment_script: dir.join("script.environment.json"),
        judge_script: dir.join("script.judge.json"),
    };
    crate::persona::serialize_bank(&fixture.bank, &paths.bank)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    fixture.scripts.protagonist.to_path(&paths.protagonist_script)?;
    fixture.scripts.npc.to_path(&paths.npc_script)?;
    fixture.scripts.environment.to_path(&paths.environment_script)?;
    fixture.scripts.judge.to_path(&paths.judge_script)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = FixtureSpec::default();
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.scripts.protagonist, b.scripts.protagonist);
        assert_eq!(a.scripts.environment, b.scripts.environment);
        assert_eq!(a.scripts.judge, b.scripts.judge);
        assert_eq!(a.bank.len(), 25);
    }

    #[test]
    fn bank_personas_pass_validation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = generate(&FixtureSpec { bank_size: 12, sample_n: 3, ..Default::default() });
        let paths = write_to_dir(&fixture, dir.path()).unwrap();
        let loaded = crate::persona::load_bank(&paths.bank).unwrap();
        assert_eq!(loaded.len(), 12);
    }

    #[test]
    fn scripts_cover_sampled_personas_for_all_models() {
        let spec = FixtureSpec { bank_size: 12, sample_n: 2, ..Default::default() };
        let fixture = generate(&spec);
        let sampled = sample_personas(&fixture.bank, 2, spec.seed).unwrap();
        for model in &spec.models {
            for persona in &sampled {
                let scope = trajectory_id(model, &persona.id, 0);
                assert!(
                    fixture.scripts.environment.0.contains_key(&format!("{scope}.scene")),
                    "missing scene for {scope}"
                );
            }
        }
    }
}
