//! Persona bank: loading, validation, and seeded sampling of the persona
//! records that ground every simulation.
//!
//! The bank is a JSONL file, one persona per line. Validation is strict:
//! malformed records are rejected, never repaired.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PersonaError {
    #[error("persona bank is empty")]
    EmptyBank,
    #[error("line {line}: missing or blank field `{field}`")]
    SchemaViolation { line: usize, field: &'static str },
    #[error("line {line}: not a valid persona record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate persona id `{0}`")]
    DuplicateId(String),
    #[error("sample of {requested} exceeds bank size {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Structured factual attributes of a persona.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaFacts {
    pub demographics: String,
    pub occupation: String,
    pub personality: Vec<String>,
    pub values: Vec<String>,
    pub interests: Vec<String>,
    pub experiences: Vec<String>,
}

impl PersonaFacts {
    /// All fact strings, flattened, for containment checks and summaries.
    pub fn all_strings(&self) -> impl Iterator<Item = &str> {
        [self.demographics.as_str(), self.occupation.as_str()]
            .into_iter()
            .chain(self.personality.iter().map(String::as_str))
            .chain(self.values.iter().map(String::as_str))
            .chain(self.interests.iter().map(String::as_str))
            .chain(self.experiences.iter().map(String::as_str))
    }
}

/// One persona record: a narrative plus structured facts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub name: String,
    pub narrative: String,
    pub facts: PersonaFacts,
}

impl Persona {
    /// Full text block handed to the protagonist agent: narrative plus facts.
    pub fn summary(&self) -> String {
        format!(
            "Name: {name}\n\n{narrative}\n\nDemographics: {demo}\nOccupation: {occ}\nPersonality: {pers}\nValues: {vals}\nInterests: {ints}\nExperiences:\n{exps}",
            name = self.name,
            narrative = self.narrative,
            demo = self.facts.demographics,
            occ = self.facts.occupation,
            pers = self.facts.personality.join(", "),
            vals = self.facts.values.join(", "),
            ints = self.facts.interests.join(", "),
            exps = self
                .facts
                .experiences
                .iter()
                .map(|e| format!("- {e}"))
                .collect::<Vec<_>>()
                .join("\n"),
        )
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name, self.id)
    }
}

/// An immutable, ordered collection of validated personas.
///
/// Iteration order is file order. Safe to share across concurrent episode
/// runners once loaded.
#[derive(Debug, Clone)]
pub struct PersonaBank {
    personas: Vec<Persona>,
    pub source_path: String,
}

impl PersonaBank {
    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Persona> {
        self.personas.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Persona> {
        self.personas.iter().find(|p| p.id == id)
    }

    /// Build a bank from already-validated personas (fixture generation).
    pub fn from_personas(personas: Vec<Persona>, source: &str) -> Result<Self, PersonaError> {
        if personas.is_empty() {
            return Err(PersonaError::EmptyBank);
        }
        let mut seen = HashSet::new();
        for p in &personas {
            if !seen.insert(p.id.clone()) {
                return Err(PersonaError::DuplicateId(p.id.clone()));
            }
        }
        Ok(PersonaBank {
            personas,
            source_path: source.to_string(),
        })
    }
}

fn is_blank(s: &str) -> bool {
    s.trim().is_empty()
}

fn require_str(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &'static str,
    line: usize,
) -> Result<String, PersonaError> {
    match obj.get(key).and_then(|v| v.as_str()) {
        Some(s) if !is_blank(s) => Ok(s.to_string()),
        _ => Err(PersonaError::SchemaViolation { line, field: key }),
    }
}

fn require_str_list(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &'static str,
    line: usize,
) -> Result<Vec<String>, PersonaError> {
    let arr = obj
        .get(key)
        .and_then(|v| v.as_array())
        .ok_or(PersonaError::SchemaViolation { line, field: key })?;
    if arr.is_empty() {
        return Err(PersonaError::SchemaViolation { line, field: key });
    }
    let mut out = Vec::with_capacity(arr.len());
    for v in arr {
        match v.as_str() {
            Some(s) if !is_blank(s) => out.push(s.to_string()),
            _ => return Err(PersonaError::SchemaViolation { line, field: key }),
        }
    }
    Ok(out)
}

fn parse_record(line_no: usize, line: &str) -> Result<Persona, PersonaError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| PersonaError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| PersonaError::MalformedLine {
        line: line_no,
        reason: "expected a JSON object".to_string(),
    })?;

    let id = require_str(obj, "id", line_no)?;
    let name = require_str(obj, "name", line_no)?;
    let narrative = require_str(obj, "narrative", line_no)?;
    let facts_obj = obj
        .get("facts")
        .and_then(|v| v.as_object())
        .ok_or(PersonaError::SchemaViolation {
            line: line_no,
            field: "facts",
        })?;

    let facts = PersonaFacts {
        demographics: require_str(facts_obj, "demographics", line_no)?,
        occupation: require_str(facts_obj, "occupation", line_no)?,
        personality: require_str_list(facts_obj, "personality", line_no)?,
        values: require_str_list(facts_obj, "values", line_no)?,
        interests: require_str_list(facts_obj, "interests", line_no)?,
        experiences: require_str_list(facts_obj, "experiences", line_no)?,
    };

    // Consistency check: the display name must show up somewhere in the
    // narrative or the facts (case-insensitive containment).
    let needle = name.to_lowercase();
    let in_narrative = narrative.to_lowercase().contains(&needle);
    let in_facts = facts.all_strings().any(|s| s.to_lowercase().contains(&needle));
    if !in_narrative && !in_facts {
        return Err(PersonaError::SchemaViolation {
            line: line_no,
            field: "name",
        });
    }

    Ok(Persona {
        id,
        name,
        narrative,
        facts,
    })
}

/// Load and validate a JSONL persona bank. Every record is validated; the
/// resulting bank size equals the number of non-empty lines.
pub fn load_bank(path: &Path) -> Result<PersonaBank, PersonaError> {
    let content = fs::read_to_string(path).map_err(|source| PersonaError::Io {
        path: path.display().to_string(),
        source,
    })?;

    let mut personas = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let persona = parse_record(idx + 1, line)?;
        if !seen.insert(persona.id.clone()) {
            return Err(PersonaError::DuplicateId(persona.id));
        }
        personas.push(persona);
    }

    if personas.is_empty() {
        return Err(PersonaError::EmptyBank);
    }

    Ok(PersonaBank {
        personas,
        source_path: path.display().to_string(),
    })
}

/// Write a bank back out as JSONL, one record per line, in bank order.
/// `load_bank(serialize_bank(b))` is the identity on valid banks.
pub fn serialize_bank(bank: &PersonaBank, path: &Path) -> Result<(), PersonaError> {
    let io_err = |source| PersonaError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for persona in bank.iter() {
        let line = serde_json::to_string(persona).expect("persona serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Draw `n` distinct personas with a seeded Fisher–Yates prefix shuffle.
/// Identical `(bank, n, seed)` yields an identical list, including order.
pub fn sample_personas(
    bank: &PersonaBank,
    n: usize,
    seed: u64,
) -> Result<Vec<Persona>, PersonaError> {
    if n > bank.len() {
        return Err(PersonaError::SampleTooLarge {
            requested: n,
            available: bank.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..bank.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    Ok(indices[..n]
        .iter()
        .map(|&i| bank.personas[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    pub(crate) fn test_persona(id: &str, name: &str) -> Persona {
        Persona {
            id: id.to_string(),
            name: name.to_string(),
            narrative: format!("{name} grew up in a small coastal town and writes about it often."),
            facts: PersonaFacts {
                demographics: "25-34, unspecified, coastal town".to_string(),
                occupation: "librarian".to_string(),
                personality: vec!["curious".to_string(), "reserved".to_string()],
                values: vec!["honesty".to_string()],
                interests: vec!["archives".to_string(), "tidepools".to_string()],
                experiences: vec![format!("{name} once catalogued a shipwreck diary.")],
            },
        }
    }

    fn write_bank_file(dir: &tempfile::TempDir, lines: &[String]) -> std::path::PathBuf {
        let path = dir.path().join("personas.jsonl");
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn loads_valid_bank_with_count_equal_to_line_count() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = (0..50)
            .map(|i| {
                serde_json::to_string(&test_persona(&format!("p{i:04}"), &format!("Person{i}")))
                    .unwrap()
            })
            .collect();
        let path = write_bank_file(&dir, &lines);
        let bank = load_bank(&path).unwrap();
        assert_eq!(bank.len(), 50);
        assert_eq!(bank.iter().next().unwrap().id, "p0000");
    }

    #[test]
    fn paper_scale_bank_of_1000() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = (0..1000)
            .map(|i| {
                serde_json::to_string(&test_persona(&format!("p{i:04}"), &format!("Person{i}")))
                    .unwrap()
            })
            .collect();
        let path = write_bank_file(&dir, &lines);
        let bank = load_bank(&path).unwrap();
        assert_eq!(bank.len(), 1000);
    }

    #[test]
    fn empty_file_is_empty_bank() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_bank_file(&dir, &[]);
        assert!(matches!(load_bank(&path), Err(PersonaError::EmptyBank)));
    }

    #[test]
    fn missing_occupation_is_schema_violation_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut value =
            serde_json::to_value(test_persona("p0001", "Ada")).unwrap();
        value["facts"]
            .as_object_mut()
            .unwrap()
            .remove("occupation");
        let good = serde_json::to_string(&test_persona("p0000", "Bo")).unwrap();
        let bad = serde_json::to_string(&value).unwrap();
        let path = write_bank_file(&dir, &[good, bad]);
        match load_bank(&path) {
            Err(PersonaError::SchemaViolation { line, field }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "occupation");
            }
            other => panic!("expected SchemaViolation, got {other:?}"),
        }
    }

    #[test]
    fn blank_narrative_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut value = serde_json::to_value(test_persona("p0001", "Ada")).unwrap();
        value["narrative"] = serde_json::json!("   ");
        let path = write_bank_file(&dir, &[serde_json::to_string(&value).unwrap()]);
        assert!(matches!(
            load_bank(&path),
            Err(PersonaError::SchemaViolation { field: "narrative", .. })
        ));
    }

    #[test]
    fn name_absent_from_narrative_and_facts_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = test_persona("p0001", "Ada");
        p.narrative = "Someone grew up somewhere.".to_string();
        p.facts.experiences = vec!["once catalogued a diary".to_string()];
        let path = write_bank_file(&dir, &[serde_json::to_string(&p).unwrap()]);
        assert!(matches!(
            load_bank(&path),
            Err(PersonaError::SchemaViolation { field: "name", .. })
        ));
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = serde_json::to_string(&test_persona("p0001", "Ada")).unwrap();
        let b = serde_json::to_string(&test_persona("p0001", "Bo")).unwrap();
        let path = write_bank_file(&dir, &[a, b]);
        match load_bank(&path) {
            Err(PersonaError::DuplicateId(id)) => assert_eq!(id, "p0001"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn serialize_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let personas: Vec<Persona> = (0..20)
            .map(|i| test_persona(&format!("p{i:04}"), &format!("Person{i}")))
            .collect();
        let bank = PersonaBank::from_personas(personas, "memory").unwrap();
        let path = dir.path().join("out.jsonl");
        serialize_bank(&bank, &path).unwrap();
        let reloaded = load_bank(&path).unwrap();
        assert_eq!(reloaded.len(), bank.len());
        for (a, b) in bank.iter().zip(reloaded.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sampling_is_repeatable_and_distinct() {
        let personas: Vec<Persona> = (0..1000)
            .map(|i| test_persona(&format!("p{i:04}"), &format!("Person{i}")))
            .collect();
        let bank = PersonaBank::from_personas(personas, "memory").unwrap();
        let a = sample_personas(&bank, 10, 42).unwrap();
        let b = sample_personas(&bank, 10, 42).unwrap();
        assert_eq!(a, b);
        let ids: HashSet<&str> = a.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn sample_zero_is_empty() {
        let bank = PersonaBank::from_personas(vec![test_persona("p0", "Ada")], "m").unwrap();
        assert!(sample_personas(&bank, 0, 7).unwrap().is_empty());
    }

    #[test]
    fn sample_too_large_rejected() {
        let personas: Vec<Persona> = (0..1000)
            .map(|i| test_persona(&format!("p{i:04}"), &format!("Person{i}")))
            .collect();
        let bank = PersonaBank::from_personas(personas, "memory").unwrap();
        assert!(matches!(
            sample_personas(&bank, 1001, 0),
            Err(PersonaError::SampleTooLarge { requested: 1001, available: 1000 })
        ));
    }

    #[test]
    fn sampling_covers_whole_bank_over_many_seeds() {
        // Statistical coverage: bank of 100, n=1, 10k seeds must hit every persona.
        let personas: Vec<Persona> = (0..100)
            .map(|i| test_persona(&format!("p{i:04}"), &format!("Person{i}")))
            .collect();
        let bank = PersonaBank::from_personas(personas, "memory").unwrap();
        let mut seen: HashSet<String> = HashSet::new();
        for seed in 0..10_000u64 {
            let drawn = sample_personas(&bank, 1, seed).unwrap();
            seen.insert(drawn[0].id.clone());
        }
        assert_eq!(seen.len(), 100, "some personas never drawn in 10k trials");
    }

    proptest! {
        #[test]
        fn sampled_ids_never_duplicate(seed in any::<u64>(), n in 0usize..=30) {
            let personas: Vec<Persona> = (0..30)
                .map(|i| test_persona(&format!("p{i:04}"), &format!("Person{i}")))
                .collect();
            let bank = PersonaBank::from_personas(personas, "memory").unwrap();
            let drawn = sample_personas(&bank, n, seed).unwrap();
            let ids: HashSet<&str> = drawn.iter().map(|p| p.id.as_str()).collect();
            prop_assert_eq!(ids.len(), drawn.len());
        }
    }
}
