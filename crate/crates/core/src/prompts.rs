//! Versioned prompt assets and placeholder substitution.
//!
//! Templates live under `assets/prompts/<version>/` and are compiled in.
//! Placeholders are `{name}` slots; literal braces are written `{{` / `}}`.

use std::collections::BTreeMap;

pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template `{template}` references unbound placeholder `{name}`")]
    UnboundPlaceholder { template: String, name: String },
    #[error("template `{template}` has a malformed placeholder near byte {at}")]
    MalformedPlaceholder { template: String, at: usize },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
}

macro_rules! templates {
    ($($name:literal => $file:literal),+ $(,)?) => {
        /// Template names available in this prompt version.
        pub const TEMPLATE_NAMES: &[&str] = &[$($name),+];

        fn template_source(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../assets/prompts/v1/", $file))),)+
                _ => None,
            }
        }
    };
}

templates! {
    "action" => "action.txt",
    "dialogue" => "dialogue.txt",
    "reaction" => "reaction.txt",
    "belief_update" => "belief_update.txt",
    "belief_update_npc" => "belief_update_npc.txt",
    "scene_setup" => "scene_setup.txt",
    "influence" => "influence.txt",
    "summary" => "summary.txt",
    "turn_control" => "turn_control.txt",
    "char_update" => "char_update.txt",
    "env_update" => "env_update.txt",
    "judge" => "judge.txt",
    "critic" => "critic.txt",
    "referee" => "referee.txt",
}

/// Versioned identifier recorded wherever a template was used, e.g.
/// `action@v1`.
pub fn versioned_name(name: &str) -> String {
    format!("{name}@{PROMPT_VERSION}")
}

/// Render a named template with the given bindings. Unused bindings are
/// allowed; unbound placeholders are an error.
pub fn render(name: &str, bindings: &Bindings) -> Result<String, PromptError> {
    let source = template_source(name).ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
    substitute(name, source, bindings)
}

pub type Bindings = BTreeMap<&'static str, String>;

pub fn bindings<const N: usize>(pairs: [(&'static str, String); N]) -> Bindings {
    pairs.into_iter().collect()
}

fn substitute(template_name: &str, source: &str, bindings: &Bindings) -> Result<String, PromptError> {
    let mut out = String::with_capacity(source.len());
    let bytes = source.as_bytes();
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push('}');
                i += 2;
            }
            b'{' => {
                let rest = &source[i + 1..];
                let end = rest.find('}').ok_or(PromptError::MalformedPlaceholder {
                    template: template_name.to_string(),
                    at: i,
                })?;
                let name = &rest[..end];
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(PromptError::MalformedPlaceholder {
                        template: template_name.to_string(),
                        at: i,
                    });
                }
                let value = bindings
                    .get(name)
                    .ok_or_else(|| PromptError::UnboundPlaceholder {
                        template: template_name.to_string(),
                        name: name.to_string(),
                    })?;
                out.push_str(value);
                i += 1 + end + 1;
            }
            b'}' => {
                return Err(PromptError::MalformedPlaceholder {
                    template: template_name.to_string(),
                    at: i,
                });
            }
            _ => {
                // Copy the full UTF-8 character, not just one byte.
                let ch = source[i..].chars().next().expect("in bounds");
                out.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_named_placeholders() {
        let b = bindings([("persona", "Ada".to_string()), ("bdi", "calm".to_string())]);
        let out = substitute("t", "P={persona} B={bdi}", &b).unwrap();
        assert_eq!(out, "P=Ada B=calm");
    }

    #[test]
    fn escaped_braces_stay_literal() {
        let out = substitute("t", "json: {{\"k\": {v}}}", &bindings([("v", "1".to_string())])).unwrap();
        assert_eq!(out, "json: {\"k\": 1}");
    }

    #[test]
    fn unbound_placeholder_is_an_error() {
        let err = substitute("t", "{missing}", &Bindings::new()).unwrap_err();
        assert_eq!(
            err,
            PromptError::UnboundPlaceholder { template: "t".to_string(), name: "missing".to_string() }
        );
    }

    #[test]
    fn stray_brace_is_malformed() {
        assert!(matches!(
            substitute("t", "oops }", &Bindings::new()),
            Err(PromptError::MalformedPlaceholder { .. })
        ));
        assert!(matches!(
            substitute("t", "oops {", &Bindings::new()),
            Err(PromptError::MalformedPlaceholder { .. })
        ));
    }

    #[test]
    fn every_shipped_template_renders_with_generic_bindings() {
        // Smoke check: all placeholders in all shipped assets are known names.
        let all = [
            "persona", "bdi", "scene", "memories", "incoming", "impact", "summary", "facts",
            "coverage", "events", "character", "current", "own_action", "received", "world",
            "action", "reaction", "actor", "responder", "transcript", "metric", "score",
            "critics",
        ];
        let b: Bindings = all.into_iter().map(|k| (k, format!("<{k}>"))).collect();
        for name in TEMPLATE_NAMES {
            let rendered = render(name, &b)
                .unwrap_or_else(|e| panic!("template {name} failed to render: {e}"));
            assert!(!rendered.is_empty());
        }
    }

    #[test]
    fn unknown_template_rejected() {
        assert_eq!(
            render("nope", &Bindings::new()).unwrap_err(),
            PromptError::UnknownTemplate("nope".to_string())
        );
    }
}
