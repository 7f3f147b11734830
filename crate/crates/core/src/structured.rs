//! Lenient extraction of structured JSON from model output.
//!
//! Models wrap JSON in code fences or prose more often than not; callers
//! retry once on failure, so extraction stays simple: direct parse first,
//! then the outermost brace-delimited slice.

use serde::de::DeserializeOwned;

pub fn extract_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let trimmed = text.trim();
    match serde_json::from_str::<T>(trimmed) {
        Ok(v) => Ok(v),
        Err(first_err) => {
            let start = trimmed.find('{');
            let end = trimmed.rfind('}');
            if let (Some(s), Some(e)) = (start, end) {
                if s < e {
                    if let Ok(v) = serde_json::from_str::<T>(&trimmed[s..=e]) {
                        return Ok(v);
                    }
                }
            }
            Err(first_err.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn parses_plain_json() {
        let v: BTreeMap<String, i64> = extract_json("{\"a\": 1}").unwrap();
        assert_eq!(v["a"], 1);
    }

    #[test]
    fn parses_fenced_json() {
        let v: BTreeMap<String, i64> = extract_json("```json\n{\"a\": 2}\n```").unwrap();
        assert_eq!(v["a"], 2);
    }

    #[test]
    fn parses_json_with_prose_around_it() {
        let v: BTreeMap<String, i64> = extract_json("Sure! {\"a\": 3} Hope that helps.").unwrap();
        assert_eq!(v["a"], 3);
    }

    #[test]
    fn rejects_garbage() {
        assert!(extract_json::<BTreeMap<String, i64>>("no json here").is_err());
    }
}
