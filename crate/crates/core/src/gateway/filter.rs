//! Reasoning-trace filtering: strips hidden chain-of-thought spans and
//! annotation lines from model output, leaving only the utterances that
//! contribute to the narrative.
//!
//! Different model families emit different delimiters, so the markers are
//! configurable per backend. The default strips `<think>...</think>` spans.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FilterError {
    /// An open marker without a matching close (or a stray close marker).
    /// Rejected outright: guessing where a trace ends risks leaking it.
    #[error("unterminated reasoning trace near byte {at}")]
    UnterminatedTrace { at: usize },
}

/// Marker configuration for [`strip_reasoning_traces`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFilter {
    /// Opening span marker, e.g. `<think>`.
    pub open: String,
    /// Closing span marker, e.g. `</think>`.
    pub close: String,
    /// Optional line-prefix sigil; whole lines starting with it are dropped.
    #[serde(default)]
    pub sigil: Option<String>,
}

impl Default for TraceFilter {
    fn default() -> Self {
        TraceFilter {
            open: "<think>".to_string(),
            close: "</think>".to_string(),
            sigil: None,
        }
    }
}

impl TraceFilter {
    /// Remove every configured trace block from `text`.
    ///
    /// Whitespace around each removal collapses to a single separator (a
    /// newline if the swallowed whitespace contained one, else a space).
    /// Text without any trace content passes through byte-identical, which
    /// also makes the filter idempotent.
    pub fn strip(&self, text: &str) -> Result<String, FilterError> {
        let chunks = self.split_spans(text)?;
        let mut out = if chunks.len() == 1 {
            // No spans removed; keep the input untouched for the no-op case.
            text.to_string()
        } else {
            join_collapsed(&chunks)
        };

        if let Some(sigil) = &self.sigil {
            let sigil = sigil.as_str();
            if out.lines().any(|l| l.trim_start().starts_with(sigil)) {
                out = out
                    .lines()
                    .filter(|l| !l.trim_start().starts_with(sigil))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .trim_matches('\n')
                    .to_string();
            }
        }
        Ok(out)
    }

    /// Split `text` on open/close span pairs, returning the kept chunks.
    /// A lone marker of either kind is an error.
    fn split_spans<'a>(&self, text: &'a str) -> Result<Vec<&'a str>, FilterError> {
        let mut chunks = Vec::new();
        let mut rest = text;
        let mut offset = 0usize;
        loop {
            match rest.find(&self.open) {
                None => {
                    if let Some(j) = rest.find(&self.close) {
                        return Err(FilterError::UnterminatedTrace { at: offset + j });
                    }
                    chunks.push(rest);
                    return Ok(chunks);
                }
                Some(i) => {
                    let before = &rest[..i];
                    if let Some(j) = before.find(&self.close) {
                        return Err(FilterError::UnterminatedTrace { at: offset + j });
                    }
                    chunks.push(before);
                    let body_start = i + self.open.len();
                    let body = &rest[body_start..];
                    match body.find(&self.close) {
                        None => return Err(FilterError::UnterminatedTrace { at: offset + i }),
                        Some(j) => {
                            let consumed = body_start + j + self.close.len();
                            offset += consumed;
                            rest = &rest[consumed..];
                        }
                    }
                }
            }
        }
    }
}

/// Convenience wrapper using the given filter; mirrors the operation name.
pub fn strip_reasoning_traces(text: &str, filter: &TraceFilter) -> Result<String, FilterError> {
    filter.strip(text)
}

fn join_collapsed(chunks: &[&str]) -> String {
    let mut out = String::new();
    for chunk in chunks {
        let trimmed_next = chunk.trim_start();
        let right_ws = &chunk[..chunk.len() - trimmed_next.len()];
        if trimmed_next.is_empty() {
            // Pure whitespace between removals: keep it as pending separator
            // material for the next boundary.
            out.push_str(chunk);
            continue;
        }
        let left_content_len = out.trim_end().len();
        if left_content_len == 0 {
            // Nothing before the removal; a separator has nothing to separate.
            out.clear();
            out.push_str(trimmed_next);
            continue;
        }
        let left_ws = out[left_content_len..].to_string();
        out.truncate(left_content_len);
        let sep = if left_ws.contains('\n') || right_ws.contains('\n') {
            "\n"
        } else if !left_ws.is_empty() || !right_ws.is_empty() {
            " "
        } else {
            ""
        };
        out.push_str(sep);
        out.push_str(trimmed_next);
    }
    // A removal at the very end leaves trailing whitespace behind.
    out.truncate(out.trim_end().len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strip(text: &str) -> Result<String, FilterError> {
        TraceFilter::default().strip(text)
    }

    #[test]
    fn removes_leading_span() {
        assert_eq!(strip("<think>plan steps</think>Hello there").unwrap(), "Hello there");
    }

    #[test]
    fn plain_text_is_untouched() {
        assert_eq!(strip("Hello there").unwrap(), "Hello there");
        assert_eq!(strip("  spaced   oddly  ").unwrap(), "  spaced   oddly  ");
    }

    #[test]
    fn two_spans_three_utterances_join_by_newlines() {
        let input = "First line.\n<think>a</think>\nSecond line.\n<think>b</think>\nThird line.";
        assert_eq!(strip(input).unwrap(), "First line.\nSecond line.\nThird line.");
    }

    #[test]
    fn unterminated_open_rejected() {
        assert!(matches!(
            strip("Hello <think>oops"),
            Err(FilterError::UnterminatedTrace { .. })
        ));
    }

    #[test]
    fn stray_close_rejected() {
        assert!(matches!(
            strip("Hello </think> there"),
            Err(FilterError::UnterminatedTrace { .. })
        ));
    }

    #[test]
    fn sigil_lines_dropped() {
        let filter = TraceFilter {
            sigil: Some("#|".to_string()),
            ..TraceFilter::default()
        };
        let input = "Keep me.\n#| internal annotation\nAnd me.";
        assert_eq!(filter.strip(input).unwrap(), "Keep me.\nAnd me.");
    }

    #[test]
    fn span_only_text_becomes_empty() {
        assert_eq!(strip("<think>everything hidden</think>").unwrap(), "");
    }

    proptest! {
        // Idempotence over arbitrary marker-free text interleaved with spans.
        #[test]
        fn filter_is_idempotent(
            parts in proptest::collection::vec("[a-zA-Z0-9 .,\n]{0,20}", 1..6),
            traces in proptest::collection::vec("[a-z ]{0,10}", 0..5),
        ) {
            let mut input = String::new();
            for (i, part) in parts.iter().enumerate() {
                input.push_str(part);
                if let Some(t) = traces.get(i) {
                    input.push_str("<think>");
                    input.push_str(t);
                    input.push_str("</think>");
                }
            }
            let once = strip(&input).unwrap();
            let twice = strip(&once).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
