//! Hand-built trace-filter fixture corpus.
//!
//! Every expected value below was worked out by hand against the documented
//! semantics (span removal with single-separator collapse, sigil-line
//! removal, strict rejection of unmatched markers) and frozen. The filter
//! implementation must reproduce the table exactly, and must be idempotent
//! on every non-error output.

use troupe_core::gateway::{FilterError, TraceFilter};

fn default_filter() -> TraceFilter {
    TraceFilter::default()
}

fn sigil(s: &str) -> TraceFilter {
    TraceFilter { sigil: Some(s.to_string()), ..TraceFilter::default() }
}

fn custom(open: &str, close: &str) -> TraceFilter {
    TraceFilter { open: open.to_string(), close: close.to_string(), sigil: None }
}

enum Expect {
    Text(&'static str),
    Unterminated,
}

fn corpus() -> Vec<(&'static str, TraceFilter, &'static str, Expect)> {
    use Expect::*;
    vec![
        // ── no-ops: marker-free text passes through byte-identical ──
        ("plain", default_filter(), "Hello there", Text("Hello there")),
        ("empty", default_filter(), "", Text("")),
        ("ws_preserved", default_filter(), "  leading and trailing  ", Text("  leading and trailing  ")),
        ("multiline", default_filter(), "line1\nline2", Text("line1\nline2")),
        ("quotes", default_filter(), "quotes \"stay\" intact", Text("quotes \"stay\" intact")),
        ("inner_runs", default_filter(), "a  b   c", Text("a  b   c")),
        ("only_newlines", default_filter(), "\n\n", Text("\n\n")),
        ("sentence", default_filter(), "no markers here, just text.", Text("no markers here, just text.")),
        // ── single spans ──
        ("lead_span", default_filter(), "<think>plan steps</think>Hello there", Text("Hello there")),
        ("lead_span_space", default_filter(), "<think>x</think> Hello", Text("Hello")),
        ("trail_span_space", default_filter(), "Hello <think>x</think>", Text("Hello")),
        ("trail_span_tight", default_filter(), "Hello<think>x</think>", Text("Hello")),
        ("mid_tight", default_filter(), "A<think>x</think>B", Text("AB")),
        ("mid_left_space", default_filter(), "A <think>x</think>B", Text("A B")),
        ("mid_right_space", default_filter(), "A<think>x</think> B", Text("A B")),
        ("mid_both_spaces", default_filter(), "A <think>x</think> B", Text("A B")),
        ("mid_left_newline", default_filter(), "A\n<think>x</think>B", Text("A\nB")),
        ("mid_right_newline", default_filter(), "A<think>x</think>\nB", Text("A\nB")),
        ("mixed_ws_newline_wins", default_filter(), "A \n <think>x</think> B", Text("A\nB")),
        ("multiline_trace", default_filter(), "<think>multi\nline\ntrace</think>Result", Text("Result")),
        // ── multiple spans ──
        (
            "two_spans_three_utterances",
            default_filter(),
            "First line.\n<think>a</think>\nSecond line.\n<think>b</think>\nThird line.",
            Text("First line.\nSecond line.\nThird line."),
        ),
        ("two_spans_tight", default_filter(), "A<think>1</think>B<think>2</think>C", Text("ABC")),
        ("adjacent_spans_spaces", default_filter(), "A <think>1</think><think>2</think> B", Text("A B")),
        ("two_lead_spans", default_filter(), "<think>1</think><think>2</think>Hello", Text("Hello")),
        ("sandwiched", default_filter(), "<think>1</think>A<think>2</think>", Text("A")),
        ("spans_split_by_newline", default_filter(), "A<think>1</think>\n<think>2</think>B", Text("A\nB")),
        ("three_words", default_filter(), "one <think>a</think>two<think>b</think> three", Text("one two three")),
        ("span_only", default_filter(), "<think>everything hidden</think>", Text("")),
        // ── spacing nuances ──
        ("lead_ws_then_span", default_filter(), "  <think>x</think>Hello", Text("Hello")),
        ("double_spaces_collapse", default_filter(), "Hello  <think>x</think>  there", Text("Hello there")),
        ("tab_becomes_space", default_filter(), "tab\t<think>x</think>end", Text("tab end")),
        ("crlf_is_newline", default_filter(), "A\r\n<think>x</think>B", Text("A\nB")),
        ("inner_spaces_survive", default_filter(), "keep  inner   spaces <think>x</think>z", Text("keep  inner   spaces z")),
        // ── rejected inputs ──
        ("unterminated_open", default_filter(), "<think>unterminated", Unterminated),
        ("stray_close", default_filter(), "stray </think> close", Unterminated),
        ("close_after_valid_span", default_filter(), "text <think>a</think> then </think>", Unterminated),
        ("nested_open_swallowed", default_filter(), "<think>a<think>b</think>", Text("")),
        ("trailing_stray_close", default_filter(), "<think></think>stray at end </think>", Unterminated),
        // ── custom marker pairs ──
        ("reasoning_tags", custom("<reasoning>", "</reasoning>"), "<reasoning>hmm</reasoning>Answer", Text("Answer")),
        (
            "think_not_special_here",
            custom("<reasoning>", "</reasoning>"),
            "<think>not special</think> stays",
            Text("<think>not special</think> stays"),
        ),
        ("bracket_markers", custom("[[", "]]"), "A [[hidden]] B", Text("A B")),
        ("pipe_markers", custom("<|startthink|>", "<|endthink|>"), "X<|startthink|>y<|endthink|>Z", Text("XZ")),
        ("guillemets", custom("\u{AB}", "\u{BB}"), "pre \u{AB}secret\u{BB} post", Text("pre post")),
        // ── annotation sigils ──
        ("sigil_line_dropped", sigil("#|"), "Keep.\n#| note\nAlso keep.", Text("Keep.\nAlso keep.")),
        ("sigil_only_line", sigil("#|"), "#| only annotation", Text("")),
        ("sigil_indented", sigil("#|"), "  #| indented annotation\nBody.", Text("Body.")),
        ("sigil_absent", sigil("#|"), "No annotations here.", Text("No annotations here.")),
        (
            "sigil_and_span",
            sigil("#|"),
            "<think>x</think>Line A\n#| drop\nLine B",
            Text("Line A\nLine B"),
        ),
        ("double_percent_sigil", sigil("%%"), "a\n%%x\n%%y\nb", Text("a\nb")),
        ("sigil_first_and_last", sigil("#|"), "#| first\nBody stays.\n#| last", Text("Body stays.")),
    ]
}

#[test]
fn corpus_has_fifty_cases() {
    assert_eq!(corpus().len(), 50);
}

#[test]
fn filter_matches_hand_computed_corpus() {
    for (name, filter, input, expected) in corpus() {
        match expected {
            Expect::Text(want) => {
                let got = filter
                    .strip(input)
                    .unwrap_or_else(|e| panic!("case `{name}` unexpectedly failed: {e}"));
                assert_eq!(got, want, "case `{name}` diverged from the hand oracle");
            }
            Expect::Unterminated => {
                let got = filter.strip(input);
                assert!(
                    matches!(got, Err(FilterError::UnterminatedTrace { .. })),
                    "case `{name}` expected UnterminatedTrace, got {got:?}"
                );
            }
        }
    }
}

#[test]
fn filter_is_idempotent_on_every_corpus_output() {
    for (name, filter, input, expected) in corpus() {
        if let Expect::Text(_) = expected {
            let once = filter.strip(input).unwrap();
            let twice = filter.strip(&once).unwrap();
            assert_eq!(once, twice, "case `{name}` not idempotent");
        }
    }
}
