//! Rule-based sentence segmentation.
//!
//! A boundary is placed after a run of terminal punctuation (`.`, `!`, `?`)
//! that is followed by whitespace and an uppercase letter or digit, or by end
//! of text. Boundaries are suppressed after known abbreviations and inside
//! decimals; a blank line always breaks. Deterministic and dependency-free,
//! which is what per-sentence decomposition needs: the exact boundary choices
//! matter less than their stability across runs.

use serde::{Deserialize, Serialize};

/// One sentence of a response. Offsets are character (not byte) positions,
/// end exclusive; `text` is the exact slice of the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

/// Words (case-insensitive, leading punctuation ignored) whose trailing
/// period never ends a sentence.
const ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "prof.", "e.g.", "i.e.", "vs.", "etc.",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Split text into sentences. Empty or all-whitespace input yields an empty
/// list; every non-whitespace character lands in exactly one sentence.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut sentences: Vec<Sentence> = Vec::new();
    let mut i = 0;
    while i < n {
        while i < n && chars[i].is_whitespace() {
            i += 1;
        }
        if i == n {
            break;
        }
        let start = i;
        let mut end = n;
        let mut j = start;
        while j < n {
            let c = chars[j];
            if c.is_whitespace() {
                let mut k = j;
                let mut newlines = 0;
                while k < n && chars[k].is_whitespace() {
                    if chars[k] == '\n' {
                        newlines += 1;
                    }
                    k += 1;
                }
                // A blank line (two newlines in one gap) always breaks, as
                // does trailing whitespace.
                if newlines >= 2 || k == n {
                    end = j;
                    break;
                }
                j = k;
                continue;
            }
            if is_terminal(c) {
                // Consecutive terminal punctuation (".?", "?!") ends one
                // sentence, not two: absorb the whole run first.
                let mut run_end = j;
                while run_end + 1 < n && is_terminal(chars[run_end + 1]) {
                    run_end += 1;
                }
                if boundary_after(&chars, start, j, run_end) {
                    end = run_end + 1;
                    break;
                }
                j = run_end + 1;
                continue;
            }
            j += 1;
        }
        let text: String = chars[start..end].iter().collect();
        sentences.push(Sentence {
            index: sentences.len(),
            char_start: start,
            char_end: end,
            text,
        });
        i = end;
    }
    sentences
}

/// Decide whether the terminal run `chars[run_start..=run_end]` ends a
/// sentence that began at `sent_start`.
fn boundary_after(chars: &[char], sent_start: usize, run_start: usize, run_end: usize) -> bool {
    let n = chars.len();
    let after = run_end + 1;
    if after == n {
        return true;
    }
    // The run must be followed by whitespace...
    if !chars[after].is_whitespace() {
        return false;
    }
    let mut next = after;
    while next < n && chars[next].is_whitespace() {
        next += 1;
    }
    if next == n {
        return true;
    }
    // ...and then an uppercase letter or a digit.
    if !(chars[next].is_uppercase() || chars[next].is_ascii_digit()) {
        return false;
    }
    // Suppressions apply only to a lone period.
    if run_start == run_end && chars[run_start] == '.' {
        if run_start > 0
            && chars[run_start - 1].is_ascii_digit()
            && after < n
            && chars[after].is_ascii_digit()
        {
            return false;
        }
        let mut word_start = run_start;
        while word_start > sent_start && !chars[word_start - 1].is_whitespace() {
            word_start -= 1;
        }
        let word: String = chars[word_start..=run_start].iter().collect();
        let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
        let lowered = word.to_lowercase();
        if ABBREVIATIONS.contains(&lowered.as_str()) {
            return false;
        }
        // Single capital plus period: an initial like "J." in a name.
        let word_chars: Vec<char> = word.chars().collect();
        if word_chars.len() == 2 && word_chars[0].is_uppercase() && word_chars[0].is_alphabetic() {
            return false;
        }
    }
    true
}
