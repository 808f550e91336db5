//! Tokenization and rule-based sentence splitting.
//!
//! Both are deterministic and model-free so that ingestion is reproducible
//! offline.

/// Lowercased abbreviations whose trailing period never ends a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "etc", "e.g", "i.e", "approx",
    "no", "inc", "ltd", "co", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept",
    "oct", "nov", "dec", "a.m", "p.m",
];

/// Lowercase the text and split on every non-alphanumeric character.
///
/// No stemming and no stop-word removal are applied.
///
/// ```
/// assert_eq!(hiro::tokenize("Wi-Fi 5/5"), ["wi", "fi", "5", "5"]);
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

/// Word immediately before position `end` (exclusive), lowercased, keeping
/// inner periods so that "e.g" and "a.m" are recognised.
fn preceding_word(chars: &[char], end: usize) -> String {
    let mut start = end;
    while start > 0 && (chars[start - 1].is_alphanumeric() || chars[start - 1] == '.') {
        start -= 1;
    }
    chars[start..end]
        .iter()
        .collect::<String>()
        .trim_matches('.')
        .to_lowercase()
}

/// Split a review body into sentences.
///
/// A boundary is a run of `.`, `!` or `?` (plus any closing quotes or
/// brackets) followed either by the end of the text or by whitespace and an
/// uppercase letter, optionally behind an opening quote or bracket. A single
/// period after a known abbreviation or a lone initial is not a boundary.
/// Sentences are trimmed and empty ones dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_terminator(chars[i]) {
            i += 1;
            continue;
        }
        let run_start = i;
        let mut end = i;
        while end < chars.len() && is_terminator(chars[end]) {
            end += 1;
        }
        while end < chars.len() && is_closer(chars[end]) {
            end += 1;
        }
        let mut next = end;
        while next < chars.len() && chars[next].is_whitespace() {
            next += 1;
        }
        let at_end = next == chars.len();
        let boundary = if at_end {
            true
        } else {
            let mut first = next;
            while first < chars.len() && is_opener(chars[first]) {
                first += 1;
            }
            next > end && first < chars.len() && chars[first].is_uppercase()
        };
        let single_period = end - run_start == 1 && chars[run_start] == '.';
        let abbreviation = single_period && !at_end && {
            let word = preceding_word(&chars, run_start);
            ABBREVIATIONS.contains(&word.as_str())
                || (word.chars().count() == 1 && word.chars().all(char::is_alphabetic))
        };
        if boundary && !abbreviation {
            push_trimmed(&mut out, &chars[start..end]);
            start = next;
            i = next;
        } else {
            i = end;
        }
    }
    if start < chars.len() {
        push_trimmed(&mut out, &chars[start..]);
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The pool was GREAT!"), ["the", "pool", "was", "great"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Wi-Fi 5/5"), ["wi", "fi", "5", "5"]);
        assert_eq!(tokenize("  ...  "), Vec::<String>::new());
    }

    #[test]
    fn splits_simple_review() {
        assert_eq!(
            split_sentences("Great pool. Rude staff."),
            ["Great pool.", "Rude staff."]
        );
    }

    #[test]
    fn keeps_abbreviations_and_lowercase_continuations() {
        assert_eq!(
            split_sentences("We met Dr. Smith at the bar. It was fun!"),
            ["We met Dr. Smith at the bar.", "It was fun!"]
        );
        assert_eq!(
            split_sentences("Prices were approx. fine. ok then"),
            ["Prices were approx. fine. ok then"]
        );
        assert_eq!(
            split_sentences("Check-in at 3 p.m. Nice lobby."),
            ["Check-in at 3 p.m. Nice lobby."]
        );
    }

    #[test]
    fn handles_runs_quotes_and_missing_terminator() {
        assert_eq!(
            split_sentences("Wow!!! \"Best stay ever.\" Would return"),
            ["Wow!!!", "\"Best stay ever.\"", "Would return"]
        );
        assert_eq!(split_sentences("   "), Vec::<String>::new());
        assert_eq!(split_sentences("3.5 stars. Good"), ["3.5 stars.", "Good"]);
    }

    #[test]
    fn tokenize_is_idempotent_on_joined_tokens() {
        let toks = tokenize("Room 101 was CLEAN, quiet & cosy.");
        assert_eq!(tokenize(&toks.join(" ")), toks);
    }
}
