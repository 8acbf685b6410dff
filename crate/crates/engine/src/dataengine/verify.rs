//! Final-answer extraction and rule-based matching against ground truth.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)final\s+answer\s*(?:\*\*|__)?\s*:").unwrap());
static WRAPPER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\\(?:boxed|text|mathrm)\{(.*)\}$").unwrap());
static OPTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:\(([a-e])\)|([a-e])[.):])(?:\s|$)").unwrap());
static THOUSANDS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[+-]?\d{1,3}(?:,\d{3})+(?:\.\d+)?$").unwrap());

const TERMINAL_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '。'];
const MARKUP: &[&str] = &["**", "__", "*", "`", "$"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    Positive,
    Negative,
    Unverifiable,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Positive => "positive",
            VerdictLabel::Negative => "negative",
            VerdictLabel::Unverifiable => "unverifiable",
        }
    }
}

impl fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    /// Raw answer text after the marker, trimmed.
    pub extracted_answer: Option<String>,
}

/// First non-empty line after the last "Final Answer:" marker.
pub fn extract_final_answer(response: &str) -> Option<&str> {
    let m = MARKER.find_iter(response).last()?;
    response[m.end()..].lines().map(str::trim).find(|l| !l.is_empty())
}

fn normalize_once(s: &str, letter_options: bool) -> String {
    let mut t = s.trim().to_string();
    if let Some(c) = WRAPPER.captures(&t) {
        t = c[1].to_string();
    }
    for m in MARKUP {
        t = t.replace(m, "");
    }
    t = t.to_lowercase();
    t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    t = t.trim_end_matches(TERMINAL_PUNCTUATION).trim().to_string();
    for (open, close) in [('"', '"'), ('\'', '\''), ('(', ')'), ('[', ']')] {
        if t.len() >= 2 && t.starts_with(open) && t.ends_with(close) {
            t = t[1..t.len() - 1].trim().to_string();
        }
    }
    if letter_options {
        if let Some(c) = OPTION.captures(&t) {
            t = c.get(1).or(c.get(2)).unwrap().as_str().to_string();
        }
    }
    t
}

/// Canonical form used for comparison; applying it twice changes nothing.
///
/// `letter_options` enables unwrapping a leading option letter such as
/// `"B. 42 cm"` to `"b"`.
pub fn normalize(s: &str, letter_options: bool) -> String {
    let mut cur = s.to_string();
    loop {
        let next = normalize_once(&cur, letter_options);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// Decimal reading of a normalized answer, if it is a plain number.
pub fn parse_number(s: &str) -> Option<f64> {
    if !s.bytes().any(|b| b.is_ascii_digit()) {
        return None;
    }
    let plain;
    let s = if THOUSANDS.is_match(s) {
        plain = s.replace(',', "");
        plain.as_str()
    } else {
        s
    };
    if !s
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e'))
    {
        return None;
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn is_option_letter(gt: &str) -> bool {
    let t = normalize(gt, false);
    t.len() == 1 && matches!(t.as_bytes()[0], b'a'..=b'e')
}

/// Whether two normalized answers agree, numerically when both are numbers.
pub fn answers_match(answer: &str, truth: &str, rel_tol: f64) -> bool {
    if let (Some(a), Some(b)) = (parse_number(answer), parse_number(truth)) {
        if a == b {
            return true;
        }
        return (a - b).abs() <= rel_tol * a.abs().max(b.abs());
    }
    answer == truth
}

/// Labels `response` against `ground_truth`.
pub fn verify_answer(response: &str, ground_truth: &str, rel_tol: f64) -> Verdict {
    let Some(raw) = extract_final_answer(response) else {
        return Verdict {
            label: VerdictLabel::Unverifiable,
            extracted_answer: None,
        };
    };
    let letters = is_option_letter(ground_truth);
    let answer = normalize(raw, letters);
    let truth = normalize(ground_truth, letters);
    let label = if answer.is_empty() {
        VerdictLabel::Unverifiable
    } else if answers_match(&answer, &truth, rel_tol) {
        VerdictLabel::Positive
    } else {
        VerdictLabel::Negative
    };
    Verdict {
        label,
        extracted_answer: Some(raw.to_string()),
    }
}
