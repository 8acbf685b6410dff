use std::fmt;
use std::str::FromStr;

use mpolab_core::{DomainTag, InstructionSample};
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// Closing line of every sampling prompt.
pub const FINAL_ANSWER_DIRECTIVE: &str =
    "Conclude with your answer on its own line in the format \"Final Answer: ***\".";

const STEP_BY_STEP: &str = "Solve the problem step by step.";

/// Chain-of-thought style requested from the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotKind {
    Plain,
    BackgroundKnowledge,
    VisualContent,
    Grounded,
}

impl CotKind {
    pub const ALL: [CotKind; 4] = [
        CotKind::Plain,
        CotKind::BackgroundKnowledge,
        CotKind::VisualContent,
        CotKind::Grounded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CotKind::Plain => "plain",
            CotKind::BackgroundKnowledge => "background_knowledge",
            CotKind::VisualContent => "visual_content",
            CotKind::Grounded => "grounded",
        }
    }

    /// Whether this style is meant for `domain`.
    pub fn suits(self, domain: DomainTag) -> bool {
        match self {
            CotKind::Plain => true,
            CotKind::BackgroundKnowledge => domain == DomainTag::Science,
            CotKind::VisualContent => {
                matches!(domain, DomainTag::Chart | DomainTag::Ocr | DomainTag::Document)
            }
            CotKind::Grounded => domain == DomainTag::GeneralVqa,
        }
    }

    /// The style a sample of `domain` gets when none is forced.
    pub fn for_domain(domain: DomainTag) -> Self {
        match domain {
            DomainTag::Science => CotKind::BackgroundKnowledge,
            DomainTag::Chart | DomainTag::Ocr | DomainTag::Document => CotKind::VisualContent,
            DomainTag::GeneralVqa => CotKind::Grounded,
            DomainTag::Mathematics | DomainTag::Synthetic => CotKind::Plain,
        }
    }

    fn preamble(self) -> Option<&'static str> {
        match self {
            CotKind::Plain => None,
            CotKind::BackgroundKnowledge => Some(
                "Before reasoning, first introduce relevant background knowledge related to the problem.",
            ),
            CotKind::VisualContent => Some(
                "Before reasoning, first describe the visual content of the image that bears on the question.",
            ),
            CotKind::Grounded => Some(
                "Before reasoning, first locate the objects the question refers to and give their bounding boxes as [x1, y1, x2, y2].",
            ),
        }
    }
}

impl fmt::Display for CotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CotKind {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        CotKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EngineError::Config(format!("unknown cot kind {s:?}")))
    }
}

/// Builds the sampling prompt for `sample`.
///
/// A kind that does not suit the sample's domain is an error unless
/// `allow_override` is set.
pub fn render_prompt(sample: &InstructionSample, kind: CotKind, allow_override: bool) -> Result<String> {
    if !allow_override && !kind.suits(sample.domain_tag) {
        return Err(EngineError::Config(format!(
            "cot kind {kind} does not apply to domain {} (sample {})",
            sample.domain_tag, sample.id
        )));
    }
    let mut out = String::with_capacity(sample.instruction.len() + 256);
    out.push_str(sample.instruction.trim_end());
    out.push_str("\n\n");
    if let Some(p) = kind.preamble() {
        out.push_str(p);
        out.push('\n');
    }
    out.push_str(STEP_BY_STEP);
    out.push('\n');
    out.push_str(FINAL_ANSWER_DIRECTIVE);
    Ok(out)
}

/// Prompt asking for a text-only continuation of a truncated response.
pub fn continuation_prompt(instruction: &str, prefix: &str) -> String {
    format!(
        "{}\n\nContinue the response below from exactly where it stops. Reply with the continuation only.\n\nResponse so far:\n{}",
        instruction.trim_end(),
        prefix
    )
}
