//! Scripted corpora: an instruction corpus plus a mock script whose token
//! bookkeeping is known in advance.
//!
//! Used to exercise the whole engine offline. Every number in
//! [`Expected`] is computed from the script itself, independently of the
//! pipeline code.

use mpolab_core::{DomainTag, InstructionSample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataengine::{sampling_prompt, EngineConfig};
use crate::error::Result;
use crate::genclient::{prompt_sha256, MockEntry, MockReply, MockScript, PromptMatch};

const WORDS: &[&str] = &[
    "the",
    "image",
    "shows",
    "a",
    "small",
    "red",
    "boat",
    "near",
    "wooden",
    "pier",
    "with",
    "two",
    "gulls",
    "above",
    "calm",
    "water",
    "under",
    "grey",
    "sky",
    "and",
    "distant",
    "hills",
    "behind",
    "lighthouse",
    "on",
    "rocky",
    "shore",
    "while",
    "children",
    "play",
    "sand",
    "beside",
    "green",
    "umbrella",
    "table",
    "chart",
    "bars",
    "rise",
    "steadily",
    "toward",
    "right",
    "axis",
];

/// Totals the engine must report when run on the script with the config it
/// was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Expected {
    pub generator_calls: u64,
    pub failed_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub correctness_pairs: u64,
    pub dropout_pairs: u64,
}

#[derive(Debug, Clone)]
pub struct ScriptedCorpus {
    pub samples: Vec<InstructionSample>,
    pub script: MockScript,
    pub expected: Expected,
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn scripted(text: String, rng: &mut ChaCha8Rng) -> (MockReply, u64, u64) {
    let p = rng.gen_range(20..400);
    let c = rng.gen_range(5..300);
    (
        MockReply::Text {
            text,
            prompt_tokens: Some(p),
            completion_tokens: Some(c),
        },
        p,
        c,
    )
}

fn sample(i: usize, rng: &mut ChaCha8Rng) -> InstructionSample {
    let id = format!("q{i:03}");
    let (domain, question, truth) = match i % 5 {
        0 => {
            let (a, b) = (rng.gen_range(2..50), rng.gen_range(2..50));
            (
                DomainTag::Mathematics,
                format!("What is {a} times {b}?"),
                Some((a * b).to_string()),
            )
        }
        1 => {
            let letter = ["A", "B", "C", "D"][rng.gen_range(0..4)];
            (
                DomainTag::Science,
                "Which option names the process shown? A. osmosis B. diffusion C. photosynthesis D. respiration"
                    .to_string(),
                Some(letter.to_string()),
            )
        }
        2 => (
            DomainTag::Chart,
            "What is the value of the tallest bar?".to_string(),
            Some(format!("{}.5", rng.gen_range(1..90))),
        ),
        3 => (
            DomainTag::GeneralVqa,
            "Describe the scene in detail.".to_string(),
            i.is_multiple_of(2).then(|| "boat".to_string()),
        ),
        _ => (DomainTag::Document, "Summarize the visible text.".to_string(), None),
    };
    InstructionSample {
        instruction: format!("[{id}] {question}"),
        attachment_ref: Some(format!("images/{id}.png")),
        ground_truth: truth,
        domain_tag: domain,
        id,
    }
}

fn wrong_answer(truth: &str, k: usize) -> String {
    match truth.parse::<f64>() {
        Ok(x) => format!("{}", x + 1.0 + k as f64),
        Err(_) => ["A", "B", "C", "D", "E"]
            .iter()
            .copied()
            .filter(|l| *l != truth)
            .nth(k % 4)
            .unwrap()
            .to_string(),
    }
}

/// Builds `n` samples and their script for `cfg`.
pub fn scripted_corpus(n: usize, cfg: &EngineConfig, seed: u64) -> Result<ScriptedCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    let mut sampling_entries = Vec::new();
    let mut continuation_entries = Vec::new();
    let mut exp = Expected::default();

    for i in 0..n {
        let s = sample(i, &mut rng);
        let prompt = sampling_prompt(&s, cfg)?;
        let mut replies = Vec::new();
        if cfg.is_correctness_sample(&s) {
            let truth = s.ground_truth.clone().unwrap();
            let m = cfg.max_samples;
            let n_fail = rng.gen_range(0..=3).min(m - 1);
            let (n_pos, n_unv) = if i % 13 == 0 {
                (m - n_fail, 0)
            } else if i % 11 == 0 {
                (0, rng.gen_range(0..=3))
            } else {
                (rng.gen_range(1..=8), rng.gen_range(0..=3))
            };
            let n_pos = n_pos.min(m - n_fail);
            let n_unv = n_unv.min(m - n_fail - n_pos);
            let n_neg = m - n_fail - n_pos - n_unv;
            let mut plan: Vec<u8> = [(0u8, n_pos), (1, n_neg), (2, n_unv), (3, n_fail)]
                .iter()
                .flat_map(|&(kind, count)| std::iter::repeat_n(kind, count))
                .collect();
            plan.shuffle(&mut rng);
            let (mut pos, mut non) = (0u64, 0u64);
            for (k, kind) in plan.iter().enumerate() {
                let body_len = rng.gen_range(3..25);
                let body = words(&mut rng, body_len);
                let text = match kind {
                    0 => format!("Step by step: {body}.\nFinal Answer: {truth}"),
                    1 => format!("Step by step: {body}.\nFinal Answer: {}", wrong_answer(&truth, k)),
                    2 => format!("Step by step: {body}. I cannot decide."),
                    _ => {
                        replies.push(MockReply::error(format!("scripted outage {k}")));
                        exp.failed_calls += 1;
                        continue;
                    }
                };
                if *kind == 0 {
                    pos += 1;
                } else {
                    non += 1;
                }
                let (r, p, c) = scripted(text, &mut rng);
                replies.push(r);
                exp.prompt_tokens += p;
                exp.completion_tokens += c;
            }
            exp.generator_calls += plan.len() as u64;
            exp.correctness_pairs += (pos * non).min(cfg.max_pairs_per_query as u64);
        } else {
            let d = cfg.dropout_pairs_per_query.min(cfg.max_samples).max(1);
            let mut conts = Vec::new();
            for _ in 0..d {
                let len = rng.gen_range(2..60);
                let (r, p, c) = scripted(words(&mut rng, len), &mut rng);
                replies.push(r);
                exp.prompt_tokens += p;
                exp.completion_tokens += c;
                let cont_len = rng.gen_range(1..30);
                let (r, p, c) = scripted(format!("however {}", words(&mut rng, cont_len)), &mut rng);
                conts.push(r);
                exp.prompt_tokens += p;
                exp.completion_tokens += c;
            }
            exp.generator_calls += 2 * d as u64;
            exp.dropout_pairs += d as u64;
            continuation_entries.push(MockEntry {
                matcher: PromptMatch::Contains(format!("[{}]", s.id)),
                replies: conts,
                cycle: false,
            });
        }
        sampling_entries.push(MockEntry {
            matcher: PromptMatch::Sha256(prompt_sha256(&prompt)),
            replies,
            cycle: false,
        });
        samples.push(s);
    }
    sampling_entries.extend(continuation_entries);
    Ok(ScriptedCorpus {
        samples,
        script: MockScript {
            endpoint_id: "scripted-mock".to_string(),
            entries: sampling_entries,
        },
        expected: exp,
    })
}
