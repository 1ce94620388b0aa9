use serde::{Deserialize, Serialize};

use crate::scene_store::ObjectCategory;
use crate::template_engine::{objects_in, GroundedCaption, GroundedFact, Predicate, Provenance, Side};
use crate::text::{split_sentences, tokenize};

use super::lexicon::Lexicon;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub lexeme: String,
    pub category: ObjectCategory,
    pub sentence: usize,
    /// `exists` fact of the object the mention was matched to.
    pub resolved_fact_id: Option<String>,
    /// True for stated-zero mentions ("no cyclists").
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountCheck {
    pub category: ObjectCategory,
    pub sentence: usize,
    pub stated: u32,
    pub truth: u32,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideCheck {
    pub object_id: String,
    pub sentence: usize,
    pub stated_side: Side,
    pub truth_side: Option<Side>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceCheck {
    pub text: String,
    pub ok: bool,
    pub removable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Repairable,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mentions: Vec<Mention>,
    pub count_checks: Vec<CountCheck>,
    pub side_checks: Vec<SideCheck>,
    pub sentences: Vec<SentenceCheck>,
    pub verdict: Verdict,
}

impl ValidationReport {
    pub fn failing_sentences(&self) -> Vec<usize> {
        (0..self.sentences.len()).filter(|&i| !self.sentences[i].ok).collect()
    }
}

/// Checks every category mention, stated count and stated side in the text
/// against the facts, sentence by sentence.
pub fn validate_grounding(completion_text: &str, facts: &[GroundedFact], lexicon: &Lexicon) -> ValidationReport {
    let objects = objects_in(facts);
    let truth_count = |c: ObjectCategory| -> u32 {
        facts
            .iter()
            .find(|f| f.predicate == Predicate::Count && f.category() == Some(c))
            .and_then(|f| f.value.as_int())
            .map(|n| n as u32)
            .unwrap_or_else(|| objects.iter().filter(|o| o.category == c).count() as u32)
    };

    let mut report = ValidationReport {
        mentions: Vec::new(),
        count_checks: Vec::new(),
        side_checks: Vec::new(),
        sentences: Vec::new(),
        verdict: Verdict::Pass,
    };
    for (si, sentence) in split_sentences(completion_text).into_iter().enumerate() {
        let tokens = tokenize(&sentence);
        if tokens.is_empty() {
            continue;
        }
        let mut ok = true;
        for raw in lexicon.mentions(&tokens) {
            let candidates: Vec<_> = objects.iter().filter(|o| o.category == raw.category).collect();
            let negated = raw.count == Some(0);
            let chosen = raw
                .side
                .and_then(|s| candidates.iter().find(|o| o.side.and_then(|f| f.side()) == Some(s)))
                .or(candidates.first());
            if chosen.is_none() && !negated {
                ok = false;
            }
            report.mentions.push(Mention {
                lexeme: raw.lexeme.clone(),
                category: raw.category,
                sentence: si,
                resolved_fact_id: chosen.map(|o| o.exists.fact_id.clone()),
                negated,
            });
            if let Some(stated) = raw.count {
                let truth = truth_count(raw.category);
                ok &= stated == truth;
                report.count_checks.push(CountCheck {
                    category: raw.category,
                    sentence: si,
                    stated,
                    truth,
                    ok: stated == truth,
                });
            }
            if let (Some(stated_side), Some(o)) = (raw.side, chosen) {
                let truth_side = o.side.and_then(|f| f.side());
                let side_ok = truth_side == Some(stated_side);
                ok &= side_ok;
                report.side_checks.push(SideCheck {
                    object_id: o.object_id.to_owned(),
                    sentence: si,
                    stated_side,
                    truth_side,
                    ok: side_ok,
                });
            }
        }
        report.sentences.push(SentenceCheck {
            text: sentence,
            ok,
            removable: !lexicon.is_decision(&tokens),
        });
    }
    report.verdict = if report.sentences.is_empty() {
        Verdict::Reject
    } else if report.sentences.iter().all(|s| s.ok) {
        Verdict::Pass
    } else if report.sentences.iter().all(|s| s.ok || s.removable) {
        Verdict::Repairable
    } else {
        Verdict::Reject
    };
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectPolicy {
    Drop,
    #[default]
    FallbackToTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FinalAnnotation {
    Accepted {
        caption: GroundedCaption,
        validation: Provenance,
        /// Indices of sentences removed by repair.
        removed_sentences: Vec<usize>,
    },
    Dropped {
        reason: String,
    },
}

impl FinalAnnotation {
    pub fn caption(&self) -> Option<&GroundedCaption> {
        match self {
            FinalAnnotation::Accepted { caption, .. } => Some(caption),
            FinalAnnotation::Dropped { .. } => None,
        }
    }

    pub fn validation(&self) -> Option<Provenance> {
        match self {
            FinalAnnotation::Accepted { validation, .. } => Some(*validation),
            FinalAnnotation::Dropped { .. } => None,
        }
    }
}

fn mllm_caption(text: String, report: &ValidationReport, template: &GroundedCaption) -> GroundedCaption {
    let mut used = template.facts_used.clone();
    for id in report.mentions.iter().filter_map(|m| m.resolved_fact_id.clone()) {
        if !used.contains(&id) {
            used.push(id);
        }
    }
    GroundedCaption {
        text,
        facts_used: used,
        category: template.category,
    }
}

/// Pass keeps the text, repairable drops the failing sentences and
/// re-validates once, reject follows the policy.
pub fn repair_or_finalize(
    completion_text: &str,
    report: &ValidationReport,
    policy: RejectPolicy,
    facts: &[GroundedFact],
    lexicon: &Lexicon,
    template: &GroundedCaption,
) -> FinalAnnotation {
    let reject = |reason: String| match policy {
        RejectPolicy::Drop => FinalAnnotation::Dropped { reason },
        RejectPolicy::FallbackToTemplate => FinalAnnotation::Accepted {
            caption: template.clone(),
            validation: Provenance::Template,
            removed_sentences: Vec::new(),
        },
    };
    match report.verdict {
        Verdict::Pass => FinalAnnotation::Accepted {
            caption: mllm_caption(completion_text.trim().to_owned(), report, template),
            validation: Provenance::MllmValidated,
            removed_sentences: Vec::new(),
        },
        Verdict::Repairable => {
            let removed = report.failing_sentences();
            let kept: Vec<&str> = report
                .sentences
                .iter()
                .enumerate()
                .filter(|(i, _)| !removed.contains(i))
                .map(|(_, s)| s.text.as_str())
                .collect();
            let text = kept.join(" ");
            let again = validate_grounding(&text, facts, lexicon);
            if again.verdict == Verdict::Pass {
                FinalAnnotation::Accepted {
                    caption: mllm_caption(text, &again, template),
                    validation: Provenance::MllmRepaired,
                    removed_sentences: removed,
                }
            } else {
                reject(format!("repair left verdict {:?}", again.verdict))
            }
        }
        Verdict::Reject => reject("grounding check rejected the completion".into()),
    }
}
