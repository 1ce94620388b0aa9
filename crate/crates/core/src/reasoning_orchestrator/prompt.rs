use serde::{Deserialize, Serialize};

use crate::scene_store::SceneWindow;
use crate::template_engine::{objects_in, DistanceBand, GroundedCaption, GroundedFact, PriorRow, QaCategory};

use super::OrchestratorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub window_key: String,
    pub task: QaCategory,
    pub system_text: String,
    pub user_text: String,
    pub media_refs: Vec<String>,
    /// Far-band facts left out to fit the token budget.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_facts: Vec<String>,
}

impl PromptBundle {
    /// Audit-log key: window key plus task.
    pub fn key(&self) -> String {
        format!("{}/{}", self.window_key, self.task.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Budget for `user_text`, counted in whitespace-separated words.
    pub token_budget: usize,
    /// Camera views per frame; inferred from the first frame when absent.
    pub views: Option<usize>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            token_budget: 2048,
            views: None,
        }
    }
}

fn requirement(task: QaCategory) -> &'static str {
    match task {
        QaCategory::Environment => "Describe the weather, the road type and the lane layout in one or two sentences.",
        QaCategory::Static => "Describe the static elements such as traffic lights, signs and lanes.",
        QaCategory::Dynamic => "Describe each dynamic agent with its side and distance band.",
        QaCategory::Reasoning => {
            "Give the observation, the rule that applies, and a final sentence starting with \"Decision:\"."
        }
        QaCategory::Action => "State the speed state, the longitudinal action, the maneuver and the command.",
    }
}

fn fact_line(f: &GroundedFact) -> String {
    format!("- {} {} [{}] = {}", f.fact_id, f.predicate.as_str(), f.subject_ids.join(","), f.value)
}

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

fn render_user(
    window_key: &str,
    task: QaCategory,
    fact_lines: &[String],
    captions: &[GroundedCaption],
) -> String {
    let mut out = format!("Window: {window_key}\nTask: {}\nFacts:\n", task.as_str());
    for l in fact_lines {
        out.push_str(l);
        out.push('\n');
    }
    if !captions.is_empty() {
        out.push_str("Template captions:\n");
        for c in captions {
            out.push_str(&format!("- ({}) {}\n", c.category.as_str(), c.text));
        }
    }
    out.push_str("Requirements:\n");
    out.push_str(requirement(task));
    out.push('\n');
    out
}

/// Prompt for one window and task. Facts are listed in fact-id order; when
/// the user text exceeds the budget, far-band objects are left out starting
/// from the farthest.
pub fn build_prompt(
    window: &SceneWindow,
    facts: &[GroundedFact],
    captions: &[GroundedCaption],
    priors: &[PriorRow],
    rubric: &str,
    task: QaCategory,
    config: &PromptConfig,
) -> Result<PromptBundle, OrchestratorError> {
    let views = config.views.unwrap_or_else(|| window.frames[0].media_refs.len());
    let media_refs: Vec<String> = window.frames.iter().flat_map(|f| f.media_refs.iter().cloned()).collect();
    let expected = window.frames.len() * views;
    if media_refs.len() != expected || window.frames.iter().any(|f| f.media_refs.len() != views) {
        return Err(OrchestratorError::Media {
            expected,
            found: media_refs.len(),
        });
    }

    let mut sorted: Vec<&GroundedFact> = facts.iter().collect();
    sorted.sort_by(|a, b| a.fact_id.cmp(&b.fact_id));

    // far objects, farthest first (fact ranks follow distance)
    let owned: Vec<GroundedFact> = sorted.iter().map(|f| (*f).clone()).collect();
    let mut far: Vec<(String, Vec<String>)> = objects_in(&owned)
        .iter()
        .filter(|o| o.band.and_then(|b| b.band()) == Some(DistanceBand::Far))
        .map(|o| {
            let ids = [Some(o.exists), o.side, o.band, o.signal]
                .into_iter()
                .flatten()
                .map(|f| f.fact_id.clone())
                .collect();
            (o.exists.fact_id.clone(), ids)
        })
        .collect();
    far.sort_by(|a, b| b.0.cmp(&a.0));

    let key = window.key();
    let mut dropped: Vec<String> = Vec::new();
    let mut far_iter = far.into_iter();
    let user_text = loop {
        let lines: Vec<String> = sorted.iter().filter(|f| !dropped.contains(&f.fact_id)).map(|f| fact_line(f)).collect();
        let text = render_user(&key, task, &lines, captions);
        let n = words(&text);
        if n <= config.token_budget {
            break text;
        }
        match far_iter.next() {
            Some((_, ids)) => dropped.extend(ids),
            None => {
                return Err(OrchestratorError::Budget {
                    needed: n,
                    budget: config.token_budget,
                })
            }
        }
    };
    dropped.sort();

    let mut system_text = String::new();
    for row in crate::template_engine::relevant_priors(priors, facts) {
        system_text.push_str(&row.constraint_text);
        system_text.push('\n');
    }
    system_text.push_str(rubric);

    Ok(PromptBundle {
        window_key: key,
        task,
        system_text,
        user_text,
        media_refs,
        dropped_facts: dropped,
    })
}
