use serde::{Deserialize, Serialize};

use crate::action_labeler::ActionLabel;
use crate::scene_store::SceneWindow;

use super::facts::{action_facts, extract_facts, FactThresholds};
use super::reasoning::compose_reasoning;
use super::{derive_seed, pick, render_with_fallback, GroundedCaption, QaCategory, TemplateError, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Template,
    MllmValidated,
    MllmRepaired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub scene_id: String,
    pub window_index: usize,
    pub category: QaCategory,
    pub question: String,
    pub answer: GroundedCaption,
    pub validation: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub thresholds: FactThresholds,
    pub categories: Vec<QaCategory>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            thresholds: FactThresholds::default(),
            categories: QaCategory::ALL.to_vec(),
        }
    }
}

/// One QA pair per enabled category for the window's last frame.
pub fn generate_qa(
    window: &SceneWindow,
    label: &ActionLabel,
    templates: &TemplateSet,
    config: &GenerationConfig,
    seed: u64,
) -> Result<Vec<QaPair>, TemplateError> {
    let facts = extract_facts(window, &config.thresholds);
    let mut with_action = facts.clone();
    with_action.extend(action_facts(&window.last_frame().frame_id, label));
    let index = window.window_index.to_string();

    let mut out = Vec::new();
    for category in QaCategory::ALL.into_iter().filter(|c| config.categories.contains(c)) {
        let s = |purpose: &str| derive_seed(seed, &[&window.scene_id, &index, category.as_str(), purpose]);
        let answer = match category {
            QaCategory::Reasoning => compose_reasoning(&facts, label, templates, s("answer"))?,
            QaCategory::Action => render_with_fallback(&with_action, category, templates, s("answer"))?,
            _ => render_with_fallback(&facts, category, templates, s("answer"))?,
        };
        let questions = templates.questions.get(&category).map(Vec::as_slice).unwrap_or_default();
        let question = pick(questions, s("question"))
            .cloned()
            .ok_or_else(|| TemplateError::EmptyTemplateSet(format!("{} questions", category.as_str())))?;
        out.push(QaPair {
            scene_id: window.scene_id.clone(),
            window_index: window.window_index,
            category,
            question,
            answer,
            validation: Provenance::Template,
        });
    }
    Ok(out)
}
