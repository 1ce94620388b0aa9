//! Rule-based caption and QA generation over grounded facts.
//!
//! Templates are flat patterns with `{slot}` placeholders. Every slot is
//! filled from facts, and the consumed fact ids are recorded on the caption
//! so the text can be checked against ground truth afterwards.

mod facts;
mod qa;
mod reasoning;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scene_store::ObjectCategory;

pub use facts::{
    action_facts, check_facts, extract_facts, extract_frame_facts, ActionValue, DistanceBand, FactThresholds,
    FactValue, GroundedFact, Predicate, Side, EGO, SIGNAL_STATES,
};
pub(crate) use facts::{count_phrase, objects_in, singular, ObjectFacts};
pub use qa::{generate_qa, GenerationConfig, Provenance, QaPair};
pub use reasoning::{compose_reasoning, triggers, PriorRow};
pub(crate) use reasoning::relevant_priors;
#[cfg(test)]
pub(crate) use facts::tests::frame_with as test_frame;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template_id} needs a {predicate} fact that is not available")]
    MissingSlot { template_id: String, predicate: String },
    #[error("no templates for category {0}")]
    EmptyTemplateSet(String),
    #[error("template set is invalid: {0}")]
    InvalidTemplate(String),
    #[error("fact {fact_id}: {message}")]
    FactType { fact_id: String, message: String },
    #[error("template config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Load { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaCategory {
    Environment,
    Static,
    Dynamic,
    Reasoning,
    Action,
}

impl QaCategory {
    pub const ALL: [QaCategory; 5] = [
        QaCategory::Environment,
        QaCategory::Static,
        QaCategory::Dynamic,
        QaCategory::Reasoning,
        QaCategory::Action,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QaCategory::Environment => "environment",
            QaCategory::Static => "static",
            QaCategory::Dynamic => "dynamic",
            QaCategory::Reasoning => "reasoning",
            QaCategory::Action => "action",
        }
    }

    /// Fixed sentence used when a category has nothing to describe.
    pub fn empty_scene_sentence(self) -> Option<&'static str> {
        match self {
            QaCategory::Dynamic => Some(NO_MOVING_AGENTS),
            QaCategory::Static => Some(NO_STATIC_OBJECTS),
            _ => None,
        }
    }
}

pub const NO_MOVING_AGENTS: &str = "There are no moving agents around the ego vehicle.";
pub const NO_STATIC_OBJECTS: &str = "There are no static objects around the ego vehicle.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateRole {
    #[default]
    Caption,
    ObservationHazard,
    ObservationSignal,
    ObservationClear,
    Decision,
    /// Reached only through another template's `fallback_id`.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub id: String,
    pub pattern: String,
    #[serde(default)]
    pub required_predicates: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_id: Option<String>,
    #[serde(default, skip_serializing_if = "is_caption")]
    pub role: TemplateRole,
}

fn is_caption(r: &TemplateRole) -> bool {
    *r == TemplateRole::Caption
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedCaption {
    pub text: String,
    pub facts_used: Vec<String>,
    pub category: QaCategory,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TemplateSet {
    #[serde(default)]
    pub questions: BTreeMap<QaCategory, Vec<String>>,
    pub categories: BTreeMap<QaCategory, Vec<Template>>,
    /// Human-prior constraint rows, usually loaded from their own file.
    #[serde(default)]
    pub priors: Vec<PriorRow>,
}

const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.json");
const DEFAULT_PRIORS: &str = include_str!("../../data/priors.json");
pub const DEFAULT_RUBRIC: &str = include_str!("../../data/rubric.txt");

impl TemplateSet {
    pub fn from_json(templates: &str, priors: Option<&str>) -> Result<Self, TemplateError> {
        let mut set: TemplateSet = serde_json::from_str(templates).map_err(|e| TemplateError::Load {
            path: "<templates>".into(),
            message: e.to_string(),
        })?;
        if let Some(p) = priors {
            set.priors = serde_json::from_str(p).map_err(|e| TemplateError::Load {
                path: "<priors>".into(),
                message: e.to_string(),
            })?;
        }
        set.validate()?;
        Ok(set)
    }

    /// The shipped template set and prior library.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TEMPLATES, Some(DEFAULT_PRIORS)).expect("shipped templates are valid")
    }

    pub fn load(templates: Option<&Path>, priors: Option<&Path>) -> Result<Self, TemplateError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| TemplateError::Load {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        };
        let t = templates.map(read).transpose()?;
        let p = priors.map(read).transpose()?;
        Self::from_json(t.as_deref().unwrap_or(DEFAULT_TEMPLATES), Some(p.as_deref().unwrap_or(DEFAULT_PRIORS)))
    }

    /// Slots parse, fallbacks resolve within their category and chains are acyclic.
    pub fn validate(&self) -> Result<(), TemplateError> {
        for (cat, list) in &self.categories {
            let ids: HashSet<&str> = list.iter().map(|t| t.id.as_str()).collect();
            if ids.len() != list.len() {
                return Err(TemplateError::InvalidTemplate(format!("duplicate template id in {}", cat.as_str())));
            }
            for t in list {
                parse_pattern(&t.pattern).map_err(|m| TemplateError::InvalidTemplate(format!("{}: {m}", t.id)))?;
                let mut seen = HashSet::new();
                let mut cur = t;
                while let Some(next) = &cur.fallback_id {
                    if !seen.insert(cur.id.as_str()) {
                        return Err(TemplateError::InvalidTemplate(format!("fallback cycle through {}", t.id)));
                    }
                    cur = list.iter().find(|x| &x.id == next).ok_or_else(|| {
                        TemplateError::InvalidTemplate(format!("{}: unknown fallback {next}", cur.id))
                    })?;
                }
            }
        }
        for q in self.questions.values() {
            if q.iter().any(|s| s.trim().is_empty()) {
                return Err(TemplateError::InvalidTemplate("empty question".into()));
            }
        }
        Ok(())
    }

    pub fn templates(&self, category: QaCategory, role: TemplateRole) -> Vec<&Template> {
        self.categories
            .get(&category)
            .map(|l| l.iter().filter(|t| t.role == role).collect())
            .unwrap_or_default()
    }

    fn find(&self, category: QaCategory, id: &str) -> Option<&Template> {
        self.categories.get(&category)?.iter().find(|t| t.id == id)
    }
}

/// Stable 64-bit seed from a global seed and a list of labels.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub(crate) fn pick<T>(items: &[T], seed: u64) -> Option<&T> {
    if items.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Some(&items[rng.random_range(0..items.len())])
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Slot {
    Weather,
    Road,
    Lanes,
    Count(ObjectCategory),
    Nearest(ObjectCategory),
    Object,
    Objects { dynamic: bool },
    Signal,
    SpeedState,
    Longitudinal,
    Maneuver,
    Command,
}

impl Slot {
    fn parse(s: &str) -> Result<Slot, String> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let cat = |a: Option<&str>| {
            a.and_then(ObjectCategory::parse).ok_or_else(|| format!("slot {s:?} needs a category argument"))
        };
        Ok(match (name, arg) {
            ("weather", None) => Slot::Weather,
            ("road", None) => Slot::Road,
            ("lanes", None) => Slot::Lanes,
            ("count", a) => Slot::Count(cat(a)?),
            ("nearest", a) => Slot::Nearest(cat(a)?),
            ("object", None) => Slot::Object,
            ("objects", Some("dynamic")) => Slot::Objects { dynamic: true },
            ("objects", Some("static")) => Slot::Objects { dynamic: false },
            ("signal", None) => Slot::Signal,
            ("speed_state", None) => Slot::SpeedState,
            ("longitudinal", None) => Slot::Longitudinal,
            ("maneuver", None) => Slot::Maneuver,
            ("command", None) => Slot::Command,
            _ => return Err(format!("unknown slot {{{s}}}")),
        })
    }

    fn predicate(&self) -> Predicate {
        match self {
            Slot::Weather => Predicate::WeatherIs,
            Slot::Road => Predicate::RoadIs,
            Slot::Lanes => Predicate::LaneTopology,
            Slot::Count(_) => Predicate::Count,
            Slot::Nearest(_) | Slot::Object | Slot::Objects { .. } => Predicate::Exists,
            Slot::Signal => Predicate::SignalState,
            Slot::SpeedState | Slot::Longitudinal | Slot::Maneuver | Slot::Command => Predicate::ActionIs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Slot(Slot),
}

fn parse_pattern(pattern: &str) -> Result<Vec<Piece>, String> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Piece::Text(rest[..open].to_owned()));
        }
        let close = rest[open..].find('}').ok_or("unclosed '{'")? + open;
        out.push(Piece::Slot(Slot::parse(&rest[open + 1..close])?));
        rest = &rest[close + 1..];
    }
    if rest.contains('}') {
        return Err("stray '}'".into());
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest.to_owned()));
    }
    Ok(out)
}

fn road_phrase(value: &str) -> String {
    match value {
        "city" => "a city road".into(),
        "rural" => "a rural road".into(),
        "highway" => "a highway".into(),
        "intersection" => "an intersection".into(),
        other => format!("a {other} road"),
    }
}

fn action_phrase(v: ActionValue) -> &'static str {
    use crate::action_labeler::{Command, Longitudinal, Maneuver, SpeedState};
    match v {
        ActionValue::Speed(SpeedState::Crawling) => "crawling",
        ActionValue::Speed(SpeedState::ModerateSpeed) => "moving at a moderate speed",
        ActionValue::Speed(SpeedState::MovingFast) => "moving fast",
        ActionValue::Longitudinal(Longitudinal::Accelerate) => "accelerate",
        ActionValue::Longitudinal(Longitudinal::Decelerate) => "decelerate",
        ActionValue::Longitudinal(Longitudinal::MaintainSpeed) => "maintain its speed",
        ActionValue::Longitudinal(Longitudinal::VehicleStarting) => "start moving from a standstill",
        ActionValue::Longitudinal(Longitudinal::Stop) => "come to a stop",
        ActionValue::Maneuver(Maneuver::GoStraight) => "go straight",
        ActionValue::Maneuver(Maneuver::LaneChangeLeft) => "change to the left lane",
        ActionValue::Maneuver(Maneuver::LaneChangeRight) => "change to the right lane",
        ActionValue::Maneuver(Maneuver::TurnLeft) => "turn left",
        ActionValue::Maneuver(Maneuver::TurnRight) => "turn right",
        ActionValue::Command(Command::Forward) => "forward",
        ActionValue::Command(Command::Left) => "left",
        ActionValue::Command(Command::Right) => "right",
    }
}

/// "a pedestrian on the left at near range", plus the facts it consumed.
pub(crate) fn object_phrase(o: &ObjectFacts<'_>) -> (String, Vec<String>) {
    let noun = singular(o.category);
    let article = if noun.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
    let mut text = format!("{article} {noun}");
    let mut used = vec![o.exists.fact_id.clone()];
    if let Some(s) = o.side.and_then(|f| f.side().map(|s| (f, s))) {
        text.push(' ');
        text.push_str(s.1.phrase());
        used.push(s.0.fact_id.clone());
    }
    if let Some(b) = o.band.and_then(|f| f.band().map(|b| (f, b))) {
        text.push_str(&format!(" at {} range", b.1.as_str()));
        used.push(b.0.fact_id.clone());
    }
    (text, used)
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

struct Filled {
    text: String,
    used: Vec<String>,
}

fn fill_slot(slot: &Slot, facts: &[GroundedFact]) -> Option<Filled> {
    let by_pred = |p: Predicate| facts.iter().find(|f| f.predicate == p);
    let one = |f: &GroundedFact, text: String| Some(Filled { text, used: vec![f.fact_id.clone()] });
    match slot {
        Slot::Weather => by_pred(Predicate::WeatherIs).and_then(|f| one(f, f.value.to_string())),
        Slot::Road => by_pred(Predicate::RoadIs).and_then(|f| one(f, road_phrase(&f.value.to_string()))),
        Slot::Lanes => by_pred(Predicate::LaneTopology).and_then(|f| one(f, f.value.to_string())),
        Slot::Count(cat) => facts
            .iter()
            .find(|f| f.predicate == Predicate::Count && f.category() == Some(*cat))
            .and_then(|f| {
                let n = u32::try_from(f.value.as_int()?).ok()?;
                one(f, count_phrase(n, *cat))
            }),
        Slot::Nearest(cat) => objects_in(facts).into_iter().find(|o| o.category == *cat).map(|o| {
            let (text, used) = object_phrase(&o);
            Filled { text, used }
        }),
        Slot::Object => objects_in(facts).first().map(|o| {
            let (text, used) = object_phrase(o);
            Filled { text, used }
        }),
        Slot::Objects { dynamic } => {
            let mut texts = Vec::new();
            let mut used = Vec::new();
            for o in objects_in(facts).iter().filter(|o| o.category.is_dynamic() == *dynamic) {
                let (t, u) = object_phrase(o);
                texts.push(t);
                used.extend(u);
            }
            (!texts.is_empty()).then(|| Filled { text: join_list(&texts), used })
        }
        Slot::Signal => {
            let objs = objects_in(facts);
            let o = objs.iter().find(|o| o.signal.is_some())?;
            let sig = o.signal?;
            let mut text = format!("a {} traffic light", sig.value);
            let mut used = vec![sig.fact_id.clone(), o.exists.fact_id.clone()];
            if let Some((f, s)) = o.side.and_then(|f| f.side().map(|s| (f, s))) {
                text.push(' ');
                text.push_str(s.phrase());
                used.push(f.fact_id.clone());
            }
            Some(Filled { text, used })
        }
        Slot::SpeedState | Slot::Longitudinal | Slot::Maneuver | Slot::Command => {
            facts.iter().filter(|f| f.predicate == Predicate::ActionIs).find_map(|f| {
                let v = ActionValue::parse(f.value.as_text()?)?;
                let matches = matches!(
                    (slot, v),
                    (Slot::SpeedState, ActionValue::Speed(_))
                        | (Slot::Longitudinal, ActionValue::Longitudinal(_))
                        | (Slot::Maneuver, ActionValue::Maneuver(_))
                        | (Slot::Command, ActionValue::Command(_))
                );
                matches.then(|| Filled { text: action_phrase(v).to_owned(), used: vec![f.fact_id.clone()] })
            })
        }
    }
}

/// Fills one template strictly; any unfillable slot is a `MissingSlot`.
pub fn fill_template(
    template: &Template,
    facts: &[GroundedFact],
    category: QaCategory,
) -> Result<GroundedCaption, TemplateError> {
    let missing = |p: Predicate| TemplateError::MissingSlot {
        template_id: template.id.clone(),
        predicate: p.as_str().to_owned(),
    };
    for p in &template.required_predicates {
        if !facts.iter().any(|f| f.predicate == *p) {
            return Err(missing(*p));
        }
    }
    let pieces = parse_pattern(&template.pattern).map_err(TemplateError::InvalidTemplate)?;
    let mut text = String::new();
    let mut used: Vec<String> = Vec::new();
    for piece in pieces {
        match piece {
            Piece::Text(t) => text.push_str(&t),
            Piece::Slot(slot) => {
                let filled = fill_slot(&slot, facts).ok_or_else(|| missing(slot.predicate()))?;
                text.push_str(&filled.text);
                for id in filled.used {
                    if !used.contains(&id) {
                        used.push(id);
                    }
                }
            }
        }
    }
    Ok(GroundedCaption { text, facts_used: used, category })
}

/// Seeded pick of one caption template of the category, filled strictly.
pub fn render_caption(
    facts: &[GroundedFact],
    category: QaCategory,
    templates: &TemplateSet,
    seed: u64,
) -> Result<GroundedCaption, TemplateError> {
    let candidates = templates.templates(category, TemplateRole::Caption);
    let t = pick(&candidates, seed).ok_or_else(|| TemplateError::EmptyTemplateSet(category.as_str().into()))?;
    fill_template(t, facts, category)
}

/// Like `render_caption` but walks the fallback chain on missing slots. When
/// the chain runs out and the category has nothing to describe, returns the
/// category's fixed empty-scene sentence.
pub fn render_with_fallback(
    facts: &[GroundedFact],
    category: QaCategory,
    templates: &TemplateSet,
    seed: u64,
) -> Result<GroundedCaption, TemplateError> {
    let candidates = templates.templates(category, TemplateRole::Caption);
    let mut current = *pick(&candidates, seed).ok_or_else(|| TemplateError::EmptyTemplateSet(category.as_str().into()))?;
    let mut visited = HashSet::new();
    loop {
        visited.insert(current.id.clone());
        let err = match fill_template(current, facts, category) {
            Ok(c) => return Ok(c),
            Err(e @ TemplateError::MissingSlot { .. }) => e,
            Err(e) => return Err(e),
        };
        let next = current
            .fallback_id
            .as_deref()
            .filter(|id| !visited.contains(*id))
            .and_then(|id| templates.find(category, id));
        match next {
            Some(t) => current = t,
            None => {
                let nothing_to_describe = match category {
                    QaCategory::Dynamic => !objects_in(facts).iter().any(|o| o.category.is_dynamic()),
                    QaCategory::Static => !objects_in(facts).iter().any(|o| !o.category.is_dynamic()),
                    _ => false,
                };
                return match category.empty_scene_sentence() {
                    Some(s) if nothing_to_describe => Ok(GroundedCaption {
                        text: s.to_owned(),
                        facts_used: Vec::new(),
                        category,
                    }),
                    _ => Err(err),
                };
            }
        }
    }
}
