use serde::{Deserialize, Serialize};

use crate::action_labeler::ActionLabel;
use crate::scene_store::ObjectCategory;

use super::facts::{action_facts, objects_in, DistanceBand, GroundedFact, Predicate};
use super::{derive_seed, fill_template, pick, GroundedCaption, QaCategory, TemplateError, TemplateRole, TemplateSet};

/// One human-prior row: a trigger name and the constraint sentence it adds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorRow {
    pub trigger: String,
    pub constraint_text: String,
}

const DEFAULT_CONSTRAINT: &str = "Constraint: traffic rules and a safe margin to all road users apply.";

fn is_hazard_category(c: ObjectCategory) -> bool {
    matches!(c, ObjectCategory::Pedestrian | ObjectCategory::Vehicle | ObjectCategory::Cyclist)
}

/// Trigger names present in a fact list, each with the facts behind it.
/// Order: signals, near hazards, environment facts, then `clear_road`.
pub fn triggers(facts: &[GroundedFact]) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    let mut add = |name: String, ids: Vec<String>| match out.iter_mut().find(|(n, _)| *n == name) {
        Some((_, existing)) => existing.extend(ids),
        None => out.push((name, ids)),
    };
    let objects = objects_in(facts);
    for o in &objects {
        if let Some(sig) = o.signal {
            add(format!("{}_light", sig.value), vec![sig.fact_id.clone(), o.exists.fact_id.clone()]);
        }
    }
    let mut hazard = false;
    for o in &objects {
        let near = o.band.and_then(|b| b.band()) == Some(DistanceBand::Near);
        if near && is_hazard_category(o.category) {
            hazard = true;
            let band = o.band.map(|b| b.fact_id.clone()).into_iter();
            add(
                format!("{}_near", o.category.as_str()),
                std::iter::once(o.exists.fact_id.clone()).chain(band).collect(),
            );
        }
    }
    if objects.iter().any(|o| o.signal.and_then(|s| s.value.as_text()) == Some("red")) {
        hazard = true;
    }
    for f in facts {
        match f.predicate {
            Predicate::RoadIs => add(format!("road:{}", f.value), vec![f.fact_id.clone()]),
            Predicate::WeatherIs => add(format!("weather:{}", f.value), vec![f.fact_id.clone()]),
            _ => {}
        }
    }
    if !hazard {
        add("clear_road".into(), Vec::new());
    }
    out
}

/// Prior rows whose trigger is present, in library order.
pub(crate) fn relevant_priors<'a>(priors: &'a [PriorRow], facts: &[GroundedFact]) -> Vec<&'a PriorRow> {
    let present = triggers(facts);
    priors.iter().filter(|r| present.iter().any(|(n, _)| *n == r.trigger)).collect()
}

fn push_unique(dst: &mut Vec<String>, src: impl IntoIterator<Item = String>) {
    for id in src {
        if !dst.contains(&id) {
            dst.push(id);
        }
    }
}

fn clause(
    templates: &TemplateSet,
    role: TemplateRole,
    facts: &[GroundedFact],
    seed: u64,
) -> Result<GroundedCaption, TemplateError> {
    let candidates = templates.templates(QaCategory::Reasoning, role);
    let t = pick(&candidates, seed)
        .ok_or_else(|| TemplateError::EmptyTemplateSet(format!("reasoning/{role:?}")))?;
    fill_template(t, facts, QaCategory::Reasoning)
}

/// Observation, constraint and decision clauses in that order. One
/// observation per near pedestrian/vehicle/cyclist and per red signal (a
/// clear-road observation when there are none), the first matching prior row
/// as the constraint, and a decision rendered from the label.
pub fn compose_reasoning(
    facts: &[GroundedFact],
    label: &ActionLabel,
    templates: &TemplateSet,
    seed: u64,
) -> Result<GroundedCaption, TemplateError> {
    let frame_id = facts.first().map(|f| f.frame_id.as_str()).unwrap_or("ego");
    let mut all: Vec<GroundedFact> = facts.iter().filter(|f| f.predicate != Predicate::ActionIs).cloned().collect();
    all.extend(action_facts(frame_id, label));

    let mut sentences = Vec::new();
    let mut used = Vec::new();
    let objects = objects_in(&all);
    let mut n = 0u32;
    for o in &objects {
        let red = o.signal.and_then(|s| s.value.as_text()) == Some("red");
        let near = o.band.and_then(|b| b.band()) == Some(DistanceBand::Near);
        let role = if red {
            TemplateRole::ObservationSignal
        } else if near && is_hazard_category(o.category) {
            TemplateRole::ObservationHazard
        } else {
            continue;
        };
        let own: Vec<GroundedFact> = [Some(o.exists), o.side, o.band, o.signal].into_iter().flatten().cloned().collect();
        let c = clause(templates, role, &own, derive_seed(seed, &["observation", &n.to_string()]))?;
        n += 1;
        sentences.push(c.text);
        push_unique(&mut used, c.facts_used);
    }
    if n == 0 {
        let c = clause(templates, TemplateRole::ObservationClear, &all, derive_seed(seed, &["clear"]))?;
        sentences.push(c.text);
        push_unique(&mut used, c.facts_used);
    }

    let present = triggers(&all);
    let row = templates
        .priors
        .iter()
        .find_map(|r| present.iter().find(|(name, _)| *name == r.trigger).map(|(_, ids)| (r, ids)));
    match row {
        Some((r, ids)) => {
            sentences.push(r.constraint_text.clone());
            push_unique(&mut used, ids.iter().cloned());
        }
        None => sentences.push(DEFAULT_CONSTRAINT.to_owned()),
    }

    let d = clause(templates, TemplateRole::Decision, &all, derive_seed(seed, &["decision"]))?;
    sentences.push(d.text);
    push_unique(&mut used, d.facts_used);

    Ok(GroundedCaption {
        text: sentences.join(" "),
        facts_used: used,
        category: QaCategory::Reasoning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_labeler::{Command, Longitudinal, Maneuver, SpeedState};
    use crate::template_engine::tests::fact;
    use crate::template_engine::{FactValue, EGO};
    use crate::text::{split_sentences, tokenize};

    fn label(longitudinal: Longitudinal, maneuver: Maneuver) -> ActionLabel {
        ActionLabel {
            speed_state: SpeedState::ModerateSpeed,
            longitudinal,
            maneuver,
            command: Command::from(maneuver),
        }
    }

    fn env() -> Vec<GroundedFact> {
        vec![
            fact("f0:env:weather", Predicate::WeatherIs, EGO, FactValue::Text("clear".into())),
            fact("f0:env:road", Predicate::RoadIs, EGO, FactValue::Text("city".into())),
        ]
    }

    fn object(rank: usize, id: &str, cat: &str, side: &str, band: &str) -> Vec<GroundedFact> {
        let base = format!("f0:obj:{rank:03}:{id}");
        vec![
            fact(&format!("{base}:exists"), Predicate::Exists, id, FactValue::Text(cat.into())),
            fact(&format!("{base}:side"), Predicate::PositionSide, id, FactValue::Text(side.into())),
            fact(&format!("{base}:band"), Predicate::DistanceBand, id, FactValue::Text(band.into())),
        ]
    }

    #[test]
    fn pedestrian_and_stop() {
        let mut facts = env();
        facts.extend(object(0, "ped1", "pedestrian", "front", "near"));
        let set = TemplateSet::builtin();
        for seed in 0..10 {
            let c = compose_reasoning(&facts, &label(Longitudinal::Stop, Maneuver::GoStraight), &set, seed).unwrap();
            assert!(c.text.contains("pedestrian"), "{}", c.text);
            assert!(c.facts_used.contains(&"f0:obj:000:ped1:exists".to_owned()));
            let last = split_sentences(&c.text).pop().unwrap();
            assert!(tokenize(&last).iter().any(|t| t == "stop"), "{last}");
        }
    }

    #[test]
    fn clear_road_maintain() {
        let set = TemplateSet::builtin();
        let c = compose_reasoning(&env(), &label(Longitudinal::MaintainSpeed, Maneuver::GoStraight), &set, 3).unwrap();
        let s = split_sentences(&c.text);
        assert!(s[0].contains("Observation") && (s[0].contains("clear") || s[0].contains("no hazards")), "{}", c.text);
        assert!(s.last().unwrap().contains("maintain"));
    }

    #[test]
    fn red_signal_constraint_precedes_decision() {
        let mut facts = env();
        facts.extend(object(0, "tl", "traffic_light", "front", "mid"));
        facts.push(fact("f0:obj:000:tl:signal", Predicate::SignalState, "tl", FactValue::Text("red".into())));
        let set = TemplateSet::builtin();
        let c = compose_reasoning(&facts, &label(Longitudinal::Decelerate, Maneuver::TurnLeft), &set, 11).unwrap();
        let s = split_sentences(&c.text);
        let constraint = s.iter().position(|x| x.starts_with("Constraint") && x.contains("red traffic light"));
        let decision = s.iter().position(|x| x.starts_with("Decision"));
        assert!(constraint.unwrap() < decision.unwrap(), "{}", c.text);
        assert!(c.facts_used.contains(&"f0:obj:000:tl:signal".to_owned()));
        assert!(s.last().unwrap().contains("turn left"));
    }

    #[test]
    fn triggers_listed() {
        let mut facts = env();
        facts.extend(object(0, "c", "vehicle", "left", "near"));
        let names: Vec<String> = triggers(&facts).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["vehicle_near", "weather:clear", "road:city"]);
        let names: Vec<String> = triggers(&env()).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["weather:clear", "road:city", "clear_road"]);
    }
}
