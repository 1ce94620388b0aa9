use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scene_store::ObjectCategory;
use crate::template_engine::Side;
use crate::text::tokenize;

/// Word lists the grounding validator matches against tokenized text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lexicon {
    /// Phrase (space-separated tokens) to category. Longer phrases win.
    pub categories: BTreeMap<String, ObjectCategory>,
    pub numbers: BTreeMap<String, u32>,
    /// Words that state a zero count ("no pedestrians").
    pub negations: Vec<String>,
    /// Phrases naming the ego vehicle; never treated as object mentions.
    pub ego_phrases: Vec<String>,
    /// Tokens marking a decision sentence, which repair may not remove.
    pub decision_markers: Vec<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        use ObjectCategory::*;
        let categories = [
            ("vehicle", Vehicle),
            ("vehicles", Vehicle),
            ("car", Vehicle),
            ("cars", Vehicle),
            ("truck", Vehicle),
            ("trucks", Vehicle),
            ("bus", Vehicle),
            ("buses", Vehicle),
            ("van", Vehicle),
            ("vans", Vehicle),
            ("pedestrian", Pedestrian),
            ("pedestrians", Pedestrian),
            ("person", Pedestrian),
            ("people", Pedestrian),
            ("walker", Pedestrian),
            ("walkers", Pedestrian),
            ("cyclist", Cyclist),
            ("cyclists", Cyclist),
            ("bicycle", Cyclist),
            ("bicycles", Cyclist),
            ("bike", Cyclist),
            ("bikes", Cyclist),
            ("bicyclist", Cyclist),
            ("bicyclists", Cyclist),
            ("traffic light", TrafficLight),
            ("traffic lights", TrafficLight),
            ("traffic signal", TrafficLight),
            ("traffic signals", TrafficLight),
            ("traffic sign", TrafficSign),
            ("traffic signs", TrafficSign),
            ("stop sign", TrafficSign),
            ("stop signs", TrafficSign),
            ("sign", TrafficSign),
            ("signs", TrafficSign),
            ("obstacle", Other),
            ("obstacles", Other),
            ("barrier", Other),
            ("barriers", Other),
            ("cone", Other),
            ("cones", Other),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        let words = [
            "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
            "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
        ];
        let numbers = words.iter().enumerate().map(|(i, w)| ((*w).to_owned(), i as u32)).collect();
        Self {
            categories,
            numbers,
            negations: vec!["no".into()],
            ego_phrases: vec!["ego vehicle".into(), "ego car".into(), "ego".into()],
            decision_markers: ["decision", "therefore", "decide", "decides", "hence", "thus"]
                .into_iter()
                .map(str::to_owned)
                .collect(),
        }
    }
}

/// One category mention found in a sentence.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawMention {
    pub lexeme: String,
    pub category: ObjectCategory,
    pub count: Option<u32>,
    pub side: Option<Side>,
}

impl Lexicon {
    fn phrases(&self) -> Vec<(Vec<String>, Option<ObjectCategory>)> {
        let mut all: Vec<(Vec<String>, Option<ObjectCategory>)> = self
            .categories
            .iter()
            .map(|(k, v)| (tokenize(k), Some(*v)))
            .chain(self.ego_phrases.iter().map(|e| (tokenize(e), None)))
            .collect();
        all.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        all
    }

    fn number(&self, token: &str) -> Option<u32> {
        if let Some(n) = self.numbers.get(token) {
            return Some(*n);
        }
        if self.negations.iter().any(|n| n == token) {
            return Some(0);
        }
        token.parse().ok()
    }

    pub fn is_decision(&self, tokens: &[String]) -> bool {
        tokens.iter().any(|t| self.decision_markers.contains(t))
    }

    /// Mentions in one sentence's tokens. The count is a number word at most
    /// two tokens before the lexeme; the side is the first side phrase after
    /// it and before the next mention.
    pub(crate) fn mentions(&self, tokens: &[String]) -> Vec<RawMention> {
        let phrases = self.phrases();
        let mut spans: Vec<(usize, usize, ObjectCategory)> = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = phrases.iter().find(|(p, _)| !p.is_empty() && tokens[i..].starts_with(p));
            match hit {
                Some((p, cat)) => {
                    if let Some(c) = cat {
                        spans.push((i, i + p.len(), *c));
                    }
                    i += p.len();
                }
                None => i += 1,
            }
        }
        let mut out = Vec::new();
        for (k, &(start, end, category)) in spans.iter().enumerate() {
            let floor = if k == 0 { 0 } else { spans[k - 1].1 };
            let count = (floor.max(start.saturating_sub(2))..start).rev().find_map(|j| self.number(&tokens[j]));
            let ceil = spans.get(k + 1).map_or(tokens.len(), |s| s.0);
            out.push(RawMention {
                lexeme: tokens[start..end].join(" "),
                category,
                count,
                side: side_in(&tokens[end..ceil]),
            });
        }
        out
    }
}

fn side_in(tokens: &[String]) -> Option<Side> {
    for (i, t) in tokens.iter().enumerate() {
        let next = tokens.get(i + 1).map(String::as_str);
        let s = match t.as_str() {
            "ahead" => Side::Front,
            "front" => match next {
                Some("left") => Side::FrontLeft,
                Some("right") => Side::FrontRight,
                _ => Side::Front,
            },
            "left" => Side::Left,
            "right" => Side::Right,
            "behind" | "rear" => Side::Rear,
            _ => continue,
        };
        return Some(s);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(text: &str) -> Vec<RawMention> {
        Lexicon::default().mentions(&tokenize(text))
    }

    #[test]
    fn counts_and_sides() {
        let r = m("Two vehicles ahead and a pedestrian to the front left.");
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].category, r[0].count, r[0].side), (ObjectCategory::Vehicle, Some(2), Some(Side::Front)));
        assert_eq!((r[1].category, r[1].count, r[1].side), (ObjectCategory::Pedestrian, None, Some(Side::FrontLeft)));
    }

    #[test]
    fn ego_is_not_a_vehicle_mention() {
        assert!(m("The ego vehicle should turn left.").is_empty());
        assert!(m("There are no moving agents around the ego vehicle.").is_empty());
    }

    #[test]
    fn multiword_lexemes() {
        let r = m("A red traffic light ahead; 3 stop signs behind.");
        assert_eq!(r[0].lexeme, "traffic light");
        assert_eq!(r[0].category, ObjectCategory::TrafficLight);
        assert_eq!(r[1].lexeme, "stop signs");
        assert_eq!((r[1].count, r[1].side), (Some(3), Some(Side::Rear)));
    }

    #[test]
    fn negated_and_adjective_counts() {
        assert_eq!(m("no pedestrians")[0].count, Some(0));
        assert_eq!(m("two parked cars")[0].count, Some(2));
        assert_eq!(m("a cyclist")[0].count, None);
    }
}
