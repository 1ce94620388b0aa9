use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::action_labeler::{ActionLabel, Command, Longitudinal, Maneuver, SpeedState};
use crate::scene_store::{FrameRecord, ObjectCategory, SceneWindow};

use super::TemplateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Exists,
    Count,
    PositionSide,
    DistanceBand,
    SignalState,
    LaneTopology,
    WeatherIs,
    RoadIs,
    ActionIs,
}

impl Predicate {
    pub fn as_str(self) -> &'static str {
        match self {
            Predicate::Exists => "exists",
            Predicate::Count => "count",
            Predicate::PositionSide => "position_side",
            Predicate::DistanceBand => "distance_band",
            Predicate::SignalState => "signal_state",
            Predicate::LaneTopology => "lane_topology",
            Predicate::WeatherIs => "weather_is",
            Predicate::RoadIs => "road_is",
            Predicate::ActionIs => "action_is",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Front,
    FrontLeft,
    FrontRight,
    Left,
    Right,
    Rear,
}

impl Side {
    pub const ALL: [Side; 6] = [Side::Front, Side::FrontLeft, Side::FrontRight, Side::Left, Side::Right, Side::Rear];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Front => "front",
            Side::FrontLeft => "front_left",
            Side::FrontRight => "front_right",
            Side::Left => "left",
            Side::Right => "right",
            Side::Rear => "rear",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        Side::ALL.into_iter().find(|x| x.as_str() == s)
    }

    /// Phrase used in rendered captions.
    pub fn phrase(self) -> &'static str {
        match self {
            Side::Front => "ahead",
            Side::FrontLeft => "to the front left",
            Side::FrontRight => "to the front right",
            Side::Left => "on the left",
            Side::Right => "on the right",
            Side::Rear => "behind",
        }
    }

    pub fn mirrored(self) -> Side {
        match self {
            Side::FrontLeft => Side::FrontRight,
            Side::FrontRight => Side::FrontLeft,
            Side::Left => Side::Right,
            Side::Right => Side::Left,
            s => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceBand {
    Near,
    Mid,
    Far,
}

impl DistanceBand {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceBand::Near => "near",
            DistanceBand::Mid => "mid",
            DistanceBand::Far => "far",
        }
    }

    pub fn parse(s: &str) -> Option<DistanceBand> {
        match s {
            "near" => Some(DistanceBand::Near),
            "mid" => Some(DistanceBand::Mid),
            "far" => Some(DistanceBand::Far),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl FactValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            FactValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            FactValue::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl fmt::Display for FactValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactValue::Int(i) => write!(f, "{i}"),
            FactValue::Float(x) => write!(f, "{x}"),
            FactValue::Text(s) => f.write_str(s),
        }
    }
}

pub const EGO: &str = "ego";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedFact {
    pub fact_id: String,
    pub predicate: Predicate,
    pub subject_ids: Vec<String>,
    pub value: FactValue,
    pub frame_id: String,
}

impl GroundedFact {
    fn new(fact_id: String, predicate: Predicate, subject: &str, value: FactValue, frame_id: &str) -> Self {
        Self {
            fact_id,
            predicate,
            subject_ids: vec![subject.to_owned()],
            value,
            frame_id: frame_id.to_owned(),
        }
    }

    pub fn subject(&self) -> &str {
        self.subject_ids.first().map(String::as_str).unwrap_or(EGO)
    }

    pub fn category(&self) -> Option<ObjectCategory> {
        match self.predicate {
            Predicate::Exists | Predicate::Count => self.value_category(),
            _ => None,
        }
    }

    fn value_category(&self) -> Option<ObjectCategory> {
        match self.predicate {
            Predicate::Exists => self.value.as_text().and_then(ObjectCategory::parse),
            Predicate::Count => self.fact_id.rsplit(':').next().and_then(ObjectCategory::parse),
            _ => None,
        }
    }

    pub fn side(&self) -> Option<Side> {
        (self.predicate == Predicate::PositionSide)
            .then(|| self.value.as_text().and_then(Side::parse))
            .flatten()
    }

    pub fn band(&self) -> Option<DistanceBand> {
        (self.predicate == Predicate::DistanceBand)
            .then(|| self.value.as_text().and_then(DistanceBand::parse))
            .flatten()
    }

    /// Checks the predicate/value pairing.
    pub fn type_check(&self) -> Result<(), TemplateError> {
        let ok = match (self.predicate, &self.value) {
            (Predicate::Count, FactValue::Int(n)) => *n >= 0,
            (Predicate::DistanceBand, FactValue::Text(s)) => DistanceBand::parse(s).is_some(),
            (Predicate::PositionSide, FactValue::Text(s)) => Side::parse(s).is_some(),
            (Predicate::Exists, FactValue::Text(s)) => ObjectCategory::parse(s).is_some(),
            (Predicate::SignalState, FactValue::Text(s)) => SIGNAL_STATES.contains(&s.as_str()),
            (Predicate::ActionIs, FactValue::Text(s)) => ActionValue::parse(s).is_some(),
            (Predicate::WeatherIs | Predicate::RoadIs | Predicate::LaneTopology, FactValue::Text(_)) => true,
            _ => false,
        };
        if ok && !self.subject_ids.is_empty() {
            Ok(())
        } else {
            Err(TemplateError::FactType {
                fact_id: self.fact_id.clone(),
                message: format!("{} cannot carry value {:?}", self.predicate.as_str(), self.value),
            })
        }
    }
}

pub const SIGNAL_STATES: [&str; 4] = ["red", "yellow", "green", "unknown"];

/// One label axis value carried by an `action_is` fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionValue {
    Speed(SpeedState),
    Longitudinal(Longitudinal),
    Maneuver(Maneuver),
    Command(Command),
}

impl ActionValue {
    pub fn parse(s: &str) -> Option<ActionValue> {
        SpeedState::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .map(ActionValue::Speed)
            .or_else(|| Longitudinal::ALL.into_iter().find(|v| v.as_str() == s).map(ActionValue::Longitudinal))
            .or_else(|| Maneuver::ALL.into_iter().find(|v| v.as_str() == s).map(ActionValue::Maneuver))
            .or_else(|| {
                [Command::Forward, Command::Left, Command::Right]
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .map(ActionValue::Command)
            })
    }
}

/// Band boundaries and angular sectors for fact extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactThresholds {
    pub near_m: f64,
    pub far_m: f64,
    /// Half-angle of the front cone, degrees.
    pub front_half_angle_deg: f64,
    /// Half-angle of the rear cone, degrees.
    pub rear_half_angle_deg: f64,
}

impl Default for FactThresholds {
    fn default() -> Self {
        Self {
            near_m: 10.0,
            far_m: 30.0,
            front_half_angle_deg: 30.0,
            rear_half_angle_deg: 30.0,
        }
    }
}

impl FactThresholds {
    pub fn validate(&self) -> Result<(), TemplateError> {
        let ok = self.near_m > 0.0
            && self.far_m > self.near_m
            && self.front_half_angle_deg > 0.0
            && self.front_half_angle_deg < 90.0
            && self.rear_half_angle_deg > 0.0
            && self.rear_half_angle_deg < 90.0;
        if ok {
            Ok(())
        } else {
            Err(TemplateError::Config(format!("invalid fact thresholds {self:?}")))
        }
    }

    /// near below `near_m`, far above `far_m`, mid in between (inclusive).
    pub fn band(&self, distance: f64) -> DistanceBand {
        if distance < self.near_m {
            DistanceBand::Near
        } else if distance > self.far_m {
            DistanceBand::Far
        } else {
            DistanceBand::Mid
        }
    }

    /// Sector of an ego-frame ground position by polar angle.
    pub fn side(&self, x: f64, y: f64) -> Side {
        let angle = y.atan2(x).to_degrees();
        let a = angle.abs();
        let left = angle > 0.0;
        if a <= self.front_half_angle_deg {
            Side::Front
        } else if a < 90.0 {
            if left {
                Side::FrontLeft
            } else {
                Side::FrontRight
            }
        } else if a <= 180.0 - self.rear_half_angle_deg {
            if left {
                Side::Left
            } else {
                Side::Right
            }
        } else {
            Side::Rear
        }
    }
}

fn number_word(n: u32) -> String {
    const WORDS: [&str; 21] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
        "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
    ];
    WORDS.get(n as usize).map_or_else(|| n.to_string(), |w| (*w).to_owned())
}

pub(crate) fn count_phrase(n: u32, category: ObjectCategory) -> String {
    let noun = if n == 1 { singular(category) } else { plural(category) };
    format!("{} {}", number_word(n), noun)
}

pub(crate) fn singular(category: ObjectCategory) -> &'static str {
    match category {
        ObjectCategory::Vehicle => "vehicle",
        ObjectCategory::Pedestrian => "pedestrian",
        ObjectCategory::Cyclist => "cyclist",
        ObjectCategory::TrafficLight => "traffic light",
        ObjectCategory::TrafficSign => "traffic sign",
        ObjectCategory::Other => "obstacle",
    }
}

pub(crate) fn plural(category: ObjectCategory) -> &'static str {
    match category {
        ObjectCategory::Vehicle => "vehicles",
        ObjectCategory::Pedestrian => "pedestrians",
        ObjectCategory::Cyclist => "cyclists",
        ObjectCategory::TrafficLight => "traffic lights",
        ObjectCategory::TrafficSign => "traffic signs",
        ObjectCategory::Other => "obstacles",
    }
}

fn lane_phrase(frame: &FrameRecord) -> String {
    let l = &frame.lanes;
    let lanes = |n: u32, kind: &str| format!("{} {kind} lane{}", number_word(n), if n == 1 { "" } else { "s" });
    let mut s = format!(
        "{} and {}",
        lanes(l.same_direction_lanes, "same-direction"),
        lanes(l.opposite_direction_lanes, "opposite-direction")
    );
    if !l.cross_lanes.is_empty() {
        s.push_str(", with crossing lanes");
    }
    s
}

fn signal_of(attributes: &BTreeMap<String, String>) -> Option<&'static str> {
    let raw = attributes.get("state").or_else(|| attributes.get("color"))?;
    let lower = raw.to_ascii_lowercase();
    SIGNAL_STATES.into_iter().find(|s| *s == lower)
}

/// Facts for the window's last frame: environment and lane facts, per-object
/// exists/side/band (objects ordered by distance), per-category counts and
/// traffic-light states.
pub fn extract_facts(window: &SceneWindow, thresholds: &FactThresholds) -> Vec<GroundedFact> {
    extract_frame_facts(window.last_frame(), thresholds)
}

pub fn extract_frame_facts(frame: &FrameRecord, thresholds: &FactThresholds) -> Vec<GroundedFact> {
    let fid = frame.frame_id.as_str();
    let mut facts = vec![
        GroundedFact::new(
            format!("{fid}:env:weather"),
            Predicate::WeatherIs,
            EGO,
            FactValue::Text(frame.weather.as_str().into()),
            fid,
        ),
        GroundedFact::new(
            format!("{fid}:env:road"),
            Predicate::RoadIs,
            EGO,
            FactValue::Text(frame.road_type.as_str().into()),
            fid,
        ),
        GroundedFact::new(
            format!("{fid}:env:lanes"),
            Predicate::LaneTopology,
            EGO,
            FactValue::Text(lane_phrase(frame)),
            fid,
        ),
    ];

    let mut order: Vec<usize> = (0..frame.objects.len()).collect();
    order.sort_by(|&a, &b| {
        let (oa, ob) = (&frame.objects[a], &frame.objects[b]);
        oa.distance().total_cmp(&ob.distance()).then_with(|| oa.object_id.cmp(&ob.object_id))
    });
    let mut counts: BTreeMap<ObjectCategory, i64> = BTreeMap::new();
    for (rank, &idx) in order.iter().enumerate() {
        let o = &frame.objects[idx];
        *counts.entry(o.category).or_default() += 1;
        let base = format!("{fid}:obj:{rank:03}:{}", o.object_id);
        let side = thresholds.side(o.center[0], o.center[1]);
        let band = thresholds.band(o.distance());
        facts.push(GroundedFact::new(
            format!("{base}:exists"),
            Predicate::Exists,
            &o.object_id,
            FactValue::Text(o.category.as_str().into()),
            fid,
        ));
        facts.push(GroundedFact::new(
            format!("{base}:side"),
            Predicate::PositionSide,
            &o.object_id,
            FactValue::Text(side.as_str().into()),
            fid,
        ));
        facts.push(GroundedFact::new(
            format!("{base}:band"),
            Predicate::DistanceBand,
            &o.object_id,
            FactValue::Text(band.as_str().into()),
            fid,
        ));
        if o.category == ObjectCategory::TrafficLight {
            if let Some(state) = signal_of(&o.attributes) {
                facts.push(GroundedFact::new(
                    format!("{base}:signal"),
                    Predicate::SignalState,
                    &o.object_id,
                    FactValue::Text(state.into()),
                    fid,
                ));
            }
        }
    }
    for (category, n) in counts {
        facts.push(GroundedFact::new(
            format!("{fid}:count:{}", category.as_str()),
            Predicate::Count,
            EGO,
            FactValue::Int(n),
            fid,
        ));
    }
    facts
}

/// `action_is` facts for the four label axes.
pub fn action_facts(frame_id: &str, label: &ActionLabel) -> Vec<GroundedFact> {
    [
        ("speed_state", label.speed_state.as_str()),
        ("longitudinal", label.longitudinal.as_str()),
        ("maneuver", label.maneuver.as_str()),
        ("command", label.command.as_str()),
    ]
    .into_iter()
    .map(|(axis, v)| {
        GroundedFact::new(
            format!("{frame_id}:action:{axis}"),
            Predicate::ActionIs,
            EGO,
            FactValue::Text(v.into()),
            frame_id,
        )
    })
    .collect()
}

/// Every subject resolves to an object of the referenced frame (or ego) and
/// every predicate/value pair type-checks.
pub fn check_facts(facts: &[GroundedFact], window: &SceneWindow) -> Result<(), TemplateError> {
    for f in facts {
        f.type_check()?;
        let frame = window
            .frames
            .iter()
            .find(|fr| fr.frame_id == f.frame_id)
            .ok_or_else(|| TemplateError::FactType {
                fact_id: f.fact_id.clone(),
                message: format!("frame {:?} not in window", f.frame_id),
            })?;
        let ids: HashSet<&str> = frame.objects.iter().map(|o| o.object_id.as_str()).collect();
        if let Some(bad) = f.subject_ids.iter().find(|s| s.as_str() != EGO && !ids.contains(s.as_str())) {
            return Err(TemplateError::FactType {
                fact_id: f.fact_id.clone(),
                message: format!("subject {bad:?} not found in frame"),
            });
        }
    }
    Ok(())
}

/// Object-level view over a fact list: one entry per subject with an
/// `exists` fact, in fact order.
#[derive(Debug, Clone)]
pub(crate) struct ObjectFacts<'a> {
    pub object_id: &'a str,
    pub category: ObjectCategory,
    pub exists: &'a GroundedFact,
    pub side: Option<&'a GroundedFact>,
    pub band: Option<&'a GroundedFact>,
    pub signal: Option<&'a GroundedFact>,
}

pub(crate) fn objects_in(facts: &[GroundedFact]) -> Vec<ObjectFacts<'_>> {
    facts
        .iter()
        .filter(|f| f.predicate == Predicate::Exists)
        .filter_map(|e| {
            let category = e.category()?;
            let id = e.subject();
            let find = |p: Predicate| facts.iter().find(|f| f.predicate == p && f.subject() == id);
            Some(ObjectFacts {
                object_id: id,
                category,
                exists: e,
                side: find(Predicate::PositionSide),
                band: find(Predicate::DistanceBand),
                signal: find(Predicate::SignalState),
            })
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::scene_store::{EgoState, LaneGraph, RoadType, Weather};

    pub(crate) fn frame_with(objects: &[(&str, ObjectCategory, [f64; 2])]) -> FrameRecord {
        FrameRecord {
            frame_id: "f0".into(),
            ego: EgoState {
                pose: crate::geometry::RigidTransform::identity(),
                speed: 5.0,
                yaw_rate: 0.0,
                timestamp_us: 0,
            },
            objects: objects
                .iter()
                .map(|(id, c, p)| crate::scene_store::ObjectAnnotation {
                    object_id: (*id).into(),
                    category: *c,
                    center: [p[0], p[1], 0.0],
                    size: [4.0, 2.0, 1.5],
                    yaw: 0.0,
                    velocity: [0.0, 0.0],
                    attributes: Default::default(),
                    extra: Default::default(),
                })
                .collect(),
            lanes: LaneGraph {
                same_direction_lanes: 2,
                opposite_direction_lanes: 1,
                cross_lanes: vec![],
                drivable_polygons: vec![],
                lane_width: 3.5,
            },
            weather: Weather::Fog,
            road_type: RoadType::City,
            media_refs: vec![],
            extra: Default::default(),
        }
    }

    fn value_of<'a>(facts: &'a [GroundedFact], suffix: &str) -> &'a FactValue {
        &facts.iter().find(|f| f.fact_id.ends_with(suffix)).unwrap().value
    }

    #[test]
    fn side_and_band_examples() {
        let th = FactThresholds::default();
        assert_eq!(th.side(20.0, 0.0), Side::Front);
        assert_eq!(th.band(20.0), DistanceBand::Mid);
        assert_eq!(th.side(0.0, 8.0), Side::Left);
        assert_eq!(th.band(8.0), DistanceBand::Near);
        assert_eq!(th.side(5.0, -5.0), Side::FrontRight);
        assert_eq!(th.side(-10.0, 1.0), Side::Rear);
        assert_eq!(th.side(-1.0, -3.0), Side::Right);
        assert_eq!(th.band(10.0), DistanceBand::Mid);
        assert_eq!(th.band(30.0), DistanceBand::Mid);
        assert_eq!(th.band(30.5), DistanceBand::Far);
    }

    #[test]
    fn facts_for_two_objects() {
        let f = frame_with(&[("car", ObjectCategory::Vehicle, [20.0, 0.0]), ("ped", ObjectCategory::Pedestrian, [0.0, 8.0])]);
        let facts = extract_frame_facts(&f, &FactThresholds::default());
        assert_eq!(value_of(&facts, "car:side"), &FactValue::Text("front".into()));
        assert_eq!(value_of(&facts, "car:band"), &FactValue::Text("mid".into()));
        assert_eq!(value_of(&facts, "ped:side"), &FactValue::Text("left".into()));
        assert_eq!(value_of(&facts, "ped:band"), &FactValue::Text("near".into()));
        // nearer object gets the lower rank
        assert!(facts.iter().any(|x| x.fact_id == "f0:obj:000:ped:exists"));
        assert_eq!(value_of(&facts, "count:vehicle"), &FactValue::Int(1));
        for fact in &facts {
            fact.type_check().unwrap();
        }
    }

    #[test]
    fn empty_frame_only_environment() {
        let facts = extract_frame_facts(&frame_with(&[]), &FactThresholds::default());
        let preds: Vec<Predicate> = facts.iter().map(|f| f.predicate).collect();
        assert_eq!(preds, vec![Predicate::WeatherIs, Predicate::RoadIs, Predicate::LaneTopology]);
    }

    #[test]
    fn signal_state_from_attributes() {
        let mut f = frame_with(&[("tl", ObjectCategory::TrafficLight, [15.0, 2.0])]);
        f.objects[0].attributes.insert("state".into(), "Red".into());
        let facts = extract_frame_facts(&f, &FactThresholds::default());
        assert_eq!(value_of(&facts, "tl:signal"), &FactValue::Text("red".into()));
    }

    #[test]
    fn type_check_rejects_mismatch() {
        let bad = GroundedFact::new("x".into(), Predicate::Count, EGO, FactValue::Text("two".into()), "f0");
        assert!(bad.type_check().is_err());
        let bad = GroundedFact::new("x".into(), Predicate::DistanceBand, "a", FactValue::Text("close".into()), "f0");
        assert!(bad.type_check().is_err());
        let ok = GroundedFact::new("x".into(), Predicate::ActionIs, EGO, FactValue::Text("TurnLeft".into()), "f0");
        assert!(ok.type_check().is_ok());
    }

    #[test]
    fn fact_value_json_shapes() {
        let v: FactValue = serde_json::from_str("3").unwrap();
        assert_eq!(v, FactValue::Int(3));
        let v: FactValue = serde_json::from_str("2.5").unwrap();
        assert_eq!(v, FactValue::Float(2.5));
        let v: FactValue = serde_json::from_str("\"near\"").unwrap();
        assert_eq!(v, FactValue::Text("near".into()));
    }

    #[test]
    fn lane_phrase_mentions_crossing() {
        let mut f = frame_with(&[]);
        f.lanes.cross_lanes.push(crate::scene_store::CrossLane {
            direction: crate::scene_store::CrossDirection::LeftToRight,
            polyline: vec![[0.0, 0.0], [1.0, 1.0]],
        });
        assert_eq!(lane_phrase(&f), "two same-direction lanes and one opposite-direction lane, with crossing lanes");
    }
}
