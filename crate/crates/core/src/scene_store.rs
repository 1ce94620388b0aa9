//! Scene ingestion and the ego-centric temporal database.
//!
//! A scene document carries world-frame ground truth. Ingestion validates it
//! and re-expresses every object, lane polyline and drivable polygon in the
//! ego frame of its own frame (+x forward, +y left, yaw counterclockwise).
//! The resulting [`SceneRecord`] is immutable and shared read-only by every
//! downstream stage.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geometry::{validate_polygon, GeometryError, Pose2, RigidTransform};

pub const DATABASE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_WINDOW_LEN: usize = 5;
pub const DEFAULT_STRIDE: usize = 2;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("timestamps not strictly increasing at frames[{index}] ({previous} -> {current} us)")]
    Order {
        index: usize,
        previous: i64,
        current: i64,
    },
    #[error("geometry error at {path}: {source}")]
    Geometry {
        path: String,
        #[source]
        source: GeometryError,
    },
    #[error("scene has {frames} frames, window needs {window_len}")]
    TooShort { frames: usize, window_len: usize },
    #[error("invalid window parameters: {0}")]
    InvalidWindow(String),
    #[error("database line {line}: {message}")]
    Database { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> SceneError {
    SceneError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectCategory {
    Vehicle,
    Pedestrian,
    Cyclist,
    TrafficLight,
    TrafficSign,
    Other,
}

impl ObjectCategory {
    pub const ALL: [ObjectCategory; 6] = [
        ObjectCategory::Vehicle,
        ObjectCategory::Pedestrian,
        ObjectCategory::Cyclist,
        ObjectCategory::TrafficLight,
        ObjectCategory::TrafficSign,
        ObjectCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectCategory::Vehicle => "vehicle",
            ObjectCategory::Pedestrian => "pedestrian",
            ObjectCategory::Cyclist => "cyclist",
            ObjectCategory::TrafficLight => "traffic_light",
            ObjectCategory::TrafficSign => "traffic_sign",
            ObjectCategory::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Agents that move on their own.
    pub fn is_dynamic(self) -> bool {
        matches!(
            self,
            ObjectCategory::Vehicle | ObjectCategory::Pedestrian | ObjectCategory::Cyclist
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    Clear,
    Rain,
    Fog,
    Snow,
    Twilight,
    Night,
}

impl Weather {
    pub fn as_str(self) -> &'static str {
        match self {
            Weather::Clear => "clear",
            Weather::Rain => "rain",
            Weather::Fog => "fog",
            Weather::Snow => "snow",
            Weather::Twilight => "twilight",
            Weather::Night => "night",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadType {
    City,
    Rural,
    Highway,
    Intersection,
}

impl RoadType {
    pub fn as_str(self) -> &'static str {
        match self {
            RoadType::City => "city",
            RoadType::Rural => "rural",
            RoadType::Highway => "highway",
            RoadType::Intersection => "intersection",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossDirection {
    LeftToRight,
    RightToLeft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossLane {
    pub direction: CrossDirection,
    pub polyline: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGraph {
    pub same_direction_lanes: u32,
    pub opposite_direction_lanes: u32,
    #[serde(default)]
    pub cross_lanes: Vec<CrossLane>,
    #[serde(default)]
    pub drivable_polygons: Vec<Vec<[f64; 2]>>,
    pub lane_width: f64,
}

impl LaneGraph {
    pub fn total_lanes(&self) -> u32 {
        self.same_direction_lanes + self.opposite_direction_lanes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    /// World → ego.
    pub pose: RigidTransform,
    pub speed: f64,
    pub yaw_rate: f64,
    pub timestamp_us: i64,
}

impl EgoState {
    pub fn ego_to_world(&self) -> RigidTransform {
        self.pose.inverse()
    }

    /// Planar ego pose in world coordinates.
    pub fn planar_pose(&self) -> Pose2 {
        let w = self.ego_to_world();
        Pose2 {
            x: w.translation.x,
            y: w.translation.y,
            yaw: w.yaw(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub object_id: String,
    pub category: ObjectCategory,
    /// Ego frame, meters.
    pub center: [f64; 3],
    /// Length, width, height.
    pub size: [f64; 3],
    pub yaw: f64,
    pub velocity: [f64; 2],
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ObjectAnnotation {
    pub fn planar_distance(&self) -> f64 {
        self.center[0].hypot(self.center[1])
    }

    pub fn distance(&self) -> f64 {
        Vector3::from(self.center).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub ego: EgoState,
    pub objects: Vec<ObjectAnnotation>,
    pub lanes: LaneGraph,
    pub weather: Weather,
    pub road_type: RoadType,
    /// Opaque image URIs; never dereferenced here.
    pub media_refs: Vec<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl FrameRecord {
    pub fn timestamp_us(&self) -> i64 {
        self.ego.timestamp_us
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneWindow {
    pub scene_id: String,
    pub window_index: usize,
    /// Index of the first frame within the scene.
    pub start: usize,
    pub stride: usize,
    pub frames: Vec<FrameRecord>,
}

impl SceneWindow {
    /// Key used for prompts, audit logs and seeds.
    pub fn key(&self) -> String {
        format!("{}#{}", self.scene_id, self.window_index)
    }

    pub fn last_frame(&self) -> &FrameRecord {
        self.frames.last().expect("window holds at least one frame")
    }

    pub fn last_frame_index(&self) -> usize {
        self.start + self.frames.len() - 1
    }
}

// ---------------------------------------------------------------------------
// Raw document schema

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawScene {
    scene_id: String,
    frames: Vec<RawFrame>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawFrame {
    frame_id: String,
    timestamp_us: i64,
    ego: RawEgo,
    objects: Vec<RawObject>,
    lanes: LaneGraph,
    weather: Weather,
    road_type: RoadType,
    media_refs: Vec<String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEgo {
    position: [f64; 3],
    rotation: [f64; 9],
    speed: f64,
    yaw_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawObject {
    object_id: String,
    category: ObjectCategory,
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    velocity: [f64; 2],
    #[serde(default)]
    attributes: BTreeMap<String, String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Parses and validates one scene document (JSON text).
pub fn ingest_scene(raw_scene_doc: &str) -> Result<SceneRecord, SceneError> {
    let de = &mut serde_json::Deserializer::from_str(raw_scene_doc);
    let raw: RawScene = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    build_scene(raw)
}

pub fn ingest_scene_value(doc: Value) -> Result<SceneRecord, SceneError> {
    ingest_scene(&doc.to_string())
}

fn build_scene(raw: RawScene) -> Result<SceneRecord, SceneError> {
    if raw.frames.is_empty() {
        return Err(schema("frames", "scene must contain at least one frame"));
    }
    let mut frame_ids = HashSet::new();
    let mut frames = Vec::with_capacity(raw.frames.len());
    let mut previous_ts: Option<i64> = None;
    for (i, rf) in raw.frames.into_iter().enumerate() {
        let at = |field: &str| format!("frames[{i}].{field}");
        if !frame_ids.insert(rf.frame_id.clone()) {
            return Err(schema(at("frame_id"), format!("duplicate frame_id {:?}", rf.frame_id)));
        }
        if let Some(prev) = previous_ts {
            if rf.timestamp_us <= prev {
                return Err(SceneError::Order {
                    index: i,
                    previous: prev,
                    current: rf.timestamp_us,
                });
            }
        }
        previous_ts = Some(rf.timestamp_us);

        let ego_to_world = RigidTransform::from_row_major(&rf.ego.rotation, rf.ego.position)
            .map_err(|source| SceneError::Geometry {
                path: at("ego.rotation"),
                source,
            })?;
        if !(rf.ego.speed >= 0.0) || !rf.ego.speed.is_finite() {
            return Err(schema(at("ego.speed"), "speed must be finite and >= 0"));
        }
        if !rf.ego.yaw_rate.is_finite() {
            return Err(schema(at("ego.yaw_rate"), "yaw_rate must be finite"));
        }
        let world_to_ego = ego_to_world.inverse();
        let ego = EgoState {
            pose: world_to_ego,
            speed: rf.ego.speed,
            yaw_rate: rf.ego.yaw_rate,
            timestamp_us: rf.timestamp_us,
        };
        let planar = ego.planar_pose();

        let mut object_ids = HashSet::new();
        let mut objects = Vec::with_capacity(rf.objects.len());
        for (j, ro) in rf.objects.into_iter().enumerate() {
            let at_obj = |field: &str| format!("frames[{i}].objects[{j}].{field}");
            if !object_ids.insert(ro.object_id.clone()) {
                return Err(schema(
                    at_obj("object_id"),
                    format!("duplicate object_id {:?}", ro.object_id),
                ));
            }
            if ro.size.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                return Err(schema(at_obj("size"), "size components must be > 0"));
            }
            if ro.center.iter().chain(ro.velocity.iter()).chain([ro.yaw].iter()).any(|v| !v.is_finite()) {
                return Err(schema(at_obj("center"), "non-finite object state"));
            }
            let center = world_to_ego.apply(&Vector3::from(ro.center));
            let heading = world_to_ego.rotate(&Vector3::new(ro.yaw.cos(), ro.yaw.sin(), 0.0));
            let velocity = world_to_ego.rotate(&Vector3::new(ro.velocity[0], ro.velocity[1], 0.0));
            objects.push(ObjectAnnotation {
                object_id: ro.object_id,
                category: ro.category,
                center: [center.x, center.y, center.z],
                size: ro.size,
                yaw: heading.y.atan2(heading.x),
                velocity: [velocity.x, velocity.y],
                attributes: ro.attributes,
                extra: ro.extra,
            });
        }

        let mut lanes = rf.lanes;
        if !(lanes.lane_width > 0.0) || !lanes.lane_width.is_finite() {
            return Err(schema(at("lanes.lane_width"), "lane_width must be > 0"));
        }
        for (k, poly) in lanes.drivable_polygons.iter_mut().enumerate() {
            validate_polygon(poly).map_err(|source| SceneError::Geometry {
                path: format!("frames[{i}].lanes.drivable_polygons[{k}]"),
                source,
            })?;
            for p in poly.iter_mut() {
                *p = planar.to_local(*p);
            }
        }
        for lane in lanes.cross_lanes.iter_mut() {
            for p in lane.polyline.iter_mut() {
                *p = planar.to_local(*p);
            }
        }

        frames.push(FrameRecord {
            frame_id: rf.frame_id,
            ego,
            objects,
            lanes,
            weather: rf.weather,
            road_type: rf.road_type,
            media_refs: rf.media_refs,
            extra: rf.extra,
        });
    }
    Ok(SceneRecord {
        scene_id: raw.scene_id,
        frames,
        extra: raw.extra,
    })
}

impl SceneRecord {
    /// Re-expresses the record in the world-frame input schema.
    pub fn to_raw_document(&self) -> Value {
        let frames: Vec<RawFrame> = self
            .frames
            .iter()
            .map(|f| {
                let to_world = f.ego.ego_to_world();
                let planar = f.ego.planar_pose();
                let objects = f
                    .objects
                    .iter()
                    .map(|o| {
                        let c = to_world.apply(&Vector3::from(o.center));
                        let h = to_world.rotate(&Vector3::new(o.yaw.cos(), o.yaw.sin(), 0.0));
                        let v = to_world.rotate(&Vector3::new(o.velocity[0], o.velocity[1], 0.0));
                        RawObject {
                            object_id: o.object_id.clone(),
                            category: o.category,
                            center: [c.x, c.y, c.z],
                            size: o.size,
                            yaw: h.y.atan2(h.x),
                            velocity: [v.x, v.y],
                            attributes: o.attributes.clone(),
                            extra: o.extra.clone(),
                        }
                    })
                    .collect();
                let mut lanes = f.lanes.clone();
                for poly in lanes.drivable_polygons.iter_mut() {
                    for p in poly.iter_mut() {
                        *p = planar.to_world(*p);
                    }
                }
                for lane in lanes.cross_lanes.iter_mut() {
                    for p in lane.polyline.iter_mut() {
                        *p = planar.to_world(*p);
                    }
                }
                RawFrame {
                    frame_id: f.frame_id.clone(),
                    timestamp_us: f.ego.timestamp_us,
                    ego: RawEgo {
                        position: [to_world.translation.x, to_world.translation.y, to_world.translation.z],
                        rotation: to_world.rotation_row_major(),
                        speed: f.ego.speed,
                        yaw_rate: f.ego.yaw_rate,
                    },
                    objects,
                    lanes,
                    weather: f.weather,
                    road_type: f.road_type,
                    media_refs: f.media_refs.clone(),
                    extra: f.extra.clone(),
                }
            })
            .collect();
        serde_json::to_value(RawScene {
            scene_id: self.scene_id.clone(),
            frames,
            extra: self.extra.clone(),
        })
        .expect("scene serializes")
    }
}

// ---------------------------------------------------------------------------
// Database (JSONL, ego frame)

#[derive(Debug, Serialize, Deserialize)]
struct DatabaseLine {
    schema_version: u32,
    scene_id: String,
    frame_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene_extra: Option<Map<String, Value>>,
    frame: FrameRecord,
}

/// One JSONL line per frame, ego-frame coordinates.
pub fn write_database<W: Write>(scene: &SceneRecord, mut out: W) -> Result<(), SceneError> {
    for (i, frame) in scene.frames.iter().enumerate() {
        let line = DatabaseLine {
            schema_version: DATABASE_SCHEMA_VERSION,
            scene_id: scene.scene_id.clone(),
            frame_index: i,
            scene_extra: (i == 0 && !scene.extra.is_empty()).then(|| scene.extra.clone()),
            frame: frame.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| SceneError::Database {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_database<R: BufRead>(input: R) -> Result<SceneRecord, SceneError> {
    let mut scene_id: Option<String> = None;
    let mut extra = Map::new();
    let mut frames = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| SceneError::Database { line: n + 1, message };
        let parsed: DatabaseLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if parsed.schema_version != DATABASE_SCHEMA_VERSION {
            return Err(err(format!("unsupported schema_version {}", parsed.schema_version)));
        }
        match &scene_id {
            None => scene_id = Some(parsed.scene_id.clone()),
            Some(id) if *id != parsed.scene_id => {
                return Err(err(format!("mixed scene ids {id:?} and {:?}", parsed.scene_id)))
            }
            _ => {}
        }
        if parsed.frame_index != frames.len() {
            return Err(err(format!("expected frame_index {}, got {}", frames.len(), parsed.frame_index)));
        }
        if let Some(prev) = frames.last().map(|f: &FrameRecord| f.ego.timestamp_us) {
            if parsed.frame.ego.timestamp_us <= prev {
                return Err(SceneError::Order {
                    index: parsed.frame_index,
                    previous: prev,
                    current: parsed.frame.ego.timestamp_us,
                });
            }
        }
        if let Some(e) = parsed.scene_extra {
            extra = e;
        }
        frames.push(parsed.frame);
    }
    let scene_id = scene_id.ok_or_else(|| SceneError::Database {
        line: 0,
        message: "empty database file".into(),
    })?;
    Ok(SceneRecord {
        scene_id,
        frames,
        extra,
    })
}

// ---------------------------------------------------------------------------
// Windows and per-frame queries

/// Window start indices: 0, stride, 2·stride, … plus one end-anchored window
/// when the regular starts leave trailing frames uncovered.
pub fn window_starts(frame_count: usize, window_len: usize, stride: usize) -> Result<Vec<usize>, SceneError> {
    if window_len == 0 || stride == 0 {
        return Err(SceneError::InvalidWindow(format!(
            "window_len={window_len}, stride={stride}; both must be >= 1"
        )));
    }
    if frame_count < window_len {
        return Err(SceneError::TooShort {
            frames: frame_count,
            window_len,
        });
    }
    let last_start = frame_count - window_len;
    let mut starts: Vec<usize> = (0..=last_start).step_by(stride).collect();
    if *starts.last().expect("start 0 always present") < last_start {
        starts.push(last_start);
    }
    Ok(starts)
}

pub fn partition_windows(
    scene: &SceneRecord,
    window_len: usize,
    stride: usize,
) -> Result<Vec<SceneWindow>, SceneError> {
    let starts = window_starts(scene.frames.len(), window_len, stride)?;
    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(window_index, start)| SceneWindow {
            scene_id: scene.scene_id.clone(),
            window_index,
            start,
            stride,
            frames: scene.frames[start..start + window_len].to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximitySummary {
    pub count: usize,
    pub min_distance: Option<f64>,
}

/// Count of objects of `category` and the smallest ego-frame center norm.
pub fn min_distances(frame: &FrameRecord, category: ObjectCategory) -> ProximitySummary {
    let mut count = 0;
    let mut min_distance: Option<f64> = None;
    for o in frame.objects.iter().filter(|o| o.category == category) {
        count += 1;
        let d = o.distance();
        min_distance = Some(min_distance.map_or(d, |m| m.min(d)));
    }
    ProximitySummary {
        count,
        min_distance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ident() -> Vec<f64> {
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    }

    fn frame(id: &str, ts: i64, pos: [f64; 3], objects: Value) -> Value {
        json!({
            "frame_id": id,
            "timestamp_us": ts,
            "ego": {"position": pos, "rotation": ident(), "speed": 3.0, "yaw_rate": 0.0},
            "objects": objects,
            "lanes": {"same_direction_lanes": 2, "opposite_direction_lanes": 1, "lane_width": 3.5,
                      "drivable_polygons": [[[-50.0, -10.0], [50.0, -10.0], [50.0, 10.0], [-50.0, 10.0]]]},
            "weather": "clear",
            "road_type": "city",
            "media_refs": ["s3://bucket/cam_front.jpg"]
        })
    }

    fn object(id: &str, category: &str, center: [f64; 3]) -> Value {
        json!({"object_id": id, "category": category, "center": center,
               "size": [4.0, 2.0, 1.5], "yaw": 0.0, "velocity": [0.0, 0.0]})
    }

    #[test]
    fn single_empty_frame() {
        let doc = json!({"scene_id": "s", "frames": [frame("f0", 0, [0.0; 3], json!([]))]});
        let scene = ingest_scene_value(doc).unwrap();
        assert_eq!(scene.frames.len(), 1);
        assert!(scene.frames[0].objects.is_empty());
    }

    #[test]
    fn object_at_ego_position_maps_to_origin() {
        let doc = json!({"scene_id": "s", "frames": [
            frame("f0", 0, [7.0, -3.0, 0.5], json!([object("a", "vehicle", [7.0, -3.0, 0.5])]))]});
        let scene = ingest_scene_value(doc).unwrap();
        assert_eq!(scene.frames[0].objects[0].center, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn translated_ego_shifts_object() {
        let doc = json!({"scene_id": "s", "frames": [
            frame("f0", 0, [4.0, 0.0, 0.0], json!([object("a", "vehicle", [10.0, 0.0, 0.0])]))]});
        let scene = ingest_scene_value(doc).unwrap();
        let c = scene.frames[0].objects[0].center;
        assert!((c[0] - 6.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
    }

    #[test]
    fn rotated_ego_puts_world_x_on_the_right() {
        // ego facing +y in world: a world point further along +x is on ego's right
        let mut f = frame("f0", 0, [0.0; 3], json!([object("a", "vehicle", [5.0, 0.0, 0.0])]));
        f["ego"]["rotation"] = json!([0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let scene = ingest_scene_value(json!({"scene_id": "s", "frames": [f]})).unwrap();
        let c = scene.frames[0].objects[0].center;
        assert!(c[0].abs() < 1e-12 && (c[1] + 5.0).abs() < 1e-12);
        assert!((scene.frames[0].objects[0].yaw + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn schema_error_carries_path() {
        let mut f = frame("f0", 0, [0.0; 3], json!([object("a", "truck", [1.0, 0.0, 0.0])]));
        f["weather"] = json!("clear");
        let err = ingest_scene_value(json!({"scene_id": "s", "frames": [f]})).unwrap_err();
        match err {
            SceneError::Schema { path, .. } => assert_eq!(path, "frames[0].objects[0].category"),
            other => panic!("unexpected {other:?}"),
        }
        let mut f = frame("f0", 0, [0.0; 3], json!([]));
        f["ego"].as_object_mut().unwrap().remove("speed");
        let err = ingest_scene_value(json!({"scene_id": "s", "frames": [f]})).unwrap_err();
        assert!(matches!(err, SceneError::Schema { ref path, .. } if path == "frames[0].ego"), "{err}");
    }

    #[test]
    fn zero_frames_rejected() {
        let err = ingest_scene_value(json!({"scene_id": "s", "frames": []})).unwrap_err();
        assert!(matches!(err, SceneError::Schema { .. }));
    }

    #[test]
    fn order_error_on_equal_timestamps() {
        let doc = json!({"scene_id": "s", "frames": [
            frame("f0", 10, [0.0; 3], json!([])), frame("f1", 10, [0.0; 3], json!([]))]});
        assert!(matches!(
            ingest_scene_value(doc).unwrap_err(),
            SceneError::Order { index: 1, .. }
        ));
    }

    #[test]
    fn geometry_error_on_skewed_rotation() {
        let mut f = frame("f0", 0, [0.0; 3], json!([]));
        f["ego"]["rotation"] = json!([1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let err = ingest_scene_value(json!({"scene_id": "s", "frames": [f]})).unwrap_err();
        assert!(matches!(err, SceneError::Geometry { .. }));
    }

    #[test]
    fn nonpositive_size_and_duplicate_ids() {
        let mut o = object("a", "vehicle", [1.0, 0.0, 0.0]);
        o["size"] = json!([4.0, 0.0, 1.0]);
        let err = ingest_scene_value(json!({"scene_id": "s", "frames": [frame("f0", 0, [0.0; 3], json!([o]))]}))
            .unwrap_err();
        assert!(matches!(err, SceneError::Schema { ref path, .. } if path.ends_with("size")));

        let objs = json!([object("a", "vehicle", [1.0, 0.0, 0.0]), object("a", "vehicle", [2.0, 0.0, 0.0])]);
        let err = ingest_scene_value(json!({"scene_id": "s", "frames": [frame("f0", 0, [0.0; 3], objs)]}))
            .unwrap_err();
        assert!(matches!(err, SceneError::Schema { ref path, .. } if path.ends_with("object_id")));
    }

    #[test]
    fn degenerate_polygon_rejected() {
        let mut f = frame("f0", 0, [0.0; 3], json!([]));
        f["lanes"]["drivable_polygons"] = json!([[[0.0, 0.0], [1.0, 1.0]]]);
        let err = ingest_scene_value(json!({"scene_id": "s", "frames": [f]})).unwrap_err();
        assert!(matches!(err, SceneError::Geometry { .. }));
    }

    #[test]
    fn unknown_keys_preserved() {
        let mut f = frame("f0", 0, [0.0; 3], json!([]));
        f["sensor_rig"] = json!("rig-7");
        let doc = json!({"scene_id": "s", "frames": [f], "source": "bench"});
        let scene = ingest_scene_value(doc).unwrap();
        assert_eq!(scene.extra["source"], json!("bench"));
        assert_eq!(scene.frames[0].extra["sensor_rig"], json!("rig-7"));
        let raw = scene.to_raw_document();
        assert_eq!(raw["frames"][0]["sensor_rig"], json!("rig-7"));
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_starts(5, 5, 2).unwrap(), vec![0]);
        assert_eq!(window_starts(9, 5, 2).unwrap(), vec![0, 2, 4]);
        assert_eq!(window_starts(10, 5, 4).unwrap(), vec![0, 4, 5]);
        assert!(matches!(window_starts(4, 5, 2), Err(SceneError::TooShort { frames: 4, window_len: 5 })));
        assert!(matches!(window_starts(4, 0, 2), Err(SceneError::InvalidWindow(_))));
    }

    #[test]
    fn min_distance_examples() {
        let objs = json!([object("a", "vehicle", [3.0, 4.0, 0.0]), object("b", "vehicle", [6.0, 8.0, 0.0])]);
        let scene = ingest_scene_value(json!({"scene_id": "s", "frames": [frame("f0", 0, [0.0; 3], objs)]})).unwrap();
        let f = &scene.frames[0];
        assert_eq!(
            min_distances(f, ObjectCategory::Pedestrian),
            ProximitySummary { count: 0, min_distance: None }
        );
        let v = min_distances(f, ObjectCategory::Vehicle);
        assert_eq!(v.count, 2);
        assert!((v.min_distance.unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn database_round_trip_is_exact() {
        let mut f0 = frame("f0", 0, [1.25, -0.3, 0.0], json!([object("a", "pedestrian", [3.3, 1.7, 0.1])]));
        f0["ego"]["rotation"] = json!([0.8, -0.6, 0.0, 0.6, 0.8, 0.0, 0.0, 0.0, 1.0]);
        let doc = json!({"scene_id": "s", "meta": 1, "frames": [f0, frame("f1", 500_000, [2.0, 0.0, 0.0], json!([]))]});
        let scene = ingest_scene_value(doc).unwrap();
        let mut buf = Vec::new();
        write_database(&scene, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|l| l.contains("\"schema_version\":1")));
        let back = read_database(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, scene);
    }
}
