//! Discrete action labels from ego trajectories: current speed state,
//! future longitudinal action, maneuver and high-level command.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Pose2};
use crate::scene_store::{LaneGraph, SceneRecord};

/// Shortest horizon the longitudinal and maneuver rules accept.
pub const MIN_HORIZON_S: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("invalid labeler config: {0}")]
    Config(String),
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedState {
    Crawling,
    ModerateSpeed,
    MovingFast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Longitudinal {
    Accelerate,
    Decelerate,
    MaintainSpeed,
    VehicleStarting,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    GoStraight,
    LaneChangeLeft,
    LaneChangeRight,
    TurnLeft,
    TurnRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Forward,
    Left,
    Right,
}

impl SpeedState {
    pub const ALL: [SpeedState; 3] = [SpeedState::Crawling, SpeedState::ModerateSpeed, SpeedState::MovingFast];

    pub fn as_str(self) -> &'static str {
        match self {
            SpeedState::Crawling => "Crawling",
            SpeedState::ModerateSpeed => "ModerateSpeed",
            SpeedState::MovingFast => "MovingFast",
        }
    }
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 5] = [
        Longitudinal::Accelerate,
        Longitudinal::Decelerate,
        Longitudinal::MaintainSpeed,
        Longitudinal::VehicleStarting,
        Longitudinal::Stop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Longitudinal::Accelerate => "Accelerate",
            Longitudinal::Decelerate => "Decelerate",
            Longitudinal::MaintainSpeed => "MaintainSpeed",
            Longitudinal::VehicleStarting => "VehicleStarting",
            Longitudinal::Stop => "Stop",
        }
    }
}

impl Maneuver {
    pub const ALL: [Maneuver; 5] = [
        Maneuver::GoStraight,
        Maneuver::LaneChangeLeft,
        Maneuver::LaneChangeRight,
        Maneuver::TurnLeft,
        Maneuver::TurnRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Maneuver::GoStraight => "GoStraight",
            Maneuver::LaneChangeLeft => "LaneChangeLeft",
            Maneuver::LaneChangeRight => "LaneChangeRight",
            Maneuver::TurnLeft => "TurnLeft",
            Maneuver::TurnRight => "TurnRight",
        }
    }

    pub fn mirrored(self) -> Maneuver {
        match self {
            Maneuver::GoStraight => Maneuver::GoStraight,
            Maneuver::LaneChangeLeft => Maneuver::LaneChangeRight,
            Maneuver::LaneChangeRight => Maneuver::LaneChangeLeft,
            Maneuver::TurnLeft => Maneuver::TurnRight,
            Maneuver::TurnRight => Maneuver::TurnLeft,
        }
    }
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Forward => "Forward",
            Command::Left => "Left",
            Command::Right => "Right",
        }
    }
}

impl From<Maneuver> for Command {
    fn from(m: Maneuver) -> Self {
        match m {
            Maneuver::TurnLeft | Maneuver::LaneChangeLeft => Command::Left,
            Maneuver::TurnRight | Maneuver::LaneChangeRight => Command::Right,
            Maneuver::GoStraight => Command::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionLabel {
    pub speed_state: SpeedState,
    pub longitudinal: Longitudinal,
    pub maneuver: Maneuver,
    pub command: Command,
}

/// `[labeler]` config block. Speeds in m/s, turn threshold in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelThresholds {
    pub crawl_speed: f64,
    pub fast_speed: f64,
    pub stop_speed: f64,
    pub delta_speed: f64,
    pub turn_deg: f64,
    /// Future horizon used when cutting ego trajectories out of a scene.
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
}

fn default_horizon() -> f64 {
    3.0
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self {
            crawl_speed: 2.0,
            fast_speed: 8.0,
            stop_speed: 0.5,
            delta_speed: 1.0,
            turn_deg: 45.0,
            horizon_s: default_horizon(),
        }
    }
}

impl LabelThresholds {
    pub fn validate(&self) -> Result<(), LabelError> {
        let all = [
            self.crawl_speed,
            self.fast_speed,
            self.stop_speed,
            self.delta_speed,
            self.turn_deg,
            self.horizon_s,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LabelError::Config("thresholds must be finite and >= 0".into()));
        }
        if self.crawl_speed >= self.fast_speed {
            return Err(LabelError::Config(format!(
                "crawl_speed ({}) must be below fast_speed ({})",
                self.crawl_speed, self.fast_speed
            )));
        }
        if self.turn_deg >= 180.0 {
            return Err(LabelError::Config("turn_deg must be below 180".into()));
        }
        if self.horizon_s < MIN_HORIZON_S {
            return Err(LabelError::Config(format!("horizon_s must be >= {MIN_HORIZON_S}")));
        }
        Ok(())
    }

    fn turn_rad(&self) -> f64 {
        self.turn_deg.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Seconds from now.
    pub t: f64,
    /// Ego frame at t = 0.
    pub position: [f64; 2],
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub waypoints: Vec<Waypoint>,
}

impl TrajectorySample {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self, LabelError> {
        let t = Self { waypoints };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        let w = &self.waypoints;
        if w.len() < 2 {
            return Err(LabelError::DegenerateTrajectory(format!("{} waypoints, need >= 2", w.len())));
        }
        if w[0].t < 0.0 {
            return Err(LabelError::DegenerateTrajectory("first waypoint has t < 0".into()));
        }
        if w.windows(2).any(|p| !(p[1].t > p[0].t)) {
            return Err(LabelError::DegenerateTrajectory("waypoint times must strictly increase".into()));
        }
        if w.iter().any(|p| !p.t.is_finite() || !p.heading.is_finite() || p.position.iter().any(|v| !v.is_finite())) {
            return Err(LabelError::DegenerateTrajectory("non-finite waypoint".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.t)
    }

    fn check_horizon(&self) -> Result<(), LabelError> {
        self.validate()?;
        if self.horizon() < MIN_HORIZON_S {
            return Err(LabelError::DegenerateTrajectory(format!(
                "horizon {:.3} s is shorter than {MIN_HORIZON_S} s",
                self.horizon()
            )));
        }
        Ok(())
    }

    /// Time-weighted mean of the piecewise-constant finite-difference speed
    /// over the last third of the horizon.
    pub fn final_third_speed(&self) -> f64 {
        let h = self.horizon();
        let from = 2.0 * h / 3.0;
        let mut covered = 0.0;
        let mut distance = 0.0;
        for seg in self.waypoints.windows(2) {
            let (a, b) = (&seg[0], &seg[1]);
            let lo = a.t.max(from);
            let hi = b.t;
            if hi <= lo {
                continue;
            }
            let speed = dist(a.position, b.position) / (b.t - a.t);
            distance += speed * (hi - lo);
            covered += hi - lo;
        }
        if covered > 0.0 {
            distance / covered
        } else {
            0.0
        }
    }

    /// Reflection about the x-axis.
    pub fn mirrored(&self) -> TrajectorySample {
        TrajectorySample {
            waypoints: self
                .waypoints
                .iter()
                .map(|w| Waypoint {
                    t: w.t,
                    position: [w.position[0], -w.position[1]],
                    heading: -w.heading,
                })
                .collect(),
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Boundaries belong to the faster class.
pub fn classify_speed_state(current_speed: f64, thresholds: &LabelThresholds) -> Result<SpeedState, LabelError> {
    thresholds.validate()?;
    Ok(if current_speed < thresholds.crawl_speed {
        SpeedState::Crawling
    } else if current_speed < thresholds.fast_speed {
        SpeedState::ModerateSpeed
    } else {
        SpeedState::MovingFast
    })
}

/// Precedence: Stop, VehicleStarting, Accelerate, Decelerate, MaintainSpeed.
pub fn label_longitudinal(
    current_speed: f64,
    traj: &TrajectorySample,
    thresholds: &LabelThresholds,
) -> Result<Longitudinal, LabelError> {
    thresholds.validate()?;
    traj.check_horizon()?;
    let v_end = traj.final_third_speed();
    Ok(if v_end < thresholds.stop_speed {
        Longitudinal::Stop
    } else if current_speed < thresholds.crawl_speed && v_end >= thresholds.crawl_speed {
        Longitudinal::VehicleStarting
    } else if v_end - current_speed > thresholds.delta_speed {
        Longitudinal::Accelerate
    } else if current_speed - v_end > thresholds.delta_speed {
        Longitudinal::Decelerate
    } else {
        Longitudinal::MaintainSpeed
    })
}

/// Net heading change and signed lateral offset (+ left) of the final
/// waypoint from the line through the first waypoint along its heading.
pub fn heading_and_offset(traj: &TrajectorySample) -> (f64, f64) {
    let first = &traj.waypoints[0];
    let last = traj.waypoints.last().expect("validated");
    let dpsi = wrap_angle(last.heading - first.heading);
    let (s, c) = first.heading.sin_cos();
    let dx = last.position[0] - first.position[0];
    let dy = last.position[1] - first.position[1];
    (dpsi, c * dy - s * dx)
}

pub fn label_maneuver(
    traj: &TrajectorySample,
    lanes: &LaneGraph,
    thresholds: &LabelThresholds,
) -> Result<Maneuver, LabelError> {
    thresholds.validate()?;
    traj.check_horizon()?;
    let (dpsi, lateral) = heading_and_offset(traj);
    let turn = thresholds.turn_rad();
    Ok(if dpsi.abs() > turn {
        if dpsi > 0.0 {
            Maneuver::TurnLeft
        } else {
            Maneuver::TurnRight
        }
    } else if lateral.abs() > lanes.lane_width / 2.0 {
        if lateral > 0.0 {
            Maneuver::LaneChangeLeft
        } else {
            Maneuver::LaneChangeRight
        }
    } else {
        Maneuver::GoStraight
    })
}

/// The command follows the side of the maneuver.
pub fn derive_command(
    traj: &TrajectorySample,
    lanes: &LaneGraph,
    thresholds: &LabelThresholds,
) -> Result<Command, LabelError> {
    label_maneuver(traj, lanes, thresholds).map(Command::from)
}

pub fn label_action(
    current_speed: f64,
    traj: &TrajectorySample,
    lanes: &LaneGraph,
    thresholds: &LabelThresholds,
) -> Result<ActionLabel, LabelError> {
    let speed_state = classify_speed_state(current_speed, thresholds)?;
    let longitudinal = label_longitudinal(current_speed, traj, thresholds)?;
    let maneuver = label_maneuver(traj, lanes, thresholds)?;
    Ok(ActionLabel {
        speed_state,
        longitudinal,
        maneuver,
        command: maneuver.into(),
    })
}

/// Ego's future positions from frame `index`, expressed in that frame's ego
/// coordinates, up to `horizon_s`. `None` when fewer than two future frames
/// exist.
pub fn future_trajectory(scene: &SceneRecord, index: usize, horizon_s: f64) -> Option<TrajectorySample> {
    let origin = scene.frames.get(index)?;
    let here: Pose2 = origin.ego.planar_pose();
    let t0 = origin.ego.timestamp_us;
    let waypoints: Vec<Waypoint> = scene.frames[index + 1..]
        .iter()
        .map(|f| {
            let p = f.ego.planar_pose();
            Waypoint {
                t: (f.ego.timestamp_us - t0) as f64 * 1e-6,
                position: here.to_local([p.x, p.y]),
                heading: wrap_angle(p.yaw - here.yaw),
            }
        })
        .take_while(|w| w.t <= horizon_s + 1e-6)
        .collect();
    if waypoints.len() < 2 {
        return None;
    }
    Some(TrajectorySample { waypoints })
}

/// Labels every frame with at least [`MIN_HORIZON_S`] of future.
pub fn label_scene(scene: &SceneRecord, thresholds: &LabelThresholds) -> Result<Vec<(usize, ActionLabel, TrajectorySample)>, LabelError> {
    thresholds.validate()?;
    let mut out = Vec::new();
    for (i, frame) in scene.frames.iter().enumerate() {
        let Some(traj) = future_trajectory(scene, i, thresholds.horizon_s) else {
            continue;
        };
        if traj.horizon() < MIN_HORIZON_S {
            continue;
        }
        let label = label_action(frame.ego.speed, &traj, &frame.lanes, thresholds)?;
        out.push((i, label, traj));
    }
    Ok(out)
}
