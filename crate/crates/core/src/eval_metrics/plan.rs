use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::action_labeler::future_trajectory;
use crate::geometry::{point_in_polygon, validate_polygon, wrap_angle, OrientedBox2D};
use crate::scene_store::SceneRecord;

use super::{HorizonValues, MetricError};

pub const DEFAULT_GRID: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
pub const HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];
const GRID_TOL: f64 = 1e-6;
/// Largest gap between a grid time and the object frame used for it.
pub const FRAME_MATCH_S: f64 = 0.25;

/// Waypoints as `[t, x, y]` in the ego frame at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPrediction {
    pub sample_id: String,
    pub waypoints: Vec<[f64; 3]>,
}

impl PlanPrediction {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite(self.sample_id.clone()));
        }
        if self.waypoints.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(MetricError::Grid(format!("{}: times not increasing", self.sample_id)));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.waypoints.iter().map(|w| w[0]).collect()
    }

    fn at(&self, t: f64) -> Option<[f64; 2]> {
        self.waypoints.iter().find(|w| (w[0] - t).abs() < GRID_TOL).map(|w| [w[1], w[2]])
    }
}

/// Object boxes at one time offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedBoxes {
    pub t: f64,
    pub boxes: Vec<OrientedBox2D>,
}

/// Logged future of one sample: ego waypoints, object boxes per time and the
/// drivable area, all in the ego frame at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanGroundTruth {
    pub sample_id: String,
    pub waypoints: Vec<[f64; 3]>,
    pub frames: Vec<TimedBoxes>,
    pub drivable_polygons: Vec<Vec<[f64; 2]>>,
}

impl PlanGroundTruth {
    pub fn trajectory(&self) -> PlanPrediction {
        PlanPrediction {
            sample_id: self.sample_id.clone(),
            waypoints: self.waypoints.clone(),
        }
    }

    fn boxes_near(&self, t: f64) -> &[OrientedBox2D] {
        self.frames
            .iter()
            .filter(|f| (f.t - t).abs() <= FRAME_MATCH_S + 1e-9)
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .map(|f| f.boxes.as_slice())
            .unwrap_or(&[])
    }
}

fn check_grid(pred: &PlanPrediction, gt: &PlanPrediction) -> Result<(), MetricError> {
    let (a, b) = (pred.times(), gt.times());
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| (x - y).abs() > GRID_TOL) {
        return Err(MetricError::Grid(format!("{}: prediction and ground-truth grids differ", pred.sample_id)));
    }
    for h in HORIZONS {
        if pred.at(h).is_none() {
            return Err(MetricError::Grid(format!("{}: no waypoint at {h} s", pred.sample_id)));
        }
    }
    Ok(())
}

/// Displacement at 1, 2 and 3 s.
pub fn l2_at_horizons(pred: &PlanPrediction, gt: &PlanPrediction) -> Result<HorizonValues, MetricError> {
    pred.validate()?;
    gt.validate()?;
    check_grid(pred, gt)?;
    let d = |h: f64| {
        let (p, g) = (pred.at(h).expect("checked"), gt.at(h).expect("checked"));
        (p[0] - g[0]).hypot(p[1] - g[1])
    };
    Ok(HorizonValues::from_three(d(1.0), d(2.0), d(3.0)))
}

fn pair_up<'a, G>(
    preds: &'a [PlanPrediction],
    gts: &'a [G],
    id: impl Fn(&G) -> &str,
) -> Result<Vec<(&'a PlanPrediction, &'a G)>, MetricError> {
    if preds.is_empty() {
        return Err(MetricError::EmptyBatch);
    }
    let index: HashMap<&str, &G> = gts.iter().map(|g| (id(g), g)).collect();
    preds
        .iter()
        .map(|p| {
            index
                .get(p.sample_id.as_str())
                .map(|g| (p, *g))
                .ok_or_else(|| MetricError::MissingSample(p.sample_id.clone()))
        })
        .collect()
}

/// Mean L2 per horizon over a batch matched by sample id.
pub fn l2_batch(preds: &[PlanPrediction], gts: &[PlanGroundTruth]) -> Result<HorizonValues, MetricError> {
    let pairs = pair_up(preds, gts, |g| g.sample_id.as_str())?;
    let rows = pairs
        .iter()
        .map(|(p, g)| l2_at_horizons(p, &g.trajectory()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HorizonValues::mean(&rows))
}

/// Ego footprint, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoDims {
    pub length: f64,
    pub width: f64,
}

impl Default for EgoDims {
    fn default() -> Self {
        Self { length: 4.6, width: 1.9 }
    }
}

/// Ego boxes along the prediction; heading from the backward difference
/// (from the origin for the first point), kept when the ego does not move.
pub fn ego_boxes(pred: &PlanPrediction, dims: EgoDims) -> Vec<(f64, OrientedBox2D)> {
    let mut prev = [0.0, 0.0];
    let mut heading = 0.0;
    pred.waypoints
        .iter()
        .map(|w| {
            let (dx, dy) = (w[1] - prev[0], w[2] - prev[1]);
            if dx.hypot(dy) > 1e-9 {
                heading = dy.atan2(dx);
            }
            prev = [w[1], w[2]];
            (w[0], OrientedBox2D::new([w[1], w[2]], [dims.length / 2.0, dims.width / 2.0], heading))
        })
        .collect()
}

/// Earliest grid time at which the sample collides, if any.
fn first_collision(pred: &PlanPrediction, gt: &PlanGroundTruth, dims: EgoDims) -> Option<f64> {
    ego_boxes(pred, dims)
        .into_iter()
        .find(|(t, ego)| gt.boxes_near(*t).iter().any(|b| ego.overlaps(b)))
        .map(|(t, _)| t)
}

fn first_infringement(pred: &PlanPrediction, polygons: &[Vec<[f64; 2]>]) -> Option<f64> {
    pred.waypoints
        .iter()
        .find(|w| !polygons.iter().any(|poly| point_in_polygon([w[1], w[2]], poly)))
        .map(|w| w[0])
}

fn rates(firsts: &[Option<f64>]) -> HorizonValues {
    let n = firsts.len() as f64;
    let rate = |h: f64| 100.0 * firsts.iter().filter(|f| f.is_some_and(|t| t <= h + GRID_TOL)).count() as f64 / n;
    HorizonValues::from_three(rate(1.0), rate(2.0), rate(3.0))
}

/// Percentage of samples whose ego box overlaps an object box at any grid
/// time up to each horizon.
pub fn collision_rate(
    preds: &[PlanPrediction],
    gts: &[PlanGroundTruth],
    dims: EgoDims,
) -> Result<HorizonValues, MetricError> {
    let pairs = pair_up(preds, gts, |g| g.sample_id.as_str())?;
    let mut firsts = Vec::with_capacity(pairs.len());
    for (p, g) in pairs {
        p.validate()?;
        check_grid(p, &g.trajectory())?;
        firsts.push(first_collision(p, g, dims));
    }
    Ok(rates(&firsts))
}

/// Percentage of samples with a waypoint outside every drivable polygon at
/// any grid time up to each horizon. Samples without polygons are skipped;
/// the second value is how many.
pub fn intersection_rate(
    preds: &[PlanPrediction],
    gts: &[PlanGroundTruth],
) -> Result<(HorizonValues, usize), MetricError> {
    let pairs = pair_up(preds, gts, |g| g.sample_id.as_str())?;
    let mut firsts = Vec::new();
    let mut skipped = 0;
    for (p, g) in pairs {
        p.validate()?;
        if g.drivable_polygons.is_empty() {
            skipped += 1;
            continue;
        }
        for poly in &g.drivable_polygons {
            validate_polygon(poly).map_err(|e| MetricError::DegenerateGeometry(format!("{}: {e}", g.sample_id)))?;
        }
        firsts.push(first_infringement(p, &g.drivable_polygons));
    }
    if firsts.is_empty() {
        return Err(MetricError::EmptyBatch);
    }
    Ok((rates(&firsts), skipped))
}

fn lerp_position(traj: &[(f64, [f64; 2])], t: f64) -> Option<[f64; 2]> {
    let i = traj.iter().position(|(ti, _)| *ti >= t - 1e-9)?;
    let (t1, p1) = traj[i];
    if (t1 - t).abs() <= 1e-9 || i == 0 {
        return ((t1 - t).abs() <= 1e-9).then_some(p1);
    }
    let (t0, p0) = traj[i - 1];
    let a = (t - t0) / (t1 - t0);
    Some([p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])])
}

/// Plan ground truth for one frame, or `None` when the logged future does
/// not reach the last grid time.
pub fn plan_ground_truth(scene: &SceneRecord, index: usize, grid: &[f64]) -> Option<PlanGroundTruth> {
    let horizon = *grid.last()?;
    let traj = future_trajectory(scene, index, horizon + FRAME_MATCH_S)?;
    let mut pts: Vec<(f64, [f64; 2])> = vec![(0.0, [0.0, 0.0])];
    pts.extend(traj.waypoints.iter().map(|w| (w.t, w.position)));
    let waypoints = grid
        .iter()
        .map(|&t| lerp_position(&pts, t).map(|p| [t, p[0], p[1]]))
        .collect::<Option<Vec<_>>>()?;

    let origin = &scene.frames[index];
    let here = origin.ego.planar_pose();
    let t0 = origin.ego.timestamp_us;
    let frames = grid
        .iter()
        .filter_map(|&t| {
            let f = scene.frames[index..]
                .iter()
                .map(|f| (f, (f.ego.timestamp_us - t0) as f64 * 1e-6))
                .filter(|(_, ft)| (ft - t).abs() <= FRAME_MATCH_S + 1e-9)
                .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?;
            let there = f.0.ego.planar_pose();
            let boxes = f
                .0
                .objects
                .iter()
                .map(|o| {
                    let world = there.to_world([o.center[0], o.center[1]]);
                    OrientedBox2D::new(
                        here.to_local(world),
                        [o.size[0] / 2.0, o.size[1] / 2.0],
                        wrap_angle(o.yaw + there.yaw - here.yaw),
                    )
                })
                .collect();
            Some(TimedBoxes { t, boxes })
        })
        .collect();
    Some(PlanGroundTruth {
        sample_id: format!("{}#{}", scene.scene_id, origin.frame_id),
        waypoints,
        frames,
        drivable_polygons: origin.lanes.drivable_polygons.clone(),
    })
}
