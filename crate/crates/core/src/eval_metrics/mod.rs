//! Open-loop planning metrics (L2, collision rate, intersection rate) and
//! caption metrics (BLEU, ROUGE-L, CIDEr, METEOR without synonyms).

mod nlg;
mod plan;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

pub use nlg::{bleu, cider, meteor_multi, meteor_simplified, rouge_l, rouge_l_multi, CiderCorpus, BLEU_EPS, ROUGE_BETA};
pub use plan::{
    collision_rate, ego_boxes, intersection_rate, l2_at_horizons, l2_batch, plan_ground_truth, EgoDims,
    PlanGroundTruth, PlanPrediction, TimedBoxes, DEFAULT_GRID, FRAME_MATCH_S, HORIZONS,
};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("horizon grid mismatch: {0}")]
    Grid(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty candidate or reference")]
    EmptyCandidate,
    #[error("CIDEr needs at least 2 reference sets, got {0}")]
    CorpusTooSmall(usize),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("non-finite waypoint in sample {0}")]
    NonFinite(String),
    #[error("no ground truth for sample {0}")]
    MissingSample(String),
    #[error("{0}")]
    InvalidInput(String),
}

/// Values at 1, 2 and 3 s plus their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonValues {
    #[serde(rename = "1s")]
    pub h1: f64,
    #[serde(rename = "2s")]
    pub h2: f64,
    #[serde(rename = "3s")]
    pub h3: f64,
    pub avg: f64,
}

impl HorizonValues {
    pub fn from_three(h1: f64, h2: f64, h3: f64) -> Self {
        Self {
            h1,
            h2,
            h3,
            avg: (h1 + h2 + h3) / 3.0,
        }
    }

    /// Per-horizon mean over rows; the average is recomputed from the means.
    pub fn mean(rows: &[HorizonValues]) -> Self {
        let n = rows.len().max(1) as f64;
        let s = |f: fn(&HorizonValues) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self::from_three(s(|r| r.h1), s(|r| r.h2), s(|r| r.h3))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<HorizonValues>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cr: Option<HorizonValues>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ir: Option<HorizonValues>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub nlg: BTreeMap<String, f64>,
    pub samples: usize,
    pub notes: Vec<String>,
}

pub const IR_NOTE: &str = "IR counts waypoints outside every drivable polygon (drivable-area violation reading)";
pub const BLEU_NOTE: &str = "BLEU is the mean of sentence-level scores";
pub const METEOR_NOTE: &str = "METEOR-s uses exact and stem matches only, no synonym tables";

impl MetricReport {
    /// Flat CSV: `metric,1s,2s,3s,avg` rows for planning metrics and
    /// `metric,,,,value` rows for text metrics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,1s,2s,3s,avg\n");
        for (name, v) in [("L2", self.l2), ("CR", self.cr), ("IR", self.ir)] {
            if let Some(v) = v {
                out.push_str(&format!("{name},{},{},{},{}\n", v.h1, v.h2, v.h3, v.avg));
            }
        }
        for (k, v) in &self.nlg {
            out.push_str(&format!("{k},,,,{v}\n"));
        }
        out
    }

    /// Fixed-width table rounded to two decimals.
    pub fn table(&self) -> String {
        let mut out = format!("{:<8}{:>8}{:>8}{:>8}{:>8}\n", "metric", "1s", "2s", "3s", "avg");
        for (name, v) in [("L2 (m)", self.l2), ("CR (%)", self.cr), ("IR (%)", self.ir)] {
            if let Some(v) = v {
                out.push_str(&format!("{name:<8}{:>8.2}{:>8.2}{:>8.2}{:>8.2}\n", v.h1, v.h2, v.h3, v.avg));
            }
        }
        for (k, v) in &self.nlg {
            out.push_str(&format!("{k:<8}{:>32.4}\n", v));
        }
        out
    }
}

/// Planning report over a batch matched by sample id.
pub fn evaluate_plans(
    preds: &[PlanPrediction],
    gts: &[PlanGroundTruth],
    dims: EgoDims,
) -> Result<MetricReport, MetricError> {
    let l2 = l2_batch(preds, gts)?;
    let cr = collision_rate(preds, gts, dims)?;
    let mut notes = vec![IR_NOTE.to_owned()];
    let ir = match intersection_rate(preds, gts) {
        Ok((v, skipped)) => {
            if skipped > 0 {
                notes.push(format!("IR skipped {skipped} sample(s) without drivable polygons"));
            }
            Some(v)
        }
        Err(MetricError::EmptyBatch) => {
            notes.push("IR not computed: no sample has drivable polygons".into());
            None
        }
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        l2: Some(l2),
        cr: Some(cr),
        ir,
        nlg: BTreeMap::new(),
        samples: preds.len(),
        notes,
    })
}

/// Caption metrics for `(id, candidate)` pairs against references keyed by
/// id. BLEU, ROUGE-L and METEOR-s are sentence means; CIDEr uses the
/// reference sets of the evaluated ids as its corpus.
pub fn evaluate_captions(
    candidates: &[(String, String)],
    references: &HashMap<String, Vec<String>>,
) -> Result<MetricReport, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::EmptyBatch);
    }
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for (id, text) in candidates {
        let r = references.get(id).ok_or_else(|| MetricError::MissingSample(id.clone()))?;
        let c = tokenize(text);
        if c.is_empty() {
            return Err(MetricError::EmptyCandidate);
        }
        cands.push(c);
        refs.push(r.iter().map(|s| tokenize(s)).filter(|t| !t.is_empty()).collect::<Vec<_>>());
    }
    if refs.iter().any(Vec::is_empty) {
        return Err(MetricError::EmptyCandidate);
    }
    let n = cands.len() as f64;
    let mut sums = [0.0; 4];
    for (c, r) in cands.iter().zip(&refs) {
        sums[0] += bleu(c, r, 1)?;
        sums[1] += bleu(c, r, 4)?;
        sums[2] += rouge_l_multi(c, r)?;
        sums[3] += meteor_multi(c, r)?;
    }
    let mut nlg = BTreeMap::new();
    nlg.insert("BLEU-1".to_owned(), sums[0] / n);
    nlg.insert("BLEU-4".to_owned(), sums[1] / n);
    nlg.insert("ROUGE-L".to_owned(), sums[2] / n);
    nlg.insert("METEOR-s".to_owned(), sums[3] / n);
    let mut notes = vec![BLEU_NOTE.to_owned(), METEOR_NOTE.to_owned()];
    match cider(&cands, &refs) {
        Ok(scores) => {
            nlg.insert("CIDEr".to_owned(), scores.iter().sum::<f64>() / n);
        }
        Err(MetricError::CorpusTooSmall(k)) => notes.push(format!("CIDEr not computed: corpus of {k}")),
        Err(e) => return Err(e),
    }
    Ok(MetricReport {
        nlg,
        samples: candidates.len(),
        notes,
        ..Default::default()
    })
}
