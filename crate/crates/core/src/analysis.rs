//! Corpus statistics: lane layouts, cross lanes, agent proximity, action
//! co-occurrence and reasoning vocabulary.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_labeler::{ActionLabel, Longitudinal, Maneuver, SpeedState};
use crate::scene_store::{min_distances, CrossDirection, FrameRecord, ObjectCategory};
use crate::text::tokenize;

pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid stats config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io { path: path.to_path_buf(), source }
}

/// `[stats]` options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub bin_width_m: f64,
    pub max_distance_m: f64,
    /// Object counts at or above this share the last count bin.
    pub count_cap: usize,
    /// Newline-separated list replacing the shipped one.
    pub stopwords: Option<PathBuf>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            bin_width_m: 5.0,
            max_distance_m: 50.0,
            count_cap: 10,
            stopwords: None,
        }
    }
}

impl StatsConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let ok = self.bin_width_m > 0.0 && self.max_distance_m >= self.bin_width_m && self.count_cap > 0;
        let bins = self.max_distance_m / self.bin_width_m;
        if !ok || !bins.is_finite() || (bins - bins.round()).abs() > 1e-9 {
            return Err(AnalysisError::Config(format!(
                "need bin_width_m > 0 dividing max_distance_m and count_cap > 0, got {} / {} / {}",
                self.bin_width_m, self.max_distance_m, self.count_cap
            )));
        }
        Ok(())
    }

    fn distance_bins(&self) -> usize {
        (self.max_distance_m / self.bin_width_m).round() as usize
    }

    /// Column labels: the 5 m bins, the overflow bin and the no-object bin.
    pub fn distance_labels(&self) -> Vec<String> {
        let w = self.bin_width_m;
        let mut out: Vec<String> = (0..self.distance_bins())
            .map(|i| format!("{}-{}", i as f64 * w, (i + 1) as f64 * w))
            .collect();
        out.push(format!(">={}", self.max_distance_m));
        out.push("absent".into());
        out
    }

    pub fn count_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.count_cap).map(|c| c.to_string()).collect();
        out.push(format!("{}+", self.count_cap));
        out
    }

    pub fn load_stopwords(&self) -> Result<HashSet<String>, AnalysisError> {
        let text = match &self.stopwords {
            Some(p) => fs::read_to_string(p).map_err(io_err(p))?,
            None => DEFAULT_STOPWORDS.to_string(),
        };
        Ok(text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneHistograms {
    pub same: BTreeMap<u32, usize>,
    pub opposite: BTreeMap<u32, usize>,
    pub total: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossLaneShares {
    pub has: f64,
    pub right_to_left: f64,
    pub left_to_right: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossLaneCounts {
    pub has: usize,
    pub right_to_left: usize,
    pub left_to_right: usize,
}

/// Rows are object-count bins, columns are min-distance bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hist2D {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl Hist2D {
    fn zeros(rows: Vec<String>, cols: Vec<String>) -> Self {
        let counts = vec![vec![0; cols.len()]; rows.len()];
        Self { row_labels: rows, col_labels: cols, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    fn add(&mut self, other: &Hist2D) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    /// Row-normalized counts; empty rows stay zero.
    pub shares: Vec<Vec<f64>>,
}

impl ActionMatrix {
    fn from_counts(rows: Vec<String>, cols: Vec<String>, counts: Vec<Vec<usize>>) -> Self {
        let shares = counts
            .iter()
            .map(|r| {
                let n: usize = r.iter().sum();
                r.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
            })
            .collect();
        Self { rows, cols, counts, shares }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBundle {
    pub frames: usize,
    pub lane_histograms: LaneHistograms,
    pub cross_lane_counts: CrossLaneCounts,
    pub cross_lane_shares: CrossLaneShares,
    pub proximity_hist2d: BTreeMap<String, Hist2D>,
    pub speed_longitudinal: ActionMatrix,
    pub speed_maneuver: ActionMatrix,
    pub word_freq: BTreeMap<String, usize>,
}

impl StatsBundle {
    /// Word counts, most frequent first, ties alphabetical.
    pub fn sorted_words(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<(&str, usize)> = self.word_freq.iter().map(|(w, c)| (w.as_str(), *c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }
}

/// Raw counts for one shard; shards merge by addition before [`finish`].
///
/// [`finish`]: StatsAccumulator::finish
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    config: StatsConfig,
    stopwords: HashSet<String>,
    frames: usize,
    lanes: LaneHistograms,
    cross: CrossLaneCounts,
    proximity: BTreeMap<String, Hist2D>,
    speed_long: Vec<Vec<usize>>,
    speed_man: Vec<Vec<usize>>,
    words: BTreeMap<String, usize>,
}

fn index_of<T: PartialEq>(all: &[T], v: &T) -> usize {
    all.iter().position(|x| x == v).expect("value is listed in ALL")
}

impl StatsAccumulator {
    pub fn new(config: &StatsConfig) -> Result<Self, AnalysisError> {
        config.validate()?;
        let stopwords = config.load_stopwords()?;
        Ok(Self::with_stopwords(config, stopwords))
    }

    fn with_stopwords(config: &StatsConfig, stopwords: HashSet<String>) -> Self {
        let proximity = ObjectCategory::ALL
            .iter()
            .map(|c| (c.as_str().to_string(), Hist2D::zeros(config.count_labels(), config.distance_labels())))
            .collect();
        Self {
            config: config.clone(),
            stopwords,
            frames: 0,
            lanes: LaneHistograms::default(),
            cross: CrossLaneCounts::default(),
            proximity,
            speed_long: vec![vec![0; Longitudinal::ALL.len()]; SpeedState::ALL.len()],
            speed_man: vec![vec![0; Maneuver::ALL.len()]; SpeedState::ALL.len()],
            words: BTreeMap::new(),
        }
    }

    /// Empty accumulator sharing this one's settings.
    pub fn empty_like(&self) -> Self {
        Self::with_stopwords(&self.config, self.stopwords.clone())
    }

    pub fn add(&mut self, frame: &FrameRecord, label: &ActionLabel, reasoning: &str) {
        self.frames += 1;
        let l = &frame.lanes;
        *self.lanes.same.entry(l.same_direction_lanes).or_default() += 1;
        *self.lanes.opposite.entry(l.opposite_direction_lanes).or_default() += 1;
        *self.lanes.total.entry(l.total_lanes()).or_default() += 1;

        if !l.cross_lanes.is_empty() {
            self.cross.has += 1;
        }
        if l.cross_lanes.iter().any(|c| c.direction == CrossDirection::RightToLeft) {
            self.cross.right_to_left += 1;
        }
        if l.cross_lanes.iter().any(|c| c.direction == CrossDirection::LeftToRight) {
            self.cross.left_to_right += 1;
        }

        let nbins = self.config.distance_bins();
        for cat in ObjectCategory::ALL {
            let p = min_distances(frame, cat);
            let row = p.count.min(self.config.count_cap);
            let col = match p.min_distance {
                None => nbins + 1,
                Some(d) if d >= self.config.max_distance_m => nbins,
                Some(d) => ((d / self.config.bin_width_m).floor() as usize).min(nbins - 1),
            };
            let h = self.proximity.get_mut(cat.as_str()).expect("every category seeded");
            h.counts[row][col] += 1;
        }

        let s = index_of(&SpeedState::ALL, &label.speed_state);
        self.speed_long[s][index_of(&Longitudinal::ALL, &label.longitudinal)] += 1;
        self.speed_man[s][index_of(&Maneuver::ALL, &label.maneuver)] += 1;

        for tok in tokenize(reasoning) {
            if !self.stopwords.contains(&tok) {
                *self.words.entry(tok).or_default() += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.frames += other.frames;
        for (dst, src) in [
            (&mut self.lanes.same, &other.lanes.same),
            (&mut self.lanes.opposite, &other.lanes.opposite),
            (&mut self.lanes.total, &other.lanes.total),
        ] {
            for (k, v) in src {
                *dst.entry(*k).or_default() += v;
            }
        }
        self.cross.has += other.cross.has;
        self.cross.right_to_left += other.cross.right_to_left;
        self.cross.left_to_right += other.cross.left_to_right;
        for (k, h) in &other.proximity {
            self.proximity.get_mut(k).expect("same categories").add(h);
        }
        for (dst, src) in [(&mut self.speed_long, &other.speed_long), (&mut self.speed_man, &other.speed_man)] {
            for (a, b) in dst.iter_mut().flatten().zip(src.iter().flatten()) {
                *a += b;
            }
        }
        for (w, c) in &other.words {
            *self.words.entry(w.clone()).or_default() += c;
        }
    }

    pub fn finish(self) -> Result<StatsBundle, AnalysisError> {
        if self.frames == 0 {
            return Err(AnalysisError::EmptyCorpus);
        }
        let n = self.frames as f64;
        let speed_rows: Vec<String> = SpeedState::ALL.iter().map(|s| s.as_str().to_string()).collect();
        Ok(StatsBundle {
            frames: self.frames,
            lane_histograms: self.lanes,
            cross_lane_shares: CrossLaneShares {
                has: self.cross.has as f64 / n,
                right_to_left: self.cross.right_to_left as f64 / n,
                left_to_right: self.cross.left_to_right as f64 / n,
            },
            cross_lane_counts: self.cross,
            proximity_hist2d: self.proximity,
            speed_longitudinal: ActionMatrix::from_counts(
                speed_rows.clone(),
                Longitudinal::ALL.iter().map(|s| s.as_str().to_string()).collect(),
                self.speed_long,
            ),
            speed_maneuver: ActionMatrix::from_counts(
                speed_rows,
                Maneuver::ALL.iter().map(|s| s.as_str().to_string()).collect(),
                self.speed_man,
            ),
            word_freq: self.words,
        })
    }
}

pub fn compute_stats<'a, I>(corpus: I, config: &StatsConfig) -> Result<StatsBundle, AnalysisError>
where
    I: IntoIterator<Item = (&'a FrameRecord, &'a ActionLabel, &'a str)>,
{
    let mut acc = StatsAccumulator::new(config)?;
    for (frame, label, text) in corpus {
        acc.add(frame, label, text);
    }
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExportFormat {
    Csv,
    Json,
    #[default]
    All,
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), AnalysisError> {
    let csv_err = |source| AnalysisError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn matrix_rows(m: &ActionMatrix) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for (i, r) in m.rows.iter().enumerate() {
        for (j, c) in m.cols.iter().enumerate() {
            out.push(vec![r.clone(), c.clone(), m.counts[i][j].to_string(), m.shares[i][j].to_string()]);
        }
    }
    out
}

/// Writes the bundle under `dir`; returns the files written in order.
pub fn export_stats(bundle: &StatsBundle, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    if matches!(format, ExportFormat::Csv | ExportFormat::All) {
        let lanes = &bundle.lane_histograms;
        let mut rows = Vec::new();
        for (kind, h) in [("same", &lanes.same), ("opposite", &lanes.opposite), ("total", &lanes.total)] {
            rows.extend(h.iter().map(|(k, v)| vec![kind.to_string(), k.to_string(), v.to_string()]));
        }
        let p = dir.join("lanes.csv");
        write_csv(&p, &["kind", "lanes", "count"], rows)?;
        written.push(p);

        let (c, s) = (&bundle.cross_lane_counts, &bundle.cross_lane_shares);
        let p = dir.join("cross_lanes.csv");
        write_csv(
            &p,
            &["metric", "count", "share"],
            vec![
                vec!["has_cross_lane".into(), c.has.to_string(), s.has.to_string()],
                vec!["cross_right_to_left".into(), c.right_to_left.to_string(), s.right_to_left.to_string()],
                vec!["cross_left_to_right".into(), c.left_to_right.to_string(), s.left_to_right.to_string()],
            ],
        )?;
        written.push(p);

        for (cat, h) in &bundle.proximity_hist2d {
            let mut header = vec!["count"];
            header.extend(h.col_labels.iter().map(String::as_str));
            let rows = h
                .row_labels
                .iter()
                .zip(&h.counts)
                .map(|(label, r)| std::iter::once(label.clone()).chain(r.iter().map(|v| v.to_string())).collect())
                .collect();
            let p = dir.join(format!("proximity_{cat}.csv"));
            write_csv(&p, &header, rows)?;
            written.push(p);
        }

        for (name, m, col) in [
            ("action_speed_longitudinal.csv", &bundle.speed_longitudinal, "longitudinal"),
            ("action_speed_maneuver.csv", &bundle.speed_maneuver, "maneuver"),
        ] {
            let p = dir.join(name);
            write_csv(&p, &["speed_state", col, "count", "share"], matrix_rows(m))?;
            written.push(p);
        }

        let p = dir.join("word_freq.csv");
        let rows = bundle.sorted_words().into_iter().map(|(w, c)| vec![w.to_string(), c.to_string()]).collect();
        write_csv(&p, &["token", "count"], rows)?;
        written.push(p);
    }
    if matches!(format, ExportFormat::Json | ExportFormat::All) {
        let p = dir.join("stats.json");
        let mut text = serde_json::to_string_pretty(bundle).expect("bundle serializes");
        text.push('\n');
        fs::write(&p, text).map_err(io_err(&p))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_labeler::Command;
    use crate::scene_store::CrossLane;
    use crate::template_engine::test_frame;
    use proptest::prelude::*;

    fn label(s: SpeedState, l: Longitudinal, m: Maneuver) -> ActionLabel {
        ActionLabel { speed_state: s, longitudinal: l, maneuver: m, command: Command::from(m) }
    }

    fn crawl() -> ActionLabel {
        label(SpeedState::Crawling, Longitudinal::VehicleStarting, Maneuver::GoStraight)
    }

    fn stats(items: &[(FrameRecord, ActionLabel, String)]) -> Result<StatsBundle, AnalysisError> {
        compute_stats(items.iter().map(|(f, l, t)| (f, l, t.as_str())), &StatsConfig::default())
    }

    #[test]
    fn single_frame_lane_total() {
        let mut f = test_frame(&[]);
        f.lanes.same_direction_lanes = 2;
        f.lanes.opposite_direction_lanes = 1;
        let b = stats(&[(f, crawl(), String::new())]).unwrap();
        assert_eq!(b.lane_histograms.total, BTreeMap::from([(3, 1)]));
    }

    #[test]
    fn degenerate_action_row_one_hot() {
        let items: Vec<_> = (0..4).map(|_| (test_frame(&[]), crawl(), String::new())).collect();
        let b = stats(&items).unwrap();
        let m = &b.speed_longitudinal;
        let row = &m.shares[0];
        let hot = m.cols.iter().position(|c| c == "VehicleStarting").unwrap();
        assert!(row.iter().enumerate().all(|(j, v)| *v == if j == hot { 1.0 } else { 0.0 }));
        assert!(m.shares[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cross_lane_share_half() {
        let plain = test_frame(&[]);
        let mut crossed = test_frame(&[]);
        crossed.lanes.cross_lanes = vec![CrossLane {
            direction: CrossDirection::LeftToRight,
            polyline: vec![[10.0, 5.0], [10.0, -5.0]],
        }];
        let b = stats(&[(plain, crawl(), String::new()), (crossed, crawl(), String::new())]).unwrap();
        assert_eq!(b.cross_lane_shares.has, 0.5);
        assert_eq!(b.cross_lane_shares.left_to_right, 0.5);
        assert_eq!(b.cross_lane_shares.right_to_left, 0.0);
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(stats(&[]), Err(AnalysisError::EmptyCorpus)));
    }

    #[test]
    fn proximity_bins() {
        let f = test_frame(&[
            ("a", ObjectCategory::Vehicle, [7.0, 0.0]),
            ("b", ObjectCategory::Vehicle, [20.0, 0.0]),
            ("p", ObjectCategory::Pedestrian, [60.0, 0.0]),
        ]);
        let b = stats(&[(f, crawl(), String::new())]).unwrap();
        let v = &b.proximity_hist2d["vehicle"];
        assert_eq!(v.col_labels.len(), 12);
        assert_eq!(v.counts[2][1], 1);
        assert_eq!(b.proximity_hist2d["pedestrian"].counts[1][10], 1);
        assert_eq!(b.proximity_hist2d["cyclist"].counts[0][11], 1);
    }

    #[test]
    fn words_drop_stopwords_and_sort() {
        let text = "The vehicle is present. Presence of a vehicle and presence of a pedestrian; vehicle presence.";
        let b = stats(&[(test_frame(&[]), crawl(), text.into())]).unwrap();
        assert!(!b.word_freq.contains_key("the") && !b.word_freq.contains_key("of"));
        assert_eq!(b.word_freq["vehicle"], 3);
        assert_eq!(b.word_freq["presence"], 3);
        let order: Vec<&str> = b.sorted_words().into_iter().map(|(w, _)| w).collect();
        assert_eq!(order[..2], ["presence", "vehicle"]);
    }

    #[test]
    fn export_header_only_and_byte_identical() {
        let b = stats(&[(test_frame(&[]), crawl(), String::new())]).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = export_stats(&b, d1.path(), ExportFormat::All).unwrap();
        let f2 = export_stats(&b, d2.path(), ExportFormat::All).unwrap();
        assert_eq!(fs::read_to_string(d1.path().join("word_freq.csv")).unwrap(), "token,count\n");
        for (a, c) in f1.iter().zip(&f2) {
            assert_eq!(fs::read(a).unwrap(), fs::read(c).unwrap());
        }
        let back: StatsBundle = serde_json::from_str(&fs::read_to_string(d1.path().join("stats.json")).unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn custom_stopwords_and_bad_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stop.txt");
        fs::write(&p, "vehicle\n").unwrap();
        let cfg = StatsConfig { stopwords: Some(p), ..Default::default() };
        let f = test_frame(&[]);
        let l = crawl();
        let b = compute_stats([(&f, &l, "the vehicle")], &cfg).unwrap();
        assert_eq!(b.word_freq, BTreeMap::from([("the".to_string(), 1)]));
        let bad = StatsConfig { bin_width_m: 3.0, ..Default::default() };
        assert!(matches!(StatsAccumulator::new(&bad), Err(AnalysisError::Config(_))));
    }

    fn arb_item() -> impl Strategy<Value = (FrameRecord, ActionLabel, String)> {
        (
            0u32..4,
            0u32..4,
            any::<bool>(),
            prop::collection::vec((0usize..6, -70.0f64..70.0, -70.0f64..70.0), 0..14),
            0usize..3,
            0usize..5,
            0usize..5,
        )
            .prop_map(|(same, opp, cross, objs, s, l, m)| {
                let named: Vec<(String, ObjectCategory, [f64; 2])> = objs
                    .iter()
                    .enumerate()
                    .map(|(i, (c, x, y))| (format!("o{i}"), ObjectCategory::ALL[*c], [*x, *y]))
                    .collect();
                let refs: Vec<(&str, ObjectCategory, [f64; 2])> = named.iter().map(|(a, b, c)| (a.as_str(), *b, *c)).collect();
                let mut f = test_frame(&refs);
                f.lanes.same_direction_lanes = same;
                f.lanes.opposite_direction_lanes = opp;
                if cross {
                    f.lanes.cross_lanes = vec![CrossLane { direction: CrossDirection::RightToLeft, polyline: vec![] }];
                }
                (f, label(SpeedState::ALL[s], Longitudinal::ALL[l], Maneuver::ALL[m]), "vehicle ahead".into())
            })
    }

    proptest! {
        #[test]
        fn histograms_conserve_and_rows_stochastic(items in prop::collection::vec(arb_item(), 1..25)) {
            let b = stats(&items).unwrap();
            let n = items.len();
            let lanes = &b.lane_histograms;
            for h in [&lanes.same, &lanes.opposite, &lanes.total] {
                prop_assert_eq!(h.values().sum::<usize>(), n);
            }
            for h in b.proximity_hist2d.values() {
                prop_assert_eq!(h.total(), n);
            }
            for m in [&b.speed_longitudinal, &b.speed_maneuver] {
                prop_assert_eq!(m.total(), n);
                for (r, s) in m.counts.iter().zip(&m.shares) {
                    if r.iter().sum::<usize>() > 0 {
                        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                }
            }
            let sh = &b.cross_lane_shares;
            prop_assert!([sh.has, sh.left_to_right, sh.right_to_left].iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(&b, &stats(&items).unwrap());
        }

        #[test]
        fn shard_merge_equals_single_pass(items in prop::collection::vec(arb_item(), 1..20), cut in 0usize..20) {
            let cut = cut.min(items.len());
            let cfg = StatsConfig::default();
            let mut a = StatsAccumulator::new(&cfg).unwrap();
            let mut b = a.empty_like();
            for (i, (f, l, t)) in items.iter().enumerate() {
                if i < cut { a.add(f, l, t) } else { b.add(f, l, t) }
            }
            a.merge(&b);
            prop_assert_eq!(a.finish().unwrap(), stats(&items).unwrap());
        }
    }
}
