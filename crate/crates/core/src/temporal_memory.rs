//! Desk-scale numeric reference of the sparse temporal memory: ego-motion
//! alignment, motion-conditioned normalization, hybrid self-attention,
//! cross-modal aggregation, top-k query propagation and the perception loss.
//!
//! Matrices are row-per-token. Projections act on the right (`X·W + b`).
//! The same α, β pair modulates the positional and the feature branch.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, RigidTransform};

const LN_EPS: f64 = 1e-12;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
/// Flattened transform (12) plus speed and time gap.
pub const MOTION_INPUT: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("k = {k} out of range for {m} rows")]
    Range { k: usize, m: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid temporal-memory config: {0}")]
    Config(String),
}

fn shape(msg: impl Into<String>) -> TemporalError {
    TemporalError::Shape(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
    pub lane_cls: f64,
    pub lane_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 1.0, reg: 1.0, lane_cls: 1.0, lane_reg: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TemporalError> {
        let all = [self.cls, self.reg, self.lane_cls, self.lane_reg];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TemporalError::Config(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        Ok(())
    }
}

/// `[temporal_memory]` config block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub d: usize,
    pub h: usize,
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            d: 32,
            h: 4,
            m: 16,
            k: 8,
            t: 64,
            seed: 7,
            loss_weights: LossWeights::default(),
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<(), TemporalError> {
        if self.d == 0 || self.h == 0 || !self.d.is_multiple_of(self.h) {
            return Err(TemporalError::Config(format!("d = {} must be a positive multiple of h = {}", self.d, self.h)));
        }
        if self.m == 0 || self.t == 0 {
            return Err(TemporalError::Config("m and t must be positive".into()));
        }
        if self.k > self.m {
            return Err(TemporalError::Config(format!("k = {} exceeds m = {}", self.k, self.m)));
        }
        self.loss_weights.validate()
    }
}

/// One-hidden-layer map with tanh activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: DMatrix::zeros(input, hidden),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(hidden, output),
            b2: DVector::zeros(output),
        }
    }

    fn seeded(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: init(input, hidden, input, rng),
            b1: DVector::zeros(hidden),
            w2: init(hidden, output, hidden, rng),
            b2: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    /// Applies the map to every row of `x`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, TemporalError> {
        if x.ncols() != self.input_dim() {
            return Err(shape(format!("mlp expects {} inputs, got {}", self.input_dim(), x.ncols())));
        }
        let hidden = affine(x, &self.w1, &self.b1).map(f64::tanh);
        Ok(affine(&hidden, &self.w2, &self.b2))
    }
}

/// Q/K/V/O projections with biases.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub wq: DMatrix<f64>,
    pub bq: DVector<f64>,
    pub wk: DMatrix<f64>,
    pub bk: DVector<f64>,
    pub wv: DMatrix<f64>,
    pub bv: DVector<f64>,
    pub wo: DMatrix<f64>,
    pub bo: DVector<f64>,
}

impl AttentionParams {
    /// Identity projections, zero biases.
    pub fn identity(d: usize, heads: usize) -> Self {
        Self {
            heads,
            wq: DMatrix::identity(d, d),
            bq: DVector::zeros(d),
            wk: DMatrix::identity(d, d),
            bk: DVector::zeros(d),
            wv: DMatrix::identity(d, d),
            bv: DVector::zeros(d),
            wo: DMatrix::identity(d, d),
            bo: DVector::zeros(d),
        }
    }

    fn seeded(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            heads,
            wq: init(d, d, d, rng),
            bq: DVector::zeros(d),
            wk: init(d, d, d, rng),
            bk: DVector::zeros(d),
            wv: init(d, d, d, rng),
            bv: DVector::zeros(d),
            wo: init(d, d, d, rng),
            bo: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d: usize,
    pub psi: Mlp,
    pub xi_alpha: Mlp,
    pub xi_beta: Mlp,
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    /// Per-row readout used to rank queries for propagation.
    pub score_head: DVector<f64>,
    pub loss_weights: LossWeights,
}

impl ModelParams {
    pub fn seeded(cfg: &MemoryConfig) -> Result<Self, TemporalError> {
        cfg.validate()?;
        let d = cfg.d;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            d,
            psi: Mlp::seeded(3, 2 * d, d, &mut rng),
            xi_alpha: Mlp::seeded(MOTION_INPUT, 2 * d, d, &mut rng),
            xi_beta: Mlp::seeded(MOTION_INPUT, 2 * d, d, &mut rng),
            self_attn: AttentionParams::seeded(d, cfg.h, &mut rng),
            cross_attn: AttentionParams::seeded(d, cfg.h, &mut rng),
            score_head: init(d, 1, d, &mut rng).column(0).into_owned(),
            loss_weights: cfg.loss_weights,
        })
    }
}

fn init(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
    DMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

fn affine(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x * w;
    for mut row in out.row_iter_mut() {
        row += b.transpose();
    }
    out
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Object queries for one frame: `M` current rows and `K` propagated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    /// M × 3 object centers.
    pub centers: DMatrix<f64>,
    /// M × D contextual features.
    pub features: DMatrix<f64>,
    /// M × D positional embeddings.
    pub pos_embed: DMatrix<f64>,
    /// K × D propagated queries.
    pub propagated: DMatrix<f64>,
    pub tags: Vec<u64>,
    pub propagated_tags: Vec<u64>,
}

impl QueryState {
    pub fn m(&self) -> usize {
        self.features.nrows()
    }

    pub fn k(&self) -> usize {
        self.propagated.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<(), TemporalError> {
        let (m, d) = (self.m(), self.d());
        if self.centers.shape() != (m, 3) {
            return Err(shape(format!("centers {:?}, expected ({m}, 3)", self.centers.shape())));
        }
        if self.pos_embed.shape() != (m, d) {
            return Err(shape(format!("pos_embed {:?}, expected ({m}, {d})", self.pos_embed.shape())));
        }
        if self.propagated.ncols() != d && self.k() > 0 {
            return Err(shape(format!("propagated width {}, expected {d}", self.propagated.ncols())));
        }
        if self.tags.len() != m || self.propagated_tags.len() != self.k() {
            return Err(shape("tag counts do not match row counts"));
        }
        for (name, mat) in [
            ("centers", &self.centers),
            ("features", &self.features),
            ("pos_embed", &self.pos_embed),
            ("propagated", &self.propagated),
        ] {
            if !all_finite(mat) {
                return Err(TemporalError::NonFinite(name));
            }
        }
        Ok(())
    }

    /// `[Q_m; Q_c]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (k, m, d) = (self.k(), self.m(), self.d());
        DMatrix::from_fn(k + m, d, |i, j| {
            if i < k {
                self.propagated[(i, j)]
            } else {
                self.features[(i - k, j)]
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationCoeffs {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Inter-frame ego motion `E_t · E_{t-1}`, composed as written.
pub fn compose_ego_motion(e_t: &RigidTransform, e_prev: &RigidTransform) -> Result<RigidTransform, TemporalError> {
    e_t.validate()?;
    e_prev.validate()?;
    Ok(e_t.compose(e_prev))
}

/// Rotation then translation, row by row.
pub fn align_centers(transform: &RigidTransform, centers: &DMatrix<f64>) -> Result<DMatrix<f64>, TemporalError> {
    if centers.ncols() != 3 {
        return Err(shape(format!("centers need 3 columns, got {}", centers.ncols())));
    }
    let mut out = centers.clone();
    for (i, row) in centers.row_iter().enumerate() {
        let p = transform.apply(&Vector3::new(row[0], row[1], row[2]));
        out.set_row(i, &p.transpose());
    }
    Ok(out)
}

pub fn motion_input(transform: &RigidTransform, v: f64, dt: f64) -> DMatrix<f64> {
    let flat = transform.flatten();
    DMatrix::from_fn(1, MOTION_INPUT, |_, j| match j {
        12 => v,
        13 => dt,
        _ => flat[j],
    })
}

pub fn modulation_coeffs(
    transform: &RigidTransform,
    v: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<ModulationCoeffs, TemporalError> {
    if !(dt > 0.0) || !v.is_finite() || !dt.is_finite() {
        return Err(shape(format!("need finite v and dt > 0, got v = {v}, dt = {dt}")));
    }
    let x = motion_input(transform, v, dt);
    let alpha = params.xi_alpha.forward(&x)?;
    let beta = params.xi_beta.forward(&x)?;
    if alpha.ncols() != params.d || beta.ncols() != params.d {
        return Err(shape("coefficient width differs from feature width"));
    }
    Ok(ModulationCoeffs {
        alpha: alpha.iter().copied().collect(),
        beta: beta.iter().copied().collect(),
    })
}

/// Per-row normalization to mean 0, variance 1, without affine terms.
pub fn layer_norm(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    let n = x.ncols() as f64;
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.apply(|v| *v = (*v - mean) * inv);
    }
    out
}

fn apply_coeffs(x: &DMatrix<f64>, c: &ModulationCoeffs) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| c.alpha[j] * x[(i, j)] + c.beta[j])
}

/// Recomputes the positional embeddings from the centers and modulates the
/// features.
pub fn modulate(state: &QueryState, coeffs: &ModulationCoeffs, params: &ModelParams) -> Result<QueryState, TemporalError> {
    state.validate()?;
    let d = state.d();
    if coeffs.alpha.len() != d || coeffs.beta.len() != d || params.psi.output_dim() != d {
        return Err(shape(format!("coefficients/psi width must equal {d}")));
    }
    let pe = params.psi.forward(&state.centers)?;
    Ok(QueryState {
        pos_embed: apply_coeffs(&layer_norm(&pe), coeffs),
        features: apply_coeffs(&layer_norm(&state.features), coeffs),
        ..state.clone()
    })
}

/// Attention output plus one weight matrix per head (queries × keys).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: DMatrix<f64>,
    pub weights: Vec<DMatrix<f64>>,
}

impl AttentionOutput {
    /// Largest |row sum − 1| over all heads.
    pub fn max_row_sum_error(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.row_iter().map(|r| (r.sum() - 1.0).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Multi-head attention where query `i` sees keys `key_in + key_offset[i]`.
/// A `None` offset is plain attention.
fn attend(
    query_in: &DMatrix<f64>,
    key_in: &DMatrix<f64>,
    value_in: &DMatrix<f64>,
    key_offset: Option<&DMatrix<f64>>,
    p: &AttentionParams,
) -> Result<AttentionOutput, TemporalError> {
    let d = p.dim();
    if p.heads == 0 || !d.is_multiple_of(p.heads) {
        return Err(shape(format!("width {d} not divisible by {} heads", p.heads)));
    }
    for (name, m) in [("query", query_in), ("key", key_in), ("value", value_in)] {
        if m.ncols() != d {
            return Err(shape(format!("{name} width {}, expected {d}", m.ncols())));
        }
    }
    if key_in.nrows() != value_in.nrows() || key_in.nrows() == 0 {
        return Err(shape("keys and values need the same non-zero row count"));
    }
    if let Some(off) = key_offset {
        if off.shape() != (query_in.nrows(), d) {
            return Err(shape("key offset needs one row per query"));
        }
    }
    let q = affine(query_in, &p.wq, &p.bq);
    let k = affine(key_in, &p.wk, &p.bk);
    let v = affine(value_in, &p.wv, &p.bv);
    // (F + a)·W_k + b_k = (F·W_k + b_k) + a·W_k
    let k_off = key_offset.map(|off| off * &p.wk);

    let dh = d / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (nq, nk) = (query_in.nrows(), key_in.nrows());
    let mut concat = DMatrix::zeros(nq, d);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let cols = h * dh..(h + 1) * dh;
        let mut w = DMatrix::zeros(nq, nk);
        for i in 0..nq {
            let mut logits: Vec<f64> = (0..nk)
                .map(|t| {
                    cols.clone()
                        .map(|c| {
                            let key = k[(t, c)] + k_off.as_ref().map_or(0.0, |o| o[(i, c)]);
                            q[(i, c)] * key
                        })
                        .sum::<f64>()
                        * scale
                })
                .collect();
            softmax_in_place(&mut logits);
            for (t, a) in logits.into_iter().enumerate() {
                w[(i, t)] = a;
            }
        }
        for i in 0..nq {
            for c in cols.clone() {
                concat[(i, c)] = (0..nk).map(|t| w[(i, t)] * v[(t, c)]).sum();
            }
        }
        weights.push(w);
    }
    Ok(AttentionOutput {
        output: affine(&concat, &p.wo, &p.bo),
        weights,
    })
}

pub fn multi_head_attention(
    query: &DMatrix<f64>,
    key: &DMatrix<f64>,
    value: &DMatrix<f64>,
    params: &AttentionParams,
) -> Result<AttentionOutput, TemporalError> {
    attend(query, key, value, None, params)
}

/// Self-attention over `[Q_m; Q_c]`; rows are `K + M`.
pub fn hybrid_attention(state: &QueryState, params: &ModelParams) -> Result<AttentionOutput, TemporalError> {
    state.validate()?;
    let x = state.stacked();
    attend(&x, &x, &x, None, &params.self_attn)
}

/// Per-query positional addend for the keys: zero for propagated rows, the
/// query's own positional embedding for current rows.
pub fn positional_addend(state: &QueryState) -> DMatrix<f64> {
    let (k, d) = (state.k(), state.d());
    DMatrix::from_fn(k + state.m(), d, |i, j| if i < k { 0.0 } else { state.pos_embed[(i - k, j)] })
}

/// Cross-attention from `[Q_m; Q_c]` to the image tokens, keys carrying the
/// positional term and values the raw tokens.
pub fn cross_modal_aggregate(
    state: &QueryState,
    image: &DMatrix<f64>,
    params: &ModelParams,
) -> Result<AttentionOutput, TemporalError> {
    state.validate()?;
    if image.ncols() != state.d() {
        return Err(shape(format!("image width {}, expected {}", image.ncols(), state.d())));
    }
    if !all_finite(image) {
        return Err(TemporalError::NonFinite("image"));
    }
    let addend = positional_addend(state);
    attend(&state.stacked(), image, image, Some(&addend), &params.cross_attn)
}

/// Copies the `k` best-scored current rows into the propagated set. Ties go
/// to the lower row index.
pub fn propagate_topk(scores: &[f64], state: &QueryState, k: usize) -> Result<QueryState, TemporalError> {
    state.validate()?;
    let m = state.m();
    if scores.len() != m {
        return Err(shape(format!("{} scores for {m} rows", scores.len())));
    }
    if k > m {
        return Err(TemporalError::Range { k, m });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TemporalError::NonFinite("scores"));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    let d = state.d();
    Ok(QueryState {
        propagated: DMatrix::from_fn(k, d, |i, j| state.features[(order[i], j)]),
        propagated_tags: order.iter().map(|&i| state.tags[i]).collect(),
        ..state.clone()
    })
}

/// `-α (1-p)^γ ln p` for the true-class probability `p`.
pub fn focal_term(p: f64) -> f64 {
    if p >= 1.0 {
        return 0.0;
    }
    -FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * p.ln()
}

/// d/dp of [`focal_term`].
pub fn focal_term_grad(p: f64) -> f64 {
    let q = 1.0 - p;
    FOCAL_ALPHA * (FOCAL_GAMMA * q.powf(FOCAL_GAMMA - 1.0) * p.ln() - q.powf(FOCAL_GAMMA) / p)
}

/// Mean focal term over pairs; `probs` is pairs × classes.
pub fn focal_loss(probs: &DMatrix<f64>, targets: &[usize]) -> Result<f64, TemporalError> {
    if probs.nrows() != targets.len() {
        return Err(shape(format!("{} predictions for {} targets", probs.nrows(), targets.len())));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= probs.ncols() {
            return Err(shape(format!("target class {t} with {} classes", probs.ncols())));
        }
        let p = probs[(i, t)];
        if !(0.0..=1.0).contains(&p) || p == 0.0 {
            return Err(shape(format!("probability {p} outside (0, 1]")));
        }
        sum += focal_term(p);
    }
    Ok(sum / targets.len() as f64)
}

/// Mean absolute error over every component.
pub fn l1_loss(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<f64, TemporalError> {
    if pred.shape() != target.shape() {
        return Err(shape(format!("l1 shapes {:?} vs {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok((pred - target).abs().sum() / pred.len() as f64)
}

/// Gradient of [`l1_loss`] with respect to `pred` (subgradient 0 at ties).
pub fn l1_loss_grad(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<DMatrix<f64>, TemporalError> {
    if pred.shape() != target.shape() {
        return Err(shape(format!("l1 shapes {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = pred.len().max(1) as f64;
    Ok((pred - target).map(|e| if e > 0.0 { 1.0 / n } else if e < 0.0 { -1.0 / n } else { 0.0 }))
}

/// Pre-matched prediction/target pairs for detection and lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionBatch {
    pub cls_probs: DMatrix<f64>,
    pub cls_targets: Vec<usize>,
    pub box_pred: DMatrix<f64>,
    pub box_target: DMatrix<f64>,
    pub lane_cls_probs: DMatrix<f64>,
    pub lane_cls_targets: Vec<usize>,
    pub lane_pred: DMatrix<f64>,
    pub lane_target: DMatrix<f64>,
}

pub fn perception_loss(batch: &PerceptionBatch, w: &LossWeights) -> Result<f64, TemporalError> {
    w.validate()?;
    Ok(w.cls * focal_loss(&batch.cls_probs, &batch.cls_targets)?
        + w.reg * l1_loss(&batch.box_pred, &batch.box_target)?
        + w.lane_cls * focal_loss(&batch.lane_cls_probs, &batch.lane_cls_targets)?
        + w.lane_reg * l1_loss(&batch.lane_pred, &batch.lane_target)?)
}

/// Analytic gradient of [`perception_loss`] with respect to `box_pred`.
pub fn perception_loss_box_grad(batch: &PerceptionBatch, w: &LossWeights) -> Result<DMatrix<f64>, TemporalError> {
    Ok(l1_loss_grad(&batch.box_pred, &batch.box_target)? * w.reg)
}

/// Analytic gradient of [`perception_loss`] with respect to the detection
/// class probabilities (non-zero only at the target entries).
pub fn perception_loss_cls_grad(batch: &PerceptionBatch, w: &LossWeights) -> Result<DMatrix<f64>, TemporalError> {
    let probs = &batch.cls_probs;
    if probs.nrows() != batch.cls_targets.len() {
        return Err(shape("class targets do not match predictions"));
    }
    let n = batch.cls_targets.len().max(1) as f64;
    let mut g = DMatrix::zeros(probs.nrows(), probs.ncols());
    for (i, &t) in batch.cls_targets.iter().enumerate() {
        g[(i, t)] = w.cls * focal_term_grad(probs[(i, t)]) / n;
    }
    Ok(g)
}

pub fn total_loss(l_pc: f64, l_ce: f64) -> Result<f64, TemporalError> {
    if !l_pc.is_finite() || !l_ce.is_finite() || l_pc < 0.0 || l_ce < 0.0 {
        return Err(shape(format!("losses must be finite and >= 0, got {l_pc}, {l_ce}")));
    }
    Ok(l_pc + l_ce)
}

/// Mean next-token cross-entropy from logits (tokens × vocab).
pub fn cross_entropy(logits: &DMatrix<f64>, targets: &[usize]) -> Result<f64, TemporalError> {
    if logits.nrows() != targets.len() || targets.is_empty() {
        return Err(shape("need one non-empty logit row per target"));
    }
    let mut sum = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= logits.ncols() {
            return Err(shape(format!("target token {t} with vocab {}", logits.ncols())));
        }
        let row = logits.row(i);
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        sum += lse - row[t];
    }
    Ok(sum / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorStats {
    pub rows: usize,
    pub cols: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl TensorStats {
    pub fn of(m: &DMatrix<f64>) -> Self {
        let n = m.len().max(1) as f64;
        let mean = m.sum() / n;
        let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            mean,
            std: var.sqrt(),
            min: if m.is_empty() { 0.0 } else { m.min() },
            max: if m.is_empty() { 0.0 } else { m.max() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub ego_motion: RigidTransform,
    pub alpha: TensorStats,
    pub beta: TensorStats,
    pub centers: TensorStats,
    pub pos_embed: TensorStats,
    pub features: TensorStats,
    pub hybrid_output: TensorStats,
    pub hybrid_row_sum_error: f64,
    pub cross_output: TensorStats,
    pub cross_row_sum_error: f64,
    pub propagated_tags: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub config: MemoryConfig,
    pub frames: Vec<FrameReport>,
    pub perception_loss: f64,
    pub cross_entropy: f64,
    pub total_loss: f64,
}

/// Scripted two-frame episode at the configured size: random queries and
/// image tokens, 1 m forward plus 2° yaw per 0.5 s step.
pub fn run_demo(cfg: &MemoryConfig) -> Result<DemoReport, TemporalError> {
    let params = ModelParams::seeded(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("finite bounds");
    let mut rand_mat = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| s * unit.sample(&mut rng));

    let mut state = QueryState {
        centers: rand_mat(cfg.m, 3, 30.0),
        features: rand_mat(cfg.m, cfg.d, 1.0),
        pos_embed: DMatrix::zeros(cfg.m, cfg.d),
        propagated: DMatrix::zeros(0, cfg.d),
        tags: (0..cfg.m as u64).collect(),
        propagated_tags: Vec::new(),
    };
    let (v, dt) = (2.0, 0.5);
    let step = RigidTransform::from_yaw(2f64.to_radians(), Vector3::new(1.0, 0.0, 0.0));
    let mut pose = RigidTransform::identity();
    let mut frames = Vec::new();
    for frame in 0..2 {
        let prev = pose;
        pose = step.compose(&pose);
        let motion = compose_ego_motion(&pose, &prev.inverse())?;
        if frame > 0 {
            state.centers = align_centers(&motion, &state.centers)?;
            state.features = rand_mat(cfg.m, cfg.d, 1.0);
            state.tags = (0..cfg.m as u64).map(|i| (frame * cfg.m) as u64 + i).collect();
        }
        let coeffs = modulation_coeffs(&motion, v, dt, &params)?;
        state = modulate(&state, &coeffs, &params)?;
        let hybrid = hybrid_attention(&state, &params)?;
        let image = rand_mat(cfg.t, cfg.d, 1.0);
        let cross = cross_modal_aggregate(&state, &image, &params)?;
        let k = state.k();
        let scores: Vec<f64> = (0..state.m()).map(|i| cross.output.row(k + i).dot(&params.score_head.transpose())).collect();
        state = propagate_topk(&scores, &state, cfg.k)?;
        frames.push(FrameReport {
            frame,
            ego_motion: motion,
            alpha: TensorStats::of(&DMatrix::from_row_slice(1, cfg.d, &coeffs.alpha)),
            beta: TensorStats::of(&DMatrix::from_row_slice(1, cfg.d, &coeffs.beta)),
            centers: TensorStats::of(&state.centers),
            pos_embed: TensorStats::of(&state.pos_embed),
            features: TensorStats::of(&state.features),
            hybrid_output: TensorStats::of(&hybrid.output),
            hybrid_row_sum_error: hybrid.max_row_sum_error(),
            cross_output: TensorStats::of(&cross.output),
            cross_row_sum_error: cross.max_row_sum_error(),
            propagated_tags: state.propagated_tags.clone(),
        });
    }

    let softmax_rows = |m: DMatrix<f64>| {
        let mut m = m;
        for mut row in m.row_iter_mut() {
            let mut v: Vec<f64> = row.iter().copied().collect();
            softmax_in_place(&mut v);
            row.copy_from_slice(&v);
        }
        m
    };
    let batch = PerceptionBatch {
        cls_probs: softmax_rows(rand_mat(cfg.k, 10, 2.0)),
        cls_targets: (0..cfg.k).map(|i| i % 10).collect(),
        box_pred: rand_mat(cfg.k, 10, 1.0),
        box_target: rand_mat(cfg.k, 10, 1.0),
        lane_cls_probs: softmax_rows(rand_mat(4, 3, 2.0)),
        lane_cls_targets: vec![0, 1, 2, 0],
        lane_pred: rand_mat(4, 20, 1.0),
        lane_target: rand_mat(4, 20, 1.0),
    };
    let l_pc = perception_loss(&batch, &cfg.loss_weights)?;
    let l_ce = cross_entropy(&rand_mat(6, 16, 3.0), &[1, 4, 9, 0, 15, 7])?;
    Ok(DemoReport {
        config: cfg.clone(),
        frames,
        perception_loss: l_pc,
        cross_entropy: l_ce,
        total_loss: total_loss(l_pc, l_ce)?,
    })
}
