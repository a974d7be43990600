//! Tracking by detection over weighted patch descriptors.
//!
//! Each frame solves one ranking problem at the previous box, fuses foreground
//! and background rankings into patch weights, scores every translated
//! candidate with a bank of three linear classifiers and updates the newest
//! classifier with a passive-aggressive structured step.

use image::imageops::{self, FilterType};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, BoundingBox, Frame, PatchGrid, FEATURE_DIM, GRID_COLS, GRID_ROWS};
use crate::model::{MemoryFrame, Params, RankingInstance};
use crate::prox::DenseMatrix;
use crate::solver::{solve, Mode};

/// Length of a flattened weighted descriptor.
pub const DESCRIPTOR_LEN: usize = FEATURE_DIM * GRID_ROWS * GRID_COLS;

/// How the winning score is mapped to a confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceRule {
    /// `(s* - s_min) / (s_max - s_min)` over the candidate set.
    #[default]
    MinMax,
    /// `s*` minus the mean score of candidates overlapping the winner by
    /// IoU < 0.5, clamped to `[0, 1]`.
    Margin,
}

impl std::str::FromStr for ConfidenceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(Self::MinMax),
            "margin" => Ok(Self::Margin),
            other => Err(Error::Param(format!("unknown confidence rule {other:?} (expected minmax or margin)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    pub ranking: Params,
    pub mode: Mode,
    pub shrink: f64,
    pub expand: f64,
    pub fuse_eps: f64,
    pub stride: u32,
    pub theta: f64,
    pub alphas: [f64; 3],
    pub pa_c: f64,
    pub max_violators: usize,
    /// Passes over the first-frame candidates when training `h_first`.
    pub first_epochs: usize,
    pub min_side: u32,
    pub confidence: ConfidenceRule,
    /// Forces every patch weight to 1 (unweighted baseline).
    pub uniform_weights: bool,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            ranking: Params::default(),
            mode: Mode::Full,
            shrink: 0.6,
            expand: 1.4,
            fuse_eps: 43.0,
            stride: 2,
            theta: 0.3,
            alphas: [0.63, 0.07, 0.03],
            pa_c: 1.0,
            max_violators: 16,
            first_epochs: 10,
            min_side: 32,
            confidence: ConfidenceRule::MinMax,
            uniform_weights: false,
        }
    }
}

impl TrackerParams {
    /// Sets a tracker knob or, failing that, a ranking parameter.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| Error::Param(format!("{name}: expected a number, got {value:?}")))
        };
        let count = || {
            value
                .parse::<usize>()
                .map_err(|_| Error::Param(format!("{name}: expected a count, got {value:?}")))
        };
        match name {
            "mode" => self.mode = value.parse()?,
            "shrink" => self.shrink = num()?,
            "expand" => self.expand = num()?,
            "fuse_eps" => self.fuse_eps = num()?,
            "stride" => self.stride = count()? as u32,
            "theta" => self.theta = num()?,
            "alpha1" => self.alphas[0] = num()?,
            "alpha2" => self.alphas[1] = num()?,
            "alpha3" => self.alphas[2] = num()?,
            "pa_c" => self.pa_c = num()?,
            "max_violators" => self.max_violators = count()?,
            "first_epochs" => self.first_epochs = count()?,
            "min_side" => self.min_side = count()? as u32,
            "confidence" => self.confidence = value.parse()?,
            "uniform_weights" => {
                self.uniform_weights = value
                    .parse()
                    .map_err(|_| Error::Param(format!("{name}: expected true or false, got {value:?}")))?
            }
            _ => self.ranking.set(name, value)?,
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.ranking.validate()?;
        if !(self.shrink > 0.0 && self.shrink < 1.0 && self.expand > 1.0) {
            return Err(Error::Param(format!(
                "need 0 < shrink < 1 < expand, got shrink {} expand {}",
                self.shrink, self.expand
            )));
        }
        if self.stride == 0 || self.min_side < GRID_ROWS.max(GRID_COLS) as u32 {
            return Err(Error::Param("stride must be positive and min_side at least the grid size".into()));
        }
        if !(self.pa_c > 0.0) || !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Param("pa_c must be positive and theta in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Uniform rescaling applied to every frame so the box's short side reaches
/// `min_side`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub factor: f64,
}

impl Scaling {
    pub fn for_box(bbox: &BoundingBox, min_side: u32) -> Self {
        let short = bbox.w.min(bbox.h);
        let factor = if short < min_side { min_side as f64 / short as f64 } else { 1.0 };
        Self { factor }
    }

    pub fn is_identity(&self) -> bool {
        self.factor == 1.0
    }

    pub fn frame(&self, frame: &Frame) -> Frame {
        if self.is_identity() {
            return frame.clone();
        }
        let w = (frame.width() as f64 * self.factor).round().max(1.0) as u32;
        let h = (frame.height() as f64 * self.factor).round().max(1.0) as u32;
        imageops::resize(frame, w, h, FilterType::Triangle)
    }

    pub fn forward(&self, b: &BoundingBox) -> BoundingBox {
        self.map(b, self.factor)
    }

    pub fn inverse(&self, b: &BoundingBox) -> BoundingBox {
        self.map(b, 1.0 / self.factor)
    }

    fn map(&self, b: &BoundingBox, s: f64) -> BoundingBox {
        if s == 1.0 {
            return *b;
        }
        let r = |v: f64| (v * s).round();
        BoundingBox::new(
            r(b.x as f64) as i32,
            r(b.y as f64) as i32,
            r(b.w as f64).max(1.0) as u32,
            r(b.h as f64).max(1.0) as u32,
        )
    }
}

pub fn preprocess(frame: &Frame, bbox: &BoundingBox, min_side: u32) -> (Frame, BoundingBox, Scaling) {
    let scaling = Scaling::for_box(bbox, min_side);
    (scaling.frame(frame), scaling.forward(bbox), scaling)
}

/// Translations of `prev` on a `stride` grid whose centers stay within the
/// square search window of side `2 sqrt(w h)`; boxes leaving the frame are dropped.
pub fn candidates(prev: &BoundingBox, width: u32, height: u32, stride: u32) -> Vec<BoundingBox> {
    let half = (prev.w as f64 * prev.h as f64).sqrt();
    let reach = (half / stride.max(1) as f64).floor() as i32;
    let step = stride as i32;
    let mut out = Vec::with_capacity(((2 * reach + 1) * (2 * reach + 1)) as usize);
    for ky in -reach..=reach {
        for kx in -reach..=reach {
            let b = BoundingBox::new(prev.x + kx * step, prev.y + ky * step, prev.w, prev.h);
            if b.inside(width, height) {
                out.push(b);
            }
        }
    }
    out
}

/// Three linear classifiers over flattened weighted descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank {
    pub h_first: DVector<f64>,
    pub h_prev2: DVector<f64>,
    pub h_prev1: DVector<f64>,
    /// Mixing weights of `h_prev1`, `h_prev2` and `h_first`, in that order.
    pub alphas: [f64; 3],
}

impl ClassifierBank {
    pub fn new(dim: usize, alphas: [f64; 3]) -> Self {
        Self {
            h_first: DVector::zeros(dim),
            h_prev2: DVector::zeros(dim),
            h_prev1: DVector::zeros(dim),
            alphas,
        }
    }

    pub fn dim(&self) -> usize {
        self.h_first.len()
    }
}

fn dot(h: &DVector<f64>, x: &[f64]) -> f64 {
    h.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// `a1 <h_prev1, x> + a2 <h_prev2, x> + a3 <h_first, x>` for a flattened descriptor.
pub fn score(bank: &ClassifierBank, descriptor: &[f64]) -> Result<f64> {
    if descriptor.len() != bank.dim() {
        return Err(Error::dim("score", bank.dim(), descriptor.len()));
    }
    let [a1, a2, a3] = bank.alphas;
    Ok(a1 * dot(&bank.h_prev1, descriptor) + a2 * dot(&bank.h_prev2, descriptor) + a3 * dot(&bank.h_first, descriptor))
}

/// Index of the best candidate (ties go to the smallest displacement from
/// `prev`) and its confidence.
pub fn select(scored: &[(BoundingBox, f64)], prev: &BoundingBox, rule: ConfidenceRule) -> Result<(usize, f64)> {
    if scored.is_empty() {
        return Err(Error::Input("no candidates to select from".into()));
    }
    let best = (0..scored.len())
        .max_by(|&i, &j| {
            scored[i]
                .1
                .total_cmp(&scored[j].1)
                .then_with(|| prev.center_distance(&scored[j].0).total_cmp(&prev.center_distance(&scored[i].0)))
        })
        .expect("nonempty");
    let top = scored[best].1;
    let confidence = match rule {
        ConfidenceRule::MinMax => {
            let (lo, hi) = scored
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, s)| (lo.min(s), hi.max(s)));
            if hi > lo {
                (top - lo) / (hi - lo)
            } else {
                1.0
            }
        }
        ConfidenceRule::Margin => {
            let winner = scored[best].0;
            let rivals: Vec<f64> = scored.iter().filter(|(b, _)| b.iou(&winner) < 0.5).map(|&(_, s)| s).collect();
            if rivals.is_empty() {
                1.0
            } else {
                (top - rivals.iter().sum::<f64>() / rivals.len() as f64).clamp(0.0, 1.0)
            }
        }
    };
    Ok((best, confidence))
}

/// A candidate box with its flattened weighted descriptor.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub bbox: BoundingBox,
    pub descriptor: Vec<f64>,
}

/// Passive-aggressive structured steps on `h` towards `positive` against
/// the worst margin violators among pool entries overlapping it by IoU < 0.5.
/// Returns the number of steps taken.
pub fn pa_update(h: &mut DVector<f64>, positive: &Candidate, pool: &[Candidate], c: f64, max_violators: usize) -> usize {
    let loss = |h: &DVector<f64>, cand: &Candidate| {
        let margin = 1.0 - cand.bbox.iou(&positive.bbox);
        margin - (dot(h, &positive.descriptor) - dot(h, &cand.descriptor))
    };
    let mut violators: Vec<(f64, &Candidate)> = pool
        .iter()
        .filter(|cand| cand.bbox.iou(&positive.bbox) < 0.5)
        .map(|cand| (loss(h, cand), cand))
        .filter(|(l, _)| *l > 0.0)
        .collect();
    violators.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut steps = 0;
    for (_, cand) in violators.into_iter().take(max_violators) {
        let l = loss(h, cand);
        if l <= 0.0 {
            continue;
        }
        let diff: Vec<f64> = positive.descriptor.iter().zip(&cand.descriptor).map(|(a, b)| a - b).collect();
        let sq: f64 = diff.iter().map(|d| d * d).sum();
        if sq == 0.0 {
            continue;
        }
        let tau = c.min(l / sq);
        for (hi, d) in h.iter_mut().zip(&diff) {
            *hi += tau * d;
        }
        steps += 1;
    }
    steps
}

/// Gated update: when `confidence > theta`, rotates `h_prev1` into `h_prev2`
/// and takes a structured step on `h_prev1`. Returns whether the bank changed.
pub fn update_classifier(
    bank: &mut ClassifierBank,
    selected: &Candidate,
    pool: &[Candidate],
    confidence: f64,
    params: &TrackerParams,
) -> bool {
    if confidence <= params.theta {
        return false;
    }
    bank.h_prev2.copy_from(&bank.h_prev1);
    pa_update(&mut bank.h_prev1, selected, pool, params.pa_c, params.max_violators);
    true
}

/// Ranking memory: the first frame and the most recent one.
#[derive(Debug, Clone)]
pub struct FrameMemory {
    pub first: MemoryFrame,
    pub prev: MemoryFrame,
}

impl FrameMemory {
    pub fn seed(features: DenseMatrix, ranking: DVector<f64>, params: &Params) -> Self {
        let first = MemoryFrame { features, ranking, weight: params.delta_first };
        let prev = MemoryFrame { weight: params.delta_prev, ..first.clone() };
        Self { first, prev }
    }

    pub fn push(&mut self, features: DenseMatrix, ranking: DVector<f64>, params: &Params) {
        self.prev = MemoryFrame { features, ranking, weight: params.delta_prev };
    }

    pub fn frames(&self) -> Vec<MemoryFrame> {
        vec![self.prev.clone(), self.first.clone()]
    }
}

/// Patch weights of one box plus the ranking data kept as memory.
#[derive(Debug, Clone)]
pub struct PatchWeights {
    pub grid: PatchGrid,
    /// Foreground ranking over the box patches.
    pub foreground: DVector<f64>,
    /// Background ranking over the box patches; zero when unavailable.
    pub background: DVector<f64>,
    pub weights: DVector<f64>,
}

pub fn patch_weights(
    frame: &Frame,
    bbox: &BoundingBox,
    memory: &[MemoryFrame],
    params: &TrackerParams,
) -> Result<PatchWeights> {
    let grid = features::partition(frame, bbox)?;
    let queries = features::foreground_queries(&grid, params.shrink)?;
    let prior = grid.prior_graph()?.weights;
    let inst = RankingInstance::new(grid.features.clone(), queries, prior, memory.to_vec(), params.ranking.clone())?;
    let foreground = solve(&inst, params.mode)?.ranking().clone();

    let background = match features::background_problem(frame, &grid, params.expand)? {
        Some(bg) => {
            let prior = bg.prior_graph()?.weights;
            let inst = RankingInstance::new(bg.features.clone(), bg.queries.clone(), prior, Vec::new(), params.ranking.clone())?;
            let mode = if params.mode == Mode::NoGraph { Mode::NoGraph } else { Mode::NoTemporal };
            let u = solve(&inst, mode)?.ranking().clone();
            DVector::from_iterator(grid.len(), bg.box_nodes.iter().map(|&i| u[i]))
        }
        None => DVector::zeros(grid.len()),
    };
    let weights = if params.uniform_weights {
        DVector::from_element(grid.len(), 1.0)
    } else {
        features::fuse_weights(&foreground, &background, params.fuse_eps)?
    };
    Ok(PatchWeights { grid, foreground, background, weights })
}

/// Weighted, flattened descriptor of every box, computed in parallel.
pub fn describe(frame: &Frame, boxes: &[BoundingBox], weights: &DVector<f64>) -> Result<Vec<Candidate>> {
    boxes
        .par_iter()
        .map(|b| {
            let grid = features::partition(frame, b)?;
            let xw = features::weighted_descriptor(&grid.features, weights)?;
            Ok(Candidate { bbox: *b, descriptor: xw.as_slice().to_vec() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackEntry {
    /// Box in original frame coordinates.
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// Patch weights in row-major grid order.
    pub weights: DVector<f64>,
    /// No candidate fit in the frame; the previous box was carried over.
    pub lost: bool,
    pub classifier_updated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub entries: Vec<TrackEntry>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn boxes(&self) -> Vec<BoundingBox> {
        self.entries.iter().map(|e| e.bbox).collect()
    }

    pub fn scored_boxes(&self) -> Vec<(BoundingBox, f64)> {
        self.entries.iter().map(|e| (e.bbox, e.confidence)).collect()
    }
}

/// Streaming tracker state; feed frames in order with [`Tracker::step`].
#[derive(Debug, Clone)]
pub struct Tracker {
    pub params: TrackerParams,
    pub bank: ClassifierBank,
    pub memory: FrameMemory,
    scaling: Scaling,
    /// Current box in scaled coordinates.
    current: BoundingBox,
}

impl Tracker {
    /// Initializes on the first frame: ranking at `init`, memory seeding and
    /// training of `h_first`, which also seeds `h_prev1` and `h_prev2`.
    pub fn start(frame: &Frame, init: BoundingBox, params: TrackerParams) -> Result<(Self, TrackEntry)> {
        params.validate()?;
        if init.w < 1 || init.h < 1 || init.clamp_to(frame.width(), frame.height()).is_none() {
            return Err(Error::Input(format!("initial box {init} does not intersect the frame")));
        }
        let (scaled, bbox, scaling) = preprocess(frame, &init, params.min_side);
        let pw = patch_weights(&scaled, &bbox, &[], &params)?;
        let memory = FrameMemory::seed(pw.grid.features.clone(), pw.foreground.clone(), &params.ranking);

        let positive = describe(&scaled, &[pw.grid.bbox], &pw.weights)?.remove(0);
        let pool = describe(&scaled, &candidates(&bbox, scaled.width(), scaled.height(), params.stride), &pw.weights)?;
        let mut bank = ClassifierBank::new(DESCRIPTOR_LEN, params.alphas);
        for _ in 0..params.first_epochs {
            if pa_update(&mut bank.h_first, &positive, &pool, params.pa_c, params.max_violators) == 0 {
                break;
            }
        }
        bank.h_prev1.copy_from(&bank.h_first);
        bank.h_prev2.copy_from(&bank.h_first);

        let entry = TrackEntry { bbox: init, confidence: 1.0, weights: pw.weights, lost: false, classifier_updated: true };
        Ok((Self { params, bank, memory, scaling, current: bbox }, entry))
    }

    pub fn step(&mut self, frame: &Frame) -> Result<TrackEntry> {
        let scaled = self.scaling.frame(frame);
        let prev = self.current;
        let boxes = candidates(&prev, scaled.width(), scaled.height(), self.params.stride);
        if boxes.is_empty() {
            return Ok(TrackEntry {
                bbox: self.scaling.inverse(&prev),
                confidence: 0.0,
                weights: DVector::zeros(GRID_ROWS * GRID_COLS),
                lost: true,
                classifier_updated: false,
            });
        }
        let pw = patch_weights(&scaled, &prev, &self.memory.frames(), &self.params)?;
        let pool = describe(&scaled, &boxes, &pw.weights)?;
        let scored: Vec<(BoundingBox, f64)> = pool
            .iter()
            .map(|c| Ok((c.bbox, score(&self.bank, &c.descriptor)?)))
            .collect::<Result<_>>()?;
        let (best, confidence) = select(&scored, &prev, self.params.confidence)?;
        let updated = update_classifier(&mut self.bank, &pool[best], &pool, confidence, &self.params);
        self.memory.push(pw.grid.features.clone(), pw.foreground.clone(), &self.params.ranking);
        self.current = pool[best].bbox;
        Ok(TrackEntry {
            bbox: self.scaling.inverse(&self.current),
            confidence,
            weights: pw.weights,
            lost: false,
            classifier_updated: updated,
        })
    }
}

pub fn track(frames: &[Frame], init: BoundingBox, params: &TrackerParams) -> Result<Trajectory> {
    let (first, rest) = frames
        .split_first()
        .ok_or_else(|| Error::Input("tracking needs at least one frame".into()))?;
    let (mut tracker, entry) = Tracker::start(first, init, params.clone())?;
    let mut entries = vec![entry];
    for frame in rest {
        entries.push(tracker.step(frame)?);
    }
    Ok(Trajectory { entries })
}
