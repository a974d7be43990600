//! Seeded synthetic ranking instances and tracking sequences.
//!
//! Everything here is a pure function of the [`SyntheticSpec`]; the random
//! stream comes from [`SeededRng`].

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BoundingBox, Frame};
use crate::graph;
use crate::io;
use crate::model::{MemoryFrame, Params, RankingInstance};
use crate::prox::DenseMatrix;
use crate::rng::SeededRng;

/// Where foreground patches sit on the patch grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// The cells nearest the grid center, like a target inside its box.
    #[default]
    Centered,
    /// A uniformly random subset; position carries no label information.
    Scattered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Patch count; patches are laid out on the most square grid with `n` cells.
    pub n: usize,
    /// Feature dimension.
    pub p: usize,
    /// Cluster count; cluster 0 is the foreground.
    pub clusters: usize,
    /// Distance between cluster means, in units of the within-cluster noise.
    pub separation: f64,
    /// Fraction of current-frame columns replaced by uniform noise.
    pub corruption_fraction: f64,
    pub layout: Layout,
    /// Number of foreground patches used as queries.
    pub queries: usize,
    /// Fraction of prior-graph edges rewired to random node pairs.
    pub edge_noise: f64,
    /// Memory frames (previous frame, first frame) attached to the instance.
    pub memory_frames: usize,
    /// Sequence mode: number of frames.
    pub frames: usize,
    /// Sequence mode: horizontal target motion in px/frame.
    pub motion: i32,
    pub width: u32,
    pub height: u32,
    /// Side of the square target.
    pub target: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 32,
            p: 8,
            clusters: 2,
            separation: 3.0,
            corruption_fraction: 0.0,
            layout: Layout::Centered,
            queries: 4,
            edge_noise: 0.0,
            memory_frames: 2,
            frames: 50,
            motion: 2,
            width: 256,
            height: 128,
            target: 32,
        }
    }
}

/// A generated instance with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub instance: RankingInstance,
    /// Foreground membership of each patch.
    pub labels: Vec<bool>,
    /// Columns replaced by noise in the current frame.
    pub corrupted: Vec<bool>,
}

impl SyntheticInstance {
    /// Labels and scores restricted to non-query patches.
    pub fn unlabeled<'a>(&'a self, scores: &'a DVector<f64>) -> (Vec<f64>, Vec<bool>) {
        self.instance
            .queries
            .iter()
            .zip(scores.iter().zip(&self.labels))
            .filter(|(&q, _)| q == 0.0)
            .map(|(_, (&s, &l))| (s, l))
            .unzip()
    }
}

/// `(rows, cols)` of the most square grid holding exactly `n` cells.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let rows = (1..=((n as f64).sqrt() as usize)).rev().find(|r| n % r == 0).unwrap_or(1);
    (rows, n / rows)
}

const NOISE_SIGMA: f64 = 1.0;

pub fn gen_instance(spec: &SyntheticSpec) -> Result<SyntheticInstance> {
    if spec.clusters < 2 {
        return Err(Error::Input("at least two clusters are required".into()));
    }
    if !(0.0..=1.0).contains(&spec.corruption_fraction) {
        return Err(Error::Input(format!("corruption fraction must lie in [0, 1], got {}", spec.corruption_fraction)));
    }
    if !(0.0..=1.0).contains(&spec.edge_noise) {
        return Err(Error::Input(format!("edge noise must lie in [0, 1], got {}", spec.edge_noise)));
    }
    if spec.n < spec.clusters || spec.p == 0 || spec.queries == 0 {
        return Err(Error::Input("need n >= clusters, p >= 1 and at least one query".into()));
    }
    let (n, p) = (spec.n, spec.p);
    let mut rng = SeededRng::new(spec.seed);

    // Foreground takes the first cells of `order`; the rest are split among
    // background clusters.
    let (rows, cols_) = grid_shape(n);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let center = ((rows as f64 - 1.0) / 2.0, (cols_ as f64 - 1.0) / 2.0);
    let dist = |i: usize| {
        let (r, c) = ((i / cols_) as f64, (i % cols_) as f64);
        (r - center.0).powi(2) + (c - center.1).powi(2)
    };
    if spec.layout == Layout::Centered {
        order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)));
    }
    let fg_count = n.div_ceil(spec.clusters);
    let mut background: Vec<usize> = order[fg_count..].to_vec();
    rng.shuffle(&mut background);
    let mut cluster = vec![0usize; n];
    for (rank, &i) in background.iter().enumerate() {
        cluster[i] = 1 + rank % (spec.clusters - 1);
    }
    let labels: Vec<bool> = cluster.iter().map(|&c| c == 0).collect();

    // cluster means on orthogonal axes, pairwise `separation` apart
    let offset = spec.separation / std::f64::consts::SQRT_2;
    let mean = |c: usize, i: usize| if i == c % p { offset } else { 0.0 };
    let draw = |rng: &mut SeededRng| DenseMatrix::from_fn(p, n, |i, j| mean(cluster[j], i) + NOISE_SIGMA * rng.normal());

    let clean = draw(&mut rng);
    let mut features = clean.clone();
    let corrupt_count = (spec.corruption_fraction * n as f64).round() as usize;
    let mut corrupted = vec![false; n];
    let mut cols: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut cols);
    let range = spec.separation + 3.0 * NOISE_SIGMA;
    for &j in cols.iter().take(corrupt_count) {
        corrupted[j] = true;
        for i in 0..p {
            features[(i, j)] = rng.uniform_range(-range, range);
        }
    }

    let mut fg: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    rng.shuffle(&mut fg);
    let mut queries = DVector::zeros(n);
    for &i in fg.iter().take(spec.queries) {
        queries[i] = 1.0;
    }

    let mut prior = graph::build_prior_graph(rows, cols_, &features)?.weights;
    if spec.edge_noise > 0.0 {
        rewire_edges(&mut prior, spec.edge_noise, &mut rng);
    }

    let params = Params::default();
    let weights = [params.delta_prev, params.delta_first];
    let ranking = DVector::from_iterator(n, labels.iter().map(|&l| l as u8 as f64));
    let memory = (0..spec.memory_frames)
        .map(|k| MemoryFrame {
            features: draw(&mut rng),
            ranking: ranking.clone(),
            weight: weights[k.min(1)],
        })
        .collect();

    let instance = RankingInstance::new(features, queries, prior, memory, params)?;
    Ok(SyntheticInstance { instance, labels, corrupted })
}

/// Moves a fraction of the edges of `prior` to uniformly random node pairs
/// with uniform random weights.
fn rewire_edges(prior: &mut DenseMatrix, fraction: f64, rng: &mut SeededRng) {
    let n = prior.nrows();
    let mut edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| prior[(i, j)] > 0.0)
        .collect();
    rng.shuffle(&mut edges);
    let count = (fraction * edges.len() as f64).round() as usize;
    for &(i, j) in edges.iter().take(count) {
        prior[(i, j)] = 0.0;
        prior[(j, i)] = 0.0;
    }
    let mut added = 0;
    while added < count {
        let a = rng.below(n);
        let b = rng.below(n);
        if a == b || prior[(a, b)] > 0.0 {
            continue;
        }
        let w = rng.uniform_range(0.5, 1.0);
        prior[(a, b)] = w;
        prior[(b, a)] = w;
        added += 1;
    }
}

/// Frames and ground-truth boxes of a synthetic sequence.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<Frame>,
    pub boxes: Vec<BoundingBox>,
}

impl SyntheticSequence {
    /// Writes `frame_0001.ppm, ...` and `gt.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (k, frame) in self.frames.iter().enumerate() {
            io::write_ppm(&dir.join(format!("frame_{:04}.ppm", k + 1)), frame)?;
        }
        io::write_boxes(&dir.join("gt.txt"), &self.boxes)
    }
}

const CELL: u32 = 4;
const TARGET_COLORS: [[u8; 3]; 2] = [[220, 40, 40], [250, 210, 40]];

/// A square target of randomly colored 4 px cells moving `motion` px/frame to
/// the right over a static noise background, with mild per-frame sensor noise.
pub fn gen_sequence(spec: &SyntheticSpec) -> Result<SyntheticSequence> {
    if spec.frames == 0 {
        return Err(Error::Input("a sequence needs at least one frame".into()));
    }
    let size = spec.target;
    let start_x = (spec.height as i32 - size as i32) / 2;
    let start_y = (spec.height as i32 - size as i32) / 2;
    let boxes: Vec<BoundingBox> = (0..spec.frames)
        .map(|k| BoundingBox::new(start_x + spec.motion * k as i32, start_y, size, size))
        .collect();
    if let Some(out) = boxes.iter().find(|b| !b.inside(spec.width, spec.height)) {
        return Err(Error::Input(format!(
            "target box {out} leaves the {}x{} frame",
            spec.width, spec.height
        )));
    }

    let mut rng = SeededRng::new(spec.seed);
    // background clutter: random 2x2 blocks of muted colors
    let blocks_w = spec.width.div_ceil(2);
    let blocks: Vec<[u8; 3]> = (0..blocks_w * spec.height.div_ceil(2))
        .map(|_| {
            let base = 40 + rng.below(120) as u8;
            [base, base.saturating_add(rng.below(40) as u8), base.saturating_add(rng.below(60) as u8)]
        })
        .collect();
    let background = RgbImage::from_fn(spec.width, spec.height, |x, y| Rgb(blocks[((y / 2) * blocks_w + x / 2) as usize]));
    // A regular checker is self-similar under a one-cell diagonal shift, so
    // cells take a random color instead, fixed for the whole sequence.
    let cells_side = size.div_ceil(CELL);
    let pattern: Vec<usize> = (0..cells_side * cells_side).map(|_| rng.below(2)).collect();

    let frames = boxes
        .iter()
        .map(|b| {
            let mut frame = background.clone();
            for y in 0..size {
                for x in 0..size {
                    let color = TARGET_COLORS[pattern[((y / CELL) * cells_side + x / CELL) as usize]];
                    frame.put_pixel((b.x as u32) + x, (b.y as u32) + y, Rgb(color));
                }
            }
            for px in frame.pixels_mut() {
                for c in 0..3 {
                    let jitter = rng.below(9) as i32 - 4;
                    px[c] = (px[c] as i32 + jitter).clamp(0, 255) as u8;
                }
            }
            frame
        })
        .collect();
    Ok(SyntheticSequence { frames, boxes })
}
