//! Patch partitioning, per-patch descriptors, ranking queries and patch-weight
//! fusion.

use image::{GenericImageView, Rgb, RgbImage};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, PatchAdjacency};
use crate::prox::DenseMatrix;

pub type Frame = RgbImage;

pub const GRID_ROWS: usize = 8;
pub const GRID_COLS: usize = 8;
pub const COLOR_BINS: usize = 8;
pub const ORIENTATION_BINS: usize = 8;
/// 8 color bins for each of R, G, B followed by 8 orientation bins.
pub const FEATURE_DIM: usize = 3 * COLOR_BINS + ORIENTATION_BINS;

/// Axis-aligned box in integer pixels; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: i32, y: i32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    pub fn right(&self) -> i32 {
        self.x + self.w as i32
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h as i32
    }

    pub fn area(&self) -> f64 {
        self.w as f64 * self.h as f64
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0) as f64;
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0) as f64;
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }

    /// Intersection with a `width x height` frame, if nonempty.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.right().min(width as i32);
        let y1 = self.bottom().min(height as i32);
        (x1 > x0 && y1 > y0).then(|| BoundingBox::new(x0, y0, (x1 - x0) as u32, (y1 - y0) as u32))
    }

    pub fn inside(&self, width: u32, height: u32) -> bool {
        self.x >= 0 && self.y >= 0 && self.right() <= width as i32 && self.bottom() <= height as i32
    }
}

impl std::fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl std::str::FromStr for BoundingBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() < 4 {
            return Err(Error::Input(format!("expected x,y,w,h, got {s:?}")));
        }
        let int = |t: &str| {
            t.parse::<f64>()
                .map(|v| v.round())
                .map_err(|_| Error::Input(format!("bad box coordinate {t:?}")))
        };
        let (x, y, w, h) = (int(parts[0])?, int(parts[1])?, int(parts[2])?, int(parts[3])?);
        if w < 1.0 || h < 1.0 {
            return Err(Error::Input(format!("box extents must be >= 1, got {s:?}")));
        }
        Ok(BoundingBox::new(x as i32, y as i32, w as u32, h as u32))
    }
}

/// Splits `length` into `parts` contiguous spans; the last span takes the remainder.
pub(crate) fn spans(start: i32, length: u32, parts: usize) -> Vec<(i32, u32)> {
    let base = length / parts as u32;
    (0..parts)
        .map(|k| {
            let offset = start + (k as u32 * base) as i32;
            let len = if k + 1 == parts { length - base * (parts as u32 - 1) } else { base };
            (offset, len)
        })
        .collect()
}

/// An 8x8 partition of a box with one descriptor column per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub bbox: BoundingBox,
    pub rows: usize,
    pub cols: usize,
    /// Patch rectangles in row-major order.
    pub patches: Vec<BoundingBox>,
    /// `FEATURE_DIM x (rows * cols)`.
    pub features: DenseMatrix,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn prior_graph(&self) -> Result<PatchAdjacency> {
        graph::build_prior_graph(self.rows, self.cols, &self.features)
    }
}

/// Tiles `bbox` (clamped to the frame) with `rows x cols` patches, remainder
/// pixels going to the last row and column.
pub fn patch_rects(bbox: &BoundingBox, rows: usize, cols: usize) -> Vec<BoundingBox> {
    let xs = spans(bbox.x, bbox.w, cols);
    let ys = spans(bbox.y, bbox.h, rows);
    ys.iter()
        .flat_map(|&(y, h)| xs.iter().map(move |&(x, w)| BoundingBox::new(x, y, w, h)))
        .collect()
}

pub fn partition(frame: &Frame, bbox: &BoundingBox) -> Result<PatchGrid> {
    partition_grid(frame, bbox, GRID_ROWS, GRID_COLS)
}

pub fn partition_grid(frame: &Frame, bbox: &BoundingBox, rows: usize, cols: usize) -> Result<PatchGrid> {
    let clamped = bbox
        .clamp_to(frame.width(), frame.height())
        .ok_or_else(|| Error::Input(format!("box {bbox} does not intersect the {}x{} frame", frame.width(), frame.height())))?;
    if (clamped.w as usize) < cols || (clamped.h as usize) < rows {
        return Err(Error::Input(format!(
            "box {clamped} is smaller than {cols}x{rows} pixels and cannot be partitioned"
        )));
    }
    let patches = patch_rects(&clamped, rows, cols);
    let mut features = DenseMatrix::zeros(FEATURE_DIM, patches.len());
    for (j, rect) in patches.iter().enumerate() {
        let view = frame.view(rect.x as u32, rect.y as u32, rect.w, rect.h);
        features.set_column(j, &extract_feature(&*view));
    }
    Ok(PatchGrid { bbox: clamped, rows, cols, patches, features })
}

#[inline]
fn gray(p: &Rgb<u8>) -> f64 {
    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
}

/// 24-bin RGB histogram plus 8-bin unsigned gradient-orientation histogram,
/// L2-normalized.
///
/// Color bins are uniform over `[0, 256)` per channel; gradients are central
/// differences of grayscale inside the patch (borders replicated), binned over
/// `[0, pi)` and weighted by magnitude. Both halves are averaged per pixel
/// before the final normalization.
pub fn extract_feature<I>(patch: &I) -> DVector<f64>
where
    I: GenericImageView<Pixel = Rgb<u8>>,
{
    let (w, h) = patch.dimensions();
    let mut hist = DVector::zeros(FEATURE_DIM);
    if w == 0 || h == 0 {
        return hist;
    }
    let mut luma = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let p = patch.get_pixel(x, y);
            for c in 0..3 {
                hist[c * COLOR_BINS + p[c] as usize / (256 / COLOR_BINS)] += 1.0;
            }
            luma.push(gray(&p));
        }
    }
    let at = |x: u32, y: u32| luma[(y * w + x) as usize];
    let bin_width = std::f64::consts::PI / ORIENTATION_BINS as f64;
    for y in 0..h {
        for x in 0..w {
            let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) / 2.0;
            let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) / 2.0;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            let bin = ((theta / bin_width) as usize).min(ORIENTATION_BINS - 1);
            hist[3 * COLOR_BINS + bin] += mag;
        }
    }
    hist /= (w * h) as f64;
    let norm = hist.norm();
    if norm > 0.0 {
        hist /= norm;
    }
    hist
}

/// `y_i = 1` iff the center of patch `i` lies in the box shrunk by `shrink`
/// about its center. Falls back to the patch holding the box center when no
/// patch center qualifies.
pub fn foreground_queries(grid: &PatchGrid, shrink: f64) -> Result<DVector<f64>> {
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(Error::Param(format!("shrink ratio must lie in (0, 1), got {shrink}")));
    }
    let (cx, cy) = grid.bbox.center();
    let half_w = shrink * grid.bbox.w as f64 / 2.0;
    let half_h = shrink * grid.bbox.h as f64 / 2.0;
    let mut y = DVector::from_iterator(
        grid.len(),
        grid.patches.iter().map(|p| {
            let (px, py) = p.center();
            ((px - cx).abs() <= half_w && (py - cy).abs() <= half_h) as u8 as f64
        }),
    );
    if y.sum() == 0.0 {
        let nearest = grid
            .patches
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = distance_to_point(a.1, cx, cy);
                let db = distance_to_point(b.1, cx, cy);
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .expect("grid has patches");
        y[nearest] = 1.0;
    }
    Ok(y)
}

fn distance_to_point(b: &BoundingBox, x: f64, y: f64) -> f64 {
    let (px, py) = b.center();
    (px - x).hypot(py - y)
}

/// Ranking problem for background weights: the box patches plus a ring of
/// same-sized patches from the expanded box, with the ring as queries.
#[derive(Debug, Clone)]
pub struct BackgroundProblem {
    /// Grid cells of every node; box patches occupy `0..rows` x `0..cols`.
    pub cells: Vec<(i32, i32)>,
    pub patches: Vec<BoundingBox>,
    pub features: DenseMatrix,
    pub queries: DVector<f64>,
    /// Node index of each box patch, in the box grid's row-major order.
    pub box_nodes: Vec<usize>,
}

impl BackgroundProblem {
    pub fn prior_graph(&self) -> Result<PatchAdjacency> {
        graph::build_prior_graph_over(self.cells.clone(), &self.features)
    }
}

/// Builds the background ranking problem around `grid`. Ring patches extending
/// past the frame are dropped; `None` means no ring patch survived, so
/// background queries are unavailable.
pub fn background_problem(frame: &Frame, grid: &PatchGrid, expand: f64) -> Result<Option<BackgroundProblem>> {
    if !(expand > 1.0 && expand.is_finite()) {
        return Err(Error::Param(format!("expand ratio must exceed 1, got {expand}")));
    }
    let (rows, cols) = (grid.rows as i32, grid.cols as i32);
    let bbox = grid.bbox;
    let pw = (bbox.w / grid.cols as u32) as i32;
    let ph = (bbox.h / grid.rows as u32) as i32;
    let ring_rows = ((expand - 1.0) / 2.0 * grid.rows as f64).ceil() as i32;
    let ring_cols = ((expand - 1.0) / 2.0 * grid.cols as f64).ceil() as i32;
    let (cx, cy) = bbox.center();
    let half_w = expand * bbox.w as f64 / 2.0;
    let half_h = expand * bbox.h as f64 / 2.0;

    let coord = |k: i32, start: i32, extent: i32, step: i32, count: i32| -> i32 {
        if k < 0 {
            start + k * step
        } else {
            start + extent + (k - count) * step
        }
    };

    let mut cells: Vec<(i32, i32)> = Vec::with_capacity(grid.len());
    let mut patches = grid.patches.clone();
    let mut columns: Vec<DVector<f64>> = (0..grid.len()).map(|j| grid.features.column(j).into_owned()).collect();
    for r in 0..rows {
        for c in 0..cols {
            cells.push((r, c));
        }
    }
    let box_nodes: Vec<usize> = (0..grid.len()).collect();
    for r in -ring_rows..rows + ring_rows {
        for c in -ring_cols..cols + ring_cols {
            if (0..rows).contains(&r) && (0..cols).contains(&c) {
                continue;
            }
            let (x, w) = if (0..cols).contains(&c) {
                let p = &grid.patches[c as usize];
                (p.x, p.w)
            } else {
                (coord(c, bbox.x, bbox.w as i32, pw, cols), pw as u32)
            };
            let (y, h) = if (0..rows).contains(&r) {
                let p = &grid.patches[(r * cols) as usize];
                (p.y, p.h)
            } else {
                (coord(r, bbox.y, bbox.h as i32, ph, rows), ph as u32)
            };
            let rect = BoundingBox::new(x, y, w, h);
            let (px, py) = rect.center();
            if (px - cx).abs() > half_w || (py - cy).abs() > half_h {
                continue;
            }
            if !rect.inside(frame.width(), frame.height()) {
                continue;
            }
            let view = frame.view(x as u32, y as u32, w, h);
            columns.push(extract_feature(&*view));
            cells.push((r, c));
            patches.push(rect);
        }
    }
    if cells.len() == grid.len() {
        return Ok(None);
    }
    let features = DenseMatrix::from_columns(&columns);
    let queries = DVector::from_iterator(cells.len(), (0..cells.len()).map(|i| (i >= grid.len()) as u8 as f64));
    Ok(Some(BackgroundProblem { cells, patches, features, queries, box_nodes }))
}

/// `w_i = 1 / (1 + exp(-eps (v_i - u_i)))`.
pub fn fuse_weights(v: &DVector<f64>, u: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
    if v.len() != u.len() {
        return Err(Error::dim("fuse_weights", v.len(), u.len()));
    }
    Ok(v.zip_map(u, |a, b| logistic(eps * (a - b))))
}

#[inline]
fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Scales column `i` of the descriptor by `w_i`.
pub fn weighted_descriptor(features: &DenseMatrix, weights: &DVector<f64>) -> Result<DenseMatrix> {
    if features.ncols() != weights.len() {
        return Err(Error::dim("weighted_descriptor", features.ncols(), weights.len()));
    }
    let mut out = features.clone();
    for (mut col, &w) in out.column_iter_mut().zip(weights.iter()) {
        col.scale_mut(w);
    }
    Ok(out)
}
