//! Hierarchical chamfer matching of a point template against an edge set.
//!
//! Offsets are where the template's local origin lands in field
//! coordinates. Scores are mean Euclidean distances from the placed
//! template points to the nearest edge; a point outside the field costs
//! the field's maximum distance.
//!
//! Level `k` of the pyramid groups offsets into `2^k x 2^k` cells. For each
//! template point it stores the smallest distance over the block of
//! positions the point can reach from any offset in the cell, so the mean
//! of those minima never exceeds the score of any offset in the cell. A
//! cell is refined only when that bound is within the accept threshold,
//! which makes the coarse-to-fine search return exactly the offsets a full
//! scan would.

use thiserror::Error;

use crate::image::{distance_transform, BinaryMask, DistanceField, PixelCoord, Rect};

pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 2.0;
pub const MIN_COARSE_SIDE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChamferError {
    #[error("template has no points")]
    EmptyTemplate,
    #[error("edge set is empty")]
    EmptyEdges,
    #[error("{levels} levels would shrink {width}x{height} below 8x8")]
    TooManyLevels { levels: usize, width: usize, height: usize },
    #[error("pyramid needs at least one level")]
    NoLevels,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferMatch {
    pub offset: PixelCoord,
    pub score: f64,
}

/// Minimum of the base field over `side x side` blocks, indexed by the
/// block's top-left corner. Corners range from `1 - side` to the field
/// size so every block touching the field has an entry.
#[derive(Debug, Clone)]
pub struct BlockMinField {
    side: i32,
    width: i32,
    height: i32,
    data: Vec<f32>,
    outside: f32,
}

impl BlockMinField {
    /// Level with twice the block side of `finer` (or of the base field
    /// when `finer` is `None`): each block is the minimum of its four
    /// half-size sub-blocks.
    fn coarsen(base: &DistanceField, finer: Option<&BlockMinField>) -> Self {
        let half = finer.map_or(1, |f| f.side);
        let side = 2 * half;
        let (fw, fh) = (base.width() as i32, base.height() as i32);
        let pad = side - 1;
        let (w, h) = (fw + pad, fh + pad);
        let outside = base.max();
        let get = |x: i32, y: i32| match finer {
            Some(f) => f.at(x, y),
            None => base.at(x, y).unwrap_or(outside),
        };
        let mut data = Vec::with_capacity((w * h) as usize);
        for cy in 0..h {
            let y = cy - pad;
            for cx in 0..w {
                let x = cx - pad;
                data.push(get(x, y).min(get(x + half, y)).min(get(x, y + half)).min(get(x + half, y + half)));
            }
        }
        BlockMinField {
            side,
            width: w,
            height: h,
            data,
            outside,
        }
    }

    pub fn side(&self) -> usize {
        self.side as usize
    }

    /// Smallest distance in the block whose top-left corner is `(x, y)`;
    /// the outside cost for blocks that miss the field.
    pub fn at(&self, x: i32, y: i32) -> f32 {
        let (cx, cy) = (x + self.side - 1, y + self.side - 1);
        if cx < 0 || cy < 0 || cx >= self.width || cy >= self.height {
            return self.outside;
        }
        self.data[(cy * self.width + cx) as usize]
    }
}

/// The full-resolution distance field plus one block-minimum field per
/// coarser level.
#[derive(Debug, Clone)]
pub struct EdgePyramid {
    base: DistanceField,
    coarse: Vec<BlockMinField>,
}

impl EdgePyramid {
    pub fn num_levels(&self) -> usize {
        self.coarse.len() + 1
    }

    pub fn base(&self) -> &DistanceField {
        &self.base
    }

    /// Block-minimum field of level `k >= 1`.
    pub fn coarse(&self, k: usize) -> &BlockMinField {
        &self.coarse[k - 1]
    }
}

/// Default depth for a search window: `floor(log2(min side / 8)) + 1`,
/// at least one.
pub fn default_levels(width: usize, height: usize) -> usize {
    let m = width.min(height);
    if m < MIN_COARSE_SIDE {
        return 1;
    }
    ((m / MIN_COARSE_SIDE).ilog2() + 1) as usize
}

fn div_floor(p: PixelCoord, k: usize) -> PixelCoord {
    let s = 1i32 << k;
    PixelCoord::new(p.x.div_euclid(s), p.y.div_euclid(s))
}

fn level_dims(width: usize, height: usize, k: usize) -> (usize, usize) {
    (width.div_ceil(1 << k), height.div_ceil(1 << k))
}

/// Rasterizes `edge_points` (those inside `width x height`) and builds the
/// distance field with `num_levels - 1` coarser bound levels.
pub fn build_edge_pyramid(
    edge_points: &[PixelCoord],
    width: usize,
    height: usize,
    num_levels: usize,
) -> Result<EdgePyramid, ChamferError> {
    if num_levels == 0 {
        return Err(ChamferError::NoLevels);
    }
    let bounds = Rect::new(0, 0, width as i32, height as i32);
    let mut mask = BinaryMask::new(width, height);
    let mut any = false;
    for p in edge_points.iter().filter(|p| bounds.contains(**p)) {
        mask.set(p.x as usize, p.y as usize, true);
        any = true;
    }
    if !any {
        return Err(ChamferError::EmptyEdges);
    }
    let (cw, ch) = level_dims(width, height, num_levels - 1);
    if num_levels > 1 && (cw < MIN_COARSE_SIDE || ch < MIN_COARSE_SIDE) {
        return Err(ChamferError::TooManyLevels {
            levels: num_levels,
            width,
            height,
        });
    }
    let base = distance_transform(&mask).expect("mask has a source pixel");
    let mut coarse: Vec<BlockMinField> = Vec::with_capacity(num_levels - 1);
    for _ in 1..num_levels {
        let level = BlockMinField::coarsen(&base, coarse.last());
        coarse.push(level);
    }
    Ok(EdgePyramid { base, coarse })
}

/// Mean distance of the template placed at `offset`.
pub fn chamfer_score(template: &[PixelCoord], field: &DistanceField, offset: PixelCoord) -> Result<f64, ChamferError> {
    if template.is_empty() {
        return Err(ChamferError::EmptyTemplate);
    }
    Ok(score_unchecked(template, field, offset))
}

fn score_unchecked(template: &[PixelCoord], field: &DistanceField, offset: PixelCoord) -> f64 {
    let outside = field.max() as f64;
    let mut sum = 0.0;
    for p in template {
        sum += field.at(p.x + offset.x, p.y + offset.y).map_or(outside, |d| d as f64);
    }
    sum / template.len() as f64
}

/// Early-exit bound on a running sum. Slightly above `limit * n` so that
/// rounding never stops a sum whose mean would still be accepted.
fn budget(limit: f64, n: usize) -> f64 {
    limit * n as f64 * (1.0 + 1e-9) + 1e-9
}

/// Whether the mean of `template` at `offset` stays within `limit`; stops
/// summing once the budget is spent. `outside` is the value of points that
/// miss the field.
fn within(template: &[PixelCoord], field: &DistanceField, offset: PixelCoord, limit: f64) -> Option<f64> {
    let outside = field.max() as f64;
    let budget = budget(limit, template.len());
    let mut sum = 0.0;
    for p in template {
        sum += field.at(p.x + offset.x, p.y + offset.y).map_or(outside, |d| d as f64);
        if sum > budget {
            return None;
        }
    }
    let s = sum / template.len() as f64;
    (s <= limit).then_some(s)
}

fn sort_matches(v: &mut [ChamferMatch]) {
    v.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.offset.y.cmp(&b.offset.y))
            .then(a.offset.x.cmp(&b.offset.x))
    });
}

/// Every offset in `search` (a rectangle of offsets) scoring at most
/// `accept_threshold` on the finest level, sorted by score then offset.
pub fn hierarchical_match(
    template: &[PixelCoord],
    pyramid: &EdgePyramid,
    search: &Rect,
    accept_threshold: f64,
) -> Result<Vec<ChamferMatch>, ChamferError> {
    if template.is_empty() {
        return Err(ChamferError::EmptyTemplate);
    }
    if search.is_empty() {
        return Ok(Vec::new());
    }
    let top = pyramid.num_levels() - 1;
    let lo = PixelCoord::new(search.x0, search.y0);
    let hi = PixelCoord::new(search.x1() - 1, search.y1() - 1);

    let (clo, chi) = (div_floor(lo, top), div_floor(hi, top));
    let mut frontier: Vec<PixelCoord> = (clo.y..=chi.y)
        .flat_map(|y| (clo.x..=chi.x).map(move |x| PixelCoord::new(x, y)))
        .collect();

    for k in (1..=top).rev() {
        let field = pyramid.coarse(k);
        let side = field.side as i32;
        let budget = budget(accept_threshold, template.len());
        let (flo, fhi) = (div_floor(lo, k - 1), div_floor(hi, k - 1));
        let mut next = Vec::new();
        for o in frontier {
            // lower bound for every offset in cell `o`
            let mut sum = 0.0;
            let mut pruned = false;
            for p in template {
                sum += field.at(p.x + side * o.x, p.y + side * o.y) as f64;
                if sum > budget {
                    pruned = true;
                    break;
                }
            }
            if pruned {
                continue;
            }
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let c = PixelCoord::new(2 * o.x + dx, 2 * o.y + dy);
                if c.x >= flo.x && c.x <= fhi.x && c.y >= flo.y && c.y <= fhi.y {
                    next.push(c);
                }
            }
        }
        frontier = next;
    }

    let base = pyramid.base();
    let mut out: Vec<ChamferMatch> = frontier
        .into_iter()
        .filter_map(|o| {
            let score = within(template, base, o, accept_threshold)?;
            Some(ChamferMatch { offset: o, score })
        })
        .collect();
    sort_matches(&mut out);
    Ok(out)
}

/// Full-resolution scan over every offset in `search`.
pub fn exhaustive_match(
    template: &[PixelCoord],
    field: &DistanceField,
    search: &Rect,
    accept_threshold: f64,
) -> Result<Vec<ChamferMatch>, ChamferError> {
    if template.is_empty() {
        return Err(ChamferError::EmptyTemplate);
    }
    let mut out = Vec::new();
    for y in search.y0..search.y1() {
        for x in search.x0..search.x1() {
            let o = PixelCoord::new(x, y);
            let s = score_unchecked(template, field, o);
            if s <= accept_threshold {
                out.push(ChamferMatch { offset: o, score: s });
            }
        }
    }
    sort_matches(&mut out);
    Ok(out)
}

/// Shifts points so their bounding box starts at the origin; returns the
/// shifted points and the original box corner.
pub fn normalize_template(points: &[PixelCoord]) -> (Vec<PixelCoord>, PixelCoord) {
    let corner = Rect::bounding(points).map_or(PixelCoord::new(0, 0), |b| PixelCoord::new(b.x0, b.y0));
    (points.iter().map(|p| p.offset(-corner.x, -corner.y)).collect(), corner)
}
