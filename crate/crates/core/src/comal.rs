//! Corners on stable level lines.
//!
//! A corner is a contour point of a maximally stable region whose local
//! point distribution spreads in both directions: the smaller eigenvalue of
//! the scatter matrix of the contour points within `scale` (arc length,
//! one unit per contour step) is the cornerness. Corners are strict local
//! maxima of cornerness along the contour. Each corner also carries its
//! 41x41 support patch split by the level line into an inside side (A) and
//! an outside side (B).

use std::sync::Arc;

use thiserror::Error;

use crate::image::{BinaryMask, GrayImage, PixelCoord, Rect};
use crate::mser::{self, trace_boundary, Contour, MserError, MserParams, Polarity, RegionMask};

pub const DEFAULT_SCALE: f64 = 8.4;
pub const DEFAULT_PATCH: usize = 41;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CornerError {
    #[error("only {0} contour points inside the arc window (need 3)")]
    ArcTooShort(usize),
    #[error(transparent)]
    Mser(#[from] MserError),
}

/// The boundary of one stable region, used as a level-line segment.
#[derive(Debug, Clone)]
pub struct LevelLineSegment {
    pub contour: Contour,
    /// Per contour point: true where the point touches the region's
    /// complement (not just the edge of the analysed window).
    pub on_line: Vec<bool>,
    pub level: u8,
    pub stability: f64,
    pub polarity: Polarity,
    pub region: RegionMask,
}

impl LevelLineSegment {
    pub fn from_region(region: &mser::ExtremalRegion, bounds: &Rect) -> Self {
        let contour = trace_boundary(&region.mask);
        let on_line = contour
            .points
            .iter()
            .map(|&p| region.mask.on_level_line(p, bounds))
            .collect();
        LevelLineSegment {
            contour,
            on_line,
            level: region.level,
            stability: region.stability,
            polarity: region.polarity,
            region: region.mask.clone(),
        }
    }

    /// Level-line points of the contour within `radius` steps of `idx`,
    /// in contour order. Window-edge points are dropped.
    pub fn arc_around(&self, idx: usize, radius: usize) -> Vec<PixelCoord> {
        window_indices(&self.contour, idx, radius)
            .into_iter()
            .filter(|&i| self.on_line[i])
            .map(|i| self.contour.points[i])
            .collect()
    }

    /// Index of the contour point closest to `p` (first one on ties).
    pub fn nearest_index(&self, p: PixelCoord) -> usize {
        let mut best = (i64::MAX, 0);
        for (i, q) in self.contour.points.iter().enumerate() {
            let d = q.dist2(p);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// Inside/outside split of a support patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSplit {
    /// Effective (clamped) patch rectangle in image coordinates.
    pub patch: Rect,
    pub side_a: BinaryMask,
    pub side_b: BinaryMask,
    /// One side has fewer than the minimum pixel count.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct CornerPoint {
    pub position: PixelCoord,
    pub scale: f64,
    pub cornerness: f64,
    pub segment: Arc<LevelLineSegment>,
    /// Index of `position` in `segment.contour`.
    pub index: usize,
    pub split: SupportSplit,
}

impl CornerPoint {
    /// Contour indices of the cornerness window.
    pub fn arc(&self) -> Vec<usize> {
        window_indices(&self.segment.contour, self.index, arc_radius(self.scale))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub scale: f64,
    pub cornerness_threshold: f64,
    /// Shortest contour considered a long level line.
    pub min_contour_points: usize,
    pub mser: MserParams,
    pub patch_size: usize,
    pub min_side_pixels: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            scale: DEFAULT_SCALE,
            cornerness_threshold: 1.0,
            min_contour_points: (2.0 * DEFAULT_SCALE).ceil() as usize,
            mser: MserParams::detection(),
            patch_size: DEFAULT_PATCH,
            min_side_pixels: 40,
        }
    }
}

/// Arc radius in contour steps for a given scale.
pub fn arc_radius(scale: f64) -> usize {
    scale.max(0.0).floor() as usize
}

/// Indices within `radius` steps of `idx`: wrapping on closed contours,
/// clamped on open ones; the whole contour when it is shorter than the
/// window. Returned in walking order.
pub fn window_indices(contour: &Contour, idx: usize, radius: usize) -> Vec<usize> {
    let n = contour.len();
    if n == 0 {
        return Vec::new();
    }
    if contour.closed {
        if n < 2 * radius + 1 {
            return (0..n).map(|k| (idx + k) % n).collect();
        }
        (0..=2 * radius).map(|k| (idx + n - radius + k) % n).collect()
    } else {
        let lo = idx.saturating_sub(radius);
        let hi = (idx + radius).min(n - 1);
        (lo..=hi).collect()
    }
}

/// Smaller eigenvalue of the population scatter matrix of `points`.
pub fn scatter_min_eigen(points: &[PixelCoord]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x as f64, sy + p.y as f64));
    let (mx, my) = (mx / n, my / n);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p.x as f64 - mx;
        let dy = p.y as f64 - my;
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    let (a, b, c) = (a / n, b / n, c / n);
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (half_tr - disc).max(0.0)
}

pub fn cornerness(contour: &Contour, idx: usize, scale: f64) -> Result<f64, CornerError> {
    let win = window_indices(contour, idx, arc_radius(scale));
    if win.len() < 3 {
        return Err(CornerError::ArcTooShort(win.len()));
    }
    let pts: Vec<PixelCoord> = win.iter().map(|&i| contour.points[i]).collect();
    Ok(scatter_min_eigen(&pts))
}

/// Splits the patch centred on `center` into region pixels (A) and the
/// rest (B); contour pixels belong to neither.
pub fn split_support_region(
    bounds: &Rect,
    center: PixelCoord,
    region: &RegionMask,
    contour: &Contour,
    patch_size: usize,
    min_side_pixels: usize,
) -> SupportSplit {
    let half = (patch_size / 2) as i32;
    let patch = Rect::centered(center, half).intersect(bounds);
    let (w, h) = (patch.w.max(0) as usize, patch.h.max(0) as usize);
    let mut on_contour = BinaryMask::new(w, h);
    for p in &contour.points {
        if patch.contains(*p) {
            on_contour.set((p.x - patch.x0) as usize, (p.y - patch.y0) as usize, true);
        }
    }
    let side_a = BinaryMask::from_fn(w, h, |x, y| {
        !on_contour.get(x, y) && region.contains(PixelCoord::new(patch.x0 + x as i32, patch.y0 + y as i32))
    });
    let side_b = BinaryMask::from_fn(w, h, |x, y| {
        !on_contour.get(x, y) && !region.contains(PixelCoord::new(patch.x0 + x as i32, patch.y0 + y as i32))
    });
    let degenerate = side_a.count() < min_side_pixels || side_b.count() < min_side_pixels;
    SupportSplit {
        patch,
        side_a,
        side_b,
        degenerate,
    }
}

/// Corners of one level-line segment, in contour order.
pub fn segment_corners(segment: &Arc<LevelLineSegment>, bounds: &Rect, params: &DetectorParams) -> Vec<CornerPoint> {
    let contour = &segment.contour;
    let n = contour.len();
    if n < params.min_contour_points.max(3) {
        return Vec::new();
    }
    let radius = arc_radius(params.scale);
    // only windows lying entirely on the level line are scored
    let scores: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let win = window_indices(contour, i, radius);
            if win.iter().all(|&j| segment.on_line[j]) {
                cornerness(contour, i, params.scale).ok()
            } else {
                None
            }
        })
        .collect();

    let mut out = Vec::new();
    for i in 0..n {
        let Some(ci) = scores[i] else { continue };
        if ci <= params.cornerness_threshold {
            continue;
        }
        let is_max = window_indices(contour, i, radius).into_iter().all(|j| {
            j == i
                || match scores[j] {
                    None => true,
                    Some(cj) => ci > cj || (ci == cj && i < j),
                }
        });
        if !is_max {
            continue;
        }
        let position = contour.points[i];
        let split = split_support_region(
            bounds,
            position,
            &segment.region,
            contour,
            params.patch_size,
            params.min_side_pixels,
        );
        out.push(CornerPoint {
            position,
            scale: params.scale,
            cornerness: ci,
            segment: Arc::clone(segment),
            index: i,
            split,
        });
    }
    out
}

/// Corners of every maximally stable region of `img` (both polarities).
/// One corner per pixel position: the stronger one wins.
pub fn detect_corners(img: &GrayImage, params: &DetectorParams) -> Result<Vec<CornerPoint>, CornerError> {
    let bounds = img.bounds();
    let regions = mser::detect_msers(img, &params.mser)?;
    let mut corners: Vec<CornerPoint> = Vec::new();
    let mut seen: std::collections::HashMap<PixelCoord, usize> = std::collections::HashMap::new();
    for region in &regions {
        let segment = Arc::new(LevelLineSegment::from_region(region, &bounds));
        for c in segment_corners(&segment, &bounds, params) {
            match seen.get(&c.position) {
                Some(&k) if corners[k].cornerness >= c.cornerness => {}
                Some(&k) => corners[k] = c,
                None => {
                    seen.insert(c.position, corners.len());
                    corners.push(c);
                }
            }
        }
    }
    Ok(corners)
}

/// `corner_id,x,y,level,stability,cornerness` rows, ids in list order.
pub fn write_corners_csv<W: std::io::Write>(w: W, corners: &[CornerPoint]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["corner_id", "x", "y", "level", "stability", "cornerness"])?;
    for (i, c) in corners.iter().enumerate() {
        wr.write_record([
            i.to_string(),
            c.position.x.to_string(),
            c.position.y.to_string(),
            c.segment.level.to_string(),
            c.segment.stability.to_string(),
            c.cornerness.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `region_id,point_index,x,y` rows, one per contour point.
pub fn write_contours_csv<W: std::io::Write>(w: W, contours: &[Contour]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["region_id", "point_index", "x", "y"])?;
    for (r, c) in contours.iter().enumerate() {
        for (i, p) in c.points.iter().enumerate() {
            wr.write_record([r.to_string(), i.to_string(), p.x.to_string(), p.y.to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}
