//! Frame-to-frame point tracking.
//!
//! Each frame goes through three phases:
//! 1. stable regions are extracted in overlapping tiles (only the tiles
//!    some track needs);
//! 2. every track matches the level-line arc around its corner against
//!    each region boundary in its tile by hierarchical chamfer matching,
//!    keeping the best few (boundary, displacement) pairs;
//! 3. the shortlisted positions are verified by part SSD against the
//!    track's support patch, and the winner becomes the new anchor.
//!
//! Phases run in parallel over tracks on the current rayon pool; results
//! are merged in track order, so output does not depend on the pool size.

use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::chamfer::{self, build_edge_pyramid, hierarchical_match, normalize_template, ChamferMatch, EdgePyramid};
use crate::comal::{self, split_support_region, CornerError, CornerPoint, DetectorParams, LevelLineSegment};
use crate::image::{crop, BinaryMask, GrayImage, PixelCoord, Rect};
use crate::mser::{detect_msers, MserParams};
use crate::partssd::{self, verify_candidates, Combination, SupportPatch};
use crate::tracklog::{TrackLog, TrackRow, TrackStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("frame {got} does not follow frame {last}")]
    FrameOrder { last: usize, got: usize },
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("frame is {got:?}, expected {want:?}")]
    FrameSize { want: (usize, usize), got: (usize, usize) },
    #[error("bad tracker config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Detect(#[from] CornerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Largest per-axis displacement searched between two frames.
    pub search_radius: i32,
    pub patch_size: usize,
    pub scale: f64,
    /// Template arc radius as a multiple of `scale`.
    pub arc_factor: f64,
    pub chamfer_threshold: f64,
    pub ssd_threshold: f64,
    pub min_overlap: usize,
    pub min_side_pixels: usize,
    pub top_k: usize,
    pub max_misses: u32,
    pub tile_size: usize,
    pub tile_stride: usize,
    /// Run the detector every this many frames to spawn tracks (0: never).
    pub redetect_interval: usize,
    pub min_spawn_dist: f64,
    pub mser: MserParams,
    pub detector: DetectorParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            search_radius: 40,
            patch_size: comal::DEFAULT_PATCH,
            scale: comal::DEFAULT_SCALE,
            arc_factor: 2.0,
            chamfer_threshold: chamfer::DEFAULT_ACCEPT_THRESHOLD,
            ssd_threshold: partssd::DEFAULT_SSD_THRESHOLD,
            min_overlap: partssd::DEFAULT_MIN_OVERLAP,
            min_side_pixels: 40,
            top_k: 5,
            max_misses: 1,
            tile_size: 160,
            tile_stride: 80,
            redetect_interval: 0,
            min_spawn_dist: 10.0,
            mser: MserParams::tracking(),
            detector: DetectorParams::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |m: &str| Err(TrackerError::BadConfig(m.to_string()));
        if self.patch_size % 2 == 0 || self.patch_size < 3 {
            return bad("patch_size must be odd and >= 3");
        }
        if self.search_radius < (self.patch_size / 2) as i32 {
            return bad("search_radius must be at least the patch half-width");
        }
        if self.tile_stride == 0 || self.tile_stride > self.tile_size {
            return bad("tile_stride must be in 1..=tile_size");
        }
        if self.tile_size - self.tile_stride < 2 * self.search_radius as usize {
            return bad("tile overlap must be at least twice the search radius");
        }
        if self.top_k == 0 || self.max_misses == 0 {
            return bad("top_k and max_misses must be positive");
        }
        if self.mser.delta == 0 || self.detector.mser.delta == 0 {
            return bad("mser delta must be >= 1");
        }
        if self.chamfer_threshold < 0.0 || self.ssd_threshold < 0.0 || self.scale <= 0.0 {
            return bad("thresholds must be non-negative and scale positive");
        }
        Ok(())
    }

    fn arc_radius(&self) -> usize {
        comal::arc_radius(self.arc_factor * self.scale)
    }

    /// Margin around a boundary's edges kept in its distance field; any
    /// template point beyond it costs more than the accept threshold.
    fn field_margin(&self) -> i32 {
        ((2.0 * self.chamfer_threshold).ceil() as i32 + 1).max(4)
    }
}

/// Tile start positions along one axis.
fn tile_starts(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let last = len - tile;
    let mut v: Vec<usize> = (0..last).step_by(stride).collect();
    v.push(last);
    v
}

/// A region boundary found in one tile, with its lazily built field.
#[derive(Debug)]
pub struct TileBoundary {
    pub segment: Arc<LevelLineSegment>,
    /// Level-line points (frame coordinates).
    pub edges: Vec<PixelCoord>,
    pub edge_box: Rect,
    field: OnceLock<Option<(Rect, EdgePyramid)>>,
}

impl TileBoundary {
    fn field(&self, frame: &Rect, margin: i32) -> Option<&(Rect, EdgePyramid)> {
        self.field
            .get_or_init(|| {
                let rect = self.edge_box.expand(margin).intersect(frame);
                let local: Vec<PixelCoord> = self.edges.iter().map(|p| p.offset(-rect.x0, -rect.y0)).collect();
                let (w, h) = (rect.w as usize, rect.h as usize);
                let levels = chamfer::default_levels(w, h);
                build_edge_pyramid(&local, w, h, levels).ok().map(|p| (rect, p))
            })
            .as_ref()
    }
}

#[derive(Debug)]
pub struct MserTile {
    pub rect: Rect,
    boundaries: OnceLock<Vec<TileBoundary>>,
}

/// Stable-region boundaries of one frame, extracted per overlapping tile.
#[derive(Debug)]
pub struct MserWindowCache<'a> {
    frame: &'a GrayImage,
    params: MserParams,
    pub cols: usize,
    pub rows: usize,
    tiles: Vec<MserTile>,
}

impl<'a> MserWindowCache<'a> {
    /// Lays out the grid; no tile is computed yet.
    pub fn new(frame: &'a GrayImage, cfg: &TrackerConfig) -> Self {
        let xs = tile_starts(frame.width(), cfg.tile_size, cfg.tile_stride);
        let ys = tile_starts(frame.height(), cfg.tile_size, cfg.tile_stride);
        let (tw, th) = (cfg.tile_size.min(frame.width()), cfg.tile_size.min(frame.height()));
        let tiles = ys
            .iter()
            .flat_map(|&y| {
                xs.iter().map(move |&x| MserTile {
                    rect: Rect::new(x as i32, y as i32, tw as i32, th as i32),
                    boundaries: OnceLock::new(),
                })
            })
            .collect();
        MserWindowCache {
            frame,
            params: cfg.mser.clone(),
            cols: xs.len(),
            rows: ys.len(),
            tiles,
        }
    }

    pub fn tiles(&self) -> &[MserTile] {
        &self.tiles
    }

    pub fn frame(&self) -> &GrayImage {
        self.frame
    }

    /// Boundaries of tile `i`, extracting them on first use.
    pub fn boundaries(&self, i: usize) -> &[TileBoundary] {
        let tile = &self.tiles[i];
        tile.boundaries.get_or_init(|| {
            let (img, rect) = crop(self.frame, tile.rect).expect("tile lies inside the frame");
            let regions = detect_msers(&img, &self.params).expect("validated mser params");
            regions
                .iter()
                .filter_map(|r| {
                    let mut r = r.clone();
                    r.mask = r.mask.translated(rect.x0, rect.y0);
                    let segment = LevelLineSegment::from_region(&r, &rect);
                    let edges: Vec<PixelCoord> = segment
                        .contour
                        .points
                        .iter()
                        .zip(&segment.on_line)
                        .filter(|(_, on)| **on)
                        .map(|(p, _)| *p)
                        .collect();
                    let edge_box = Rect::bounding(&edges)?;
                    Some(TileBoundary {
                        segment: Arc::new(segment),
                        edges,
                        edge_box,
                        field: OnceLock::new(),
                    })
                })
                .collect()
        })
    }

    /// The tile holding `search` (clipped to the frame) whose centre is
    /// closest to `center`; the closest tile overall if none holds it.
    pub fn nearest_tile(&self, center: PixelCoord, search: &Rect) -> usize {
        let clipped = search.intersect(&self.frame.bounds());
        let d2 = |r: &Rect| {
            let cx = 2 * r.x0 + r.w - 1 - 2 * center.x;
            let cy = 2 * r.y0 + r.h - 1 - 2 * center.y;
            cx as i64 * cx as i64 + cy as i64 * cy as i64
        };
        let mut best: Option<(bool, i64, usize)> = None;
        for (i, t) in self.tiles.iter().enumerate() {
            let key = (!t.rect.contains_rect(&clipped), d2(&t.rect), i);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        best.expect("grid has at least one tile").2
    }
}

/// Corners whose template arc lies exactly on one boundary of the tile
/// the tracker would search them in. The rest have a level line that the
/// windowed extraction does not reproduce, so they could not be re-found
/// even in an unchanged frame.
pub fn trackable_corners(frame: &GrayImage, corners: Vec<CornerPoint>, cfg: &TrackerConfig) -> Vec<CornerPoint> {
    let cache = MserWindowCache::new(frame, cfg);
    let radius = cfg.arc_radius();
    let edge_sets: Vec<OnceLock<Vec<Vec<PixelCoord>>>> = (0..cache.tiles().len()).map(|_| OnceLock::new()).collect();
    corners
        .into_iter()
        .filter(|c| {
            let arc = c.segment.arc_around(c.index, radius);
            let tile = cache.nearest_tile(c.position, &Rect::centered(c.position, cfg.search_radius));
            let sets = edge_sets[tile].get_or_init(|| {
                cache
                    .boundaries(tile)
                    .iter()
                    .map(|b| {
                        let mut e = b.edges.clone();
                        e.sort_unstable();
                        e
                    })
                    .collect()
            });
            !arc.is_empty() && sets.iter().any(|e| arc.iter().all(|p| e.binary_search(p).is_ok()))
        })
        .collect()
}

/// Builds every tile up front.
pub fn precompute_mser_windows<'a>(frame: &'a GrayImage, cfg: &TrackerConfig) -> MserWindowCache<'a> {
    let cache = MserWindowCache::new(frame, cfg);
    (0..cache.tiles.len()).into_par_iter().for_each(|i| {
        cache.boundaries(i);
    });
    cache
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub frame: usize,
    pub position: PixelCoord,
    pub chamfer_score: Option<f64>,
    pub ssd_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub position: PixelCoord,
    /// Level line the track is anchored on.
    pub segment: Arc<LevelLineSegment>,
    /// Contour index of the anchor point.
    pub index: usize,
    pub patch: SupportPatch,
    pub history: Vec<HistoryEntry>,
    pub status: TrackStatus,
    pub misses: u32,
}

impl Track {
    pub fn from_corner(id: u64, frame: &GrayImage, frame_idx: usize, corner: &CornerPoint) -> Self {
        let patch = SupportPatch::from_split(frame, corner.position, &corner.split).expect("corner patch lies in the frame");
        Track {
            id,
            position: corner.position,
            segment: Arc::clone(&corner.segment),
            index: corner.index,
            patch,
            history: vec![HistoryEntry {
                frame: frame_idx,
                position: corner.position,
                chamfer_score: None,
                ssd_score: None,
            }],
            status: TrackStatus::Active,
            misses: 0,
        }
    }

    /// Level-line points within `radius` contour steps of the anchor.
    pub fn arc(&self, radius: usize) -> Vec<PixelCoord> {
        self.segment.arc_around(self.index, radius)
    }
}

/// One shortlisted position for a track.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub tile: usize,
    /// Index of the boundary within its tile.
    pub boundary: usize,
    pub segment: Arc<LevelLineSegment>,
    /// `offset` is the displacement of the track.
    pub chamfer: ChamferMatch,
}

/// Chamfer shortlist for one track: all boundaries of the nearest tile,
/// each matched on its own, pooled, ordered by score and capped at
/// `top_k`.
pub fn shortlist(track: &Track, cache: &MserWindowCache, cfg: &TrackerConfig) -> Vec<Candidate> {
    let arc = track.arc(cfg.arc_radius());
    let Some(tbox) = Rect::bounding(&arc) else {
        return Vec::new();
    };
    let (template, origin) = normalize_template(&arc);
    let r = cfg.search_radius;
    let frame = cache.frame().bounds();
    let p = track.position;
    // displacements keeping the corner inside the frame
    let dlo = PixelCoord::new((-r).max(frame.x0 - p.x), (-r).max(frame.y0 - p.y));
    let dhi = PixelCoord::new(r.min(frame.x1() - 1 - p.x), r.min(frame.y1() - 1 - p.y));
    let search = Rect::centered(p, r);
    let tile = cache.nearest_tile(p, &search);
    let zone = tbox.expand(r);
    let margin = cfg.field_margin();

    let mut out = Vec::new();
    for (bi, b) in cache.boundaries(tile).iter().enumerate() {
        if b.edge_box.intersect(&zone).is_empty() || !b.edges.iter().any(|e| zone.contains(*e)) {
            continue;
        }
        let Some((field, pyr)) = b.field(&frame, margin) else {
            continue;
        };
        // offsets in field coordinates; beyond these the template misses
        // the field entirely
        let base = PixelCoord::new(origin.x - field.x0, origin.y - field.y0);
        let x0 = (base.x + dlo.x).max(1 - tbox.w);
        let y0 = (base.y + dlo.y).max(1 - tbox.h);
        let x1 = (base.x + dhi.x).min(field.w - 1);
        let y1 = (base.y + dhi.y).min(field.h - 1);
        if x1 < x0 || y1 < y0 {
            continue;
        }
        let offsets = Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
        let matches = hierarchical_match(&template, pyr, &offsets, cfg.chamfer_threshold).expect("template is non-empty");
        out.extend(matches.into_iter().map(|m| Candidate {
            tile,
            boundary: bi,
            segment: Arc::clone(&b.segment),
            chamfer: ChamferMatch {
                offset: PixelCoord::new(m.offset.x - base.x, m.offset.y - base.y),
                score: m.score,
            },
        }));
    }
    // equal scores: smaller displacement first
    let mag = |c: &Candidate| c.chamfer.offset.dist2(PixelCoord::new(0, 0));
    out.sort_by(|a, b| {
        a.chamfer
            .score
            .total_cmp(&b.chamfer.score)
            .then(mag(a).cmp(&mag(b)))
            .then(a.chamfer.offset.y.cmp(&b.chamfer.offset.y))
            .then(a.chamfer.offset.x.cmp(&b.chamfer.offset.x))
            .then(a.boundary.cmp(&b.boundary))
    });
    out.truncate(cfg.top_k);
    out
}

/// Support patch of `frame` at `center`, split by `segment`'s region.
/// Pixels outside `known` (where the region was not observed) belong to
/// neither side.
pub fn candidate_patch(
    frame: &GrayImage,
    center: PixelCoord,
    segment: &LevelLineSegment,
    known: &Rect,
    cfg: &TrackerConfig,
) -> SupportPatch {
    let mut split = split_support_region(
        &frame.bounds(),
        center,
        &segment.region,
        &segment.contour,
        cfg.patch_size,
        cfg.min_side_pixels,
    );
    let patch = split.patch;
    if !known.contains_rect(&patch) {
        let keep = |m: &BinaryMask| {
            BinaryMask::from_fn(m.width(), m.height(), |x, y| {
                m.get(x, y) && known.contains(PixelCoord::new(patch.x0 + x as i32, patch.y0 + y as i32))
            })
        };
        split.side_a = keep(&split.side_a);
        split.side_b = keep(&split.side_b);
        split.degenerate = split.side_a.count() < cfg.min_side_pixels || split.side_b.count() < cfg.min_side_pixels;
    }
    SupportPatch::from_split(frame, center, &split).expect("patch centre lies in the frame")
}

/// Result of matching one track into a new frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutcome {
    pub track_id: u64,
    pub position: PixelCoord,
    pub status: TrackStatus,
    pub chamfer_score: Option<f64>,
    pub ssd_score: Option<f64>,
    pub combination: Option<Combination>,
    /// Chamfer shortlist in rank order; offsets are displacements.
    pub shortlist: Vec<ChamferMatch>,
    /// Shortlist index of the accepted candidate.
    pub selected: Option<usize>,
}

impl TrackOutcome {
    pub fn row(&self, frame: usize) -> TrackRow {
        TrackRow {
            track_id: self.track_id,
            frame,
            x: self.position.x as f64,
            y: self.position.y as f64,
            status: self.status,
            chamfer_score: self.chamfer_score,
            ssd_score: self.ssd_score,
            combination: self.combination.map(|c| c.as_str().to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub detect: Duration,
    pub mser: Duration,
    pub chamfer: Duration,
    pub ssd: Duration,
}

impl StageTimings {
    pub fn add(&mut self, o: &StageTimings) {
        self.detect += o.detect;
        self.mser += o.mser;
        self.chamfer += o.chamfer;
        self.ssd += o.ssd;
    }

    pub fn tracking_total(&self) -> Duration {
        self.mser + self.chamfer + self.ssd
    }
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub frame: usize,
    /// One entry per track that was active before the frame, by track id.
    pub outcomes: Vec<TrackOutcome>,
    /// Ids of tracks spawned by re-detection on this frame.
    pub spawned: Vec<u64>,
    pub timings: StageTimings,
}

struct Verified {
    index: usize,
    position: PixelCoord,
    segment: Arc<LevelLineSegment>,
    patch: SupportPatch,
    chamfer: f64,
    ssd: f64,
    combination: Combination,
}

#[derive(Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
    dims: Option<(usize, usize)>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
            last_frame: None,
            dims: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn active(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.status == TrackStatus::Active)
    }

    fn check_frame(&mut self, frame: &GrayImage, frame_idx: usize) -> Result<(), TrackerError> {
        if let Some(last) = self.last_frame {
            if frame_idx <= last {
                return Err(TrackerError::FrameOrder { last, got: frame_idx });
            }
        }
        match self.dims {
            Some(want) if want != frame.dims() => {
                return Err(TrackerError::FrameSize {
                    want,
                    got: frame.dims(),
                })
            }
            _ => self.dims = Some(frame.dims()),
        }
        self.last_frame = Some(frame_idx);
        Ok(())
    }

    /// Starts tracks at the given corners of `frame`; returns their ids.
    pub fn add_corners(&mut self, frame: &GrayImage, frame_idx: usize, corners: &[CornerPoint]) -> Vec<u64> {
        corners
            .iter()
            .map(|c| {
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push(Track::from_corner(id, frame, frame_idx, c));
                id
            })
            .collect()
    }

    /// Detects corners on the first frame and starts one track per
    /// trackable corner.
    pub fn initialize(&mut self, frame: &GrayImage, frame_idx: usize) -> Result<Vec<u64>, TrackerError> {
        self.check_frame(frame, frame_idx)?;
        let corners = trackable_corners(frame, comal::detect_corners(frame, &self.cfg.detector)?, &self.cfg);
        Ok(self.add_corners(frame, frame_idx, &corners))
    }

    /// Like `initialize` but with caller-chosen corners.
    pub fn initialize_with(&mut self, frame: &GrayImage, frame_idx: usize, corners: &[CornerPoint]) -> Result<Vec<u64>, TrackerError> {
        self.check_frame(frame, frame_idx)?;
        Ok(self.add_corners(frame, frame_idx, corners))
    }

    pub fn step(&mut self, frame: &GrayImage, frame_idx: usize) -> Result<FrameResult, TrackerError> {
        self.check_frame(frame, frame_idx)?;
        let cfg = &self.cfg;
        let mut timings = StageTimings::default();
        let cache = MserWindowCache::new(frame, cfg);
        let active: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].status == TrackStatus::Active)
            .collect();

        // phase 1: tiles
        let t0 = Instant::now();
        let mut needed: Vec<usize> = active
            .iter()
            .map(|&i| {
                let p = self.tracks[i].position;
                cache.nearest_tile(p, &Rect::centered(p, cfg.search_radius))
            })
            .collect();
        needed.sort_unstable();
        needed.dedup();
        needed.par_iter().for_each(|&t| {
            cache.boundaries(t);
        });
        timings.mser = t0.elapsed();

        // phase 2: chamfer shortlists
        let t1 = Instant::now();
        let tracks = &self.tracks;
        let shortlists: Vec<Vec<Candidate>> = active.par_iter().map(|&i| shortlist(&tracks[i], &cache, cfg)).collect();
        timings.chamfer = t1.elapsed();

        // phase 3: part-SSD verification
        let t2 = Instant::now();
        let verified: Vec<Option<Verified>> = active
            .par_iter()
            .zip(shortlists.par_iter())
            .map(|(&i, cands)| {
                let track = &tracks[i];
                let patches: Vec<(ChamferMatch, SupportPatch)> = cands
                    .iter()
                    .map(|c| {
                        let center = track.position.offset(c.chamfer.offset.x, c.chamfer.offset.y);
                        let known = cache.tiles()[c.tile].rect;
                        (c.chamfer, candidate_patch(frame, center, &c.segment, &known, cfg))
                    })
                    .collect();
                let best = verify_candidates(&track.patch, &patches, cfg.ssd_threshold, cfg.min_overlap)?;
                let c = &cands[best.index];
                Some(Verified {
                    index: best.index,
                    position: patches[best.index].1.center,
                    segment: Arc::clone(&c.segment),
                    patch: patches[best.index].1.clone(),
                    chamfer: c.chamfer.score,
                    ssd: best.part.score,
                    combination: best.part.combination,
                })
            })
            .collect();
        timings.ssd = t2.elapsed();

        let mut outcomes = Vec::with_capacity(active.len());
        for ((&i, v), cands) in active.iter().zip(verified).zip(&shortlists) {
            let track = &mut self.tracks[i];
            let outcome = match v {
                Some(v) => {
                    track.index = v.segment.nearest_index(v.position);
                    track.segment = v.segment;
                    track.position = v.position;
                    track.patch = v.patch;
                    track.misses = 0;
                    TrackOutcome {
                        track_id: track.id,
                        position: v.position,
                        status: TrackStatus::Active,
                        chamfer_score: Some(v.chamfer),
                        ssd_score: Some(v.ssd),
                        combination: Some(v.combination),
                        shortlist: cands.iter().map(|c| c.chamfer).collect(),
                        selected: Some(v.index),
                    }
                }
                None => {
                    track.misses += 1;
                    if track.misses >= cfg.max_misses {
                        track.status = TrackStatus::Lost;
                    }
                    TrackOutcome {
                        track_id: track.id,
                        position: track.position,
                        status: track.status,
                        chamfer_score: None,
                        ssd_score: None,
                        combination: None,
                        shortlist: cands.iter().map(|c| c.chamfer).collect(),
                        selected: None,
                    }
                }
            };
            track.history.push(HistoryEntry {
                frame: frame_idx,
                position: outcome.position,
                chamfer_score: outcome.chamfer_score,
                ssd_score: outcome.ssd_score,
            });
            outcomes.push(outcome);
        }

        let mut spawned = Vec::new();
        if cfg.redetect_interval > 0 && frame_idx % cfg.redetect_interval == 0 {
            let t3 = Instant::now();
            let corners = trackable_corners(frame, comal::detect_corners(frame, &cfg.detector)?, cfg);
            let min_d2 = cfg.min_spawn_dist * cfg.min_spawn_dist;
            let mut taken: Vec<PixelCoord> = self.active().map(|t| t.position).collect();
            let mut fresh = Vec::new();
            for c in corners {
                if taken.iter().all(|q| q.dist2(c.position) as f64 > min_d2) {
                    taken.push(c.position);
                    fresh.push(c);
                }
            }
            spawned = self.add_corners(frame, frame_idx, &fresh);
            timings.detect = t3.elapsed();
        }

        Ok(FrameResult {
            frame: frame_idx,
            outcomes,
            spawned,
            timings,
        })
    }

    /// Rows for the most recent history entry of the given tracks.
    pub fn rows_for(&self, ids: &[u64], frame: usize) -> Vec<TrackRow> {
        ids.iter()
            .filter_map(|id| self.tracks.iter().find(|t| t.id == *id))
            .map(|t| TrackRow::plain(t.id, frame, t.position.x as f64, t.position.y as f64, t.status))
            .collect()
    }
}

/// One shortlisted candidate, for debugging dumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateRow {
    pub frame: usize,
    pub track_id: u64,
    pub rank: usize,
    pub displacement: PixelCoord,
    pub chamfer_score: f64,
    pub selected: bool,
}

impl CandidateRow {
    pub fn from_outcome(frame: usize, o: &TrackOutcome) -> Vec<CandidateRow> {
        o.shortlist
            .iter()
            .enumerate()
            .map(|(rank, m)| CandidateRow {
                frame,
                track_id: o.track_id,
                rank,
                displacement: m.offset,
                chamfer_score: m.score,
                selected: o.selected == Some(rank),
            })
            .collect()
    }
}

/// `frame,track_id,rank,dx,dy,chamfer_score,selected` rows.
pub fn write_candidates_csv<W: std::io::Write>(w: W, rows: &[CandidateRow]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["frame", "track_id", "rank", "dx", "dy", "chamfer_score", "selected"])?;
    for r in rows {
        wr.write_record([
            r.frame.to_string(),
            r.track_id.to_string(),
            r.rank.to_string(),
            r.displacement.x.to_string(),
            r.displacement.y.to_string(),
            r.chamfer_score.to_string(),
            (r.selected as u8).to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SequenceOutput {
    pub log: TrackLog,
    pub candidates: Vec<CandidateRow>,
    pub timings: StageTimings,
    pub frame_timings: Vec<StageTimings>,
}

/// Detects on frame 0, then tracks through the rest.
pub fn run_sequence(frames: &[GrayImage], cfg: &TrackerConfig) -> Result<SequenceOutput, TrackerError> {
    let Some(first) = frames.first() else {
        return Err(TrackerError::EmptySequence);
    };
    let mut tracker = Tracker::new(cfg.clone())?;
    let t0 = Instant::now();
    let ids = tracker.initialize(first, 0)?;
    let mut timings = StageTimings {
        detect: t0.elapsed(),
        ..Default::default()
    };
    let mut log = TrackLog::new();
    log.extend(tracker.rows_for(&ids, 0));
    let mut frame_timings = Vec::new();
    let mut candidates = Vec::new();
    for (k, f) in frames.iter().enumerate().skip(1) {
        let res = tracker.step(f, k)?;
        log.extend(res.outcomes.iter().map(|o| o.row(k)));
        candidates.extend(res.outcomes.iter().flat_map(|o| CandidateRow::from_outcome(k, o)));
        log.extend(tracker.rows_for(&res.spawned, k));
        timings.add(&res.timings);
        frame_timings.push(res.timings);
    }
    log.sort();
    Ok(SequenceOutput {
        log,
        candidates,
        timings,
        frame_timings,
    })
}
