//! Per-frame cost of tracking known corners versus re-detecting corners in
//! every frame and matching them against the previous frame's corners.

use std::time::Instant;

use thiserror::Error;

use crate::comal::{self, CornerError, CornerPoint};
use crate::image::GrayImage;
use crate::partssd::{part_ssd_match, SupportPatch};
use crate::tracker::{trackable_corners, Tracker, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("could not build a single-threaded pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Detect(#[from] CornerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Per frame pair, milliseconds.
    pub tracking_ms: Vec<f64>,
    /// Matching against every detection.
    pub baseline_ms: Vec<f64>,
    /// Matching only detections inside the tracker's search window.
    pub gated_baseline_ms: Vec<f64>,
    /// Tracks started per frame pair.
    pub tracks: Vec<usize>,
    pub median_tracking_ms: f64,
    pub median_baseline_ms: f64,
    pub median_gated_baseline_ms: f64,
    /// Tracking median over baseline median.
    pub ratio: f64,
    /// Tracking median over gated baseline median.
    pub gated_ratio: f64,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// The strongest `n` corners, ties broken by position.
pub fn strongest(mut corners: Vec<CornerPoint>, n: usize) -> Vec<CornerPoint> {
    corners.sort_by(|a, b| {
        b.cornerness
            .total_cmp(&a.cornerness)
            .then(a.position.y.cmp(&b.position.y))
            .then(a.position.x.cmp(&b.position.x))
    });
    corners.truncate(n);
    corners
}

/// Re-detect-and-match: detect on `next`, then for every previous corner
/// take the best part-SSD match among the new detections, all of them or,
/// with `gate`, those within that many pixels per axis. Returns the number
/// of previous corners that found a match within `ssd_threshold`.
pub fn detect_and_match(
    prev: &[(CornerPoint, SupportPatch)],
    next: &GrayImage,
    cfg: &TrackerConfig,
    gate: Option<i32>,
) -> Result<usize, BenchError> {
    let detections = comal::detect_corners(next, &cfg.detector)?;
    let patches: Vec<SupportPatch> = detections
        .iter()
        .filter_map(|c| SupportPatch::from_split(next, c.position, &c.split).ok())
        .collect();
    let mut matched = 0;
    for (c, p) in prev {
        let near = |q: &&SupportPatch| {
            gate.is_none_or(|r| (q.center.x - c.position.x).abs() <= r && (q.center.y - c.position.y).abs() <= r)
        };
        let best = patches
            .iter()
            .filter(near)
            .filter_map(|q| part_ssd_match(p, q, cfg.min_overlap).ok())
            .map(|r| r.score)
            .fold(f64::INFINITY, f64::min);
        if best <= cfg.ssd_threshold {
            matched += 1;
        }
    }
    Ok(matched)
}

/// Times both pipelines on every consecutive frame pair, single-threaded.
/// Each pair starts fresh from the `num_tracks` strongest trackable corners
/// of the earlier frame, so both sides always handle the same corner set.
pub fn run_bench(frames: &[GrayImage], cfg: &TrackerConfig, num_tracks: usize) -> Result<BenchReport, BenchError> {
    if frames.len() < 2 {
        return Err(BenchError::TooFewFrames(frames.len()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    pool.install(|| {
        let mut tracking_ms = Vec::new();
        let mut baseline_ms = Vec::new();
        let mut gated_baseline_ms = Vec::new();
        let mut tracks = Vec::new();
        for k in 1..frames.len() {
            let detected = comal::detect_corners(&frames[k - 1], &cfg.detector)?;
            let corners = strongest(trackable_corners(&frames[k - 1], detected, cfg), num_tracks);
            let prev: Vec<(CornerPoint, SupportPatch)> = corners
                .iter()
                .filter_map(|c| Some((c.clone(), SupportPatch::from_split(&frames[k - 1], c.position, &c.split).ok()?)))
                .collect();

            let mut tracker = Tracker::new(cfg.clone())?;
            tracker.initialize_with(&frames[k - 1], k - 1, &corners)?;
            let t0 = Instant::now();
            tracker.step(&frames[k], k)?;
            tracking_ms.push(t0.elapsed().as_secs_f64() * 1e3);

            let t1 = Instant::now();
            detect_and_match(&prev, &frames[k], cfg, None)?;
            baseline_ms.push(t1.elapsed().as_secs_f64() * 1e3);

            let t2 = Instant::now();
            detect_and_match(&prev, &frames[k], cfg, Some(cfg.search_radius))?;
            gated_baseline_ms.push(t2.elapsed().as_secs_f64() * 1e3);
            tracks.push(corners.len());
        }
        let median_tracking_ms = median(&tracking_ms);
        let median_baseline_ms = median(&baseline_ms);
        let median_gated_baseline_ms = median(&gated_baseline_ms);
        Ok(BenchReport {
            ratio: median_tracking_ms / median_baseline_ms,
            gated_ratio: median_tracking_ms / median_gated_baseline_ms,
            tracking_ms,
            baseline_ms,
            gated_baseline_ms,
            tracks,
            median_tracking_ms,
            median_baseline_ms,
            median_gated_baseline_ms,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn one_frame_is_rejected() {
        let f = GrayImage::new(64, 64, 0).unwrap();
        assert!(matches!(run_bench(&[f], &TrackerConfig::default(), 10), Err(BenchError::TooFewFrames(1))));
    }

    #[test]
    fn two_frames_give_one_sample() {
        let f = GrayImage::from_fn(120, 120, |x, y| if (30..70).contains(&x) && (40..80).contains(&y) { 40 } else { 200 }).unwrap();
        let r = run_bench(&[f.clone(), f], &TrackerConfig::default(), 200).unwrap();
        assert_eq!(r.tracking_ms.len(), 1);
        assert_eq!(r.baseline_ms.len(), 1);
        assert_eq!(r.tracks, vec![4]);
    }
}
