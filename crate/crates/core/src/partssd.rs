//! Part-based SSD: the support patch of a corner is split by its level
//! line and each side is compared separately, so a change of texture on
//! one side (typically the background) does not spoil the match.

use thiserror::Error;

use crate::chamfer::ChamferMatch;
use crate::comal::SupportSplit;
use crate::image::{crop, BinaryMask, GrayImage, ImageError, PixelCoord, Rect};

pub const DEFAULT_MIN_OVERLAP: usize = 40;
pub const DEFAULT_SSD_THRESHOLD: f64 = 300.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartSsdError {
    #[error("overlap of {got} pixels is below the minimum {min}")]
    InsufficientOverlap { got: usize, min: usize },
    #[error("no side pairing has enough overlap")]
    NoValidCombination,
    #[error("side masks do not match the patch size")]
    MaskSize,
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    A,
    B,
}

/// Which sides were paired. `Full` marks the whole-patch fallback used
/// when a patch has an (almost) empty side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Combination {
    AA,
    AB,
    BA,
    BB,
    Full,
}

impl Combination {
    pub const PAIRINGS: [(Combination, Side, Side); 4] = [
        (Combination::AA, Side::A, Side::A),
        (Combination::AB, Side::A, Side::B),
        (Combination::BA, Side::B, Side::A),
        (Combination::BB, Side::B, Side::B),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Combination::AA => "AA",
            Combination::AB => "AB",
            Combination::BA => "BA",
            Combination::BB => "BB",
            Combination::Full => "FULL",
        }
    }

    /// Same-label pairing (A with A or B with B).
    pub fn is_identical_side(self) -> bool {
        matches!(self, Combination::AA | Combination::BB)
    }
}

/// Intensities of a support patch with its two side masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPatch {
    pub pixels: GrayImage,
    /// Where `pixels` sits in the source frame.
    pub rect: Rect,
    pub center: PixelCoord,
    pub side_a: BinaryMask,
    pub side_b: BinaryMask,
    pub degenerate: bool,
}

impl SupportPatch {
    pub fn new(
        pixels: GrayImage,
        rect: Rect,
        center: PixelCoord,
        side_a: BinaryMask,
        side_b: BinaryMask,
        degenerate: bool,
    ) -> Result<Self, PartSsdError> {
        let dims = (pixels.width(), pixels.height());
        if (side_a.width(), side_a.height()) != dims || (side_b.width(), side_b.height()) != dims {
            return Err(PartSsdError::MaskSize);
        }
        Ok(SupportPatch {
            pixels,
            rect,
            center,
            side_a,
            side_b,
            degenerate,
        })
    }

    /// Cuts the patch described by `split` out of `img`.
    pub fn from_split(img: &GrayImage, center: PixelCoord, split: &SupportSplit) -> Result<Self, PartSsdError> {
        let (pixels, rect) = crop(img, split.patch)?;
        Self::new(
            pixels,
            rect,
            center,
            split.side_a.clone(),
            split.side_b.clone(),
            split.degenerate,
        )
    }

    pub fn side(&self, s: Side) -> &BinaryMask {
        match s {
            Side::A => &self.side_a,
            Side::B => &self.side_b,
        }
    }
}

/// Local ranges of `p` and `q` that overlap once both are aligned on
/// their centers: returns (p origin, q origin, width, height).
fn aligned_overlap(p: &SupportPatch, q: &SupportPatch) -> Option<(usize, usize, usize, usize, usize, usize)> {
    // patch extents relative to their centers
    let pr = p.rect.translated(-p.center.x, -p.center.y);
    let qr = q.rect.translated(-q.center.x, -q.center.y);
    let r = pr.intersect(&qr);
    if r.is_empty() {
        return None;
    }
    Some((
        (r.x0 - pr.x0) as usize,
        (r.y0 - pr.y0) as usize,
        (r.x0 - qr.x0) as usize,
        (r.y0 - qr.y0) as usize,
        r.w as usize,
        r.h as usize,
    ))
}

fn ssd_over(p: &SupportPatch, q: &SupportPatch, pm: Option<&BinaryMask>, qm: Option<&BinaryMask>) -> (f64, usize) {
    let Some((px, py, qx, qy, w, h)) = aligned_overlap(p, q) else {
        return (0.0, 0);
    };
    let mut sum = 0u64;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            let (ax, ay, bx, by) = (px + x, py + y, qx + x, qy + y);
            if pm.is_some_and(|m| !m.get(ax, ay)) || qm.is_some_and(|m| !m.get(bx, by)) {
                continue;
            }
            let d = p.pixels.get(ax, ay) as i64 - q.pixels.get(bx, by) as i64;
            sum += (d * d) as u64;
            n += 1;
        }
    }
    if n == 0 {
        (0.0, 0)
    } else {
        (sum as f64 / n as f64, n)
    }
}

/// Mean squared difference over the pixels that are on side `sp` of `p`
/// and side `sq` of `q`.
pub fn masked_ssd(p: &SupportPatch, sp: Side, q: &SupportPatch, sq: Side, min_overlap: usize) -> Result<(f64, usize), PartSsdError> {
    let (score, n) = ssd_over(p, q, Some(p.side(sp)), Some(q.side(sq)));
    if n < min_overlap.max(1) {
        return Err(PartSsdError::InsufficientOverlap { got: n, min: min_overlap });
    }
    Ok((score, n))
}

/// Mean squared difference over the whole aligned overlap.
pub fn full_patch_ssd(p: &SupportPatch, q: &SupportPatch) -> Result<(f64, usize), PartSsdError> {
    let (score, n) = ssd_over(p, q, None, None);
    if n == 0 {
        return Err(PartSsdError::InsufficientOverlap { got: 0, min: 1 });
    }
    Ok((score, n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartMatchResult {
    pub combination: Combination,
    pub score: f64,
    pub overlap: usize,
}

/// Best of the four side pairings, ties going to the earlier pairing in
/// AA, AB, BA, BB order. Degenerate patches use the full-patch score.
pub fn part_ssd_match(p: &SupportPatch, q: &SupportPatch, min_overlap: usize) -> Result<PartMatchResult, PartSsdError> {
    if p.degenerate || q.degenerate {
        let (score, overlap) = full_patch_ssd(p, q)?;
        return Ok(PartMatchResult {
            combination: Combination::Full,
            score,
            overlap,
        });
    }
    // one pass: sums and counts for every pairing, in PAIRINGS order
    let mut sums = [0u64; 4];
    let mut counts = [0usize; 4];
    if let Some((px, py, qx, qy, w, h)) = aligned_overlap(p, q) {
        for y in 0..h {
            for x in 0..w {
                let (ax, ay, bx, by) = (px + x, py + y, qx + x, qy + y);
                let pa = p.side_a.get(ax, ay);
                let pb = p.side_b.get(ax, ay);
                let qa = q.side_a.get(bx, by);
                let qb = q.side_b.get(bx, by);
                if !(pa || pb) || !(qa || qb) {
                    continue;
                }
                let d = p.pixels.get(ax, ay) as i64 - q.pixels.get(bx, by) as i64;
                let d2 = (d * d) as u64;
                for (i, hit) in [pa && qa, pa && qb, pb && qa, pb && qb].into_iter().enumerate() {
                    if hit {
                        sums[i] += d2;
                        counts[i] += 1;
                    }
                }
            }
        }
    }
    let mut best: Option<PartMatchResult> = None;
    for (i, (combination, _, _)) in Combination::PAIRINGS.into_iter().enumerate() {
        let overlap = counts[i];
        if overlap < min_overlap.max(1) {
            continue;
        }
        let score = sums[i] as f64 / overlap as f64;
        if best.is_none_or(|b| score < b.score) {
            best = Some(PartMatchResult {
                combination,
                score,
                overlap,
            });
        }
    }
    best.ok_or(PartSsdError::NoValidCombination)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedMatch {
    /// Index into the candidate list.
    pub index: usize,
    pub chamfer: ChamferMatch,
    pub part: PartMatchResult,
}

/// Picks the candidate with the lowest part-SSD score (the earlier one on
/// ties), provided it is within `ssd_threshold`.
pub fn verify_candidates(
    corner_patch: &SupportPatch,
    candidates: &[(ChamferMatch, SupportPatch)],
    ssd_threshold: f64,
    min_overlap: usize,
) -> Option<VerifiedMatch> {
    let mut best: Option<VerifiedMatch> = None;
    for (index, (chamfer, patch)) in candidates.iter().enumerate() {
        let Ok(part) = part_ssd_match(corner_patch, patch, min_overlap) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| part.score < b.part.score) {
            best = Some(VerifiedMatch {
                index,
                chamfer: *chamfer,
                part,
            });
        }
    }
    best.filter(|b| b.part.score <= ssd_threshold)
}
