//! Match scoring against bounding-box ground truth.
//!
//! A point keeps its position relative to its object's box from frame to
//! frame, so the expected position of a track in frame `u` is its first
//! position mapped from the first frame's box to the box in `u`. A
//! prediction is correct when it lies within a fixed Euclidean tolerance
//! of that expectation.

mod synth;

pub use synth::{synth_sequence, BackgroundMode, SynthSequence, SynthSpec};

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use thiserror::Error;

use crate::image::{distance_transform, BinaryMask, DistanceField};
use crate::tracklog::{TrackLog, TrackStatus};

pub const DEFAULT_TOLERANCE: f64 = 15.0;
pub const DEFAULT_BAND: f64 = 5.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("point ({0}, {1}) is outside the box")]
    PointOutsideBox(f64, f64),
    #[error("box must have positive size")]
    BadBox,
    #[error("a sweep needs at least two settings, got {0}")]
    TooFewSettings(usize),
    #[error("object leaves the {width}x{height} frame at frame {frame}")]
    ObjectOutOfFrame { frame: usize, width: usize, height: usize },
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
    #[error("annotation line {line}: {msg}")]
    Annotation { line: u64, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box with real-valued corner and size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxF {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxF {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<BoxF, EvalError> {
        if !(w > 0.0 && h > 0.0) {
            return Err(EvalError::BadBox);
        }
        Ok(BoxF { x, y, w, h })
    }

    /// Containment with a slack of `tol` pixels on every side.
    pub fn contains(&self, p: (f64, f64), tol: f64) -> bool {
        p.0 >= self.x - tol && p.0 <= self.x + self.w + tol && p.1 >= self.y - tol && p.1 <= self.y + self.h + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBoxAnnotation {
    pub object_id: u64,
    pub frame: usize,
    pub bbox: BoxF,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtCorrespondence {
    pub track_id: u64,
    pub frame: usize,
    pub expected: (f64, f64),
    pub object_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stratum {
    Boundary,
    Interior,
    Overall,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Boundary => "boundary",
            Stratum::Interior => "interior",
            Stratum::Overall => "overall",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRResult {
    pub stratum: Stratum,
    pub correct: usize,
    pub total: usize,
    /// `None` when nothing was scored.
    pub precision: Option<f64>,
    /// Correct matches averaged over the scored frames.
    pub correct_per_frame: f64,
}

/// How one scored prediction was judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgement {
    pub track_id: u64,
    pub frame: usize,
    /// `None` for a prediction with no ground truth at all.
    pub distance: Option<f64>,
    pub correct: bool,
    pub stratum: Option<Stratum>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Boundary, Interior, Overall (the first two only with masks).
    pub results: Vec<PRResult>,
    pub judgements: Vec<Judgement>,
}

impl EvalReport {
    pub fn get(&self, s: Stratum) -> Option<&PRResult> {
        self.results.iter().find(|r| r.stratum == s)
    }

    pub fn overall(&self) -> &PRResult {
        self.get(Stratum::Overall).expect("overall is always reported")
    }
}

/// Per-frame foreground masks for boundary/interior stratification.
#[derive(Debug, Clone)]
pub struct Strata<'a> {
    pub masks: &'a [BinaryMask],
    pub band: f64,
}

/// Keeps `p`'s position relative to the box: `box_u.origin + (p -
/// box_t.origin) * box_u.size / box_t.size`.
pub fn map_point(p: (f64, f64), box_t: &BoxF, box_u: &BoxF) -> Result<(f64, f64), EvalError> {
    if !box_t.contains(p, 1.0) {
        return Err(EvalError::PointOutsideBox(p.0, p.1));
    }
    Ok((
        box_u.x + (p.0 - box_t.x) * box_u.w / box_t.w,
        box_u.y + (p.1 - box_t.y) * box_u.h / box_t.h,
    ))
}

fn box_index(annotations: &[BBoxAnnotation]) -> HashMap<(u64, usize), BoxF> {
    annotations.iter().map(|a| ((a.object_id, a.frame), a.bbox)).collect()
}

/// Expected positions for every track of `log` in every frame after its
/// first where its object has a box. The owning object is the lowest-id
/// box holding the first position (within 1 px); with masks, the first
/// position must also be foreground.
pub fn generate_gt(log: &TrackLog, annotations: &[BBoxAnnotation], masks: Option<&[BinaryMask]>) -> Vec<GtCorrespondence> {
    let boxes = box_index(annotations);
    let mut by_frame: BTreeMap<usize, Vec<&BBoxAnnotation>> = BTreeMap::new();
    for a in annotations {
        by_frame.entry(a.frame).or_default().push(a);
    }
    for v in by_frame.values_mut() {
        v.sort_by_key(|a| a.object_id);
    }
    let max_frame = annotations.iter().map(|a| a.frame).max().unwrap_or(0);

    let mut first: BTreeMap<u64, (usize, (f64, f64))> = BTreeMap::new();
    for r in &log.rows {
        let e = first.entry(r.track_id).or_insert((r.frame, (r.x, r.y)));
        if r.frame < e.0 {
            *e = (r.frame, (r.x, r.y));
        }
    }

    let mut out = Vec::new();
    for (&track_id, &(f0, p0)) in &first {
        if let Some(ms) = masks {
            let fg = ms
                .get(f0)
                .is_some_and(|m| m.at(p0.0.round() as i32, p0.1.round() as i32));
            if !fg {
                continue;
            }
        }
        let Some(owner) = by_frame
            .get(&f0)
            .and_then(|v| v.iter().find(|a| a.bbox.contains(p0, 1.0)))
        else {
            continue;
        };
        for f in f0 + 1..=max_frame {
            if let Some(b) = boxes.get(&(owner.object_id, f)) {
                let expected = map_point(p0, &owner.bbox, b).expect("owner box holds the point");
                out.push(GtCorrespondence {
                    track_id,
                    frame: f,
                    expected,
                    object_id: owner.object_id,
                });
            }
        }
    }
    out
}

fn boundary_fields(masks: &[BinaryMask]) -> Vec<Option<DistanceField>> {
    masks.iter().map(|m| distance_transform(&m.boundary()).ok()).collect()
}

/// Scores the active, non-initial rows of `log`. Rows of tracks without
/// any ground truth count as incorrect; rows in frames where a track's
/// object has no box are skipped.
pub fn score_matches(log: &TrackLog, gt: &[GtCorrespondence], tolerance: f64, strata: Option<&Strata>) -> EvalReport {
    let gt_map: HashMap<(u64, usize), (f64, f64)> = gt.iter().map(|g| ((g.track_id, g.frame), g.expected)).collect();
    let has_gt: std::collections::HashSet<u64> = gt.iter().map(|g| g.track_id).collect();
    let mut first: HashMap<u64, usize> = HashMap::new();
    for r in &log.rows {
        let e = first.entry(r.track_id).or_insert(r.frame);
        *e = (*e).min(r.frame);
    }
    let fields = strata.map(|s| boundary_fields(s.masks));

    let mut judgements = Vec::new();
    for r in &log.rows {
        if r.status != TrackStatus::Active || first.get(&r.track_id) == Some(&r.frame) {
            continue;
        }
        let (distance, at) = match gt_map.get(&(r.track_id, r.frame)) {
            Some(&e) => (Some(((r.x - e.0).powi(2) + (r.y - e.1).powi(2)).sqrt()), e),
            None if has_gt.contains(&r.track_id) => continue,
            None => (None, (r.x, r.y)),
        };
        let stratum = match (strata, &fields) {
            (Some(s), Some(fs)) => {
                let d = fs
                    .get(r.frame)
                    .and_then(|f| f.as_ref())
                    .and_then(|f| f.at(at.0.round() as i32, at.1.round() as i32));
                Some(if d.is_some_and(|d| d as f64 <= s.band) {
                    Stratum::Boundary
                } else {
                    Stratum::Interior
                })
            }
            _ => None,
        };
        judgements.push(Judgement {
            track_id: r.track_id,
            frame: r.frame,
            distance,
            correct: distance.is_some_and(|d| d <= tolerance),
            stratum,
        });
    }
    judgements.sort_by(|a, b| a.frame.cmp(&b.frame).then(a.track_id.cmp(&b.track_id)));

    let frames: std::collections::BTreeSet<usize> = judgements.iter().map(|j| j.frame).collect();
    let summarize = |s: Stratum| {
        let sel: Vec<&Judgement> = judgements
            .iter()
            .filter(|j| s == Stratum::Overall || j.stratum == Some(s))
            .collect();
        let correct = sel.iter().filter(|j| j.correct).count();
        let total = sel.len();
        PRResult {
            stratum: s,
            correct,
            total,
            precision: (total > 0).then(|| correct as f64 / total as f64),
            correct_per_frame: if frames.is_empty() {
                0.0
            } else {
                correct as f64 / frames.len() as f64
            },
        }
    };
    let mut results = Vec::new();
    if strata.is_some() {
        results.push(summarize(Stratum::Boundary));
        results.push(summarize(Stratum::Interior));
    }
    results.push(summarize(Stratum::Overall));
    EvalReport { results, judgements }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub result: PRResult,
}

/// Overall scores for runs made at different detector settings.
pub fn sweep_operating_points(
    runs: &[(f64, TrackLog)],
    annotations: &[BBoxAnnotation],
    masks: Option<&[BinaryMask]>,
    tolerance: f64,
) -> Result<Vec<SweepRow>, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::TooFewSettings(runs.len()));
    }
    Ok(runs
        .iter()
        .map(|(threshold, log)| {
            let gt = generate_gt(log, annotations, masks);
            SweepRow {
                threshold: *threshold,
                result: *score_matches(log, &gt, tolerance, None).overall(),
            }
        })
        .collect())
}

/// Reads `frame,object_id,left,top,width,height` rows; a header line and
/// extra trailing columns are tolerated.
pub fn read_mot_csv<R: Read>(r: R) -> Result<Vec<BBoxAnnotation>, EvalError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let err = |msg: &str| EvalError::Annotation {
            line,
            msg: msg.to_string(),
        };
        if rec.len() < 6 {
            return Err(err("expected 6 columns"));
        }
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| err(&format!("bad number in column {}", k + 1)));
        let frame = num(0)?;
        let id = num(1)?;
        if frame < 0.0 || frame.fract() != 0.0 || id < 0.0 || id.fract() != 0.0 {
            return Err(err("frame and object_id must be non-negative integers"));
        }
        let bbox = BoxF::new(num(2)?, num(3)?, num(4)?, num(5)?).map_err(|_| err("box must have positive size"))?;
        out.push(BBoxAnnotation {
            object_id: id as u64,
            frame: frame as usize,
            bbox,
        });
    }
    Ok(out)
}

pub fn write_mot_csv<W: Write>(w: W, annotations: &[BBoxAnnotation]) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["frame", "object_id", "left", "top", "width", "height"])?;
    for a in annotations {
        wr.write_record([
            a.frame.to_string(),
            a.object_id.to_string(),
            a.bbox.x.to_string(),
            a.bbox.y.to_string(),
            a.bbox.w.to_string(),
            a.bbox.h.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `stratum,threshold,correct_per_frame,precision` rows.
pub fn write_results_csv<W: Write>(w: W, rows: &[(Option<f64>, PRResult)]) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["stratum", "threshold", "correct_per_frame", "precision"])?;
    for (t, r) in rows {
        wr.write_record([
            r.stratum.as_str().to_string(),
            opt_num(*t),
            r.correct_per_frame.to_string(),
            opt_num(r.precision),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Plot points: precision on x, correct matches per frame on y.
pub fn write_plot_csv<W: Write>(w: W, rows: &[(Option<f64>, PRResult)]) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["stratum", "threshold", "precision", "correct_per_frame"])?;
    for (t, r) in rows {
        if let Some(p) = r.precision {
            wr.write_record([
                r.stratum.as_str().to_string(),
                opt_num(*t),
                p.to_string(),
                r.correct_per_frame.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}
