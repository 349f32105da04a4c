//! Per-(track, frame) rows shared by the tracker and the KLT baseline.

use std::io::{Read, Write};

use thiserror::Error;

pub const HEADER: [&str; 8] = [
    "track_id",
    "frame",
    "x",
    "y",
    "status",
    "chamfer_score",
    "ssd_score",
    "combination",
];

#[derive(Debug, Error)]
pub enum TrackLogError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackStatus {
    Active,
    Lost,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackStatus::Active => "active",
            TrackStatus::Lost => "lost",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "active" => Some(TrackStatus::Active),
            "lost" => Some(TrackStatus::Lost),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRow {
    pub track_id: u64,
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub status: TrackStatus,
    pub chamfer_score: Option<f64>,
    pub ssd_score: Option<f64>,
    pub combination: Option<String>,
}

impl TrackRow {
    /// A row with no match scores (detections, KLT rows).
    pub fn plain(track_id: u64, frame: usize, x: f64, y: f64, status: TrackStatus) -> Self {
        TrackRow {
            track_id,
            frame,
            x,
            y,
            status,
            chamfer_score: None,
            ssd_score: None,
            combination: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackLog {
    pub rows: Vec<TrackRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrackLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: TrackRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = TrackRow>) {
        self.rows.extend(rows);
    }

    /// Rows sorted by (frame, track id): the on-disk order.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| a.frame.cmp(&b.frame).then(a.track_id.cmp(&b.track_id)));
    }

    pub fn num_frames(&self) -> usize {
        self.rows.iter().map(|r| r.frame + 1).max().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrackLogError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(HEADER)?;
        for r in &self.rows {
            wr.write_record([
                r.track_id.to_string(),
                r.frame.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.status.as_str().to_string(),
                opt(r.chamfer_score),
                opt(r.ssd_score),
                r.combination.clone().unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<TrackLog, TrackLogError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let err = |msg: &str| TrackLogError::Parse {
                line,
                msg: msg.to_string(),
            };
            if rec.len() != HEADER.len() {
                return Err(err("wrong column count"));
            }
            let num = |i: usize| -> Result<f64, TrackLogError> { rec[i].parse().map_err(|_| err(HEADER[i])) };
            let opt_num = |i: usize| -> Result<Option<f64>, TrackLogError> {
                if rec[i].is_empty() {
                    Ok(None)
                } else {
                    num(i).map(Some)
                }
            };
            rows.push(TrackRow {
                track_id: rec[0].parse().map_err(|_| err("track_id"))?,
                frame: rec[1].parse().map_err(|_| err("frame"))?,
                x: num(2)?,
                y: num(3)?,
                status: TrackStatus::parse(&rec[4]).ok_or_else(|| err("status"))?,
                chamfer_score: opt_num(5)?,
                ssd_score: opt_num(6)?,
                combination: (!rec[7].is_empty()).then(|| rec[7].to_string()),
            });
        }
        Ok(TrackLog { rows })
    }
}
