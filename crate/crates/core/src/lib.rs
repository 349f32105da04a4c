//! Point tracking on stable level lines.
//!
//! Corners are found on the boundaries of maximally stable extremal
//! regions. Tracking re-detects those boundaries near each track,
//! shortlists candidate positions by hierarchical chamfer matching and
//! verifies them with a boundary-aware SSD that compares either side of
//! the level line separately.

pub mod bench;
pub mod chamfer;
pub mod comal;
pub mod config;
pub mod eval;
pub mod image;
pub mod klt;
pub mod mser;
pub mod partssd;
pub mod tracker;
pub mod tracklog;
