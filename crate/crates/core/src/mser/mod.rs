//! Component trees and maximally stable extremal regions.
//!
//! Stability is the relative area variation
//! `q(l) = (area(l + delta) - area(l - delta)) / area(l)`, where the upper
//! area comes from the ancestor alive at `l + delta` and the lower one from
//! the largest descendant alive at `l - delta` (the chain clamps at leaves).
//! A node keeps the same pixel set from its own level until its parent's,
//! so its score is the minimum of `q` over that whole lifetime. Lower is
//! more stable.

mod contour;
mod tree;

pub use contour::{trace_boundary, Contour};
pub use tree::{ComponentTree, Node, Polarity, RegionMask};

use thiserror::Error;

use crate::image::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MserError {
    #[error("delta must be >= 1")]
    BadDelta,
    #[error("bad area bounds: min {min}, max {max}")]
    BadParams { min: usize, max: usize },
}

/// Stability of one node and the working level where it is attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub q: f64,
    pub level: u8,
}

/// A maximally stable extremal region with its pixel membership.
#[derive(Debug, Clone)]
pub struct ExtremalRegion {
    pub node: usize,
    pub polarity: Polarity,
    /// Image intensity of the most stable threshold.
    pub level: u8,
    pub area: usize,
    pub stability: f64,
    pub mask: RegionMask,
}

/// Knobs shared by detection and tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct MserParams {
    pub delta: u8,
    pub max_variation: f64,
    pub min_area: usize,
    /// Upper area bound as a fraction of the analysed image.
    pub max_area_fraction: f64,
}

impl MserParams {
    pub fn detection() -> Self {
        Self {
            delta: 5,
            max_variation: 0.25,
            min_area: 30,
            max_area_fraction: 0.5,
        }
    }

    /// Twice as permissive as detection: a level line that was good enough
    /// to detect on only has to be re-found.
    pub fn tracking() -> Self {
        Self {
            max_variation: 0.5,
            ..Self::detection()
        }
    }

    pub fn max_area_for(&self, width: usize, height: usize) -> usize {
        ((width * height) as f64 * self.max_area_fraction).floor().max(1.0) as usize
    }
}

impl Default for MserParams {
    fn default() -> Self {
        Self::detection()
    }
}

fn ancestor_area(tree: &ComponentTree, mut id: usize, t: u32) -> u32 {
    while let Some(p) = tree.node(id).parent {
        if tree.node(p as usize).level as u32 <= t {
            id = p as usize;
        } else {
            break;
        }
    }
    tree.node(id).area
}

fn node_stability(tree: &ComponentTree, id: usize, delta: u8) -> Stability {
    let nd = tree.node(id);
    let lo = nd.level as u32;
    let hi = nd.parent.map_or(255, |p| tree.node(p as usize).level as u32 - 1);
    let delta = delta as u32;
    let area = nd.area as f64;

    // largest-child chain down to the lowest level we will ask about
    let mut chain = vec![(nd.level as u32, nd.area)];
    let floor = lo.saturating_sub(delta);
    let mut cur = id;
    while tree.node(cur).level as u32 > floor || (lo < delta && tree.node(cur).level > 0) {
        match tree.largest_child(cur) {
            Some(c) => {
                cur = c;
                chain.push((tree.node(c).level as u32, tree.node(c).area));
            }
            None => break,
        }
    }

    let mut best = Stability {
        q: f64::INFINITY,
        level: nd.level,
    };
    for l in lo..=hi {
        let up = ancestor_area(tree, id, l + delta);
        let down = match l.checked_sub(delta) {
            Some(t) => chain
                .iter()
                .find(|&&(lv, _)| lv <= t)
                .map_or(chain.last().unwrap().1, |&(_, a)| a),
            None => chain.last().unwrap().1,
        };
        let q = (up as f64 - down as f64) / area;
        if q < best.q {
            best = Stability { q, level: l as u8 };
        }
    }
    best
}

/// Stability of a single node.
pub fn stability_score(tree: &ComponentTree, node: usize, delta: u8) -> Result<Stability, MserError> {
    if delta < 1 {
        return Err(MserError::BadDelta);
    }
    Ok(node_stability(tree, node, delta))
}

/// Stability of every node, indexed like `tree.nodes()`.
pub fn stabilities(tree: &ComponentTree, delta: u8) -> Result<Vec<Stability>, MserError> {
    if delta < 1 {
        return Err(MserError::BadDelta);
    }
    Ok((0..tree.len()).map(|i| node_stability(tree, i, delta)).collect())
}

/// Nodes whose stability is a local minimum along the tree (against the
/// parent and every child that is itself large enough to be reported),
/// no worse than `max_variation`, and inside the area bounds. The root
/// covers the whole image and has no level line, so it is never returned.
pub fn extract_msers(
    tree: &ComponentTree,
    delta: u8,
    max_variation: f64,
    min_area: usize,
    max_area: usize,
) -> Result<Vec<ExtremalRegion>, MserError> {
    if min_area < 1 || min_area > max_area {
        return Err(MserError::BadParams {
            min: min_area,
            max: max_area,
        });
    }
    let stab = stabilities(tree, delta)?;
    let mut out = Vec::new();
    for (id, nd) in tree.nodes().iter().enumerate() {
        let area = nd.area as usize;
        let Some(parent) = nd.parent else { continue };
        let q = stab[id].q;
        if area < min_area || area > max_area || q > max_variation {
            continue;
        }
        if q > stab[parent as usize].q {
            continue;
        }
        let beaten = nd
            .children
            .iter()
            .any(|&c| tree.node(c as usize).area as usize >= min_area && stab[c as usize].q < q);
        if beaten {
            continue;
        }
        out.push(ExtremalRegion {
            node: id,
            polarity: tree.polarity(),
            level: tree.intensity(stab[id].level),
            area,
            stability: q,
            mask: tree.region_mask(id),
        });
    }
    Ok(out)
}

/// Both polarities, pooled: dark regions first, then light ones.
pub fn detect_msers(img: &GrayImage, params: &MserParams) -> Result<Vec<ExtremalRegion>, MserError> {
    let max_area = params.max_area_for(img.width(), img.height()).max(params.min_area);
    let mut out = Vec::new();
    for pol in [Polarity::Dark, Polarity::Light] {
        let tree = ComponentTree::build(img, pol);
        out.extend(extract_msers(&tree, params.delta, params.max_variation, params.min_area, max_area)?);
    }
    Ok(out)
}
