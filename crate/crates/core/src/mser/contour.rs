use crate::image::PixelCoord;

use super::RegionMask;

/// Ordered boundary pixels. Consecutive points are 8-neighbours; a closed
/// contour wraps from the last point back to the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<PixelCoord>,
    pub closed: bool,
}

impl Contour {
    pub fn open(points: Vec<PixelCoord>) -> Self {
        Self { points, closed: false }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

// Clockwise on screen (y down), starting at west.
const DIRS: [(i32, i32); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn dir_index(dx: i32, dy: i32) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("backtrack is an 8-neighbour")
}

/// Moore-neighbour tracing of the region's outer boundary, clockwise,
/// starting from the top-most then left-most pixel. Holes are ignored.
pub fn trace_boundary(region: &RegionMask) -> Contour {
    let mask = region.local_mask();
    let origin = region.bbox();
    let (w, h) = (mask.width() as i32, mask.height() as i32);
    let set = |x: i32, y: i32| x >= 0 && y >= 0 && x < w && y < h && mask.get(x as usize, y as usize);

    let Some(start_idx) = mask.bits().iter().position(|b| *b) else {
        return Contour {
            points: Vec::new(),
            closed: true,
        };
    };
    let start = (start_idx as i32 % w, start_idx as i32 / w);
    let to_abs = |(x, y): (i32, i32)| PixelCoord::new(origin.x0 + x, origin.y0 + y);

    // returns (next pixel, new backtrack)
    let step = |cur: (i32, i32), back: (i32, i32)| -> Option<((i32, i32), (i32, i32))> {
        let d0 = dir_index(back.0 - cur.0, back.1 - cur.1);
        let mut prev = back;
        for i in 1..=8 {
            let (dx, dy) = DIRS[(d0 + i) % 8];
            let c = (cur.0 + dx, cur.1 + dy);
            if set(c.0, c.1) {
                return Some((c, prev));
            }
            prev = c;
        }
        None
    };

    let mut points = vec![to_abs(start)];
    let Some((first, mut back)) = step(start, (start.0 - 1, start.1)) else {
        return Contour { points, closed: true };
    };
    let mut cur = first;
    loop {
        let (next, nb) = step(cur, back).expect("a pixel reached by tracing has a set neighbour");
        if cur == start && next == first {
            break;
        }
        points.push(to_abs(cur));
        cur = next;
        back = nb;
    }
    Contour { points, closed: true }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(x0: i32, y0: i32, w: i32, h: i32) -> RegionMask {
        let pts: Vec<_> = (y0..y0 + h)
            .flat_map(|y| (x0..x0 + w).map(move |x| PixelCoord::new(x, y)))
            .collect();
        RegionMask::from_points(&pts)
    }

    #[test]
    fn single_pixel() {
        let c = trace_boundary(&block(4, 7, 1, 1));
        assert_eq!(c.points, vec![PixelCoord::new(4, 7)]);
    }

    #[test]
    fn two_by_two_clockwise() {
        let c = trace_boundary(&block(0, 0, 2, 2));
        let want: Vec<_> = [(0, 0), (1, 0), (1, 1), (0, 1)]
            .iter()
            .map(|&(x, y)| PixelCoord::new(x, y))
            .collect();
        assert_eq!(c.points, want);
        assert!(c.closed);
    }

    #[test]
    fn three_by_three_skips_centre() {
        let c = trace_boundary(&block(10, 10, 3, 3));
        assert_eq!(c.len(), 8);
        assert!(!c.points.contains(&PixelCoord::new(11, 11)));
    }

    #[test]
    fn spur_revisits() {
        // horizontal 1x3 line: there and back
        let c = trace_boundary(&block(0, 0, 3, 1));
        let xs: Vec<i32> = c.points.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0, 1, 2, 1]);
    }

    #[test]
    fn consecutive_points_are_neighbours() {
        // L shape plus diagonal tail
        let mut pts = Vec::new();
        for i in 0..6 {
            pts.push(PixelCoord::new(i, 0));
            pts.push(PixelCoord::new(0, i));
        }
        pts.push(PixelCoord::new(1, 1));
        let c = trace_boundary(&RegionMask::from_points(&pts));
        for (i, p) in c.points.iter().enumerate() {
            let q = c.points[(i + 1) % c.len()];
            assert!((p.x - q.x).abs() <= 1 && (p.y - q.y).abs() <= 1);
        }
    }
}
