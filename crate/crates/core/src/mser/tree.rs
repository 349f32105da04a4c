use crate::image::{BinaryMask, GrayImage, PixelCoord, Rect};

/// Which threshold sets the tree is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    /// Components of `{p : I(p) <= t}`: dark blobs on a lighter surround.
    Dark,
    /// Components of `{p : I(p) >= t}`, built as the dark tree of `255 - I`.
    Light,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Dark => "dark",
            Polarity::Light => "light",
        }
    }
}

/// A node of the component tree: one connected component of a threshold
/// set at the level where it last changed.
#[derive(Debug, Clone)]
pub struct Node {
    /// Threshold in the tree's working order (inverted for `Light`).
    pub level: u8,
    pub area: u32,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    /// Pixels that join the component exactly at `level` (raster indices).
    own: Vec<u32>,
}

/// Component tree over 4-connected threshold sets.
#[derive(Debug, Clone)]
pub struct ComponentTree {
    width: usize,
    height: usize,
    polarity: Polarity,
    nodes: Vec<Node>,
    root: u32,
    largest_child: Vec<Option<u32>>,
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        big
    }
}

impl ComponentTree {
    /// Union-find over pixels processed in increasing working level.
    pub fn build(img: &GrayImage, polarity: Polarity) -> ComponentTree {
        let (w, h) = img.dims();
        let n = w * h;
        let value = |i: usize| -> u8 {
            let v = img.data()[i];
            match polarity {
                Polarity::Dark => v,
                Polarity::Light => 255 - v,
            }
        };

        // counting sort by working level, raster order within a level
        let mut counts = [0usize; 257];
        for i in 0..n {
            counts[value(i) as usize + 1] += 1;
        }
        for l in 0..256 {
            counts[l + 1] += counts[l];
        }
        let starts = counts;
        let mut cursor = counts;
        let mut order = vec![0u32; n];
        for i in 0..n {
            let l = value(i) as usize;
            order[cursor[l]] = i as u32;
            cursor[l] += 1;
        }

        let mut uf = UnionFind::new(n);
        let mut active = vec![false; n];
        let mut top = vec![u32::MAX; n];
        let mut level_node = vec![u32::MAX; n];
        let mut level_stamp = vec![u16::MAX; n];
        let mut nodes: Vec<Node> = Vec::new();
        let mut links: Vec<(u32, u32)> = Vec::new();

        let neighbours = |i: usize| {
            let (x, y) = (i % w, i / w);
            let mut out = [usize::MAX; 4];
            if x > 0 {
                out[0] = i - 1;
            }
            if x + 1 < w {
                out[1] = i + 1;
            }
            if y > 0 {
                out[2] = i - w;
            }
            if y + 1 < h {
                out[3] = i + w;
            }
            out
        };

        for level in 0..256usize {
            let pix = &order[starts[level]..starts[level + 1]];
            if pix.is_empty() {
                continue;
            }
            // existing components touched at this level become children
            links.clear();
            for &p in pix {
                for q in neighbours(p as usize) {
                    if q != usize::MAX && active[q] {
                        let r = uf.find(q as u32);
                        links.push((p, top[r as usize]));
                    }
                }
            }
            for &p in pix {
                active[p as usize] = true;
            }
            for &p in pix {
                for q in neighbours(p as usize) {
                    if q != usize::MAX && active[q] {
                        uf.union(p, q as u32);
                    }
                }
            }
            let first_new = nodes.len();
            for &p in pix {
                let r = uf.find(p) as usize;
                if level_stamp[r] != level as u16 {
                    level_stamp[r] = level as u16;
                    level_node[r] = nodes.len() as u32;
                    nodes.push(Node {
                        level: level as u8,
                        area: 0,
                        parent: None,
                        children: Vec::new(),
                        own: Vec::new(),
                    });
                }
                nodes[level_node[r] as usize].own.push(p);
            }
            for &(p, child) in &links {
                if nodes[child as usize].parent.is_none() {
                    let r = uf.find(p) as usize;
                    let parent = level_node[r];
                    nodes[child as usize].parent = Some(parent);
                    nodes[parent as usize].children.push(child);
                }
            }
            for idx in first_new..nodes.len() {
                let area = nodes[idx].own.len() as u32
                    + nodes[idx]
                        .children
                        .iter()
                        .map(|&c| nodes[c as usize].area)
                        .sum::<u32>();
                nodes[idx].area = area;
                let r = uf.find(nodes[idx].own[0]) as usize;
                top[r] = idx as u32;
            }
        }

        let root = top[uf.find(0) as usize];
        let largest_child = nodes
            .iter()
            .map(|nd| nd.children.iter().copied().max_by_key(|&c| (nodes[c as usize].area, u32::MAX - c)))
            .collect();
        ComponentTree {
            width: w,
            height: h,
            polarity,
            nodes,
            root,
            largest_child,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root as usize
    }

    pub(crate) fn largest_child(&self, id: usize) -> Option<usize> {
        self.largest_child[id].map(|c| c as usize)
    }

    /// Image intensity corresponding to a working level.
    pub fn intensity(&self, level: u8) -> u8 {
        match self.polarity {
            Polarity::Dark => level,
            Polarity::Light => 255 - level,
        }
    }

    /// Whether the node is one of the components of the threshold set at
    /// working level `t`.
    pub fn alive_at(&self, id: usize, t: u8) -> bool {
        let nd = &self.nodes[id];
        nd.level <= t && nd.parent.is_none_or(|p| self.nodes[p as usize].level > t)
    }

    /// Raster indices of every pixel in the node's region.
    pub fn region_indices(&self, id: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.nodes[id].area as usize);
        let mut stack = vec![id as u32];
        while let Some(n) = stack.pop() {
            let nd = &self.nodes[n as usize];
            out.extend_from_slice(&nd.own);
            stack.extend_from_slice(&nd.children);
        }
        out
    }

    pub fn region_mask(&self, id: usize) -> RegionMask {
        let idx = self.region_indices(id);
        let pts: Vec<PixelCoord> = idx
            .iter()
            .map(|&i| PixelCoord::new((i as usize % self.width) as i32, (i as usize / self.width) as i32))
            .collect();
        RegionMask::from_points(&pts)
    }
}

/// Region membership stored over its bounding box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    bbox: Rect,
    mask: BinaryMask,
    area: usize,
}

impl RegionMask {
    pub fn from_points(points: &[PixelCoord]) -> RegionMask {
        let bbox = Rect::bounding(points).unwrap_or(Rect::new(0, 0, 0, 0));
        let mut mask = BinaryMask::new(bbox.w.max(0) as usize, bbox.h.max(0) as usize);
        for p in points {
            mask.set((p.x - bbox.x0) as usize, (p.y - bbox.y0) as usize, true);
        }
        let area = mask.count();
        RegionMask { bbox, mask, area }
    }

    pub fn bbox(&self) -> Rect {
        self.bbox
    }

    pub fn area(&self) -> usize {
        self.area
    }

    #[inline]
    pub fn contains(&self, p: PixelCoord) -> bool {
        self.mask.at(p.x - self.bbox.x0, p.y - self.bbox.y0)
    }

    pub fn local_mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn points(&self) -> Vec<PixelCoord> {
        let mut out = Vec::with_capacity(self.area);
        for y in 0..self.mask.height() {
            for x in 0..self.mask.width() {
                if self.mask.get(x, y) {
                    out.push(PixelCoord::new(self.bbox.x0 + x as i32, self.bbox.y0 + y as i32));
                }
            }
        }
        out
    }

    /// Same region moved by `(dx, dy)`.
    pub fn translated(&self, dx: i32, dy: i32) -> RegionMask {
        RegionMask {
            bbox: Rect::new(self.bbox.x0 + dx, self.bbox.y0 + dy, self.bbox.w, self.bbox.h),
            mask: self.mask.clone(),
            area: self.area,
        }
    }

    /// True when `p` is in the region and has a 4-neighbour inside `bounds`
    /// that is not: the pixel lies on the level line itself rather than
    /// only on the edge of the analysed window.
    pub fn on_level_line(&self, p: PixelCoord, bounds: &Rect) -> bool {
        self.contains(p)
            && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| {
                let q = p.offset(dx, dy);
                bounds.contains(q) && !self.contains(q)
            })
    }
}
