use super::{BinaryMask, ImageError};

/// Euclidean distance from every pixel to the nearest source pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    dist: Vec<f32>,
    max: f32,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.dist[y * self.width + x]
    }

    /// Distance at a signed coordinate, `None` outside the field.
    #[inline]
    pub fn at(&self, x: i32, y: i32) -> Option<f32> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(self.dist[y as usize * self.width + x as usize])
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.dist
    }

    /// Largest distance anywhere in the field.
    pub fn max(&self) -> f32 {
        self.max
    }
}

const INF: f64 = 1e20;

/// Exact squared-Euclidean transform of a 1-D sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                // k == 0 cannot be popped since z[0] = -inf
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Two-pass separable exact Euclidean distance transform.
pub fn distance_transform(mask: &BinaryMask) -> Result<DistanceField, ImageError> {
    let (w, h) = (mask.width(), mask.height());
    if !mask.bits().iter().any(|b| *b) {
        return Err(ImageError::EmptyMask);
    }
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut sq = vec![0.0f64; w * h];

    // columns
    for x in 0..w {
        for y in 0..h {
            f[y] = if mask.get(x, y) { 0.0 } else { INF };
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            sq[y * w + x] = out[y];
        }
    }
    // rows
    for y in 0..h {
        f[..w].copy_from_slice(&sq[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        sq[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }

    let dist: Vec<f32> = sq.iter().map(|d| d.sqrt() as f32).collect();
    let max = dist.iter().copied().fold(0.0f32, f32::max);
    Ok(DistanceField {
        width: w,
        height: h,
        dist,
        max,
    })
}
