//! Translation-only inverse-compositional Lucas-Kanade point tracker,
//! used as the baseline.

use rayon::prelude::*;
use thiserror::Error;

use crate::image::GrayImage;
use crate::tracklog::{TrackLog, TrackRow, TrackStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KltError {
    #[error("hessian min eigenvalue {0} is below the trackability limit")]
    SingularHessian(f64),
    #[error("tracking window left the image")]
    OutOfBounds,
    #[error("bad klt config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KltConfig {
    pub window: usize,
    pub max_iters: usize,
    /// Stop once the update is shorter than this (pixels).
    pub eps: f64,
    /// Minimum eigenvalue of the per-pixel mean Hessian.
    pub min_eigen: f64,
    /// 1 is single level; more adds coarse-to-fine levels.
    pub pyramid_levels: usize,
    /// Sequence driver: a point whose final mean squared error exceeds this
    /// is lost.
    pub max_residual: f64,
}

impl Default for KltConfig {
    fn default() -> Self {
        KltConfig {
            window: 41,
            max_iters: 30,
            eps: 0.01,
            min_eigen: 0.01,
            pyramid_levels: 1,
            max_residual: 300.0,
        }
    }
}

impl KltConfig {
    pub fn validate(&self) -> Result<(), KltError> {
        if self.window % 2 == 0 || self.window < 3 {
            return Err(KltError::BadConfig("window must be odd and >= 3".into()));
        }
        if self.eps <= 0.0 || self.max_iters == 0 || self.pyramid_levels == 0 {
            return Err(KltError::BadConfig("eps, max_iters and pyramid_levels must be positive".into()));
        }
        Ok(())
    }
}

/// Real-valued image with bilinear sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Plane {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Plane { width, height, data }
    }

    pub fn from_image(img: &GrayImage) -> Plane {
        Plane {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample; `None` unless all four neighbours exist.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bot * fy)
    }

    /// 2x2 box mean (truncated blocks averaged over what exists).
    pub fn half(&self) -> Plane {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        Plane::from_fn(w, h, |x, y| {
            let mut s = 0.0;
            let mut n = 0.0;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (sx, sy) = (2 * x + dx, 2 * y + dy);
                if sx < self.width && sy < self.height {
                    s += self.get(sx, sy);
                    n += 1.0;
                }
            }
            s / n
        })
    }
}

/// A plane with its central-difference gradients. Border pixels have no
/// gradient and are never sampled for it.
#[derive(Debug, Clone)]
pub struct GradientPlane {
    pub image: Plane,
    pub gx: Plane,
    pub gy: Plane,
}

impl GradientPlane {
    pub fn new(image: Plane) -> GradientPlane {
        let (w, h) = (image.width, image.height);
        let gx = Plane::from_fn(w, h, |x, y| {
            if x == 0 || x + 1 >= w {
                0.0
            } else {
                (image.get(x + 1, y) - image.get(x - 1, y)) / 2.0
            }
        });
        let gy = Plane::from_fn(w, h, |x, y| {
            if y == 0 || y + 1 >= h {
                0.0
            } else {
                (image.get(x, y + 1) - image.get(x, y - 1)) / 2.0
            }
        });
        GradientPlane { image, gx, gy }
    }

    /// Gradient at a sub-pixel point, `None` within one pixel of the border.
    pub fn gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        if x < 1.0 || y < 1.0 || x > (self.image.width - 2) as f64 || y > (self.image.height - 2) as f64 {
            return None;
        }
        Some((self.gx.sample(x, y)?, self.gy.sample(x, y)?))
    }
}

/// Coarse-to-fine stack, finest first.
#[derive(Debug, Clone)]
pub struct KltFrame {
    pub levels: Vec<GradientPlane>,
}

impl KltFrame {
    pub fn new(img: &GrayImage, levels: usize) -> KltFrame {
        Self::from_plane(Plane::from_image(img), levels)
    }

    pub fn from_plane(plane: Plane, levels: usize) -> KltFrame {
        let mut out = vec![GradientPlane::new(plane)];
        while out.len() < levels {
            let next = out.last().unwrap().image.half();
            if next.width < 3 || next.height < 3 {
                break;
            }
            out.push(GradientPlane::new(next));
        }
        KltFrame { levels: out }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KltResult {
    pub position: (f64, f64),
    pub converged: bool,
    pub iterations: usize,
    /// Mean squared error at the final position.
    pub residual: f64,
    /// Mean squared error before the first update.
    pub initial_residual: f64,
}

fn mean_sq_error(next: &Plane, tmpl: &[f64], offs: &[(f64, f64)], at: (f64, f64)) -> Result<(Vec<f64>, f64), KltError> {
    let mut err = Vec::with_capacity(tmpl.len());
    let mut s = 0.0;
    for (t, (ox, oy)) in tmpl.iter().zip(offs) {
        let v = next.sample(at.0 + ox, at.1 + oy).ok_or(KltError::OutOfBounds)?;
        let e = v - t;
        s += e * e;
        err.push(e);
    }
    Ok((err, s / tmpl.len() as f64))
}

/// Tracks on one level starting from `start` (position in `next`) for a
/// template centred on `p` in `prev`.
fn track_level(
    prev: &GradientPlane,
    next: &Plane,
    p: (f64, f64),
    start: (f64, f64),
    cfg: &KltConfig,
) -> Result<KltResult, KltError> {
    let h = (cfg.window / 2) as i64;
    let offs: Vec<(f64, f64)> = (-h..=h).flat_map(|dy| (-h..=h).map(move |dx| (dx as f64, dy as f64))).collect();
    let mut tmpl = Vec::with_capacity(offs.len());
    let mut grads = Vec::with_capacity(offs.len());
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (ox, oy) in &offs {
        let (x, y) = (p.0 + ox, p.1 + oy);
        let g = prev.gradient(x, y).ok_or(KltError::OutOfBounds)?;
        tmpl.push(prev.image.sample(x, y).ok_or(KltError::OutOfBounds)?);
        a += g.0 * g.0;
        b += g.0 * g.1;
        c += g.1 * g.1;
        grads.push(g);
    }
    let n = offs.len() as f64;
    let min_eig = {
        let (a, b, c) = (a / n, b / n, c / n);
        0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt()
    };
    if !(min_eig >= cfg.min_eigen) || min_eig <= 0.0 {
        return Err(KltError::SingularHessian(min_eig));
    }
    let det = a * c - b * b;

    let mut at = start;
    let (_, initial_residual) = mean_sq_error(next, &tmpl, &offs, at)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let (err, _) = mean_sq_error(next, &tmpl, &offs, at)?;
        let (mut sx, mut sy) = (0.0, 0.0);
        for (g, e) in grads.iter().zip(&err) {
            sx += g.0 * e;
            sy += g.1 * e;
        }
        let dx = (c * sx - b * sy) / det;
        let dy = (a * sy - b * sx) / det;
        // inverse composition of a translation is a subtraction
        at = (at.0 - dx, at.1 - dy);
        iterations += 1;
        if (dx * dx + dy * dy).sqrt() < cfg.eps {
            converged = true;
            break;
        }
    }
    let (_, residual) = mean_sq_error(next, &tmpl, &offs, at)?;
    Ok(KltResult {
        position: at,
        converged,
        iterations,
        residual,
        initial_residual,
    })
}

/// Tracks `p` from `prev` into `next`.
pub fn klt_track_point(prev: &KltFrame, next: &KltFrame, p: (f64, f64), cfg: &KltConfig) -> Result<KltResult, KltError> {
    cfg.validate()?;
    let levels = prev.levels.len().min(next.levels.len()).min(cfg.pyramid_levels);
    let mut guess = (0.0, 0.0);
    let mut result = None;
    let mut total_iters = 0;
    let mut initial = None;
    for l in (0..levels).rev() {
        let s = (1u32 << l) as f64;
        let pl = (p.0 / s, p.1 / s);
        let start = (pl.0 + guess.0, pl.1 + guess.1);
        let r = match track_level(&prev.levels[l], &next.levels[l].image, pl, start, cfg) {
            Ok(r) => r,
            // coarse levels are only a hint
            Err(_) if l > 0 => continue,
            Err(e) => return Err(e),
        };
        total_iters += r.iterations;
        if l == 0 {
            initial = Some(r.initial_residual);
        }
        guess = ((r.position.0 - pl.0) * 2.0, (r.position.1 - pl.1) * 2.0);
        result = Some(r);
    }
    let r = result.ok_or(KltError::OutOfBounds)?;
    Ok(KltResult {
        iterations: if levels == 1 { r.iterations } else { total_iters.min(cfg.max_iters * levels) },
        initial_residual: initial.unwrap_or(r.initial_residual),
        ..r
    })
}

/// Independent per-point tracking; order preserved.
pub fn klt_track_frame(
    prev: &KltFrame,
    next: &KltFrame,
    points: &[(f64, f64)],
    cfg: &KltConfig,
) -> Vec<Result<KltResult, KltError>> {
    points.par_iter().map(|&p| klt_track_point(prev, next, p, cfg)).collect()
}

/// Tracks `points` (on frame 0) through `frames`. A point is lost on an
/// error, on non-convergence, or when its residual exceeds `max_residual`;
/// lost points get one `lost` row at their last position.
pub fn run_klt_sequence(frames: &[GrayImage], points: &[(f64, f64)], cfg: &KltConfig) -> Result<TrackLog, KltError> {
    cfg.validate()?;
    let mut log = TrackLog::new();
    let Some(first) = frames.first() else {
        return Ok(log);
    };
    let mut pos: Vec<(f64, f64)> = points.to_vec();
    let mut alive = vec![true; points.len()];
    for (i, p) in pos.iter().enumerate() {
        log.push(TrackRow::plain(i as u64, 0, p.0, p.1, TrackStatus::Active));
    }
    let mut prev = KltFrame::new(first, cfg.pyramid_levels);
    for (k, f) in frames.iter().enumerate().skip(1) {
        let next = KltFrame::new(f, cfg.pyramid_levels);
        let idx: Vec<usize> = (0..pos.len()).filter(|&i| alive[i]).collect();
        let pts: Vec<(f64, f64)> = idx.iter().map(|&i| pos[i]).collect();
        let res = klt_track_frame(&prev, &next, &pts, cfg);
        for (&i, r) in idx.iter().zip(res) {
            match r {
                Ok(r) if r.converged && r.residual <= cfg.max_residual => {
                    pos[i] = r.position;
                    log.push(TrackRow::plain(i as u64, k, r.position.0, r.position.1, TrackStatus::Active));
                }
                _ => {
                    alive[i] = false;
                    log.push(TrackRow::plain(i as u64, k, pos[i].0, pos[i].1, TrackStatus::Lost));
                }
            }
        }
        prev = next;
    }
    log.sort();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(dx: f64, dy: f64) -> Plane {
        Plane::from_fn(120, 100, |x, y| {
            let (x, y) = (x as f64 - dx, y as f64 - dy);
            128.0 + 60.0 * (x * 0.13).sin() * (y * 0.11).cos() + 30.0 * ((x + y) * 0.07).sin()
        })
    }

    #[test]
    fn identical_frames_zero_motion() {
        let f = KltFrame::from_plane(smooth(0.0, 0.0), 1);
        let r = klt_track_point(&f, &f, (60.0, 50.0), &KltConfig::default()).unwrap();
        assert!(r.converged && r.iterations <= 2);
        assert_eq!(r.position, (60.0, 50.0));
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn subpixel_shift_recovered() {
        let a = KltFrame::from_plane(smooth(0.0, 0.0), 1);
        // resample by bilinear interpolation at the shifted grid
        let src = smooth(0.0, 0.0);
        let shifted = Plane::from_fn(120, 100, |x, y| {
            src.sample((x as f64 - 0.5).max(0.0), (y as f64 - 0.25).max(0.0)).unwrap()
        });
        let b = KltFrame::from_plane(shifted, 1);
        let r = klt_track_point(&a, &b, (60.0, 50.0), &KltConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.position.0 - 60.5).abs() < 0.1 && (r.position.1 - 50.25).abs() < 0.1, "{:?}", r.position);
        assert!(r.residual <= r.initial_residual);
    }

    #[test]
    fn flat_patch_is_singular() {
        let f = KltFrame::from_plane(Plane::from_fn(80, 80, |_, _| 90.0), 1);
        assert!(matches!(
            klt_track_point(&f, &f, (40.0, 40.0), &KltConfig::default()),
            Err(KltError::SingularHessian(_))
        ));
    }

    #[test]
    fn gradient_matches_analytic_derivative() {
        // quadratic surface: central differences are exact and the
        // derivative is affine, so bilinear interpolation keeps it exact
        let f = |x: f64, y: f64| 0.3 * x * x - 0.2 * y * y + 0.15 * x * y + 2.0 * x - y + 7.0;
        let g = GradientPlane::new(Plane::from_fn(40, 40, |x, y| f(x as f64, y as f64)));
        for &(x, y) in &[(10.0, 12.0), (5.25, 30.5), (20.7, 7.3)] {
            let (gx, gy) = g.gradient(x, y).unwrap();
            assert!((gx - (0.6 * x + 0.15 * y + 2.0)).abs() < 1e-6);
            assert!((gy - (-0.4 * y + 0.15 * x - 1.0)).abs() < 1e-6);
            let fd = (g.image.sample(x + 1.0, y).unwrap() - g.image.sample(x - 1.0, y).unwrap()) / 2.0;
            assert!((gx - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn window_off_image() {
        let f = KltFrame::from_plane(smooth(0.0, 0.0), 1);
        assert_eq!(
            klt_track_point(&f, &f, (5.0, 50.0), &KltConfig::default()),
            Err(KltError::OutOfBounds)
        );
    }

    #[test]
    fn batch_keeps_order_and_statuses() {
        let plane = Plane::from_fn(160, 80, |x, y| if x < 80 { 100.0 } else { 128.0 + 50.0 * ((x * y) as f64 * 0.01).sin() });
        let f = KltFrame::from_plane(plane, 1);
        let pts = [(30.0, 40.0), (120.0, 40.0), (40.0, 40.0)];
        let r = klt_track_frame(&f, &f, &pts, &KltConfig::default());
        assert!(matches!(r[0], Err(KltError::SingularHessian(_))));
        assert!(r[1].as_ref().unwrap().converged);
        assert!(matches!(r[2], Err(KltError::SingularHessian(_))));
        assert!(klt_track_frame(&f, &f, &[], &KltConfig::default()).is_empty());
    }

    #[test]
    fn translation_equivariance() {
        let a = KltFrame::from_plane(smooth(0.0, 0.0), 1);
        let b = KltFrame::from_plane(smooth(1.0, 2.0), 1);
        let a2 = KltFrame::from_plane(smooth(5.0, 3.0), 1);
        let b2 = KltFrame::from_plane(smooth(6.0, 5.0), 1);
        let cfg = KltConfig::default();
        let r1 = klt_track_point(&a, &b, (50.0, 45.0), &cfg).unwrap();
        let r2 = klt_track_point(&a2, &b2, (55.0, 48.0), &cfg).unwrap();
        let d1 = (r1.position.0 - 50.0, r1.position.1 - 45.0);
        let d2 = (r2.position.0 - 55.0, r2.position.1 - 48.0);
        assert!((d1.0 - d2.0).abs() < 1e-6 && (d1.1 - d2.1).abs() < 1e-6);
    }

    #[test]
    fn pyramid_handles_larger_motion() {
        let a = KltFrame::from_plane(smooth(0.0, 0.0), 3);
        let b = KltFrame::from_plane(smooth(6.0, -4.0), 3);
        let cfg = KltConfig {
            pyramid_levels: 3,
            ..KltConfig::default()
        };
        let r = klt_track_point(&a, &b, (60.0, 50.0), &cfg).unwrap();
        assert!((r.position.0 - 66.0).abs() < 0.1 && (r.position.1 - 46.0).abs() < 0.1, "{:?}", r.position);
    }

    #[test]
    fn sequence_on_flat_frames_is_all_lost() {
        let f = GrayImage::new(64, 64, 50).unwrap();
        let log = run_klt_sequence(&[f.clone(), f], &[(32.0, 32.0)], &KltConfig::default()).unwrap();
        assert_eq!(log.rows.len(), 2);
        assert_eq!(log.rows[1].status, TrackStatus::Lost);
    }
}
