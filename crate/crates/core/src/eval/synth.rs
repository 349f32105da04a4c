//! Seeded synthetic sequences: a dark textured cross-shaped object moving
//! over a bright textured background, with exact boxes and masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BBoxAnnotation, BoxF, EvalError};
use crate::image::{BinaryMask, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundMode {
    Static,
    /// A fresh background texture every frame.
    Rerandomized,
}

impl BackgroundMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "static" => Some(BackgroundMode::Static),
            "rerandomized" => Some(BackgroundMode::Rerandomized),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackgroundMode::Static => "static",
            BackgroundMode::Rerandomized => "rerandomized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub object_width: usize,
    pub object_height: usize,
    /// Top-left corner of the object box in frame 0.
    pub start: (i32, i32),
    /// Per-frame displacements, cycled (one entry: constant velocity).
    pub motion: Vec<(i32, i32)>,
    pub background: BackgroundMode,
    pub object_id: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            width: 320,
            height: 240,
            frames: 30,
            object_width: 60,
            object_height: 60,
            start: (40, 90),
            motion: vec![(2, 0)],
            background: BackgroundMode::Rerandomized,
            object_id: 1,
        }
    }
}

impl SynthSpec {
    /// Reads `key = value` lines (`#` comments). `motion` is
    /// `dx,dy[;dx,dy...]`, `start` is `x,y`.
    pub fn parse(text: &str) -> Result<SynthSpec, EvalError> {
        let mut s = SynthSpec::default();
        for (k, v) in crate::config::parse_pairs(text).map_err(|e| EvalError::BadSpec(e.to_string()))? {
            let bad = || EvalError::BadSpec(format!("bad value for {k}: {v}"));
            let pair = |t: &str| -> Result<(i32, i32), EvalError> {
                let (a, b) = t.split_once(',').ok_or_else(bad)?;
                Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
            };
            match k.as_str() {
                "seed" => s.seed = v.parse().map_err(|_| bad())?,
                "width" => s.width = v.parse().map_err(|_| bad())?,
                "height" => s.height = v.parse().map_err(|_| bad())?,
                "frames" => s.frames = v.parse().map_err(|_| bad())?,
                "object_width" => s.object_width = v.parse().map_err(|_| bad())?,
                "object_height" => s.object_height = v.parse().map_err(|_| bad())?,
                "object_id" => s.object_id = v.parse().map_err(|_| bad())?,
                "start" => s.start = pair(&v)?,
                "motion" => s.motion = v.split(';').map(|t| pair(t.trim())).collect::<Result<_, _>>()?,
                "background" => s.background = BackgroundMode::parse(&v).ok_or_else(bad)?,
                _ => return Err(EvalError::BadSpec(format!("unknown key {k}"))),
            }
        }
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let motion: Vec<String> = self.motion.iter().map(|(x, y)| format!("{x},{y}")).collect();
        format!(
            "seed = {}\nwidth = {}\nheight = {}\nframes = {}\nobject_width = {}\nobject_height = {}\nobject_id = {}\nstart = {},{}\nmotion = {}\nbackground = {}\n",
            self.seed,
            self.width,
            self.height,
            self.frames,
            self.object_width,
            self.object_height,
            self.object_id,
            self.start.0,
            self.start.1,
            motion.join(";"),
            self.background.as_str()
        )
    }

    /// Top-left corner of the object in each frame.
    pub fn positions(&self) -> Vec<(i32, i32)> {
        let mut p = self.start;
        let mut out = Vec::with_capacity(self.frames);
        for f in 0..self.frames {
            out.push(p);
            if !self.motion.is_empty() {
                let d = self.motion[f % self.motion.len()];
                p = (p.0 + d.0, p.1 + d.1);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub frames: Vec<GrayImage>,
    pub annotations: Vec<BBoxAnnotation>,
    pub masks: Vec<BinaryMask>,
}

/// Overlapping random rectangles over a random base value.
fn rect_texture(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: u8, hi: u8, count: usize, min_side: usize, max_side: usize) -> Vec<u8> {
    let base = rng.gen_range(lo..=hi);
    let mut data = vec![base; w * h];
    for _ in 0..count {
        let rw = rng.gen_range(min_side..=max_side);
        let rh = rng.gen_range(min_side..=max_side);
        let x0 = rng.gen_range(0..w) as i64 - rw as i64 / 2;
        let y0 = rng.gen_range(0..h) as i64 - rh as i64 / 2;
        let v = rng.gen_range(lo..=hi);
        for y in y0.max(0)..(y0 + rh as i64).min(h as i64) {
            for x in x0.max(0)..(x0 + rw as i64).min(w as i64) {
                data[y as usize * w + x as usize] = v;
            }
        }
    }
    data
}

fn background(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<u8> {
    rect_texture(rng, w, h, 150, 250, (w * h / 300).max(1), 8, 40)
}

/// Cross: the box minus a quarter-size square at each corner.
fn in_shape(x: usize, y: usize, w: usize, h: usize) -> bool {
    let (cx, cy) = (w / 4, h / 4);
    let edge_x = x < cx || x >= w - cx;
    let edge_y = y < cy || y >= h - cy;
    !(edge_x && edge_y)
}

pub fn synth_sequence(spec: &SynthSpec) -> Result<SynthSequence, EvalError> {
    let (w, h) = (spec.width, spec.height);
    let (ow, oh) = (spec.object_width, spec.object_height);
    if w == 0 || h == 0 || ow < 4 || oh < 4 || spec.frames == 0 {
        return Err(EvalError::BadSpec("frame and object sizes must be positive, object at least 4x4".into()));
    }
    let positions = spec.positions();
    for (f, &(x, y)) in positions.iter().enumerate() {
        if x < 0 || y < 0 || x as usize + ow > w || y as usize + oh > h {
            return Err(EvalError::ObjectOutOfFrame {
                frame: f,
                width: w,
                height: h,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let texture = rect_texture(&mut rng, ow, oh, 30, 100, (ow * oh / 100).max(1), 6, 20);
    let mut bg = background(&mut rng, w, h);

    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    let mut annotations = Vec::with_capacity(spec.frames);
    for (f, &(px, py)) in positions.iter().enumerate() {
        if f > 0 && spec.background == BackgroundMode::Rerandomized {
            bg = background(&mut rng, w, h);
        }
        let (px, py) = (px as usize, py as usize);
        let inside = |x: usize, y: usize| x >= px && y >= py && x < px + ow && y < py + oh && in_shape(x - px, y - py, ow, oh);
        let img = GrayImage::from_fn(w, h, |x, y| {
            if inside(x, y) {
                texture[(y - py) * ow + (x - px)]
            } else {
                bg[y * w + x]
            }
        })
        .expect("positive dimensions");
        frames.push(img);
        masks.push(BinaryMask::from_fn(w, h, inside));
        annotations.push(BBoxAnnotation {
            object_id: spec.object_id,
            frame: f,
            bbox: BoxF {
                x: px as f64,
                y: py as f64,
                w: ow as f64,
                h: oh as f64,
            },
        });
    }
    Ok(SynthSequence {
        frames,
        annotations,
        masks,
    })
}
