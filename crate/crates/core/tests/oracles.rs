//! Library results against brute-force reimplementations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use comal_core::chamfer::{build_edge_pyramid, chamfer_score, exhaustive_match, hierarchical_match};
use comal_core::comal::{cornerness, detect_corners, DetectorParams};
use comal_core::image::{distance_transform, BinaryMask, GrayImage, PixelCoord, Rect};
use comal_core::mser::{detect_msers, Contour, MserParams, Polarity};
use comal_core::partssd::{masked_ssd, part_ssd_match, Side, SupportPatch};

/// Component of `{v <= t}` (or `{255 - v <= t}`) holding `seed`.
fn flood(img: &GrayImage, seed: (usize, usize), t: u8, polarity: Polarity) -> Vec<PixelCoord> {
    let (w, h) = img.dims();
    let inside = |x: usize, y: usize| {
        let v = img.get(x, y);
        match polarity {
            Polarity::Dark => v <= t,
            Polarity::Light => 255 - v <= t,
        }
    };
    let mut seen = vec![false; w * h];
    let mut stack = vec![seed];
    seen[seed.1 * w + seed.0] = true;
    let mut out = Vec::new();
    while let Some((x, y)) = stack.pop() {
        out.push(PixelCoord::new(x as i32, y as i32));
        let mut n = Vec::new();
        if x > 0 {
            n.push((x - 1, y));
        }
        if y > 0 {
            n.push((x, y - 1));
        }
        if x + 1 < w {
            n.push((x + 1, y));
        }
        if y + 1 < h {
            n.push((x, y + 1));
        }
        for (a, b) in n {
            if !seen[b * w + a] && inside(a, b) {
                seen[b * w + a] = true;
                stack.push((a, b));
            }
        }
    }
    out.sort();
    out
}

fn blobs(seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = GrayImage::from_fn(96, 80, |_, _| 0).unwrap();
    let bg: u8 = rng.gen_range(100..160);
    for y in 0..80 {
        for x in 0..96 {
            img.set(x, y, bg.saturating_add(rng.gen_range(0..6)));
        }
    }
    for _ in 0..5 {
        let (x0, y0) = (rng.gen_range(0..80), rng.gen_range(0..64));
        let (w, h) = (rng.gen_range(6..20), rng.gen_range(6..20));
        let v: u8 = if rng.gen_bool(0.5) { rng.gen_range(10..60) } else { rng.gen_range(200..250) };
        for y in y0..(y0 + h).min(80) {
            for x in x0..(x0 + w).min(96) {
                img.set(x, y, v);
            }
        }
    }
    img
}

#[test]
fn every_mser_is_a_threshold_component() {
    for seed in 0..6 {
        let img = blobs(seed);
        let regions = detect_msers(&img, &MserParams::detection()).unwrap();
        assert!(!regions.is_empty());
        for r in &regions {
            let mut pts = r.mask.points();
            pts.sort();
            let p = pts[0];
            let t = match r.polarity {
                Polarity::Dark => r.level,
                Polarity::Light => 255 - r.level,
            };
            let comp = flood(&img, (p.x as usize, p.y as usize), t, r.polarity);
            assert!(comp == pts, "seed {seed}: region at level {} is not a component", r.level);
            assert_eq!(r.area, pts.len());
        }
    }
}

#[test]
fn distance_field_matches_nearest_edge_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mask = BinaryMask::from_fn(37, 29, |_, _| rng.gen_bool(0.03));
    let edges: Vec<(f64, f64)> = (0..29)
        .flat_map(|y| (0..37).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .map(|(x, y)| (x as f64, y as f64))
        .collect();
    let field = distance_transform(&mask).unwrap();
    for y in 0..29 {
        for x in 0..37 {
            let want = edges
                .iter()
                .map(|e| ((e.0 - x as f64).powi(2) + (e.1 - y as f64).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((field.get(x, y) as f64 - want).abs() < 1e-4, "({x},{y})");
        }
    }
}

#[test]
fn chamfer_score_is_mean_nearest_edge_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let edges: Vec<PixelCoord> = (0..30).map(|_| PixelCoord::new(rng.gen_range(0..48), rng.gen_range(0..48))).collect();
        let template: Vec<PixelCoord> = (0..12).map(|_| PixelCoord::new(rng.gen_range(0..10), rng.gen_range(0..10))).collect();
        let pyr = build_edge_pyramid(&edges, 48, 48, 3).unwrap();
        let off = PixelCoord::new(rng.gen_range(0..38), rng.gen_range(0..38));
        let got = chamfer_score(&template, pyr.base(), off).unwrap();
        let want: f64 = template
            .iter()
            .map(|t| {
                let p = t.offset(off.x, off.y);
                edges.iter().map(|e| (e.dist2(p) as f64).sqrt()).fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / template.len() as f64;
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }
}

#[test]
fn hierarchical_equals_exhaustive_on_structured_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        // rectangle outlines plus clutter
        let mut edges = Vec::new();
        for _ in 0..3 {
            let (x0, y0, w, h) = (rng.gen_range(2..50), rng.gen_range(2..50), rng.gen_range(5..20), rng.gen_range(5..20));
            for x in x0..x0 + w {
                edges.push(PixelCoord::new(x, y0));
                edges.push(PixelCoord::new(x, y0 + h));
            }
            for y in y0..=y0 + h {
                edges.push(PixelCoord::new(x0, y));
                edges.push(PixelCoord::new(x0 + w, y));
            }
        }
        let s = rng.gen_range(0..edges.len() - 10);
        let template: Vec<PixelCoord> = edges[s..s + 10].to_vec();
        let bb = Rect::bounding(&template).unwrap();
        let template: Vec<PixelCoord> = template.iter().map(|p| p.offset(-bb.x0, -bb.y0)).collect();
        let pyr = build_edge_pyramid(&edges, 80, 80, 3).unwrap();
        let search = Rect::new(0, 0, 70, 70);
        for thr in [0.0, 0.5, 1.5] {
            let h = hierarchical_match(&template, &pyr, &search, thr).unwrap();
            let e = exhaustive_match(&template, pyr.base(), &search, thr).unwrap();
            assert_eq!(h, e);
        }
    }
}

#[test]
fn cornerness_matches_closed_form_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let pts: Vec<PixelCoord> = (0..25).map(|_| PixelCoord::new(rng.gen_range(-10..10), rng.gen_range(-10..10))).collect();
        let c = Contour::open(pts.clone());
        // whole contour in the window
        let got = cornerness(&c, 12, 30.0).unwrap();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.x as f64).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.y as f64).sum::<f64>() / n;
        let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
        for p in &pts {
            let (dx, dy) = (p.x as f64 - mx, p.y as f64 - my);
            a += dx * dx;
            b += dx * dy;
            d += dy * dy;
        }
        let (a, b, d) = (a / n, b / n, d / n);
        let want = 0.5 * (a + d) - (0.25 * (a - d).powi(2) + b * b).sqrt();
        assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

fn random_patch(rng: &mut ChaCha8Rng) -> SupportPatch {
    let px = GrayImage::from_fn(41, 41, |_, _| rng.gen()).unwrap();
    let a = BinaryMask::from_fn(41, 41, |_, _| rng.gen_bool(0.5));
    let b = BinaryMask::from_fn(41, 41, |x, y| !a.get(x, y) && rng.gen_bool(0.8));
    SupportPatch::new(px, Rect::new(0, 0, 41, 41), PixelCoord::new(20, 20), a, b, false).unwrap()
}

#[test]
fn masked_ssd_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..20 {
        let p = random_patch(&mut rng);
        let q = random_patch(&mut rng);
        for (sp, sq) in [(Side::A, Side::A), (Side::A, Side::B), (Side::B, Side::A), (Side::B, Side::B)] {
            let (mut sum, mut n) = (0.0, 0usize);
            for y in 0..41 {
                for x in 0..41 {
                    if p.side(sp).get(x, y) && q.side(sq).get(x, y) {
                        let d = p.pixels.get(x, y) as f64 - q.pixels.get(x, y) as f64;
                        sum += d * d;
                        n += 1;
                    }
                }
            }
            let (score, count) = masked_ssd(&p, sp, &q, sq, 1).unwrap();
            assert_eq!(count, n);
            assert!((score - sum / n as f64).abs() < 1e-9);
        }
        let best = part_ssd_match(&p, &q, 1).unwrap();
        assert!(best.score.is_finite());
    }
}

#[test]
fn square_corners_are_found_at_the_four_corners() {
    let img = GrayImage::from_fn(100, 90, |x, y| if (30..70).contains(&x) && (20..60).contains(&y) { 30 } else { 210 }).unwrap();
    let corners = detect_corners(&img, &DetectorParams::default()).unwrap();
    let mut found: Vec<(i32, i32)> = corners.iter().map(|c| (c.position.x, c.position.y)).collect();
    found.sort();
    assert_eq!(found.len(), 4, "{found:?}");
    for (want, got) in [(30, 20), (30, 59), (69, 20), (69, 59)].iter().zip(&found) {
        assert!((want.0 - got.0).abs() <= 1 && (want.1 - got.1).abs() <= 1, "{found:?}");
    }
}
