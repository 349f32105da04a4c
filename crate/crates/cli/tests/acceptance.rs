//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use comal_core::chamfer::{build_edge_pyramid, chamfer_score, default_levels, hierarchical_match, DEFAULT_ACCEPT_THRESHOLD};
use comal_core::eval::{generate_gt, score_matches, synth_sequence, BBoxAnnotation, BackgroundMode, BoxF, Strata, Stratum, SynthSpec};
use comal_core::image::{distance_transform, BinaryMask, GrayImage, PixelCoord, Rect};
use comal_core::klt::{klt_track_point, run_klt_sequence, GradientPlane, KltConfig, KltError, KltFrame, Plane};
use comal_core::mser::{ComponentTree, Polarity};
use comal_core::partssd::{full_patch_ssd, part_ssd_match, Combination, SupportPatch};
use comal_core::tracker::{Tracker, TrackerConfig};
use comal_core::tracklog::{TrackLog, TrackRow, TrackStatus};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// 1: component tree against per-threshold flood fill

fn flood_components(img: &GrayImage, t: u8, polarity: Polarity) -> BTreeSet<Vec<u32>> {
    let (w, h) = img.dims();
    let inside = |i: usize| {
        let v = img.data()[i];
        match polarity {
            Polarity::Dark => v <= t,
            Polarity::Light => 255 - v <= t,
        }
    };
    let mut seen = vec![false; w * h];
    let mut out = BTreeSet::new();
    for s in 0..w * h {
        if seen[s] || !inside(s) {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            comp.push(i as u32);
            let (x, y) = (i % w, i / w);
            let mut push = |j: usize| {
                if !seen[j] && inside(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
        }
        comp.sort_unstable();
        out.insert(comp);
    }
    out
}

fn tree_components(tree: &ComponentTree, t: u8) -> BTreeSet<Vec<u32>> {
    (0..tree.len())
        .filter(|&id| tree.alive_at(id, t))
        .map(|id| {
            let mut v = tree.region_indices(id);
            v.sort_unstable();
            assert_eq!(v.len(), tree.node(id).area as usize, "stored area disagrees with membership");
            v
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut mismatches = 0;
    for i in 0..200 {
        // alternate full-range noise with few-level images full of plateaus
        let levels: u16 = if i % 2 == 0 { 256 } else { rng.gen_range(2..12) };
        let data: Vec<u8> = (0..24 * 24).map(|_| (rng.gen_range(0..levels) * (255 / (levels - 1).max(1))) as u8).collect();
        let img = GrayImage::from_vec(24, 24, data).unwrap();
        for polarity in [Polarity::Dark, Polarity::Light] {
            let tree = ComponentTree::build(&img, polarity);
            for t in 0..=255u8 {
                if tree_components(&tree, t) != flood_components(&img, t, polarity) {
                    mismatches += 1;
                }
            }
        }
    }
    let el = start.elapsed();
    check(
        mismatches == 0 && within(el, 10.0),
        format!("200 images x 256 thresholds x 2 polarities, {mismatches} mismatching thresholds, {:.2}s", el.as_secs_f64()),
    )
}

// 2: hierarchical chamfer against the full scan

fn random_walk(rng: &mut ChaCha8Rng, n: usize, start: (i32, i32)) -> Vec<PixelCoord> {
    let mut p = start;
    let mut out = vec![PixelCoord::new(p.0, p.1)];
    for _ in 1..n {
        p.0 += rng.gen_range(-1..=1);
        p.1 += rng.gen_range(-1..=1);
        out.push(PixelCoord::new(p.0, p.1));
    }
    out
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let thr = DEFAULT_ACCEPT_THRESHOLD;
    let (mut unsound, mut incomplete, mut mins_in_range) = (0, 0, 0);
    for _ in 0..100 {
        // edges: a few random walks plus scatter
        let mut edges = Vec::new();
        for _ in 0..rng.gen_range(1..4) {
            let len = rng.gen_range(20..80);
            let at = (rng.gen_range(8..56), rng.gen_range(8..56));
            edges.extend(random_walk(&mut rng, len, at));
        }
        for _ in 0..rng.gen_range(0..20) {
            edges.push(PixelCoord::new(rng.gen_range(0..64), rng.gen_range(0..64)));
        }
        // template: a jittered piece of the edges, or an unrelated walk
        let tlen = rng.gen_range(8..34);
        let raw: Vec<PixelCoord> = if rng.gen_bool(0.7) {
            let s = rng.gen_range(0..edges.len());
            edges
                .iter()
                .cycle()
                .skip(s)
                .take(tlen)
                .map(|p| p.offset(rng.gen_range(-1..=1) * rng.gen_range(0..2), 0))
                .collect()
        } else {
            random_walk(&mut rng, tlen, (0, 0))
        };
        let corner = Rect::bounding(&raw).unwrap();
        let template: Vec<PixelCoord> = raw.iter().map(|p| p.offset(-corner.x0, -corner.y0)).collect();
        let pyr = build_edge_pyramid(&edges, 64, 64, default_levels(64, 64)).unwrap();
        let search = Rect::new(-corner.w + 1, -corner.h + 1, 64 + corner.w - 1, 64 + corner.h - 1);

        let mut brute: HashMap<(i32, i32), f64> = HashMap::new();
        let mut best: Option<f64> = None;
        for y in search.y0..search.y1() {
            for x in search.x0..search.x1() {
                let s = chamfer_score(&template, pyr.base(), PixelCoord::new(x, y)).unwrap();
                brute.insert((x, y), s);
                best = Some(best.map_or(s, |b: f64| b.min(s)));
            }
        }
        let got = hierarchical_match(&template, &pyr, &search, thr).unwrap();
        for m in &got {
            if brute.get(&(m.offset.x, m.offset.y)).map(|s| s.to_bits()) != Some(m.score.to_bits()) || m.score > thr {
                unsound += 1;
            }
        }
        let best = best.unwrap();
        if best <= thr {
            mins_in_range += 1;
            let n_min = brute.values().filter(|s| **s == best).count();
            if got.iter().filter(|m| m.score == best).count() != n_min {
                incomplete += 1;
            }
        }
        // every accepted offset of the scan is returned
        let n_ok = brute.values().filter(|s| **s <= thr).count();
        if n_ok != got.len() {
            incomplete += 1;
        }
    }
    let el = start.elapsed();
    check(
        unsound == 0 && incomplete == 0 && within(el, 30.0),
        format!(
            "100 pairs ({mins_in_range} with a minimum within threshold), {unsound} unsound, {incomplete} incomplete, {:.2}s",
            el.as_secs_f64()
        ),
    )
}

// 3: part-SSD ignores the changing side

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let (mut bad_part, mut bad_combo, mut bad_full) = (0, 0, 0);
    for _ in 0..50 {
        // a random straight level line through the centre
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (nx, ny) = (angle.cos(), angle.sin());
        let side_of = |x: usize, y: usize| (x as f64 - 20.0) * nx + (y as f64 - 20.0) * ny;
        let a_tex: Vec<u8> = (0..41 * 41).map(|_| rng.gen_range(20..120)).collect();
        let make = |rng: &mut ChaCha8Rng| {
            let px = GrayImage::from_fn(41, 41, |x, y| {
                if side_of(x, y) < -0.5 {
                    a_tex[y * 41 + x]
                } else {
                    rng.gen_range(130..250)
                }
            })
            .unwrap();
            SupportPatch::new(
                px,
                Rect::new(0, 0, 41, 41),
                PixelCoord::new(20, 20),
                BinaryMask::from_fn(41, 41, |x, y| side_of(x, y) < -0.5),
                BinaryMask::from_fn(41, 41, |x, y| side_of(x, y) > 0.5),
                false,
            )
            .unwrap()
        };
        let p = make(&mut rng);
        let q = make(&mut rng);
        let m = part_ssd_match(&p, &q, 40).unwrap();
        let (full, _) = full_patch_ssd(&p, &q).unwrap();
        bad_part += (m.score != 0.0) as usize;
        bad_combo += (m.combination != Combination::AA) as usize;
        bad_full += (full <= 0.0) as usize;
    }
    check(
        bad_part + bad_combo + bad_full == 0,
        format!("50 pairs: {bad_part} nonzero part scores, {bad_combo} wrong pairings, {bad_full} zero full-patch scores"),
    )
}

// 4: boundary corners survive a changing background, KLT does not

fn boundary_corners(log: &TrackLog, mask: &BinaryMask, band: f64) -> Vec<(u64, (f64, f64))> {
    let field = distance_transform(&mask.boundary()).unwrap();
    log.rows
        .iter()
        .filter(|r| r.frame == 0)
        .filter(|r| {
            let (x, y) = (r.x as usize, r.y as usize);
            mask.get(x, y) && field.get(x, y) as f64 <= band
        })
        .map(|r| (r.track_id, (r.x, r.y)))
        .collect()
}

fn retained(log: &TrackLog, ids: &[u64], last: usize) -> usize {
    ids.iter()
        .filter(|id| {
            log.rows
                .iter()
                .any(|r| r.track_id == **id && r.frame == last && r.status == TrackStatus::Active)
        })
        .count()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec::default();
    let seq = synth_sequence(&spec).unwrap();
    let last = spec.frames - 1;
    let out = comal_core::tracker::run_sequence(&seq.frames, &TrackerConfig::default()).unwrap();

    let corners = boundary_corners(&out.log, &seq.masks[0], 5.0);
    let ids: Vec<u64> = corners.iter().map(|c| c.0).collect();
    let mut sub = TrackLog::new();
    sub.extend(out.log.rows.iter().filter(|r| ids.contains(&r.track_id)).cloned());
    let gt = generate_gt(&sub, &seq.annotations, Some(&seq.masks));
    let report = score_matches(&sub, &gt, 15.0, None);
    let precision = report.overall().precision.unwrap_or(0.0);
    let kept = retained(&out.log, &ids, last);

    let points: Vec<(f64, f64)> = corners.iter().map(|c| c.1).collect();
    let klt = run_klt_sequence(&seq.frames, &points, &KltConfig::default()).unwrap();
    let klt_ids: Vec<u64> = (0..points.len() as u64).collect();
    let klt_kept = retained(&klt, &klt_ids, last);

    let n = ids.len().max(1) as f64;
    let (rate, klt_rate) = (kept as f64 / n, klt_kept as f64 / n);
    let el = start.elapsed();
    check(
        !ids.is_empty() && rate >= 0.8 && precision >= 0.9 && klt_rate <= 0.5 && within(el, 60.0),
        format!(
            "{} boundary corners; tracker keeps {kept} ({:.0}%) at precision {precision:.3}; KLT keeps {klt_kept} ({:.0}%); {:.1}s",
            ids.len(),
            100.0 * rate,
            100.0 * klt_rate,
            el.as_secs_f64()
        ),
    )
}

// 5: zero motion and a whole-frame integer shift

fn criterion_5() -> Outcome {
    let spec = SynthSpec {
        frames: 1,
        motion: vec![(0, 0)],
        background: BackgroundMode::Static,
        ..SynthSpec::default()
    };
    let f0 = synth_sequence(&spec).unwrap().frames.remove(0);
    let cfg = TrackerConfig::default();

    let mut t = Tracker::new(cfg.clone()).unwrap();
    t.initialize(&f0, 0).unwrap();
    let starts: HashMap<u64, PixelCoord> = t.tracks().iter().map(|tr| (tr.id, tr.position)).collect();
    let res = t.step(&f0, 1).unwrap();
    let n_static = res.outcomes.len();
    let zero = res
        .outcomes
        .iter()
        .filter(|o| o.status == TrackStatus::Active && o.position == starts[&o.track_id] && o.ssd_score == Some(0.0))
        .count();

    let (w, h) = f0.dims();
    let f1 = GrayImage::from_fn(w, h, |x, y| f0.get(x.saturating_sub(3), y.saturating_sub(2))).unwrap();
    let mut t = Tracker::new(cfg.clone()).unwrap();
    t.initialize(&f0, 0).unwrap();
    let res = t.step(&f1, 1).unwrap();
    let margin = cfg.search_radius + (cfg.patch_size / 2) as i32 + 3;
    let interior: Vec<_> = res
        .outcomes
        .iter()
        .filter(|o| {
            let p = starts[&o.track_id];
            p.x >= margin && p.y >= margin && p.x + margin < w as i32 && p.y + margin < h as i32
        })
        .collect();
    let exact = interior
        .iter()
        .filter(|o| o.status == TrackStatus::Active && o.position == starts[&o.track_id].offset(3, 2))
        .count();
    let share = exact as f64 / interior.len().max(1) as f64;
    check(
        n_static > 0 && zero == n_static && !interior.is_empty() && share >= 0.95,
        format!(
            "identical frames: {zero}/{n_static} at zero displacement with zero SSD; shift (3,2): {exact}/{} interior tracks exact ({:.1}%)",
            interior.len(),
            100.0 * share
        ),
    )
}

// 6: KLT correctness

fn criterion_6() -> Outcome {
    let f = |x: f64, y: f64| 128.0 + 50.0 * (x / 7.0).sin() * (y / 9.0).cos() + 20.0 * (x / 13.0 + y / 5.0).sin();
    let (dx, dy) = (0.37, -0.61);
    let prev = KltFrame::from_plane(Plane::from_fn(120, 100, |x, y| f(x as f64, y as f64)), 1);
    let next = KltFrame::from_plane(Plane::from_fn(120, 100, |x, y| f(x as f64 - dx, y as f64 - dy)), 1);
    let cfg = KltConfig::default();
    let mut worst: f64 = 0.0;
    for p in [(50.0, 50.0), (60.0, 45.0), (45.0, 58.0)] {
        let r = klt_track_point(&prev, &next, p, &cfg).map_err(|e| format!("sub-pixel fixture failed: {e}"))?;
        worst = worst.max((r.position.0 - p.0 - dx).abs()).max((r.position.1 - p.1 - dy).abs());
    }

    // central differences are exact on a quadratic surface
    let q = |x: f64, y: f64| 0.3 * x * x - 0.2 * x * y + 0.05 * y * y + 2.0 * x + 1.0;
    let dq = |x: f64, y: f64| (0.6 * x - 0.2 * y + 2.0, -0.2 * x + 0.1 * y);
    let g = GradientPlane::new(Plane::from_fn(40, 40, |x, y| q(x as f64, y as f64)));
    let mut rng = ChaCha8Rng::seed_from_u64(6006);
    let mut grad_err: f64 = 0.0;
    for _ in 0..500 {
        let (x, y) = (rng.gen_range(1.0..38.0), rng.gen_range(1.0..38.0));
        let got = g.gradient(x, y).unwrap();
        let want = dq(x, y);
        let h = 1e-3;
        let fd = ((q(x + h, y) - q(x - h, y)) / (2.0 * h), (q(x, y + h) - q(x, y - h)) / (2.0 * h));
        grad_err = grad_err
            .max((got.0 - want.0).abs())
            .max((got.1 - want.1).abs())
            .max((fd.0 - want.0).abs())
            .max((fd.1 - want.1).abs());
    }

    let flat = KltFrame::from_plane(Plane::from_fn(80, 80, |_, _| 90.0), 1);
    let singular = matches!(klt_track_point(&flat, &flat, (40.0, 40.0), &cfg), Err(KltError::SingularHessian(_)));
    check(
        worst <= 0.1 && grad_err <= 1e-6 && singular,
        format!("sub-pixel error {worst:.4} px, gradient error {grad_err:.2e}, flat patch singular: {singular}"),
    )
}

// 7: tracking cost against re-detect-and-match, through the CLI

fn bench_spec() -> SynthSpec {
    SynthSpec {
        width: 640,
        height: 480,
        frames: 30,
        object_width: 120,
        object_height: 120,
        start: (100, 180),
        motion: vec![(2, 0)],
        background: BackgroundMode::Static,
        ..SynthSpec::default()
    }
}

fn run_cli(args: &[&str]) -> i32 {
    let mut v = vec!["comal"];
    v.extend_from_slice(args);
    comal_cli::main_with_args(v)
}

fn criterion_7(dir: &Path) -> Outcome {
    let spec_path = dir.join("bench_spec.txt");
    fs::write(&spec_path, bench_spec().to_text()).unwrap();
    let data = dir.join("bench_data");
    let report = dir.join("bench.json");
    if run_cli(&["--out", data.to_str().unwrap(), "synth", spec_path.to_str().unwrap()]) != 0 {
        return Err("synth failed".into());
    }
    let list = data.join("frames.txt");
    if run_cli(&["--out", report.to_str().unwrap(), "bench", list.to_str().unwrap(), "--tracks", "200"]) != 0 {
        return Err("bench failed".into());
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let ratio = json["ratio"].as_f64().unwrap_or(f64::NAN);
    let tracks = json["tracks"].as_array().map_or(0, |a| a.iter().filter_map(|v| v.as_u64()).min().unwrap_or(0));
    check(
        ratio <= 0.5 && tracks == 200,
        format!(
            "median tracking {:.1} ms vs detect+match {:.1} ms, ratio {ratio:.3} over {} samples of {tracks} tracks (search-gated matching {:.1} ms, ratio {:.3})",
            json["median_tracking_ms"].as_f64().unwrap_or(f64::NAN),
            json["median_detect_match_ms"].as_f64().unwrap_or(f64::NAN),
            json["samples"].as_u64().unwrap_or(0),
            json["median_gated_detect_match_ms"].as_f64().unwrap_or(f64::NAN),
            json["gated_ratio"].as_f64().unwrap_or(f64::NAN),
        ),
    )
}

// 8: byte-identical track logs

fn criterion_8(dir: &Path) -> Outcome {
    let data = dir.join("det_data");
    if run_cli(&["--out", data.to_str().unwrap(), "synth"]) != 0 {
        return Err("synth failed".into());
    }
    let list = data.join("frames.txt");
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "1", "1", "4"].iter().enumerate() {
        let out = dir.join(format!("track_{i}.csv"));
        if run_cli(&["--jobs", jobs, "--out", out.to_str().unwrap(), "track", list.to_str().unwrap()]) != 0 {
            return Err(format!("track run {i} failed"));
        }
        outputs.push(fs::read(&out).unwrap());
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    check(
        same && !outputs[0].is_empty(),
        format!("3 runs with --jobs 1 and 1 with --jobs 4, {} bytes each, identical: {same}", outputs[0].len()),
    )
}

// 9: hand-computed scoring

fn criterion_9() -> Outcome {
    let bbox = BoxF::new(10.0, 10.0, 40.0, 40.0).unwrap();
    let annotations: Vec<BBoxAnnotation> = (0..3)
        .map(|frame| BBoxAnnotation {
            object_id: 1,
            frame,
            bbox,
        })
        .collect();
    let mask = BinaryMask::from_fn(64, 64, |x, y| (10..50).contains(&x) && (10..50).contains(&y));
    let masks = vec![mask; 3];
    let a = TrackStatus::Active;
    let l = TrackStatus::Lost;
    let mut log = TrackLog::new();
    for (id, f, x, y, s) in [
        (0, 0, 20.0, 20.0, a),
        (0, 1, 20.0, 20.0, a), // correct
        (0, 2, 40.0, 40.0, a), // 28.3 px off
        (1, 0, 12.0, 30.0, a),
        (1, 1, 12.0, 30.0, a), // correct, near the outline
        (1, 2, 12.0, 30.0, l),
        (2, 0, 30.0, 30.0, a),
        (2, 1, 31.0, 30.0, a), // correct
        (2, 2, 31.0, 30.0, l),
        (3, 0, 25.0, 25.0, a),
    ] {
        log.push(TrackRow::plain(id, f, x, y, s));
    }
    let gt = generate_gt(&log, &annotations, Some(&masks));
    let strata = Strata { masks: &masks, band: 5.0 };
    let r = score_matches(&log, &gt, 15.0, Some(&strata));
    let overall = *r.overall();
    let boundary = *r.get(Stratum::Boundary).unwrap();
    let interior = *r.get(Stratum::Interior).unwrap();
    let ok = overall.precision == Some(0.75)
        && overall.correct == 3
        && overall.total == 4
        && overall.correct_per_frame == 1.5
        && boundary.correct == 1
        && interior.correct == 2
        && boundary.correct + interior.correct == overall.correct
        && boundary.total + interior.total == overall.total;
    check(
        ok,
        format!(
            "precision {:?} ({}/{}), boundary {} + interior {} = overall {}",
            overall.precision, overall.correct, overall.total, boundary.correct, interior.correct, overall.correct
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 mser oracle equivalence", Box::new(criterion_1)),
        ("2 chamfer soundness and completeness", Box::new(criterion_2)),
        ("3 part-ssd background invariance", Box::new(criterion_3)),
        ("4 boundary survival", Box::new(criterion_4)),
        ("5 static and translation sanity", Box::new(criterion_5)),
        ("6 klt correctness", Box::new(criterion_6)),
        ("7 efficiency", Box::new(|| criterion_7(dir.path()))),
        ("8 determinism", Box::new(|| criterion_8(dir.path()))),
        ("9 evaluation protocol", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let start = Instant::now();
        let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS criterion {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
