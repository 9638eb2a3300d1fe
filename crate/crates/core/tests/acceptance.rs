//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ldl_core::chamfer::chamfer_rank;
use ldl_core::directions::{assign_arc, assign_segment, PrincipalDirections};
use ldl_core::lines::{Keypoint2D, LineMap3D, QueryLines2D};
use ldl_core::pipeline::{localize, prepare, rank, refine_best, Candidates, PipelineConfig};
use ldl_core::privacy::{filter_keypoints_2d, DEFAULT_LAMBDA_2D};
use ldl_core::refine::{correspondence_jacobian, correspondence_residual, oracle_matcher, refine_pose, retract, Correspondence, IdMatcher, RansacConfig};
use ldl_core::rotations::{enumerate_rotations, RotationConfig, RotationHypothesis};
use ldl_core::search::{rank_poses, sample_query_points, LossKind, RankedPose, SearchConfig};
use ldl_core::sim::{clearance, generate_scene, render_query, sample_pose, SceneKind, SimConfig};
use ldl_core::sphere::{angle_between, arc_distance, project_segment_into, rotation_angle, Arc2D, Pose, ProjectionParams, UnitVector, Vec3};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_arc(rng: &mut ChaCha8Rng) -> Arc2D {
    loop {
        let s = random_unit(rng);
        let e = random_unit(rng);
        if angle_between(&s, &e) > 0.05 && angle_between(&s, &e) < PI - 0.05 {
            return Arc2D::from_vecs(s, e).unwrap();
        }
    }
}

fn noisy_sim(seed: u64, kind: SceneKind, noise_deg: f64, outliers: f64, drop: f64) -> SimConfig {
    SimConfig {
        seed,
        scene_kind: kind,
        endpoint_noise: noise_deg.to_radians(),
        outlier_arcs: outliers,
        drop_fraction: drop,
        ..SimConfig::default()
    }
}

fn is_hit(p: &Pose, gt: &Pose) -> bool {
    (p.center() - gt.center()).norm() < 0.1 && rotation_angle(p.rotation(), gt.rotation()) < 5.0
}

fn nearest_rotation(c: &Candidates, gt: &Pose) -> usize {
    (0..c.rotations.len())
        .min_by(|&a, &b| {
            rotation_angle(&c.rotations[a].rotation, gt.rotation()).total_cmp(&rotation_angle(&c.rotations[b].rotation, gt.rotation()))
        })
        .unwrap()
}

fn nearest_translation(c: &Candidates, gt: &Pose) -> usize {
    (0..c.translations.len())
        .min_by(|&a, &b| (c.translations[a] - gt.center()).norm().total_cmp(&(c.translations[b] - gt.center()).norm()))
        .unwrap()
}

fn combination_count() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d2 = PrincipalDirections::from_directions((0..20).map(|_| UnitVector::from_vec(random_unit(&mut rng)).unwrap().canonical()).collect());
    let d3 = PrincipalDirections::from_directions(vec![UnitVector::x_axis(), UnitVector::y_axis(), UnitVector::z_axis()]);
    // unordered 2D triplets, 3D orderings, sign patterns
    let expected = (20 * 19 * 18 / 6) * 6 * 8;
    let start = Instant::now();
    let out = single_threaded(|| enumerate_rotations(&d2, &d3, &RotationConfig::default()));
    let elapsed = start.elapsed();
    let evaluations = match &out {
        Ok(c) => c.kabsch_evaluations,
        Err(_) => 0,
    };
    outcome(
        evaluations == expected && elapsed < Duration::from_secs(1),
        format!("{evaluations} Kabsch evaluations (expected {expected}) in {elapsed:.2?}"),
    )
}

fn noiseless_closure() -> Outcome {
    let cfg = PipelineConfig {
        filter_lambda: 0.0,
        ..PipelineConfig::default()
    };
    let expected = 3 * sample_query_points(cfg.search.query_points).unwrap().len();
    let (mut ok, mut slowest) = (0, Duration::ZERO);
    for seed in 0..20 {
        let sim = SimConfig {
            seed,
            ..SimConfig::default()
        };
        let map = generate_scene(&sim).unwrap();
        let gt = sample_pose(&map, &sim).unwrap();
        let q = render_query(&map, &gt, &sim).unwrap();
        let start = Instant::now();
        let out = single_threaded(|| localize(&q, &map, &cfg, Some(&IdMatcher::default()), &[gt.center()]));
        slowest = slowest.max(start.elapsed());
        if let Ok(out) = out {
            let top = &out.candidates[0];
            if top.inliers == expected && (top.pose.center() - gt.center()).norm() < 1e-9 && rotation_angle(top.pose.rotation(), gt.rotation()) < 1.0 {
                ok += 1;
            }
        }
    }
    outcome(
        ok == 20 && slowest < Duration::from_secs(5),
        format!("{ok}/20 runs with GT first at {expected} inliers, slowest run {slowest:.2?}"),
    )
}

fn robustness() -> Outcome {
    let (mut top_k, mut refined) = (0, 0);
    for seed in 0..100 {
        let sim = SimConfig {
            keypoint_noise: 0.2f64.to_radians(),
            keypoint_outliers: 0.1,
            ..noisy_sim(seed, SceneKind::BoxRoom, 0.5, 0.2, 0.2)
        };
        let map = generate_scene(&sim).unwrap();
        let gt = sample_pose(&map, &sim).unwrap();
        let q = render_query(&map, &gt, &sim).unwrap();
        let cfg = PipelineConfig::default();
        let Ok(c) = prepare(&q, &map, &cfg, &[]) else { continue };
        let (ri, ti) = (nearest_rotation(&c, &gt), nearest_translation(&c, &gt));
        let ranked = rank(&c, &cfg).unwrap();
        if ranked.iter().any(|r| r.rotation_index == ri && r.translation_index == ti) {
            top_k += 1;
        }
        let matcher = IdMatcher { window: cfg.match_window };
        if let Ok(Some(r)) = refine_best(&ranked, &q, &map, &matcher, &cfg.ransac) {
            if is_hit(&r.pose, &gt) {
                refined += 1;
            }
        }
    }
    outcome(
        top_k >= 95 && refined >= 90,
        format!("nearest pool pose in top-20 in {top_k}/100, refined within 0.1 m / 5 deg in {refined}/100"),
    )
}

/// Camera within 0.3 m of the vertical symmetry axis, oriented as sampled.
fn near_axis_pose(map: &LineMap3D, sim: &SimConfig) -> Pose {
    let sampled = sample_pose(map, sim).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    loop {
        let c = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.9..1.5));
        if clearance(map, &c) >= 0.1 {
            return Pose::from_center(*sampled.rotation(), &c).unwrap();
        }
    }
}

fn decomposition_ablation() -> Outcome {
    let (mut decomposed, mut plain) = (0, 0);
    for seed in 0..50 {
        let sim = noisy_sim(seed, SceneKind::RotSymmetric, 0.5, 0.2, 0.0);
        let map = generate_scene(&sim).unwrap();
        let gt = near_axis_pose(&map, &sim);
        let q = render_query(&map, &gt, &sim).unwrap();
        let cfg = PipelineConfig::default();
        let Ok(c) = prepare(&q, &map, &cfg, &[]) else { continue };
        let translations = [gt.center()];
        for (decompose, hits) in [(true, &mut decomposed), (false, &mut plain)] {
            let search = SearchConfig { decompose, ..cfg.search };
            let r = rank_poses(&c.query, &c.map, &c.rotations, &translations, &search).unwrap();
            if rotation_angle(r[0].pose.rotation(), gt.rotation()) < 5.0 {
                *hits += 1;
            }
        }
    }
    let margin = (decomposed as f64 - plain as f64) / 50.0 * 100.0;
    outcome(
        margin >= 20.0,
        format!("top-1 rotation hits: decomposed {decomposed}/50, undecomposed {plain}/50 ({margin:+.0} points)"),
    )
}

fn loss_ablation() -> Outcome {
    let mut hits = [0usize; 5];
    for seed in 0..50 {
        let sim = noisy_sim(seed, SceneKind::BoxRoom, 0.5, 0.3, 0.0);
        let map = generate_scene(&sim).unwrap();
        let gt = sample_pose(&map, &sim).unwrap();
        let q = render_query(&map, &gt, &sim).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.search.n_translations = 30;
        let Ok(c) = prepare(&q, &map, &cfg, &[gt.center()]) else { continue };
        for (i, loss) in LossKind::ALL.iter().enumerate() {
            let search = SearchConfig { loss: *loss, ..cfg.search };
            let r = rank_poses(&c.query, &c.map, &c.rotations, &c.translations, &search).unwrap();
            if is_hit(&r[0].pose, &gt) {
                hits[i] += 1;
            }
        }
    }
    let inlier = hits[0];
    let report: Vec<String> = LossKind::ALL.iter().zip(&hits).map(|(l, h)| format!("{} {h}", l.name())).collect();
    outcome(hits.iter().all(|&h| inlier >= h), format!("top-1 hits out of 50: {}", report.join(", ")))
}

/// Seeded dense_parallel instance: heavily corrupted query, rotation fixed at
/// ground truth, translation pool of 300 grid cells plus the true center.
fn chamfer_ambiguity() -> Outcome {
    let sim = noisy_sim(44, SceneKind::DenseParallel, 0.5, 0.6, 0.5);
    let map = generate_scene(&sim).unwrap();
    let gt = sample_pose(&map, &sim).unwrap();
    let q = render_query(&map, &gt, &sim).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.search.n_translations = 300;
    let c = prepare(&q, &map, &cfg, &[gt.center()]).unwrap();
    let g = c.translations.len() - 1;
    let rotations = [RotationHypothesis::from_rotation(*gt.rotation())];
    let ldf = rank_poses(&c.query, &c.map, &rotations, &c.translations, &cfg.search).unwrap();
    let chamfer = chamfer_rank(&c.query, &c.map, &rotations, &c.translations, cfg.search.top_k).unwrap();
    let decoy = c.translations[chamfer[0].translation_index];
    let bundle_wall = map.bbox_max().x;
    outcome(
        ldf[0].translation_index == g && chamfer[0].translation_index != g,
        format!(
            "LDF top-1 is GT: {}, Chamfer top-1 {:.2} m from GT and {:.2} m from the bundle wall",
            ldf[0].translation_index == g,
            (decoy - gt.center()).norm(),
            bundle_wall - decoy.x
        ),
    )
}

/// Inlier count of one pose by direct enumeration of groups, query points,
/// query arcs and projected segments.
fn naive_inliers(query: &QueryLines2D, map: &LineMap3D, hyp: &RotationHypothesis, center: &Vec3, cfg: &SearchConfig) -> usize {
    let pose = Pose::from_center(hyp.rotation, center).unwrap();
    let points = sample_query_points(cfg.query_points).unwrap();
    let mut inliers = 0;
    for group in 0..3 {
        let mut projected = Vec::new();
        for s in map.segments() {
            if assign_segment(s, &hyp.triplet_3d, cfg.line_tol) == Some(group) {
                project_segment_into(s, &pose, &ProjectionParams::default(), &mut projected).unwrap();
            }
        }
        for p in &points.points {
            let mut f2 = PI;
            for a in &query.arcs {
                if assign_arc(a, &hyp.triplet_2d, cfg.line_tol) == Some(group) {
                    f2 = f2.min(arc_distance(p, a));
                }
            }
            let mut f3 = PI;
            for a in &projected {
                f3 = f3.min(arc_distance(p, a));
            }
            if (f2 - f3).abs() < cfg.tau {
                inliers += 1;
            }
        }
    }
    inliers
}

/// Distance to the closest of `n + 1` evenly spaced points along the arc.
fn dense_arc_distance(p: &Vec3, arc: &Arc2D, n: usize) -> f64 {
    let theta = arc.angle();
    (0..=n)
        .map(|i| angle_between(p, arc.point_at(theta * i as f64 / n as f64).as_vec()))
        .fold(f64::INFINITY, f64::min)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut exact, mut pairs) = (0, 0);
    let cfg = SearchConfig::default();
    let mut seed = 0u64;
    while pairs < 100 {
        let sim = noisy_sim(seed, SceneKind::ALL[seed as usize % 4], 0.3, 0.1, 0.1);
        seed += 1;
        let map = generate_scene(&sim).unwrap();
        let gt = sample_pose(&map, &sim).unwrap();
        let q = render_query(&map, &gt, &sim).unwrap();
        let Ok(c) = prepare(&q, &map, &PipelineConfig::default(), &[]) else { continue };
        let hyp = c.rotations[rng.gen_range(0..c.rotations.len())].clone();
        let center = c.translations[rng.gen_range(0..c.translations.len())];
        let batched = rank_poses(&c.query, &c.map, std::slice::from_ref(&hyp), &[center], &cfg).unwrap()[0].inliers;
        pairs += 1;
        if batched == naive_inliers(&c.query, &c.map, &hyp, &center, &cfg) {
            exact += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let arc = random_arc(&mut rng);
        let p = random_unit(&mut rng);
        let u = UnitVector::from_vec(p).unwrap();
        worst = worst.max((arc_distance(&u, &arc) - dense_arc_distance(&p, &arc, 40_000)).abs());
    }
    outcome(
        exact == 100 && worst < 1e-4,
        format!("{exact}/100 pairs with identical inlier counts, arc distance max deviation {worst:.2e} over 1000 pairs"),
    )
}

fn refinement_accuracy() -> Outcome {
    let mut ok = 0;
    for seed in 0..100 {
        let sim = SimConfig {
            seed,
            ..SimConfig::default()
        };
        let map = generate_scene(&sim).unwrap();
        let gt = sample_pose(&map, &sim).unwrap();
        let matches = oracle_matcher(&map, &gt, 100, 0.2f64.to_radians(), 0.3, seed).unwrap();
        let cfg = RansacConfig { seed, ..RansacConfig::default() };
        if let Ok(r) = refine_pose(&Pose::identity(), &matches, &cfg) {
            let dr = rotation_angle(r.pose.rotation(), gt.rotation());
            let dt = (r.pose.center() - gt.center()).norm();
            if dr < 0.5 && dt < 0.01 * map.diameter() {
                ok += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pose = Pose::from_center(
            ldl_core::sphere::axis_angle(&random_unit(&mut rng), rng.gen_range(0.0..PI)),
            &Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        )
        .unwrap();
        let point = pose.center() + random_unit(&mut rng) * rng.gen_range(1.0..5.0);
        let truth = pose.transform(&point).normalize();
        let bearing = (truth + random_unit(&mut rng) * 0.05).normalize();
        let c = Correspondence {
            bearing: UnitVector::from_vec(bearing).unwrap(),
            point,
        };
        let (_, j) = correspondence_jacobian(&pose, &c);
        let h = 1e-6;
        let mut fd = nalgebra::SMatrix::<f64, 2, 6>::zeros();
        for k in 0..6 {
            let mut d = nalgebra::Vector6::zeros();
            d[k] = h;
            let plus = correspondence_residual(&retract(&pose, &d), &c);
            d[k] = -h;
            let minus = correspondence_residual(&retract(&pose, &d), &c);
            fd.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        worst = worst.max((j - fd).norm() / j.norm());
    }
    outcome(
        ok >= 95 && worst < 1e-5,
        format!("{ok}/100 trials within 0.5 deg / 1% of diameter, Jacobian max relative error {worst:.2e}"),
    )
}

fn performance() -> Outcome {
    let sim = SimConfig {
        n_clutter_lines: 288,
        seed: 4,
        ..noisy_sim(4, SceneKind::BoxRoom, 0.3, 0.1, 0.0)
    };
    let map = generate_scene(&sim).unwrap();
    let gt = sample_pose(&map, &sim).unwrap();
    let q = render_query(&map, &gt, &sim).unwrap();
    let c = prepare(&q, &map, &PipelineConfig::default(), &[]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rotations: Vec<RotationHypothesis> = (0..30).map(|i| c.rotations[i % c.rotations.len()].clone()).collect();
    let mut translations = c.translations.clone();
    while translations.len() < 200 {
        let f = Vec3::new(rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
        translations.push(map.bbox_min() + map.extents().component_mul(&f));
    }
    translations.truncate(200);
    let cfg = SearchConfig::default();
    let timed = |threads: usize| -> (Duration, Vec<RankedPose>) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let start = Instant::now();
        let r = pool.install(|| rank_poses(&c.query, &c.map, &rotations, &translations, &cfg)).unwrap();
        (start.elapsed(), r)
    };
    let (t1, r1) = timed(1);
    let (t8, r8) = timed(8);
    let identical = format!("{r1:?}") == format!("{r8:?}");
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        t1 < Duration::from_secs(2) && t8 < Duration::from_millis(500) && identical,
        format!(
            "{} lines, 30 x 200 poses: 1 worker {t1:.2?}, 8 workers {t8:.2?} on {cpus} CPU(s), identical results: {identical}",
            c.map.segments().len()
        ),
    )
}

fn privacy_filter() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let keypoints: Vec<Keypoint2D> = (0..1000)
        .map(|id| Keypoint2D {
            direction: UnitVector::from_vec(random_unit(&mut rng)).unwrap(),
            id,
        })
        .collect();
    let mut violations = 0;
    for _ in 0..20 {
        let arcs: Vec<Arc2D> = (0..rng.gen_range(1..15)).map(|_| random_arc(&mut rng)).collect();
        let (l1, l2) = (rng.gen_range(0.001..0.3), rng.gen_range(0.001..0.3));
        let kept = filter_keypoints_2d(&keypoints, &arcs, l1).unwrap();
        for k in &keypoints {
            let d = arcs.iter().map(|a| arc_distance(&k.direction, a)).fold(f64::INFINITY, f64::min);
            if kept.contains(k) != (d <= l1) {
                violations += 1;
            }
        }
        if filter_keypoints_2d(&kept, &arcs, l1).unwrap() != kept {
            violations += 1;
        }
        let (lo, hi) = (l1.min(l2), l1.max(l2));
        let small = filter_keypoints_2d(&keypoints, &arcs, lo).unwrap();
        let large = filter_keypoints_2d(&keypoints, &arcs, hi).unwrap();
        violations += small.iter().filter(|k| !large.contains(k)).count();
    }
    outcome(
        violations == 0 && DEFAULT_LAMBDA_2D == 0.05,
        format!("{violations} invariant violations over 20 arc sets x 1000 keypoints, default lambda {DEFAULT_LAMBDA_2D} rad"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("combination count", combination_count),
        ("noiseless closure", noiseless_closure),
        ("robustness", robustness),
        ("decomposition ablation", decomposition_ablation),
        ("loss ablation", loss_ablation),
        ("chamfer ambiguity", chamfer_ambiguity),
        ("oracle equivalence", oracle_equivalence),
        ("refinement accuracy", refinement_accuracy),
        ("performance envelope", performance),
        ("privacy filter", privacy_filter),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {:>2} {name}: {} [{:.1?}]", i + 1, o.detail, start.elapsed());
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
