//! Independent reference computations checked against the library.

use std::collections::BTreeSet;

use mitodg_core::anchors::{anchor_fitness, generate_anchors, max_iou, octave_scales, AnchorConfig, SEARCHED_SCALES};
use mitodg_core::augment::stain::{he_stain_perturb, StainBasis};
use mitodg_core::augment::{apply_transform, TransformKind};
use mitodg_core::eval::{evaluate_at, match_detections, optimize_threshold, MatchConfig};
use mitodg_core::{Annotation, BBox, DetectionRecord, Label, Point, RandomStream, Rgb8Image};
use nalgebra::{Matrix3, RowVector3};

fn golden() -> serde_json::Value {
    serde_json::from_str(include_str!("fixtures/pil_golden.json")).unwrap()
}

fn golden_input(narrow: bool) -> Rgb8Image {
    Rgb8Image::from_fn(24, 16, |x, y| {
        let px = |c: u32| {
            let v = ((x * x * 7 + y * 13 + c * 29 + x * y * 3) * 31) % 256;
            (if narrow { 60 + v % 120 } else { v }) as u8
        };
        [px(0), px(1), px(2)]
    })
}

fn golden_case(name: &str) -> Vec<u8> {
    golden()["cases"][name]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as u8)
        .collect()
}

fn max_abs_diff(a: &[u8], b: &[u8]) -> i32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as i32 - y as i32).abs())
        .max()
        .unwrap_or(0)
}

#[test]
fn pil_equalize_solarize_posterize_exact() {
    let img = golden_input(false);
    let rng = RandomStream::new(0);
    let eq = apply_transform(TransformKind::Equalize, 1.0, &img, &rng).unwrap();
    assert_eq!(eq.as_raw(), golden_case("equalize").as_slice());
    let sol = apply_transform(TransformKind::Solarize, 0.5, &img, &rng).unwrap();
    assert_eq!(sol.as_raw(), golden_case("solarize_128").as_slice());
    let post = apply_transform(TransformKind::Posterize, 5.0 / 6.0, &img, &rng).unwrap();
    assert_eq!(post.as_raw(), golden_case("posterize_3").as_slice());
}

#[test]
fn pil_autocontrast_and_sharpness_within_one() {
    let rng = RandomStream::new(0);
    let ac = apply_transform(TransformKind::AutoContrast, 1.0, &golden_input(true), &rng).unwrap();
    assert!(max_abs_diff(ac.as_raw(), &golden_case("autocontrast")) <= 1);
    let sh = apply_transform(TransformKind::Sharpness, 0.5, &golden_input(false), &rng).unwrap();
    assert!(max_abs_diff(sh.as_raw(), &golden_case("sharpness_2")) <= 1);
}

fn stain_oracle(px: [u8; 3], basis: &StainBasis, alpha: [f64; 3], beta: [f64; 3]) -> [u8; 3] {
    let r = basis.rows();
    let b = Matrix3::from_fn(|i, j| r[i][j]);
    let inv = b.try_inverse().unwrap();
    let od = RowVector3::from_fn(|_, j| -((px[j] as f64 + 1.0) / 256.0).log10());
    let conc = od * inv;
    let perturbed = RowVector3::from_fn(|_, j| alpha[j] * conc[j] + beta[j]);
    let out = perturbed * b;
    [0, 1, 2].map(|j| (256.0 * 10f64.powf(-out[j]) - 1.0).round().clamp(0.0, 255.0) as u8)
}

#[test]
fn stain_matches_linear_algebra() {
    let basis = StainBasis::ruifrok_johnston();
    let mut rng = RandomStream::new(11);
    for _ in 0..500 {
        let px = [0; 3].map(|_: u8| rng.below(256) as u8);
        let alpha = [0; 3].map(|_: u8| rng.uniform(0.7, 1.3));
        let beta = [0; 3].map(|_: u8| rng.uniform(-0.2, 0.2));
        let got = he_stain_perturb(&Rgb8Image::filled(1, 1, px), &basis, alpha, beta)
            .unwrap()
            .get(0, 0);
        let want = stain_oracle(px, &basis, alpha, beta);
        assert!(max_abs_diff(&got, &want) <= 1, "{px:?}: {got:?} vs {want:?}");
    }
}

#[test]
fn fitness_matches_exhaustive_anchor_scan() {
    let config = AnchorConfig::default();
    let anchors_for = |scales: &[f64]| generate_anchors(&config.with_scales(scales), (512, 512));
    let mut rng = RandomStream::new(3);
    let boxes: Vec<BBox> = (0..40)
        .map(|_| {
            let (w, h) = (rng.uniform(10.0, 150.0), rng.uniform(10.0, 150.0));
            BBox::centered(rng.uniform(80.0, 430.0), rng.uniform(80.0, 430.0), w, h)
        })
        .collect();
    for scales in [SEARCHED_SCALES, octave_scales(), [0.5, 1.7, 2.9]] {
        let anchors = anchors_for(&scales);
        let brute: f64 = boxes
            .iter()
            .map(|b| anchors.iter().map(|a| a.iou(b)).fold(0.0, f64::max))
            .sum::<f64>()
            / boxes.len() as f64;
        let fast = anchor_fitness(&scales, &boxes, &config).unwrap();
        assert!((brute - fast).abs() < 1e-12, "{scales:?}: {brute} vs {fast}");
        for b in &boxes {
            let m = max_iou(b, &config.levels, &scales, &config.ratios);
            assert!(m > 0.0 && m <= 1.0);
        }
    }
}

fn ann(id: u64, image: u64, x: f64, y: f64) -> Annotation {
    Annotation::from_box(id, image, BBox::centered(x, y, 40.0, 40.0), Label::MitoticFigure).unwrap()
}

fn det(image: u64, x: f64, y: f64, conf: f64) -> DetectionRecord {
    DetectionRecord::new(
        image,
        Point::new(x, y),
        BBox::centered(x, y, 40.0, 40.0),
        Label::MitoticFigure,
        conf,
    )
    .unwrap()
}

/// Maximum-cardinality bipartite matching (augmenting paths).
fn optimal_tp(dets: &[DetectionRecord], gts: &[Annotation], radius: f64) -> usize {
    let adj: Vec<Vec<usize>> = dets
        .iter()
        .map(|d| {
            (0..gts.len())
                .filter(|&j| gts[j].image_id == d.image_id && gts[j].center.distance(d.center) <= radius)
                .collect()
        })
        .collect();
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                if owner[j].is_none_or(|o| augment(o, adj, seen, owner)) {
                    owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; gts.len()];
    (0..dets.len())
        .filter(|&i| augment(i, &adj, &mut vec![false; gts.len()], &mut owner))
        .count()
}

fn random_instance(rng: &mut RandomStream, clustered: bool) -> (Vec<DetectionRecord>, Vec<Annotation>) {
    let span = if clustered { 120.0 } else { 2000.0 };
    let n_gt = rng.int_inclusive(0, 12) as usize;
    let gts: Vec<Annotation> = (0..n_gt)
        .map(|i| {
            ann(
                i as u64,
                rng.below(2),
                100.0 + rng.uniform(0.0, span),
                100.0 + rng.uniform(0.0, span),
            )
        })
        .collect();
    let mut dets = Vec::new();
    for g in &gts {
        if rng.bernoulli(0.8) {
            let c = (rng.below(100) as f64) / 100.0;
            dets.push(det(
                g.image_id,
                g.center.x + 15.0 * rng.normal(),
                g.center.y + 15.0 * rng.normal(),
                c,
            ));
        }
    }
    for _ in 0..rng.int_inclusive(0, 6) {
        let c = (rng.below(100) as f64) / 100.0;
        dets.push(det(
            rng.below(2),
            100.0 + rng.uniform(0.0, span),
            100.0 + rng.uniform(0.0, span),
            c,
        ));
    }
    (dets, gts)
}

#[test]
fn greedy_never_beats_optimal_assignment() {
    let config = MatchConfig::default();
    let mut rng = RandomStream::new(21);
    let (mut equal, mut total) = (0, 0);
    for clustered in [false, true] {
        for _ in 0..300 {
            let (dets, gts) = random_instance(&mut rng, clustered);
            let greedy = match_detections(&dets, &gts, &config).tp;
            let best = optimal_tp(&dets, &gts, config.radius);
            assert!(greedy <= best);
            // greedy is a maximal matching, so it reaches at least half the optimum
            assert!(2 * greedy >= best);
            if !clustered {
                total += 1;
                equal += usize::from(greedy == best);
            }
        }
    }
    // sparse layouts rarely offer a choice, so greedy should almost always be optimal
    assert!(equal * 100 >= total * 95, "{equal}/{total}");
}

#[test]
fn threshold_equals_dense_sweep() {
    let config = MatchConfig::default();
    let mut rng = RandomStream::new(5);
    for _ in 0..100 {
        let (dets, gts) = random_instance(&mut rng, true);
        let best = optimize_threshold(&dets, &gts, &config);
        let sweep = (0..1000)
            .map(|k| evaluate_at(&dets, &gts, &config, k as f64 / 999.0).f1)
            .fold(0.0, f64::max);
        assert!((best.f1 - sweep).abs() < 1e-12, "{} vs {sweep}", best.f1);
        let recomputed = evaluate_at(&dets, &gts, &config, best.threshold);
        assert_eq!(recomputed, best);
    }
}

#[test]
fn folds_partition_each_scanner() {
    use mitodg_core::sampler::{make_folds, DatasetManifest, ImageEntry};
    let images: Vec<ImageEntry> = (0..23)
        .map(|i| ImageEntry {
            id: i,
            file_name: format!("{i}.png"),
            width: 500,
            height: 500,
            scanner: ["A", "B", "C"][(i % 3) as usize].into(),
        })
        .collect();
    let manifest = DatasetManifest::new(images, vec![]).unwrap();
    let folds = make_folds(&manifest, 5, &RandomStream::new(8)).unwrap();
    let all: BTreeSet<u64> = (0..23).collect();
    let mut tests_union = BTreeSet::new();
    for f in &folds {
        assert!(f.train.is_disjoint(&f.val) && f.train.is_disjoint(&f.test) && f.val.is_disjoint(&f.test));
        let union: BTreeSet<u64> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
        assert_eq!(union, all);
        assert!(tests_union.is_disjoint(&f.test));
        tests_union.extend(f.test.iter().copied());
    }
    assert_eq!(tests_union, all);
}
