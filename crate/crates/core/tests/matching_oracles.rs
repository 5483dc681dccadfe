//! Randomized cross-checks of the matching and average-precision paths
//! against the enumeration and staircase reference implementations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairdet_core::dataset::{
    Dataset, Detection, GroundTruthInstance, ImageRecord, TimeOfDay, PERSON_CLASS,
};
use fairdet_core::eval::{
    average_precision, evaluate, match_detections, DetectionStatus, EvalConfig, Interpolation,
    IoUThreshold, MatchOutcome, COCO_IOU_THRESHOLDS,
};
use fairdet_core::geometry::BBox;
use fairdet_core::reference;

fn image(id: &str) -> ImageRecord {
    ImageRecord {
        id: id.to_string(),
        width: 640,
        height: 480,
        time_of_day: TimeOfDay::Other,
    }
}

/// Boxes on a coarse lattice so partial overlaps and exact ties both occur.
fn lattice_box(rng: &mut ChaCha8Rng) -> BBox {
    let x0 = rng.gen_range(0..14) as f64 * 12.0;
    let y0 = rng.gen_range(0..10) as f64 * 12.0;
    let w = rng.gen_range(2..8) as f64 * 12.0;
    let h = rng.gen_range(2..8) as f64 * 12.0;
    BBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

fn grid_score(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0..=64) as f64 / 64.0
}

/// A lattice box nudged by a few half-steps, giving IoUs that straddle the
/// usual thresholds.
fn jittered(rng: &mut ChaCha8Rng, base: BBox) -> BBox {
    loop {
        let mut corners: [f64; 4] = base.into();
        for c in &mut corners {
            *c += rng.gen_range(-2..=2) as f64 * 6.0;
        }
        if let Ok(b) = BBox::new(corners[0], corners[1], corners[2], corners[3]) {
            return b;
        }
    }
}

fn random_scene(
    rng: &mut ChaCha8Rng,
    image_id: &str,
    max_gt: usize,
    max_det: usize,
    tag: &str,
) -> (Vec<GroundTruthInstance>, Vec<Detection>) {
    let n_gt = rng.gen_range(0..=max_gt);
    let n_det = rng.gen_range(0..=max_det);
    let gts: Vec<GroundTruthInstance> = (0..n_gt)
        .map(|i| GroundTruthInstance {
            id: format!("{tag}-g{i}"),
            image_id: image_id.to_string(),
            bbox: lattice_box(rng),
            class_name: PERSON_CLASS.to_string(),
            group: None,
            occluded: false,
            ignore: rng.gen_bool(0.25),
        })
        .collect();
    let dets = (0..n_det)
        .map(|_| {
            // Mostly near-misses and near-hits of real boxes, with some
            // unrelated background boxes.
            let bbox = if !gts.is_empty() && rng.gen_bool(0.65) {
                let base = gts[rng.gen_range(0..gts.len())].bbox;
                jittered(rng, base)
            } else {
                lattice_box(rng)
            };
            Detection {
                image_id: image_id.to_string(),
                bbox,
                class_name: PERSON_CLASS.to_string(),
                score: grid_score(rng),
            }
        })
        .collect();
    (gts, dets)
}

#[test]
fn greedy_matching_agrees_with_exhaustive_assignment_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut nontrivial = 0;
    for case in 0..300 {
        let (gts, dets) = random_scene(&mut rng, "im", 4, 5, &format!("c{case}"));
        for t in [0.5, 0.75] {
            let outcome = match_detections(&dets, &gts, IoUThreshold::new(t).unwrap()).unwrap();
            let oracle = reference::exhaustive_match(&dets, &gts, t);
            let fast: Vec<(usize, DetectionStatus)> = outcome
                .matches
                .iter()
                .map(|m| (m.detection_index, m.status))
                .collect();
            assert_eq!(fast, oracle, "case {case} threshold {t}");
            if fast
                .iter()
                .any(|(_, s)| *s == DetectionStatus::TruePositive)
            {
                nontrivial += 1;
            }
        }
    }
    assert!(nontrivial > 100, "matched cases: {nontrivial}");
}

#[test]
fn evaluate_matches_staircase_oracle_on_randomized_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    let mut with_ignores = 0;
    for case in 0..250 {
        let n_images = rng.gen_range(1..=2);
        let mut images = Vec::new();
        let mut instances = Vec::new();
        let mut dets = Vec::new();
        for i in 0..n_images {
            let id = format!("im{i}");
            images.push(image(&id));
            let (gts, image_dets) = random_scene(&mut rng, &id, 6, 8, &format!("c{case}i{i}"));
            instances.extend(gts);
            dets.extend(image_dets);
        }
        let dataset = Dataset { images, instances };
        if dataset.instances.iter().filter(|g| !g.ignore).count() == 0 {
            continue;
        }
        if dataset.instances.iter().any(|g| g.ignore) {
            with_ignores += 1;
        }
        let report = evaluate(&dets, &dataset, &EvalConfig::default()).unwrap();

        // Independent route: enumeration-based matching per image, then the
        // direct staircase scan.
        let total_gt = dataset.instances.iter().filter(|g| !g.ignore).count();
        for threshold_report in &report.per_threshold {
            let t = threshold_report.threshold;
            let mut outcomes = Vec::new();
            for im in &dataset.images {
                let image_gts: Vec<GroundTruthInstance> = dataset
                    .instances
                    .iter()
                    .filter(|g| g.image_id == im.id)
                    .cloned()
                    .collect();
                let image_dets: Vec<Detection> = dets
                    .iter()
                    .filter(|d| d.image_id == im.id)
                    .cloned()
                    .collect();
                let statuses = reference::exhaustive_match(&image_dets, &image_gts, t);
                outcomes.push(MatchOutcome {
                    threshold: t,
                    matches: statuses
                        .into_iter()
                        .map(|(di, status)| fairdet_core::eval::DetectionMatch {
                            detection_index: di,
                            score: image_dets[di].score,
                            status,
                            matched_instance_id: None,
                        })
                        .collect(),
                });
            }
            let oracle_ap = reference::staircase_average_precision(&outcomes, total_gt).unwrap();
            assert!(
                (threshold_report.ap - oracle_ap).abs() <= 1e-9,
                "case {case} threshold {t}: {} vs {oracle_ap}",
                threshold_report.ap
            );
        }

        // The averaged value is the arithmetic mean of the ten thresholds.
        let mean: f64 = report.per_threshold.iter().map(|t| t.ap).sum::<f64>()
            / report.per_threshold.len() as f64;
        assert!((report.ap - mean).abs() <= 1e-12);
        checked += 1;
    }
    assert!(checked >= 200, "checked {checked}");
    assert!(with_ignores >= 50, "ignore cases {with_ignores}");
}

#[test]
fn metric_ordering_and_monotone_rescale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut trials = 0;
    while trials < 1000 {
        let (gts, dets) = random_scene(&mut rng, "im", 6, 8, &format!("t{trials}"));
        if gts.iter().filter(|g| !g.ignore).count() == 0 {
            continue;
        }
        let dataset = Dataset {
            images: vec![image("im")],
            instances: gts,
        };
        let report = evaluate(&dets, &dataset, &EvalConfig::default()).unwrap();
        let ap50 = report.ap50.unwrap();
        let ap75 = report.ap75.unwrap();
        let ap95 = report.per_threshold.last().unwrap().ap;
        assert!(ap50 >= ap75, "trial {trials}");
        // The mean of the ten values; summation may round it a few ulps
        // past the extremes when all thresholds tie.
        assert!(
            report.ap <= ap50 + 1e-12 && report.ap >= ap95 - 1e-12,
            "trial {trials}"
        );
        // Per-threshold AP is non-increasing in the threshold.
        for pair in report.per_threshold.windows(2) {
            assert!(pair[0].ap >= pair[1].ap, "trial {trials}");
        }

        // Strictly increasing score transformations that are exact in
        // binary arithmetic must leave every AP value bit-identical.
        for transform in [
            |s: f64| 0.25 + s / 2.0,
            |s: f64| s / 4.0,
            |s: f64| (s + 1.0) / 2.0,
        ] {
            let rescaled: Vec<Detection> = dets
                .iter()
                .map(|d| Detection {
                    score: transform(d.score),
                    ..d.clone()
                })
                .collect();
            let rescaled_report = evaluate(&rescaled, &dataset, &EvalConfig::default()).unwrap();
            assert_eq!(report.ap, rescaled_report.ap, "trial {trials}");
            for (a, b) in report
                .per_threshold
                .iter()
                .zip(&rescaled_report.per_threshold)
            {
                assert_eq!(a.ap, b.ap, "trial {trials} threshold {}", a.threshold);
            }
        }
        trials += 1;
    }
}

#[test]
fn adding_a_pure_false_positive_never_increases_ap() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut trials = 0;
    while trials < 300 {
        let (gts, mut dets) = random_scene(&mut rng, "im", 5, 6, &format!("t{trials}"));
        if gts.iter().filter(|g| !g.ignore).count() == 0 {
            continue;
        }
        let dataset = Dataset {
            images: vec![image("im")],
            instances: gts,
        };
        let before = evaluate(&dets, &dataset, &EvalConfig::default()).unwrap();
        // Disjoint from every lattice box (lattice tops out at 252).
        dets.push(Detection {
            image_id: "im".to_string(),
            bbox: BBox::new(400.0, 400.0, 430.0, 430.0).unwrap(),
            class_name: PERSON_CLASS.to_string(),
            score: grid_score(&mut rng),
        });
        let after = evaluate(&dets, &dataset, &EvalConfig::default()).unwrap();
        for (a, b) in before.per_threshold.iter().zip(&after.per_threshold) {
            assert!(b.ap <= a.ap + 1e-15, "trial {trials}");
        }
        trials += 1;
    }
}

#[test]
fn group_counts_match_recount_oracle_on_random_two_group_scenes() {
    use fairdet_core::dataset::GroupLabel;
    use fairdet_core::eval::{group_evaluate, CrossGroupMode, GroupEvalConfig};

    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let mut checked = 0;
    for case in 0..150 {
        let n_images = rng.gen_range(1..=3);
        let mut images = Vec::new();
        let mut instances = Vec::new();
        let mut dets = Vec::new();
        for i in 0..n_images {
            let id = format!("im{i}");
            images.push(image(&id));
            let (mut gts, image_dets) = random_scene(&mut rng, &id, 4, 5, &format!("c{case}i{i}"));
            for gt in &mut gts {
                gt.group = Some(match rng.gen_range(0..4) {
                    0 => GroupLabel::Ls,
                    1 => GroupLabel::Ds,
                    2 => GroupLabel::Unknown,
                    _ => GroupLabel::NotPerson,
                });
            }
            instances.extend(gts);
            dets.extend(image_dets);
        }
        let dataset = Dataset { images, instances };
        for mode in [CrossGroupMode::Ignore, CrossGroupMode::FalsePositive] {
            let config = GroupEvalConfig {
                cross_group: mode,
                eval: EvalConfig::with_thresholds(vec![0.5, 0.75]),
                ..GroupEvalConfig::default()
            };
            for group in [GroupLabel::Ls, GroupLabel::Ds] {
                let report = match group_evaluate(&dets, &dataset, group, &config) {
                    Ok(report) => report,
                    Err(_) => continue, // group absent from scope
                };
                for threshold_report in &report.per_threshold {
                    let (tp, fp) = reference::group_recount(
                        &dets,
                        &dataset,
                        group,
                        &config,
                        threshold_report.threshold,
                    )
                    .unwrap();
                    assert_eq!(
                        (
                            threshold_report.true_positives,
                            threshold_report.false_positives
                        ),
                        (tp, fp),
                        "case {case} group {group} mode {mode:?} t {}",
                        threshold_report.threshold
                    );
                }
                checked += 1;
            }
        }
    }
    assert!(checked >= 150, "checked {checked}");
}

#[test]
fn staircase_ap_oracle_agrees_on_hand_built_staircase() {
    // 5 GT, 7 detections with a fixed TP/FP pattern; the value is frozen
    // from the oracle and checked against the implementation.
    let statuses = [true, false, true, true, false, false, true];
    let matches: Vec<fairdet_core::eval::DetectionMatch> = statuses
        .iter()
        .enumerate()
        .map(|(i, &tp)| fairdet_core::eval::DetectionMatch {
            detection_index: i,
            score: 1.0 - i as f64 * 0.1,
            status: if tp {
                DetectionStatus::TruePositive
            } else {
                DetectionStatus::FalsePositive
            },
            matched_instance_id: None,
        })
        .collect();
    let outcome = MatchOutcome {
        threshold: 0.5,
        matches,
    };
    let oracle = reference::staircase_average_precision(std::slice::from_ref(&outcome), 5).unwrap();
    let fast =
        average_precision(std::slice::from_ref(&outcome), 5, Interpolation::Coco101).unwrap();
    // Staircase recalls 0.2, 0.4, 0.6, 0.8 reach max precisions 1, 3/4,
    // 3/4, 4/7 (the recall-0.6 point at precision 3/4 dominates recalls in
    // (0.2, 0.6]). Grid average over 0.00..=1.00: 21 points at 1.0, 40 at
    // 3/4, 20 at 4/7, 20 at 0.
    let expected = (21.0 * 1.0 + 40.0 * 0.75 + 20.0 * (4.0 / 7.0)) / 101.0;
    assert!((oracle - expected).abs() < 1e-12);
    assert!((fast - oracle).abs() <= 1e-9);

    // All ten COCO thresholds are distinct values.
    assert_eq!(COCO_IOU_THRESHOLDS.len(), 10);
}
