//! Slow, direct reference implementations used by the test and acceptance
//! suites to cross-check the fast paths. Everything here is recomputed from
//! first principles in flat, enumerative style and stays independent of the
//! implementation code it verifies.

use std::collections::HashSet;

use crate::dataset::{Dataset, Detection, GroundTruthInstance, GroupLabel, PERSON_CLASS};
use crate::error::Result;
use crate::eval::{CrossGroupMode, DetectionStatus, GroupEvalConfig, MatchOutcome};
use crate::geometry::iou;
use crate::loss::{LossConfig, ToyBatch, ToyModel, WeightVector};

/// 101-point average precision computed the long way: pool all matches,
/// build the raw precision-recall staircase, and for every grid recall take
/// the maximum staircase precision at recall at least that value by a
/// direct scan.
pub fn staircase_average_precision(outcomes: &[MatchOutcome], total_gt: usize) -> Option<f64> {
    if total_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(f64, DetectionStatus)> = outcomes
        .iter()
        .flat_map(|o| o.matches.iter().map(|m| (m.score, m.status)))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut staircase: Vec<(f64, f64)> = Vec::new();
    for (_, status) in ranked {
        match status {
            DetectionStatus::TruePositive => tp += 1,
            DetectionStatus::FalsePositive => fp += 1,
            DetectionStatus::Ignored => continue,
        }
        staircase.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
    }

    let mut sum = 0.0;
    for i in 0..=100 {
        let grid = i as f64 / 100.0;
        let mut best = 0.0f64;
        for &(recall, precision) in &staircase {
            if recall >= grid && precision > best {
                best = precision;
            }
        }
        sum += best;
    }
    Some(sum / 101.0)
}

/// Greedy matching characterized by enumeration instead of a greedy loop:
/// among all injective assignments of detections (in descending-score
/// processing order) to non-ignored ground truth with IoU at or above the
/// threshold, pick the one with the lexicographically greatest per-detection
/// IoU sequence (ties broken toward smaller ground-truth indices). Unmatched
/// detections overlapping an ignore-flagged ground truth at the threshold
/// are ignored; the rest are false positives.
///
/// Returns `(detection input index, status)` pairs in processing order.
/// Intended for small instances only; the enumeration is exponential.
pub fn exhaustive_match(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    threshold: f64,
) -> Vec<(usize, DetectionStatus)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());

    let live: Vec<usize> = (0..gts.len()).filter(|&g| !gts[g].ignore).collect();
    // Per detection (in processing order): candidate (gt index, iou) pairs.
    let candidates: Vec<Vec<(usize, f64)>> = order
        .iter()
        .map(|&di| {
            live.iter()
                .filter_map(|&gi| {
                    let overlap = iou(dets[di].bbox, gts[gi].bbox);
                    (overlap >= threshold).then_some((gi, overlap))
                })
                .collect()
        })
        .collect();

    #[derive(Clone)]
    struct Candidate {
        ious: Vec<f64>,
        gt_choice: Vec<i64>,
        assignment: Vec<Option<usize>>,
    }

    fn better(a: &Candidate, b: &Candidate) -> bool {
        for (x, y) in a.ious.iter().zip(&b.ious) {
            if x > y {
                return true;
            }
            if x < y {
                return false;
            }
        }
        for (x, y) in a.gt_choice.iter().zip(&b.gt_choice) {
            if x < y {
                return true;
            }
            if x > y {
                return false;
            }
        }
        false
    }

    fn recurse(
        position: usize,
        candidates: &[Vec<(usize, f64)>],
        taken: &mut Vec<usize>,
        current: &mut Candidate,
        best: &mut Option<Candidate>,
    ) {
        if position == candidates.len() {
            if best.as_ref().is_none_or(|b| better(current, b)) {
                *best = Some(current.clone());
            }
            return;
        }
        // Option: leave this detection unmatched.
        current.ious.push(-1.0);
        current.gt_choice.push(i64::MAX);
        current.assignment.push(None);
        recurse(position + 1, candidates, taken, current, best);
        current.ious.pop();
        current.gt_choice.pop();
        current.assignment.pop();

        for &(gi, overlap) in &candidates[position] {
            if taken.contains(&gi) {
                continue;
            }
            taken.push(gi);
            current.ious.push(overlap);
            current.gt_choice.push(gi as i64);
            current.assignment.push(Some(gi));
            recurse(position + 1, candidates, taken, current, best);
            current.ious.pop();
            current.gt_choice.pop();
            current.assignment.pop();
            taken.pop();
        }
    }

    let mut best = None;
    recurse(
        0,
        &candidates,
        &mut Vec::new(),
        &mut Candidate {
            ious: Vec::new(),
            gt_choice: Vec::new(),
            assignment: Vec::new(),
        },
        &mut best,
    );
    let assignment = best
        .expect("the all-unmatched assignment always exists")
        .assignment;

    order
        .iter()
        .zip(assignment)
        .map(|(&di, matched)| {
            let status = if matched.is_some() {
                DetectionStatus::TruePositive
            } else {
                let shadowed = gts
                    .iter()
                    .any(|g| g.ignore && iou(dets[di].bbox, g.bbox) >= threshold);
                if shadowed {
                    DetectionStatus::Ignored
                } else {
                    DetectionStatus::FalsePositive
                }
            };
            (di, status)
        })
        .collect()
}

/// Brute-force per-group tally: reapplies the scoping and ignore rules by
/// hand, image by image, and counts true and false positives at one
/// threshold via [`exhaustive_match`].
pub fn group_recount(
    dets: &[Detection],
    dataset: &Dataset,
    group: GroupLabel,
    config: &GroupEvalConfig,
    threshold: f64,
) -> Result<(usize, usize)> {
    let other = match group {
        GroupLabel::Ls => GroupLabel::Ds,
        GroupLabel::Ds => GroupLabel::Ls,
        _ => unreachable!("recount targets LS or DS"),
    };
    let mut scope: HashSet<&str> = HashSet::new();
    for inst in &dataset.instances {
        let labeled = inst.group == Some(GroupLabel::Ls) || inst.group == Some(GroupLabel::Ds);
        if inst.class_name == PERSON_CLASS && labeled && !inst.ignore {
            scope.insert(inst.image_id.as_str());
        }
    }

    let mut tp = 0usize;
    let mut fp = 0usize;
    for image in &dataset.images {
        if !scope.contains(image.id.as_str()) {
            continue;
        }
        let mut gts: Vec<GroundTruthInstance> = Vec::new();
        for inst in &dataset.instances {
            if inst.image_id != image.id || inst.class_name != config.eval.class_name {
                continue;
            }
            let mut gt = inst.clone();
            if inst.group == Some(group) && !inst.ignore {
                // positive
            } else if inst.group == Some(other)
                && !inst.ignore
                && config.cross_group == CrossGroupMode::FalsePositive
            {
                continue;
            } else {
                gt.ignore = true;
            }
            gts.push(gt);
        }
        let image_dets: Vec<Detection> = dets
            .iter()
            .filter(|d| d.image_id == image.id && d.class_name == config.eval.class_name)
            .cloned()
            .collect();
        for (_, status) in exhaustive_match(&image_dets, &gts, threshold) {
            match status {
                DetectionStatus::TruePositive => tp += 1,
                DetectionStatus::FalsePositive => fp += 1,
                DetectionStatus::Ignored => {}
            }
        }
    }
    Ok((tp, fp))
}

/// Naive per-sample evaluation of the (optionally weighted) detection-head
/// loss with its own forward pass: unshifted softmax, explicit logarithm
/// clamp, and inline smooth L1.
pub fn detection_loss_reference(
    batch: &ToyBatch,
    model: &ToyModel,
    config: &LossConfig,
    weights: Option<&WeightVector>,
) -> f64 {
    let d = model.feature_dim();
    let k = model.num_classes();
    let mut cls_total = 0.0;
    let mut reg_total = 0.0;
    for sample in &batch.samples {
        let w = weights.map_or(1.0, |w| w.get(sample.attribute));
        let mut exps = Vec::with_capacity(k);
        for c in 0..k {
            let mut z = 0.0;
            for a in 0..d {
                z += model.class_weights()[c * d + a] * sample.features[a];
            }
            exps.push(z.exp());
        }
        let denom: f64 = exps.iter().sum();
        let p_true = exps[sample.true_class] / denom;
        cls_total += w * -(p_true.max(1e-12).ln());

        if let Some(target) = &sample.target_offsets {
            for (c, &target_c) in target.components().iter().enumerate() {
                let mut predicted = 0.0;
                for a in 0..d {
                    predicted += model.reg_weights()[c * d + a] * sample.features[a];
                }
                let x = predicted - target_c;
                reg_total += w * if x.abs() < 1.0 {
                    0.5 * x * x
                } else {
                    x.abs() - 0.5
                };
            }
        }
    }
    cls_total / config.n_cls + config.lambda * reg_total / config.n_reg
}

/// Central finite differences of `f` over every model parameter.
pub fn finite_difference_gradient(
    model: &ToyModel,
    mut f: impl FnMut(&ToyModel) -> f64,
    step: f64,
) -> Vec<f64> {
    let base = model.params();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += step;
            let mut minus = base.clone();
            minus[i] -= step;
            let mut model_plus = model.clone();
            model_plus.set_params(&plus).unwrap();
            let mut model_minus = model.clone();
            model_minus.set_params(&minus).unwrap();
            (f(&model_plus) - f(&model_minus)) / (2.0 * step)
        })
        .collect()
}

/// The inequity definition evaluated as a literal double loop.
pub fn pairwise_inequity(losses_ls: &[f64], losses_ds: &[f64]) -> f64 {
    let mut total = 0.0;
    for &ls in losses_ls {
        for &ds in losses_ds {
            let diff = ls - ds;
            if diff > 0.0 {
                total += diff;
            }
        }
    }
    total / (losses_ls.len() as f64 * losses_ds.len() as f64)
}
