//! Greedy IoU matching with ignore handling, precision-recall construction,
//! average precision at fixed and averaged thresholds, per-group evaluation,
//! and the predictive-inequity metric.
//!
//! Matching follows the COCO convention: detections are processed in
//! descending score order (ties broken by input order) and each takes the
//! unmatched non-ignore ground truth of highest IoU at or above the
//! threshold. A detection whose only sufficient overlap is with an
//! ignore-flagged ground truth is itself ignored: it counts as neither true
//! nor false positive, and ignore regions are never consumed.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Detection, GroundTruthInstance, GroupLabel, PERSON_CLASS};
use crate::error::{Error, Result};
use crate::geometry::iou;

/// The ten COCO-averaged IoU thresholds, 0.50 to 0.95 in steps of 0.05.
pub const COCO_IOU_THRESHOLDS: [f64; 10] =
    [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Score cutoff of the default per-instance loss used by the inequity
/// metric: an instance's loss is one minus its best IoU with any detection
/// scoring at least this.
pub const DEFAULT_INEQUITY_SCORE_CUTOFF: f64 = 0.85;

/// An IoU threshold in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoUThreshold(f64);

impl IoUThreshold {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::validation(format!(
                "IoU threshold must lie in (0, 1], got {value}"
            )));
        }
        Ok(IoUThreshold(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionStatus {
    TruePositive,
    FalsePositive,
    /// Overlapped only ignore-flagged ground truth; excluded from both
    /// true-positive and false-positive accounting.
    Ignored,
}

/// Per-detection matching outcome at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatch {
    /// Index into the detection slice passed to [`match_detections`].
    pub detection_index: usize,
    pub score: f64,
    pub status: DetectionStatus,
    /// Ground-truth instance id for true positives.
    pub matched_instance_id: Option<String>,
}

/// Matches for one image and class at one threshold, sorted by descending
/// score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub threshold: f64,
    pub matches: Vec<DetectionMatch>,
}

/// Greedy matching for the detections and ground truth of a single image
/// and class. Inputs with mixed image ids or classes are rejected.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    threshold: IoUThreshold,
) -> Result<MatchOutcome> {
    let mut image_ids: HashSet<&str> = dets.iter().map(|d| d.image_id.as_str()).collect();
    image_ids.extend(gts.iter().map(|g| g.image_id.as_str()));
    if image_ids.len() > 1 {
        let mut ids: Vec<&str> = image_ids.into_iter().collect();
        ids.sort_unstable();
        return Err(Error::validation(format!(
            "matching requires a single image, got {ids:?}"
        )));
    }
    let mut classes: HashSet<&str> = dets.iter().map(|d| d.class_name.as_str()).collect();
    classes.extend(gts.iter().map(|g| g.class_name.as_str()));
    if classes.len() > 1 {
        let mut names: Vec<&str> = classes.into_iter().collect();
        names.sort_unstable();
        return Err(Error::validation(format!(
            "matching requires a single class, got {names:?}"
        )));
    }
    for det in dets {
        if !det.score.is_finite() {
            return Err(Error::validation(format!(
                "detection on image {:?} has non-finite score",
                det.image_id
            )));
        }
    }

    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort: ties keep input order.
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());

    let t = threshold.value();
    let mut gt_taken = vec![false; gts.len()];
    let mut matches = Vec::with_capacity(dets.len());
    for &di in &order {
        let det = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        let mut overlaps_ignore = false;
        for (gi, gt) in gts.iter().enumerate() {
            let overlap = iou(det.bbox, gt.bbox);
            if overlap < t {
                continue;
            }
            if gt.ignore {
                overlaps_ignore = true;
            } else if !gt_taken[gi] && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        let (status, matched) = match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                (DetectionStatus::TruePositive, Some(gts[gi].id.clone()))
            }
            None if overlaps_ignore => (DetectionStatus::Ignored, None),
            None => (DetectionStatus::FalsePositive, None),
        };
        matches.push(DetectionMatch {
            detection_index: di,
            score: det.score,
            status,
            matched_instance_id: matched,
        });
    }
    Ok(MatchOutcome {
        threshold: t,
        matches,
    })
}

/// Precision-recall interpolation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// 101-point interpolation: mean of the precision envelope sampled at
    /// recalls 0.00, 0.01, ..., 1.00.
    Coco101,
    /// Exact area under the interpolated precision envelope.
    AllPoints,
}

/// Average precision over the pooled matches of all images, given the total
/// number of non-ignored ground-truth instances. Ignored detections are
/// skipped entirely. Returns `None` when there is no ground truth: AP is
/// undefined there, never zero.
pub fn average_precision(
    outcomes: &[MatchOutcome],
    total_gt: usize,
    interpolation: Interpolation,
) -> Option<f64> {
    if total_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(f64, DetectionStatus)> = outcomes
        .iter()
        .flat_map(|o| o.matches.iter().map(|m| (m.score, m.status)))
        .collect();
    // Stable: cross-image ties keep accumulation order.
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(ranked.len());
    for (_, status) in ranked {
        match status {
            DetectionStatus::TruePositive => tp += 1,
            DetectionStatus::FalsePositive => fp += 1,
            DetectionStatus::Ignored => continue,
        }
        points.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
    }

    // Precision envelope: max precision over all points at recall >= r.
    let mut envelope = points.clone();
    let mut running_max = 0.0f64;
    for point in envelope.iter_mut().rev() {
        running_max = running_max.max(point.1);
        point.1 = running_max;
    }

    let ap = match interpolation {
        Interpolation::Coco101 => {
            let mut sum = 0.0;
            for i in 0..=100 {
                let grid = i as f64 / 100.0;
                // First envelope point with recall >= grid; recall is
                // non-decreasing along the ranked list.
                let precision = envelope
                    .iter()
                    .find(|(recall, _)| *recall >= grid)
                    .map_or(0.0, |(_, p)| *p);
                sum += precision;
            }
            sum / 101.0
        }
        Interpolation::AllPoints => {
            let mut area = 0.0;
            let mut prev_recall = 0.0;
            for (recall, precision) in &envelope {
                area += (recall - prev_recall) * precision;
                prev_recall = *recall;
            }
            area
        }
    };
    Some(ap)
}

/// Evaluation settings: the class under evaluation, the IoU thresholds to
/// average over, and the interpolation scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub class_name: String,
    pub thresholds: Vec<f64>,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            class_name: PERSON_CLASS.to_string(),
            thresholds: COCO_IOU_THRESHOLDS.to_vec(),
            interpolation: Interpolation::Coco101,
        }
    }
}

impl EvalConfig {
    /// Replaces the averaged thresholds, keeping the other defaults.
    pub fn with_thresholds(thresholds: Vec<f64>) -> Self {
        EvalConfig {
            thresholds,
            ..EvalConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub ap: f64,
    pub num_gt: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

/// Per-threshold average precision plus the named AP50/AP75 values and
/// their mean. `ap` is the arithmetic mean of the per-threshold values;
/// `ap50`/`ap75` are present when the corresponding threshold was
/// evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APReport {
    pub ap: f64,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub per_threshold: Vec<ThresholdReport>,
}

impl APReport {
    fn from_thresholds(per_threshold: Vec<ThresholdReport>) -> Self {
        let ap = per_threshold.iter().map(|t| t.ap).sum::<f64>() / per_threshold.len() as f64;
        let find = |target: f64| {
            per_threshold
                .iter()
                .find(|t| (t.threshold - target).abs() < 1e-9)
                .map(|t| t.ap)
        };
        APReport {
            ap,
            ap50: find(0.50),
            ap75: find(0.75),
            per_threshold,
        }
    }
}

/// One image's detections and ground truth, restricted to a single class.
struct ImageEval {
    dets: Vec<Detection>,
    gts: Vec<GroundTruthInstance>,
}

fn evaluate_images(
    per_image: &[ImageEval],
    total_gt: usize,
    config: &EvalConfig,
) -> Result<APReport> {
    if config.thresholds.is_empty() {
        return Err(Error::validation("at least one IoU threshold is required"));
    }
    if total_gt == 0 {
        return Err(Error::validation(format!(
            "no non-ignored ground truth for class {:?}; average precision is undefined",
            config.class_name
        )));
    }
    let mut per_threshold = Vec::with_capacity(config.thresholds.len());
    for &t in &config.thresholds {
        let threshold = IoUThreshold::new(t)?;
        let mut outcomes = Vec::with_capacity(per_image.len());
        for image in per_image {
            outcomes.push(match_detections(&image.dets, &image.gts, threshold)?);
        }
        let mut true_positives = 0;
        let mut false_positives = 0;
        for outcome in &outcomes {
            for m in &outcome.matches {
                match m.status {
                    DetectionStatus::TruePositive => true_positives += 1,
                    DetectionStatus::FalsePositive => false_positives += 1,
                    DetectionStatus::Ignored => {}
                }
            }
        }
        let ap = average_precision(&outcomes, total_gt, config.interpolation)
            .expect("total_gt > 0 checked above");
        per_threshold.push(ThresholdReport {
            threshold: t,
            ap,
            num_gt: total_gt,
            true_positives,
            false_positives,
        });
    }
    Ok(APReport::from_thresholds(per_threshold))
}

/// Evaluates detections of one class against the whole dataset.
pub fn evaluate(dets: &[Detection], dataset: &Dataset, config: &EvalConfig) -> Result<APReport> {
    let image_ids: HashSet<&str> = dataset.images.iter().map(|im| im.id.as_str()).collect();
    let mut dets_by_image: HashMap<&str, Vec<Detection>> = HashMap::new();
    for det in dets {
        if det.class_name != config.class_name {
            continue;
        }
        if !image_ids.contains(det.image_id.as_str()) {
            return Err(Error::validation(format!(
                "detection references image {:?} absent from the dataset",
                det.image_id
            )));
        }
        dets_by_image
            .entry(det.image_id.as_str())
            .or_default()
            .push(det.clone());
    }
    let mut gts_by_image: HashMap<&str, Vec<GroundTruthInstance>> = HashMap::new();
    for inst in &dataset.instances {
        if inst.class_name == config.class_name {
            gts_by_image
                .entry(inst.image_id.as_str())
                .or_default()
                .push(inst.clone());
        }
    }
    let total_gt = gts_by_image
        .values()
        .flatten()
        .filter(|g| !g.ignore)
        .count();

    let mut per_image = Vec::new();
    for image in &dataset.images {
        let dets = dets_by_image.remove(image.id.as_str()).unwrap_or_default();
        let gts = gts_by_image.remove(image.id.as_str()).unwrap_or_default();
        if dets.is_empty() && gts.is_empty() {
            continue;
        }
        per_image.push(ImageEval { dets, gts });
    }
    evaluate_images(&per_image, total_gt, config)
}

/// How per-group evaluation treats people of the *other* labeled group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossGroupMode {
    /// Other-group people become ignore regions: a detection covering one
    /// is neither rewarded nor penalized (default).
    Ignore,
    /// Other-group people are removed from the ground truth, so detections
    /// covering them count as false positives.
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEvalConfig {
    pub eval: EvalConfig,
    pub cross_group: CrossGroupMode,
    pub inequity_score_cutoff: f64,
}

impl Default for GroupEvalConfig {
    fn default() -> Self {
        GroupEvalConfig {
            eval: EvalConfig::default(),
            cross_group: CrossGroupMode::Ignore,
            inequity_score_cutoff: DEFAULT_INEQUITY_SCORE_CUTOFF,
        }
    }
}

fn require_disparity_group(group: GroupLabel) -> Result<()> {
    match group {
        GroupLabel::Ls | GroupLabel::Ds => Ok(()),
        other => Err(Error::validation(format!(
            "per-group evaluation targets LS or DS, got {other}"
        ))),
    }
}

/// Images that take part in per-group evaluation: those with at least one
/// non-ignored person labeled LS or DS. People below the size cutoff are
/// already ignore-flagged and therefore do not bring an image into scope.
fn scoped_image_ids(dataset: &Dataset) -> HashSet<&str> {
    dataset
        .instances
        .iter()
        .filter(|i| {
            i.class_name == PERSON_CLASS
                && !i.ignore
                && matches!(i.group, Some(GroupLabel::Ls | GroupLabel::Ds))
        })
        .map(|i| i.image_id.as_str())
        .collect()
}

/// Evaluates detections for one labeled group. Only images containing at
/// least one labeled (LS or DS) person are considered. Within them, people
/// of the target group are the positives; everyone else of the person class
/// (the other group, unknown-group people, unlabeled people, and
/// ignore-flagged people) is an ignore region, except that
/// [`CrossGroupMode::FalsePositive`] removes the other group instead.
pub fn group_evaluate(
    dets: &[Detection],
    dataset: &Dataset,
    group: GroupLabel,
    config: &GroupEvalConfig,
) -> Result<APReport> {
    require_disparity_group(group)?;
    let other = if group == GroupLabel::Ls {
        GroupLabel::Ds
    } else {
        GroupLabel::Ls
    };
    let scope = scoped_image_ids(dataset);

    let class_name = config.eval.class_name.as_str();
    let mut gts_by_image: HashMap<&str, Vec<GroundTruthInstance>> = HashMap::new();
    let mut total_gt = 0usize;
    for inst in &dataset.instances {
        if inst.class_name != class_name || !scope.contains(inst.image_id.as_str()) {
            continue;
        }
        let mut gt = inst.clone();
        if inst.group == Some(group) && !inst.ignore {
            total_gt += 1;
        } else if inst.group == Some(other)
            && !inst.ignore
            && config.cross_group == CrossGroupMode::FalsePositive
        {
            continue;
        } else {
            gt.ignore = true;
        }
        gts_by_image
            .entry(inst.image_id.as_str())
            .or_default()
            .push(gt);
    }
    if total_gt == 0 {
        return Err(Error::validation(format!(
            "group {group} has zero instances in evaluation scope; report is absent"
        )));
    }

    let mut dets_by_image: HashMap<&str, Vec<Detection>> = HashMap::new();
    for det in dets {
        if det.class_name == class_name && scope.contains(det.image_id.as_str()) {
            dets_by_image
                .entry(det.image_id.as_str())
                .or_default()
                .push(det.clone());
        }
    }

    let mut per_image = Vec::new();
    for image in &dataset.images {
        if !scope.contains(image.id.as_str()) {
            continue;
        }
        let dets = dets_by_image.remove(image.id.as_str()).unwrap_or_default();
        let gts = gts_by_image.remove(image.id.as_str()).unwrap_or_default();
        if dets.is_empty() && gts.is_empty() {
            continue;
        }
        per_image.push(ImageEval { dets, gts });
    }
    evaluate_images(&per_image, total_gt, &config.eval)
}

/// Per-group reports side by side, their gaps (LS minus DS), and the
/// predictive inequity under the default per-instance loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGapReport {
    pub ls: APReport,
    pub ds: APReport,
    pub ap_gap: f64,
    pub ap50_gap: Option<f64>,
    pub ap75_gap: Option<f64>,
    pub inequity: f64,
}

/// Runs [`group_evaluate`] for both groups and combines the results.
pub fn group_gap_report(
    dets: &[Detection],
    dataset: &Dataset,
    config: &GroupEvalConfig,
) -> Result<GroupGapReport> {
    let ls = group_evaluate(dets, dataset, GroupLabel::Ls, config)?;
    let ds = group_evaluate(dets, dataset, GroupLabel::Ds, config)?;
    let ls_losses = instance_losses(dets, dataset, GroupLabel::Ls, config)?;
    let ds_losses = instance_losses(dets, dataset, GroupLabel::Ds, config)?;
    let inequity = predictive_inequity(&ls_losses, &ds_losses)?;
    let pair = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    Ok(GroupGapReport {
        ap_gap: ls.ap - ds.ap,
        ap50_gap: pair(ls.ap50, ds.ap50),
        ap75_gap: pair(ls.ap75, ds.ap75),
        inequity,
        ls,
        ds,
    })
}

/// Default per-instance loss for the inequity metric: one minus the
/// instance's best IoU with any same-class detection scoring at least the
/// configured cutoff, clamped to `[0, 1]`. Covers the same instances that
/// [`group_evaluate`] treats as positives.
pub fn instance_losses(
    dets: &[Detection],
    dataset: &Dataset,
    group: GroupLabel,
    config: &GroupEvalConfig,
) -> Result<Vec<f64>> {
    require_disparity_group(group)?;
    let scope = scoped_image_ids(dataset);
    let class_name = config.eval.class_name.as_str();
    let mut dets_by_image: HashMap<&str, Vec<&Detection>> = HashMap::new();
    for det in dets {
        if det.class_name == class_name && det.score >= config.inequity_score_cutoff {
            dets_by_image
                .entry(det.image_id.as_str())
                .or_default()
                .push(det);
        }
    }
    let losses = dataset
        .instances
        .iter()
        .filter(|i| {
            i.class_name == class_name
                && i.group == Some(group)
                && !i.ignore
                && scope.contains(i.image_id.as_str())
        })
        .map(|inst| {
            let best = dets_by_image
                .get(inst.image_id.as_str())
                .map(|dets| {
                    dets.iter()
                        .map(|d| iou(d.bbox, inst.bbox))
                        .fold(0.0f64, f64::max)
                })
                .unwrap_or(0.0);
            (1.0 - best).clamp(0.0, 1.0)
        })
        .collect();
    Ok(losses)
}

/// Predictive inequity: the mean over all ordered pairs (one instance from
/// each group) of the positive part of the loss difference,
/// `max(loss_ls - loss_ds, 0)`. Direct O(n*m) computation.
pub fn predictive_inequity(losses_ls: &[f64], losses_ds: &[f64]) -> Result<f64> {
    if losses_ls.is_empty() || losses_ds.is_empty() {
        return Err(Error::validation(
            "predictive inequity requires at least one loss per group",
        ));
    }
    if losses_ls.iter().chain(losses_ds).any(|l| !l.is_finite()) {
        return Err(Error::validation("losses must be finite"));
    }
    let mut total = 0.0;
    for &ls in losses_ls {
        for &ds in losses_ds {
            total += (ls - ds).max(0.0);
        }
    }
    Ok(total / (losses_ls.len() as f64 * losses_ds.len() as f64))
}
