//! Synthetic anchor-level training data: two person groups drawn from
//! distinct but overlapping feature distributions with a configurable
//! count imbalance, plus background and unknown-group anchors, laid out in
//! non-overlapping grid cells of synthetic scenes so the same batch can be
//! scored both by loss and by box-level average precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    Dataset, Detection, GroundTruthInstance, GroupLabel, ImageRecord, TimeOfDay, PERSON_CLASS,
};
use crate::error::{Error, Result};
use crate::geometry::{decode_offsets, encode_offsets, BBox, BoxOffsets};

use super::{AnchorSample, ToyBatch, ToyModel};

const CANVAS_WIDTH: f64 = 1280.0;
const CANVAS_HEIGHT: f64 = 720.0;
/// Predicted offsets are clamped to this magnitude before decoding, the
/// usual guard against exploding box sizes early in training.
const OFFSET_CLAMP: f64 = 4.0;

/// Shape of the synthetic dataset. The defaults mirror the roughly 3.5:1
/// group imbalance of the motivating data. The smaller (DS) group is made
/// genuinely harder in two ways: its features sit closer to the background
/// distribution, and its boxes follow a group-specific framing offset that
/// the shared hint features do not carry, so a linear head must trade the
/// groups off against each other exactly where loss weighting can move the
/// compromise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Training anchors in the smaller (DS) group.
    pub ds_count: usize,
    /// LS count is `round(group_ratio * ds_count)`.
    pub group_ratio: f64,
    pub background_count: usize,
    pub unknown_count: usize,
    /// Held-out fraction, applied per group (at least one sample each).
    pub holdout_fraction: f64,
    pub feature_dim: usize,
    /// Distance of the LS person cluster from the background cluster along
    /// the first feature axis, in units of the noise scale.
    pub ls_separation: f64,
    pub ds_separation: f64,
    pub noise: f64,
    /// Systematic additive shift of every DS regression-target component;
    /// unknown-group anchors get half of it. Not visible in the hint
    /// features.
    pub ds_offset_bias: f64,
    /// Absolute noise of the offset-hint features around the unbiased
    /// offsets.
    pub offset_hint_noise: f64,
    pub anchors_per_image: usize,
    pub num_classes: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            ds_count: 200,
            group_ratio: 3.5,
            background_count: 600,
            unknown_count: 40,
            holdout_fraction: 0.25,
            feature_dim: 8,
            ls_separation: 2.4,
            ds_separation: 1.2,
            noise: 1.0,
            ds_offset_bias: 0.12,
            offset_hint_noise: 0.06,
            anchors_per_image: 8,
            num_classes: 2,
        }
    }
}

impl SyntheticConfig {
    pub fn ls_count(&self) -> usize {
        (self.group_ratio * self.ds_count as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.ds_count == 0 || self.background_count == 0 || self.ls_count() == 0 {
            return Err(Error::validation(
                "ds_count, background_count, and the derived LS count must be at least 1",
            ));
        }
        if self.group_ratio < 1.0 || !self.group_ratio.is_finite() {
            return Err(Error::validation(format!(
                "group_ratio must be at least 1, got {}",
                self.group_ratio
            )));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::validation(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        // One separation axis plus four offset-hint features.
        if self.feature_dim < 5 {
            return Err(Error::validation(format!(
                "feature_dim must be at least 5, got {}",
                self.feature_dim
            )));
        }
        if self.noise <= 0.0 || !self.noise.is_finite() {
            return Err(Error::validation(format!(
                "noise must be positive, got {}",
                self.noise
            )));
        }
        if self.offset_hint_noise <= 0.0 || !self.offset_hint_noise.is_finite() {
            return Err(Error::validation(format!(
                "offset_hint_noise must be positive, got {}",
                self.offset_hint_noise
            )));
        }
        // Drawn offsets up to 0.25 plus the bias must keep ground-truth
        // boxes inside their grid cells.
        if !(0.0..=0.3).contains(&self.ds_offset_bias) || !self.ds_offset_bias.is_finite() {
            return Err(Error::validation(format!(
                "ds_offset_bias must lie in [0, 0.3], got {}",
                self.ds_offset_bias
            )));
        }
        if ![self.ls_separation, self.ds_separation]
            .iter()
            .all(|s| s.is_finite() && *s >= 0.0)
        {
            return Err(Error::validation(
                "separations must be finite and non-negative",
            ));
        }
        if self.anchors_per_image == 0 {
            return Err(Error::validation("anchors_per_image must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::validation("num_classes must be at least 2"));
        }
        Ok(())
    }

    fn separation(&self, attribute: GroupLabel) -> f64 {
        match attribute {
            GroupLabel::Ls => self.ls_separation,
            GroupLabel::Ds => self.ds_separation,
            GroupLabel::Unknown => (self.ls_separation + self.ds_separation) / 2.0,
            GroupLabel::NotPerson => 0.0,
        }
    }

    fn offset_bias(&self, attribute: GroupLabel) -> f64 {
        match attribute {
            GroupLabel::Ds => self.ds_offset_bias,
            GroupLabel::Unknown => self.ds_offset_bias / 2.0,
            GroupLabel::Ls | GroupLabel::NotPerson => 0.0,
        }
    }
}

fn holdout_count(train: usize, fraction: f64) -> usize {
    ((train as f64 * fraction).round() as usize).max(1)
}

fn build_split(
    roles: &mut [GroupLabel],
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
    image_prefix: &str,
) -> Result<ToyBatch> {
    // Deterministic shuffle so scenes mix groups.
    for i in (1..roles.len()).rev() {
        let j = rng.gen_range(0..=i);
        roles.swap(i, j);
    }

    let cols = (config.anchors_per_image as f64).sqrt().ceil() as usize;
    let rows = config.anchors_per_image.div_ceil(cols);
    let cell_w = CANVAS_WIDTH / cols as f64;
    let cell_h = CANVAS_HEIGHT / rows as f64;
    let noise_dist = Normal::new(0.0, config.noise).map_err(|e| Error::numerical(e.to_string()))?;
    let standard = Normal::new(0.0, 1.0).map_err(|e| Error::numerical(e.to_string()))?;

    let mut samples = Vec::with_capacity(roles.len());
    for (index, &attribute) in roles.iter().enumerate() {
        let image_index = index / config.anchors_per_image;
        let cell = index % config.anchors_per_image;
        let col = (cell % cols) as f64;
        let row = (cell / cols) as f64;

        // Anchor inside its own grid cell; sizes and jitter are bounded so
        // a ground-truth box perturbed by offsets up to 0.25 plus the
        // framing bias (scale factor up to e^0.55) never crosses into a
        // neighboring cell.
        let jitter_x = rng.gen_range(-0.05..0.05);
        let jitter_y = rng.gen_range(-0.05..0.05);
        let cx = (col + 0.5 + jitter_x) * cell_w;
        let cy = (row + 0.5 + jitter_y) * cell_h;
        let w = rng.gen_range(0.25..0.35) * cell_w;
        let h = rng.gen_range(0.25..0.35) * cell_h;
        let anchor = BBox::from_center(cx, cy, w, h)?;

        let positive = attribute != GroupLabel::NotPerson;
        let bias = config.offset_bias(attribute);
        let mut drawn = [0.0f64; 4];
        let (target_offsets, gt_box) = if positive {
            for component in &mut drawn {
                *component = rng.gen_range(-0.25..0.25);
            }
            let shifted = BoxOffsets::new(
                drawn[0] + bias,
                drawn[1] + bias,
                drawn[2] + bias,
                drawn[3] + bias,
            )?;
            let gt = decode_offsets(shifted, anchor)?;
            // Store the re-encoded offsets so targets and boxes agree to
            // the last bit.
            (Some(encode_offsets(gt, anchor)), Some(gt))
        } else {
            (None, None)
        };

        let mut features = Vec::with_capacity(config.feature_dim);
        features.push(config.separation(attribute) + noise_dist.sample(rng));
        // Hints carry the unbiased offsets only; the framing bias has to
        // be inferred from group identity.
        for &component in &drawn {
            features.push(component + config.offset_hint_noise * standard.sample(rng));
        }
        for _ in 5..config.feature_dim {
            features.push(noise_dist.sample(rng));
        }

        samples.push(AnchorSample {
            features,
            true_class: if positive { 1 } else { 0 },
            target_offsets,
            attribute,
            anchor,
            gt_box,
            image_id: format!("{image_prefix}-{image_index:05}"),
        });
    }
    Ok(ToyBatch { samples })
}

/// Generates a training batch and a held-out batch, deterministically in
/// the seed. Group counts follow the configured ratio; features of the two
/// person groups are drawn from distinct but overlapping distributions.
pub fn generate_synthetic(seed: u64, config: &SyntheticConfig) -> Result<(ToyBatch, ToyBatch)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut train_roles = Vec::new();
    let mut holdout_roles = Vec::new();
    for (attribute, train_count) in [
        (GroupLabel::Ls, config.ls_count()),
        (GroupLabel::Ds, config.ds_count),
        (GroupLabel::Unknown, config.unknown_count),
        (GroupLabel::NotPerson, config.background_count),
    ] {
        train_roles.extend(std::iter::repeat_n(attribute, train_count));
        if train_count > 0 {
            let held = holdout_count(train_count, config.holdout_fraction);
            holdout_roles.extend(std::iter::repeat_n(attribute, held));
        }
    }

    let train = build_split(&mut train_roles, config, &mut rng, "train")?;
    let holdout = build_split(&mut holdout_roles, config, &mut rng, "holdout")?;
    Ok((train, holdout))
}

/// Scene ground truth for a batch: one image record per synthetic scene
/// and one person instance per positive anchor, labeled with the anchor's
/// group attribute.
pub fn toy_dataset(batch: &ToyBatch) -> Dataset {
    let mut images: Vec<ImageRecord> = Vec::new();
    let mut seen_last: Option<&str> = None;
    for sample in &batch.samples {
        // Samples are laid out in image order.
        if seen_last != Some(sample.image_id.as_str()) {
            images.push(ImageRecord {
                id: sample.image_id.clone(),
                width: CANVAS_WIDTH as u32,
                height: CANVAS_HEIGHT as u32,
                time_of_day: TimeOfDay::Other,
            });
            seen_last = Some(sample.image_id.as_str());
        }
    }
    let instances = batch
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, sample)| {
            sample.gt_box.map(|bbox| GroundTruthInstance {
                id: format!("gt-{i}"),
                image_id: sample.image_id.clone(),
                bbox,
                class_name: PERSON_CLASS.to_string(),
                group: Some(sample.attribute),
                occluded: false,
                ignore: false,
            })
        })
        .collect();
    Dataset { images, instances }
}

/// Runs the model over every anchor of a batch and turns the outputs into
/// detections: the decoded predicted box, scored by the person-class
/// probability. Offsets are clamped before decoding; a box that still
/// fails to decode falls back to the anchor.
pub fn toy_detections(batch: &ToyBatch, model: &ToyModel) -> Vec<Detection> {
    batch
        .samples
        .iter()
        .map(|sample| {
            let p = model.class_probabilities(&sample.features);
            let raw = model.predict_offsets(&sample.features);
            let clamped = BoxOffsets {
                tx: raw.tx.clamp(-OFFSET_CLAMP, OFFSET_CLAMP),
                ty: raw.ty.clamp(-OFFSET_CLAMP, OFFSET_CLAMP),
                tw: raw.tw.clamp(-OFFSET_CLAMP, OFFSET_CLAMP),
                th: raw.th.clamp(-OFFSET_CLAMP, OFFSET_CLAMP),
            };
            let bbox = decode_offsets(clamped, sample.anchor).unwrap_or(sample.anchor);
            Detection {
                image_id: sample.image_id.clone(),
                bbox,
                class_name: PERSON_CLASS.to_string(),
                score: p[1],
            }
        })
        .collect()
}
