//! The detection-head objective: classification log loss plus smooth-L1
//! regression on anchor offsets, with per-group weighting schemes, analytic
//! gradients, a synthetic scene generator, and a desk-scale trainer for
//! weight sweeps.
//!
//! Two weighting schemes are implemented and kept distinct: the per-anchor
//! augmented form scales each anchor's classification and regression terms
//! by a four-entry weight vector indexed by group attribute, while
//! [`group_total_loss`] applies the per-group normalized form (alpha over
//! group size). The sweep selects one explicitly.

mod synthetic;
mod train;

pub use synthetic::{generate_synthetic, toy_dataset, toy_detections, SyntheticConfig};
pub use train::{
    alpha_sweep, group_mean_losses, train, SweepConfig, SweepEntry, SweepReport, TrainOptions,
    TrainResult, TrajectoryPoint, WeightScheme, DEFAULT_SWEEP_ALPHAS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::GroupLabel;
use crate::error::{Error, Result};
use crate::geometry::{BBox, BoxOffsets};

/// Probabilities below this are clamped before taking logarithms.
pub const PROBABILITY_EPSILON: f64 = 1e-12;

/// Loss normalization and shape parameters: `lambda` balances the
/// regression term, `n_cls`/`n_reg` normalize the two sums, and `k` is the
/// class count. The conventional defaults set both normalizers to the
/// batch size with `lambda = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub n_cls: f64,
    pub n_reg: f64,
    pub num_classes: usize,
}

impl LossConfig {
    pub fn new(lambda: f64, n_cls: f64, n_reg: f64, num_classes: usize) -> Result<Self> {
        if lambda <= 0.0 || n_cls <= 0.0 || n_reg <= 0.0 {
            return Err(Error::validation(format!(
                "lambda, n_cls, and n_reg must be positive, got ({lambda}, {n_cls}, {n_reg})"
            )));
        }
        if num_classes < 2 {
            return Err(Error::validation(format!(
                "at least two classes required, got {num_classes}"
            )));
        }
        Ok(LossConfig {
            lambda,
            n_cls,
            n_reg,
            num_classes,
        })
    }

    /// Defaults for a batch: `lambda = 1`, both normalizers equal to the
    /// batch size.
    pub fn for_batch(batch_size: usize, num_classes: usize) -> Result<Self> {
        LossConfig::new(1.0, batch_size as f64, batch_size as f64, num_classes)
    }
}

/// Non-negative per-attribute weights for the augmented loss, indexed by
/// [`GroupLabel`]; at least one entry must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub ls: f64,
    pub ds: f64,
    pub unknown: f64,
    pub not_person: f64,
}

impl WeightVector {
    pub const UNIT: WeightVector = WeightVector {
        ls: 1.0,
        ds: 1.0,
        unknown: 1.0,
        not_person: 1.0,
    };

    pub fn new(ls: f64, ds: f64, unknown: f64, not_person: f64) -> Result<Self> {
        let entries = [ls, ds, unknown, not_person];
        if entries.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation(format!(
                "weights must be finite and non-negative, got {entries:?}"
            )));
        }
        if entries.iter().all(|w| *w == 0.0) {
            return Err(Error::validation("at least one weight must be positive"));
        }
        Ok(WeightVector {
            ls,
            ds,
            unknown,
            not_person,
        })
    }

    /// The weight applied to anchors carrying `attribute`.
    pub fn get(&self, attribute: GroupLabel) -> f64 {
        match attribute {
            GroupLabel::Ls => self.ls,
            GroupLabel::Ds => self.ds,
            GroupLabel::Unknown => self.unknown,
            GroupLabel::NotPerson => self.not_person,
        }
    }

    /// Maps the three-alpha form onto the four attribute slots: `other`
    /// covers both unknown-group people and non-person anchors.
    pub fn from_alphas(alphas: &GroupAlphas) -> Self {
        WeightVector {
            ls: alphas.ls,
            ds: alphas.ds,
            unknown: alphas.other,
            not_person: alphas.other,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        WeightVector {
            ls: self.ls * factor,
            ds: self.ds * factor,
            unknown: self.unknown * factor,
            not_person: self.not_person * factor,
        }
    }
}

/// Per-group weights of the group-normalized total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAlphas {
    pub ls: f64,
    pub ds: f64,
    pub other: f64,
}

impl GroupAlphas {
    pub const UNIT: GroupAlphas = GroupAlphas {
        ls: 1.0,
        ds: 1.0,
        other: 1.0,
    };

    /// The sweep convention: `alpha_ls` and `alpha_other` stay at 1 while
    /// `alpha_ds` varies.
    pub fn with_ds(alpha_ds: f64) -> Self {
        GroupAlphas {
            ls: 1.0,
            ds: alpha_ds,
            other: 1.0,
        }
    }
}

/// One anchor-level training sample: its model input, ground-truth class,
/// regression target (present exactly for positive anchors), group
/// attribute, and the scene geometry the sample was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSample {
    pub features: Vec<f64>,
    /// Index of the true class; 0 is background.
    pub true_class: usize,
    /// Regression target, present iff the anchor is positive.
    pub target_offsets: Option<BoxOffsets>,
    pub attribute: GroupLabel,
    pub anchor: BBox,
    /// Ground-truth box behind `target_offsets`, for box-level evaluation.
    pub gt_box: Option<BBox>,
    pub image_id: String,
}

impl AnchorSample {
    /// The regression gate: only positive anchors contribute to the
    /// regression term.
    pub fn is_positive(&self) -> bool {
        self.target_offsets.is_some()
    }

    /// One-hot class vector over `num_classes` classes.
    pub fn one_hot(&self, num_classes: usize) -> Vec<f64> {
        let mut v = vec![0.0; num_classes];
        v[self.true_class] = 1.0;
        v
    }
}

/// A set of anchor samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyBatch {
    pub samples: Vec<AnchorSample>,
}

impl ToyBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count_attribute(&self, attribute: GroupLabel) -> usize {
        self.samples
            .iter()
            .filter(|s| s.attribute == attribute)
            .count()
    }
}

/// Linear stand-in for a detection head: a softmax classifier and an
/// offset regressor over the same anchor features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    num_classes: usize,
    feature_dim: usize,
    /// `num_classes x feature_dim`, row-major.
    class_weights: Vec<f64>,
    /// `4 x feature_dim`, row-major; rows are (tx, ty, tw, th).
    reg_weights: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        ToyModel {
            num_classes,
            feature_dim,
            class_weights: vec![0.0; num_classes * feature_dim],
            reg_weights: vec![0.0; 4 * feature_dim],
        }
    }

    /// Small random initialization, deterministic in the seed.
    pub fn init_random(seed: u64, num_classes: usize, feature_dim: usize, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = ToyModel::zeros(num_classes, feature_dim);
        for w in model
            .class_weights
            .iter_mut()
            .chain(model.reg_weights.iter_mut())
        {
            *w = rng.gen_range(-scale..scale);
        }
        model
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Classification weight matrix, row-major `num_classes x feature_dim`.
    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    /// Regression weight matrix, row-major `4 x feature_dim`.
    pub fn reg_weights(&self) -> &[f64] {
        &self.reg_weights
    }

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let row = &self.class_weights[c * self.feature_dim..(c + 1) * self.feature_dim];
                row.iter().zip(features).map(|(w, x)| w * x).sum()
            })
            .collect()
    }

    /// Softmax over the class logits, max-shifted for stability.
    pub fn class_probabilities(&self, features: &[f64]) -> Vec<f64> {
        let logits = self.logits(features);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn predict_offsets(&self, features: &[f64]) -> BoxOffsets {
        let mut t = [0.0f64; 4];
        for (c, out) in t.iter_mut().enumerate() {
            let row = &self.reg_weights[c * self.feature_dim..(c + 1) * self.feature_dim];
            *out = row.iter().zip(features).map(|(w, x)| w * x).sum();
        }
        BoxOffsets {
            tx: t[0],
            ty: t[1],
            tw: t[2],
            th: t[3],
        }
    }

    /// Flattened parameters: classification weights, then regression
    /// weights.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.class_weights.clone();
        p.extend_from_slice(&self.reg_weights);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.class_weights.len() + self.reg_weights.len();
        if params.len() != expected {
            return Err(Error::validation(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        let (cls, reg) = params.split_at(self.class_weights.len());
        self.class_weights.copy_from_slice(cls);
        self.reg_weights.copy_from_slice(reg);
        Ok(())
    }
}

/// Gradient of the loss with respect to every [`ToyModel`] parameter,
/// mirroring the model's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub class_weights: Vec<f64>,
    pub reg_weights: Vec<f64>,
}

impl LossGradient {
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.class_weights.clone();
        p.extend_from_slice(&self.reg_weights);
        p
    }

    pub fn norm(&self) -> f64 {
        self.params().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Classification log loss `-sum_k p*_k ln(p_k)` for a probability
/// vector and a one-hot target. Zero probability at the true class is
/// clamped to [`PROBABILITY_EPSILON`] with a warning.
pub fn log_loss(p: &[f64], p_star: &[f64]) -> Result<f64> {
    if p.len() != p_star.len() || p.is_empty() {
        return Err(Error::validation(format!(
            "probability and target vectors must have equal non-zero length, got {} and {}",
            p.len(),
            p_star.len()
        )));
    }
    if p.iter().any(|v| !(0.0..=1.0 + 1e-9).contains(v)) {
        return Err(Error::validation(format!(
            "probabilities must lie in [0, 1], got {p:?}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "probabilities must sum to 1 within 1e-9, got {sum}"
        )));
    }
    let ones = p_star.iter().filter(|v| **v == 1.0).count();
    if ones != 1 || p_star.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::validation(format!(
            "target must be one-hot, got {p_star:?}"
        )));
    }
    let class = p_star.iter().position(|v| *v == 1.0).unwrap();
    if p[class] < PROBABILITY_EPSILON {
        log::warn!(
            "probability {} at the true class clamped to {PROBABILITY_EPSILON}",
            p[class]
        );
    }
    Ok(-p[class].max(PROBABILITY_EPSILON).ln())
}

// Per-sample inner form used by the batch losses; the caller guarantees a
// valid class index and softmax output.
fn class_log_loss(p: &[f64], class: usize) -> f64 {
    -p[class].max(PROBABILITY_EPSILON).ln()
}

/// Smooth L1: `0.5 x^2` for `|x| < 1`, `|x| - 0.5` otherwise. Continuous
/// at `|x| = 1` where both branches give 0.5.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Derivative of [`smooth_l1`]: `x` inside the unit interval, `sign(x)`
/// outside; the one-sided limits agree at `|x| = 1`.
pub fn smooth_l1_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Regression loss: smooth L1 summed over the four offset components.
pub fn reg_loss(t: &BoxOffsets, t_star: &BoxOffsets) -> f64 {
    t.components()
        .iter()
        .zip(t_star.components())
        .map(|(a, b)| smooth_l1(a - b))
        .sum()
}

fn validate_batch(batch: &ToyBatch, model: &ToyModel, config: &LossConfig) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::validation("loss of an empty batch is undefined"));
    }
    if model.num_classes != config.num_classes {
        return Err(Error::validation(format!(
            "model has {} classes but config expects {}",
            model.num_classes, config.num_classes
        )));
    }
    for (i, sample) in batch.samples.iter().enumerate() {
        if sample.features.len() != model.feature_dim {
            return Err(Error::validation(format!(
                "sample {i} has {} features, model expects {}",
                sample.features.len(),
                model.feature_dim
            )));
        }
        if sample.true_class >= config.num_classes {
            return Err(Error::validation(format!(
                "sample {i} has class {} outside 0..{}",
                sample.true_class, config.num_classes
            )));
        }
    }
    Ok(())
}

/// Unweighted detection-head loss:
/// `(1/n_cls) * sum_i L_cls + (lambda/n_reg) * sum_i p*_i * L_reg`,
/// with the regression sum running over positive anchors only.
pub fn detection_loss(batch: &ToyBatch, model: &ToyModel, config: &LossConfig) -> Result<f64> {
    validate_batch(batch, model, config)?;
    let mut cls_sum = 0.0;
    let mut reg_sum = 0.0;
    for sample in &batch.samples {
        let p = model.class_probabilities(&sample.features);
        cls_sum += class_log_loss(&p, sample.true_class);
        if let Some(target) = &sample.target_offsets {
            let predicted = model.predict_offsets(&sample.features);
            reg_sum += reg_loss(&predicted, target);
        }
    }
    Ok(cls_sum / config.n_cls + config.lambda * reg_sum / config.n_reg)
}

/// Augmented loss: each anchor's classification and regression terms are
/// scaled by the weight of its group attribute before the normalized sums.
/// With unit weights this equals [`detection_loss`].
pub fn weighted_detection_loss(
    batch: &ToyBatch,
    model: &ToyModel,
    config: &LossConfig,
    weights: &WeightVector,
) -> Result<f64> {
    validate_batch(batch, model, config)?;
    let mut cls_sum = 0.0;
    let mut reg_sum = 0.0;
    for sample in &batch.samples {
        let w = weights.get(sample.attribute);
        let p = model.class_probabilities(&sample.features);
        cls_sum += w * class_log_loss(&p, sample.true_class);
        if let Some(target) = &sample.target_offsets {
            let predicted = model.predict_offsets(&sample.features);
            reg_sum += w * reg_loss(&predicted, target);
        }
    }
    Ok(cls_sum / config.n_cls + config.lambda * reg_sum / config.n_reg)
}

/// Group-normalized total loss: `sum_g (alpha_g / N_g) * sum of that
/// group's per-instance losses`; absent (empty) groups contribute zero.
pub fn group_total_loss(
    losses_ls: &[f64],
    losses_ds: &[f64],
    losses_other: &[f64],
    alphas: &GroupAlphas,
) -> f64 {
    let term = |losses: &[f64], alpha: f64| {
        if losses.is_empty() {
            0.0
        } else {
            alpha / losses.len() as f64 * losses.iter().sum::<f64>()
        }
    };
    term(losses_ls, alphas.ls) + term(losses_ds, alphas.ds) + term(losses_other, alphas.other)
}

/// Analytic gradient of [`weighted_detection_loss`] with respect to every
/// model parameter. The smooth-L1 derivative at `|x| = 1` uses `sign(x)`,
/// the shared one-sided limit.
pub fn loss_gradient(
    batch: &ToyBatch,
    model: &ToyModel,
    config: &LossConfig,
    weights: &WeightVector,
) -> Result<LossGradient> {
    validate_batch(batch, model, config)?;
    let d = model.feature_dim;
    let mut grad_cls = vec![0.0; model.class_weights.len()];
    let mut grad_reg = vec![0.0; model.reg_weights.len()];
    for sample in &batch.samples {
        let w = weights.get(sample.attribute);
        if w == 0.0 {
            continue;
        }
        let p = model.class_probabilities(&sample.features);
        // d(-ln p_c)/d logit_j = p_j - [j == c], scaled by w / n_cls.
        let cls_scale = w / config.n_cls;
        for (j, &pj) in p.iter().enumerate() {
            let delta = pj - if j == sample.true_class { 1.0 } else { 0.0 };
            let coeff = cls_scale * delta;
            for (a, &x) in sample.features.iter().enumerate() {
                grad_cls[j * d + a] += coeff * x;
            }
        }
        if let Some(target) = &sample.target_offsets {
            let predicted = model.predict_offsets(&sample.features);
            let reg_scale = config.lambda * w / config.n_reg;
            for (c, (pred, tgt)) in predicted
                .components()
                .iter()
                .zip(target.components())
                .enumerate()
            {
                let coeff = reg_scale * smooth_l1_grad(pred - tgt);
                for (a, &x) in sample.features.iter().enumerate() {
                    grad_reg[c * d + a] += coeff * x;
                }
            }
        }
    }
    Ok(LossGradient {
        class_weights: grad_cls,
        reg_weights: grad_reg,
    })
}
