//! Plain gradient-descent trainer for the weighted detection-head loss,
//! per-group held-out trajectories, and the alpha sweep harness.

use serde::{Deserialize, Serialize};

use crate::dataset::GroupLabel;
use crate::error::{Error, Result};
use crate::eval::{group_evaluate, APReport, EvalConfig, GroupEvalConfig};
use crate::stats::{aggregate_runs, RunAggregate};

use super::synthetic::{generate_synthetic, toy_dataset, toy_detections};
use super::{
    class_log_loss, loss_gradient, validate_batch, LossConfig, SyntheticConfig, ToyBatch, ToyModel,
    WeightVector,
};

/// Alpha values swept by default.
pub const DEFAULT_SWEEP_ALPHAS: [f64; 5] = [1.0, 2.0, 3.0, 5.0, 10.0];

const INIT_SCALE: f64 = 0.1;

/// Fixed-step gradient-descent settings. `seed` drives the model
/// initialization; `record_every` controls trajectory density and
/// `record_ap` additionally evaluates held-out AP50 at each recorded
/// point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub record_every: usize,
    pub record_ap: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 0.2,
            iterations: 300,
            seed: 0,
            record_every: 10,
            record_ap: false,
        }
    }
}

impl TrainOptions {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::validation(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.record_every == 0 {
            return Err(Error::validation("record_every must be at least 1"));
        }
        Ok(())
    }
}

/// Held-out state after a given number of updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub ls_loss: f64,
    pub ds_loss: f64,
    pub ls_ap50: Option<f64>,
    pub ds_ap50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub model: ToyModel,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Mean per-anchor unweighted loss (`L_cls + lambda * L_reg`) of the LS and
/// DS anchors of a batch; both groups must be present.
pub fn group_mean_losses(
    batch: &ToyBatch,
    model: &ToyModel,
    config: &LossConfig,
) -> Result<(f64, f64)> {
    validate_batch(batch, model, config)?;
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for sample in &batch.samples {
        let slot = match sample.attribute {
            GroupLabel::Ls => 0,
            GroupLabel::Ds => 1,
            _ => continue,
        };
        let p = model.class_probabilities(&sample.features);
        let mut loss = class_log_loss(&p, sample.true_class);
        if let Some(target) = &sample.target_offsets {
            loss +=
                config.lambda * super::reg_loss(&model.predict_offsets(&sample.features), target);
        }
        sums[slot] += loss;
        counts[slot] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::validation(
            "per-group losses require at least one LS and one DS anchor",
        ));
    }
    Ok((sums[0] / counts[0] as f64, sums[1] / counts[1] as f64))
}

fn ap50_config() -> GroupEvalConfig {
    GroupEvalConfig {
        eval: EvalConfig::with_thresholds(vec![0.5]),
        ..GroupEvalConfig::default()
    }
}

/// Trains the toy model by fixed-step gradient descent on the weighted
/// detection loss, recording the per-group held-out loss along the way.
/// Deterministic given the seed and inputs; zero iterations returns the
/// initialization unchanged. Divergence (non-finite parameters) is
/// reported with the iteration it occurred at.
pub fn train(
    train_batch: &ToyBatch,
    holdout: &ToyBatch,
    config: &LossConfig,
    weights: &WeightVector,
    options: &TrainOptions,
) -> Result<TrainResult> {
    options.validate()?;
    let feature_dim = train_batch
        .samples
        .first()
        .ok_or_else(|| Error::validation("training batch is empty"))?
        .features
        .len();
    let mut model =
        ToyModel::init_random(options.seed, config.num_classes, feature_dim, INIT_SCALE);
    validate_batch(train_batch, &model, config)?;
    validate_batch(holdout, &model, config)?;

    let holdout_scenes = options.record_ap.then(|| toy_dataset(holdout));
    let record = |model: &ToyModel, iteration: usize| -> Result<TrajectoryPoint> {
        let (ls_loss, ds_loss) = group_mean_losses(holdout, model, config)?;
        if !ls_loss.is_finite() || !ds_loss.is_finite() {
            return Err(Error::numerical(format!(
                "held-out loss diverged at iteration {iteration}"
            )));
        }
        let (ls_ap50, ds_ap50) = match &holdout_scenes {
            Some(scenes) => {
                let dets = toy_detections(holdout, model);
                let config = ap50_config();
                let ls = group_evaluate(&dets, scenes, GroupLabel::Ls, &config)?;
                let ds = group_evaluate(&dets, scenes, GroupLabel::Ds, &config)?;
                (Some(ls.ap), Some(ds.ap))
            }
            None => (None, None),
        };
        Ok(TrajectoryPoint {
            iteration,
            ls_loss,
            ds_loss,
            ls_ap50,
            ds_ap50,
        })
    };

    let mut trajectory = vec![record(&model, 0)?];
    for iteration in 1..=options.iterations {
        let gradient = loss_gradient(train_batch, &model, config, weights)?;
        let mut params = model.params();
        for (p, g) in params.iter_mut().zip(gradient.params()) {
            *p -= options.learning_rate * g;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numerical(format!(
                "parameters diverged at iteration {iteration}"
            )));
        }
        model.set_params(&params)?;
        if iteration % options.record_every == 0 || iteration == options.iterations {
            trajectory.push(record(&model, iteration)?);
        }
    }
    Ok(TrainResult { model, trajectory })
}

/// Which weighting scheme the sweep trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightScheme {
    /// Per-anchor weights `(1, alpha_ds, 1, 1)` under the shared batch
    /// normalizers.
    Augmented,
    /// Per-group normalized weights `alpha_g * N / N_g`, reproducing the
    /// group-total form of the objective.
    GroupNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    pub synthetic: SyntheticConfig,
    pub learning_rate: f64,
    pub iterations: usize,
    pub lambda: f64,
    pub scheme: WeightScheme,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: DEFAULT_SWEEP_ALPHAS.to_vec(),
            repeats: 10,
            base_seed: 0,
            synthetic: SyntheticConfig::default(),
            learning_rate: 0.2,
            iterations: 300,
            lambda: 1.0,
            scheme: WeightScheme::Augmented,
        }
    }
}

/// One metric row of the sweep table: LS and DS aggregates over the
/// repeats and their gap (LS mean minus DS mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub alpha_ds: f64,
    pub metric: String,
    pub ls: RunAggregate,
    pub ds: RunAggregate,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn entry(&self, alpha_ds: f64, metric: &str) -> Option<&SweepEntry> {
        self.entries
            .iter()
            .find(|e| e.alpha_ds == alpha_ds && e.metric == metric)
    }
}

/// Seed for repeat `r`: repeats share seeds across alphas so comparisons
/// between alphas are paired.
pub(crate) fn run_seed(base: u64, repeat: usize) -> u64 {
    base.wrapping_add((repeat as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct RunMetrics {
    ls_loss: f64,
    ds_loss: f64,
    ls: APReport,
    ds: APReport,
}

fn sweep_run(alpha_ds: f64, config: &SweepConfig, seed: u64) -> Result<RunMetrics> {
    let (train_batch, holdout) = generate_synthetic(seed, &config.synthetic)?;
    let loss_config = LossConfig::new(
        config.lambda,
        train_batch.len() as f64,
        train_batch.len() as f64,
        config.synthetic.num_classes,
    )?;
    let weights = match config.scheme {
        WeightScheme::Augmented => WeightVector::new(1.0, alpha_ds, 1.0, 1.0)?,
        WeightScheme::GroupNormalized => {
            let n = train_batch.len() as f64;
            let n_ls = train_batch.count_attribute(GroupLabel::Ls) as f64;
            let n_ds = train_batch.count_attribute(GroupLabel::Ds) as f64;
            let n_other = n - n_ls - n_ds;
            WeightVector::new(n / n_ls, alpha_ds * n / n_ds, n / n_other, n / n_other)?
        }
    };
    let options = TrainOptions {
        learning_rate: config.learning_rate,
        iterations: config.iterations,
        seed,
        record_every: config.iterations.max(1),
        record_ap: false,
    };
    let result = train(&train_batch, &holdout, &loss_config, &weights, &options)?;
    let (ls_loss, ds_loss) = group_mean_losses(&holdout, &result.model, &loss_config)?;
    let scenes = toy_dataset(&holdout);
    let dets = toy_detections(&holdout, &result.model);
    let eval_config = GroupEvalConfig::default();
    let ls = group_evaluate(&dets, &scenes, GroupLabel::Ls, &eval_config)?;
    let ds = group_evaluate(&dets, &scenes, GroupLabel::Ds, &eval_config)?;
    Ok(RunMetrics {
        ls_loss,
        ds_loss,
        ls,
        ds,
    })
}

/// Runs the sweep: for each alpha, `repeats` seeded training runs, with
/// held-out loss and box-level AP aggregated into mean ± std per group.
pub fn alpha_sweep(config: &SweepConfig) -> Result<SweepReport> {
    if config.repeats < 1 {
        return Err(Error::validation("sweep requires at least one repeat"));
    }
    if config.alphas.is_empty() {
        return Err(Error::validation("sweep requires at least one alpha"));
    }
    let mut entries = Vec::new();
    for &alpha_ds in &config.alphas {
        let mut runs = Vec::with_capacity(config.repeats);
        for repeat in 0..config.repeats {
            runs.push(sweep_run(
                alpha_ds,
                config,
                run_seed(config.base_seed, repeat),
            )?);
        }
        let expect = "default thresholds include 0.50 and 0.75";
        let metrics: [(&str, Vec<f64>, Vec<f64>); 4] = [
            (
                "holdout_loss",
                runs.iter().map(|r| r.ls_loss).collect(),
                runs.iter().map(|r| r.ds_loss).collect(),
            ),
            (
                "ap",
                runs.iter().map(|r| r.ls.ap).collect(),
                runs.iter().map(|r| r.ds.ap).collect(),
            ),
            (
                "ap50",
                runs.iter().map(|r| r.ls.ap50.expect(expect)).collect(),
                runs.iter().map(|r| r.ds.ap50.expect(expect)).collect(),
            ),
            (
                "ap75",
                runs.iter().map(|r| r.ls.ap75.expect(expect)).collect(),
                runs.iter().map(|r| r.ds.ap75.expect(expect)).collect(),
            ),
        ];
        for (metric, ls_values, ds_values) in metrics {
            let ls = aggregate_runs(&ls_values)?;
            let ds = aggregate_runs(&ds_values)?;
            entries.push(SweepEntry {
                alpha_ds,
                metric: metric.to_string(),
                gap: ls.mean - ds.mean,
                ls,
                ds,
            });
        }
    }
    Ok(SweepReport { entries })
}
