//! Full-batch training: every step is one forward/backward/Adam update on
//! the whole training split followed by one eval-mode pass over the whole
//! validation split, whose loss drives the plateau scheduler and the early
//! stopper.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MachineParameters, PowerProfile, Sample, SplitIndices, StandardizedParams, Standardization};
use crate::error::{Error, Result};
use crate::mlp::{
    loss_and_grad, loss_mse, Activation, AdamConfig, AdamState, BatchWorkspace, Dims, DropoutConfig, EarlyStopper, LossConfig,
    LossKind, MlpModel, PlateauScheduler, Reduction, StopDecision,
};
use crate::rng;

/// Which loss feeds the scheduler and the early stopper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Plain squared error, whatever the training objective.
    #[default]
    Mse,
    /// The training objective itself (including any anti-mean penalty).
    Objective,
}

/// Above this penalty factor models were seen to generalize worse.
pub const ALPHA_WARN_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub hidden: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub scheduler_min_delta: f64,
    pub min_lr: f64,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub loss: LossKind,
    pub alpha: f64,
    /// Hard upper bound on `alpha`; values above [`ALPHA_WARN_THRESHOLD`]
    /// only warn.
    pub alpha_ceiling: f64,
    pub reduction: Reduction,
    pub monitor: Monitor,
    pub max_steps: usize,
    pub standardize: bool,
    pub split_fractions: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            hidden: 294,
            activation: Activation::Relu,
            dropout: 0.45,
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            scheduler_factor: 0.05,
            scheduler_patience: 238,
            scheduler_min_delta: 0.0,
            min_lr: 0.0,
            early_stop_patience: 1225,
            early_stop_min_delta: 0.0,
            loss: LossKind::Mse,
            alpha: 0.0,
            alpha_ceiling: 1.0,
            reduction: Reduction::MeanPerElement,
            monitor: Monitor::Mse,
            max_steps: 50_000,
            standardize: true,
            split_fractions: [0.8, 0.1, 0.1],
        }
    }
}

impl TrainConfig {
    /// Checks ranges. Returns human-readable warnings for accepted but
    /// questionable settings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 {
            return bad("hidden must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        for (name, v) in [("lr", self.lr), ("eps", self.eps), ("scheduler_factor", self.scheduler_factor)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.scheduler_factor >= 1.0 {
            return bad(format!("scheduler_factor must be below 1, got {}", self.scheduler_factor));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        for (name, v) in [
            ("min_lr", self.min_lr),
            ("scheduler_min_delta", self.scheduler_min_delta),
            ("early_stop_min_delta", self.early_stop_min_delta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.early_stop_patience == 0 || self.max_steps == 0 {
            return bad("early_stop_patience and max_steps must be at least 1".into());
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.alpha > self.alpha_ceiling {
            return bad(format!("alpha {} exceeds the configured ceiling {}", self.alpha, self.alpha_ceiling));
        }
        crate::data::check_fractions(self.split_fractions).map_err(|e| Error::Config(e.to_string()))?;
        let mut warnings = Vec::new();
        if self.alpha > ALPHA_WARN_THRESHOLD {
            warnings.push(format!(
                "alpha = {} is above {ALPHA_WARN_THRESHOLD}; anti-mean penalties that large gave worse test error",
                self.alpha
            ));
        }
        if self.alpha > 0.0 && self.loss == LossKind::Mse {
            warnings.push("alpha is ignored because loss = \"mse\"".into());
        }
        Ok(warnings)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate used at each step.
    pub lr: Vec<f64>,
    pub steps: usize,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub threads: usize,
    /// Wall-clock time. Not serialized, so saved reports of identical runs
    /// are byte-identical; the CLI records it in the run manifest.
    #[serde(skip)]
    pub duration_s: f64,
}

impl TrainReport {
    /// Equality on everything except wall-clock time.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        Self { duration_s: 0.0, ..self.clone() } == Self { duration_s: 0.0, ..other.clone() }
    }
}

/// A trained network plus everything needed to use it on raw readings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub mlp: MlpModel,
    pub standardization: Option<Standardization>,
    /// Mean training label; the anti-mean target and the mean baseline.
    pub label_mean: Vec<f64>,
    pub time_bin_fs: f64,
    pub dropout_p: f64,
    pub split_seed: u64,
    pub split_fractions: [f64; 3],
}

impl TrainedModel {
    pub fn dims(&self) -> Dims {
        self.mlp.dims()
    }

    pub fn standardize(&self, params: &MachineParameters) -> Result<StandardizedParams> {
        let d_in = self.dims().d_in;
        if params.len() != d_in {
            return Err(Error::shape("machine parameters", d_in, params.len()));
        }
        match &self.standardization {
            Some(s) => s.apply(params),
            None => Ok(StandardizedParams::identity(params)),
        }
    }

    /// Standardized design matrix for a list of shots.
    pub fn design_matrix<'a, I>(&self, params: I) -> Result<Array2<f64>>
    where
        I: IntoIterator<Item = &'a MachineParameters>,
    {
        let rows = params
            .into_iter()
            .map(|p| self.standardize(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(rows_to_matrix(rows.iter().map(|r| r.values()), self.dims().d_in))
    }
}

pub(crate) fn rows_to_matrix<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let n = flat.len() / width.max(1);
    Array2::from_shape_vec((n, width), flat).expect("rows share one width")
}

/// Element-wise mean of the training labels.
pub fn label_mean(samples: &[&Sample]) -> Result<PowerProfile> {
    let first = samples.first().ok_or(Error::Empty("training samples"))?;
    let d = first.profile.len();
    let mut mean = vec![0.0; d];
    for s in samples {
        if s.profile.len() != d {
            return Err(Error::shape("label_mean", d, s.profile.len()));
        }
        for (m, v) in mean.iter_mut().zip(&s.profile.power) {
            *m += v;
        }
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(PowerProfile::new(mean, first.profile.time_bin_fs))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: TrainedModel,
    pub report: TrainReport,
}

/// Trains from scratch and returns the minimum-validation-loss snapshot.
///
/// Inputs are z-scored with `dataset.standardization` when present,
/// otherwise with statistics fitted on the training split when
/// `cfg.standardize` is set.
pub fn train(dataset: &Dataset, split: &SplitIndices, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = dataset.len();
    if split.train.iter().chain(&split.val).chain(&split.test).any(|&i| i >= n) {
        return Err(Error::InvalidArgument("split index out of range for dataset".into()));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be nonempty".into()));
    }
    let started = Instant::now();
    let train_samples = dataset.select(&split.train);
    let val_samples = dataset.select(&split.val);

    let standardization = match (&dataset.standardization, cfg.standardize) {
        (Some(s), _) => Some(s.clone()),
        (None, true) => Some(Standardization::fit(train_samples.iter().map(|s| &s.params), dataset.param_names())?),
        (None, false) => None,
    };
    let mean = label_mean(&train_samples)?;
    let dims = Dims::new(dataset.d_in(), cfg.hidden, dataset.d_out());

    let mut trained = TrainedModel {
        mlp: MlpModel::init(dims, cfg.activation, cfg.seed),
        standardization,
        label_mean: mean.power.clone(),
        time_bin_fs: dataset.time_bin_fs(),
        dropout_p: cfg.dropout,
        split_seed: split.seed,
        split_fractions: cfg.split_fractions,
    };
    let x_train = trained.design_matrix(train_samples.iter().map(|s| &s.params))?;
    let y_train = rows_to_matrix(train_samples.iter().map(|s| s.profile.power.as_slice()), dims.d_out);
    let x_val = trained.design_matrix(val_samples.iter().map(|s| &s.params))?;
    let y_val = rows_to_matrix(val_samples.iter().map(|s| s.profile.power.as_slice()), dims.d_out);

    let loss_cfg = LossConfig {
        kind: cfg.loss,
        alpha: cfg.alpha,
        y_hat: Some(mean.power),
        reduction: cfg.reduction,
    };
    let dropout = DropoutConfig::train(cfg.dropout);
    let mut dropout_rng = rng::stream(cfg.seed, rng::tag::DROPOUT, 0);
    let mut adam = AdamState::new(&trained.mlp, cfg.adam());
    let mut scheduler = PlateauScheduler::new(cfg.scheduler_factor, cfg.scheduler_patience, cfg.scheduler_min_delta, cfg.min_lr);
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience, cfg.early_stop_min_delta);

    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        lr: Vec::new(),
        steps: 0,
        best_step: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        threads: 1,
        duration_s: 0.0,
    };

    let model = &mut trained.mlp;
    let mut ws = BatchWorkspace::new(model, x_train.nrows());
    let mut val_hidden = Array2::zeros((x_val.nrows(), dims.hidden));
    let mut val_pred = Array2::zeros((x_val.nrows(), dims.d_out));
    for step in 1..=cfg.max_steps {
        let train_loss = model.train_step(x_train.view(), y_train.view(), &dropout, &loss_cfg, &mut dropout_rng, &mut ws)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { step, what: "training loss" });
        }
        report.lr.push(adam.lr);
        adam.step(model, &ws.grads);

        model.predict_batch_into(x_val.view(), &mut val_hidden, &mut val_pred)?;
        let val_loss = match cfg.monitor {
            Monitor::Mse => loss_mse(val_pred.view(), y_val.view(), cfg.reduction)?,
            Monitor::Objective => loss_and_grad(val_pred.view(), y_val.view(), &loss_cfg)?.0,
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged { step, what: "validation loss" });
        }
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.steps = step;

        adam.lr = scheduler.step(val_loss, adam.lr);
        if stopper.check(step, val_loss, model) == StopDecision::Stop {
            report.stopped_early = true;
            break;
        }
    }
    report.best_step = stopper.best_step;
    report.best_val_loss = stopper.best;
    trained.mlp = stopper.into_best().ok_or(Error::Diverged { step: 0, what: "validation loss" })?;
    report.duration_s = started.elapsed().as_secs_f64();
    Ok(TrainOutput { model: trained, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_dataset;

    fn sample(i: u64, x: Vec<f64>, y: Vec<f64>) -> Sample {
        Sample { params: MachineParameters::new(x).unwrap(), profile: PowerProfile::new(y, 1.0), shot_index: i }
    }

    fn toy_dataset(n: usize) -> Dataset {
        let samples = (0..n as u64)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                let b = (i as f64 * 0.11).cos();
                sample(i, vec![a, b, a * b], vec![a + b, a - b, 2.0 * a, 0.5])
            })
            .collect();
        Dataset::new(vec!["a".into(), "b".into(), "c".into()], samples, 1.0).unwrap()
    }

    #[test]
    fn label_mean_examples() {
        let one = sample(0, vec![0.0], vec![3.0, 4.0]);
        assert_eq!(label_mean(&[&one]).unwrap().power, vec![3.0, 4.0]);
        let a = sample(0, vec![0.0], vec![0.0, 2.0]);
        let b = sample(1, vec![0.0], vec![2.0, 0.0]);
        assert_eq!(label_mean(&[&a, &b]).unwrap().power, vec![1.0, 1.0]);
        assert!(label_mean(&[]).is_err());
    }

    #[test]
    fn centered_labels_have_zero_mean() {
        let ds = toy_dataset(37);
        let all: Vec<&Sample> = ds.samples().iter().collect();
        let m = label_mean(&all).unwrap();
        let centered: Vec<Sample> = ds
            .samples()
            .iter()
            .map(|s| sample(s.shot_index, vec![0.0], s.profile.power.iter().zip(&m.power).map(|(v, mu)| v - mu).collect()))
            .collect();
        let refs: Vec<&Sample> = centered.iter().collect();
        assert!(label_mean(&refs).unwrap().power.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn validation_rejects_bad_values_and_warns_on_alpha() {
        assert!(TrainConfig { hidden: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { alpha: 2.0, ..Default::default() }.validate().is_err());
        let w = TrainConfig { alpha: 0.1, loss: LossKind::AntiMean, ..Default::default() }.validate().unwrap();
        assert_eq!(w.len(), 1);
        assert!(TrainConfig::default().validate().unwrap().is_empty());
    }

    #[test]
    fn returns_best_snapshot_and_is_deterministic() {
        let ds = toy_dataset(60);
        let split = split_dataset(ds.len(), [0.6, 0.2, 0.2], 3).unwrap();
        let cfg = TrainConfig { hidden: 16, max_steps: 300, early_stop_patience: 50, scheduler_patience: 20, ..Default::default() };
        let a = train(&ds, &split, &cfg).unwrap();
        let b = train(&ds, &split, &cfg).unwrap();
        assert!(a.report.same_trajectory(&b.report));
        assert_eq!(a.model, b.model);
        assert_eq!(a.report.train_loss.len(), a.report.steps);
        let best = a.report.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(best, a.report.best_val_loss);
        assert_eq!(a.report.val_loss[a.report.best_step - 1], best);
        // The snapshot reproduces the best validation loss.
        let val: Vec<&Sample> = ds.select(&split.val);
        let x = a.model.design_matrix(val.iter().map(|s| &s.params)).unwrap();
        let y = rows_to_matrix(val.iter().map(|s| s.profile.power.as_slice()), 4);
        let l = loss_mse(a.model.mlp.predict(x.view()).unwrap().view(), y.view(), Reduction::MeanPerElement).unwrap();
        assert_eq!(l, best);
    }

    #[test]
    fn lr_trace_is_non_increasing() {
        let ds = toy_dataset(60);
        let split = split_dataset(ds.len(), [0.6, 0.2, 0.2], 3).unwrap();
        let cfg = TrainConfig { hidden: 8, max_steps: 400, scheduler_patience: 5, early_stop_patience: 400, ..Default::default() };
        let out = train(&ds, &split, &cfg).unwrap();
        assert!(out.report.lr.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.report.lr.last().unwrap() < &cfg.lr);
    }

    #[test]
    fn divergence_names_the_step() {
        let samples = (0..20u64).map(|i| sample(i, vec![i as f64, (i * i) as f64], vec![1e300 * i as f64])).collect();
        let ds = Dataset::new(vec!["a".into(), "b".into()], samples, 1.0).unwrap();
        let split = split_dataset(ds.len(), [0.6, 0.2, 0.2], 1).unwrap();
        let cfg = TrainConfig { hidden: 4, max_steps: 50, ..Default::default() };
        assert!(matches!(train(&ds, &split, &cfg), Err(Error::Diverged { step: 1, .. })));
    }
}
