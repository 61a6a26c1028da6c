use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    /// Squared error minus `alpha` times the squared distance to the
    /// training-label mean; discourages predicting the mean.
    AntiMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    #[default]
    MeanPerElement,
}

impl Reduction {
    fn divisor(self, elements: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::MeanPerElement => elements as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub alpha: f64,
    /// Training-label mean, one entry per output bin.
    pub y_hat: Option<Vec<f64>>,
    pub reduction: Reduction,
}

impl LossConfig {
    pub fn mse(reduction: Reduction) -> Self {
        Self { kind: LossKind::Mse, alpha: 0.0, y_hat: None, reduction }
    }

    pub fn anti_mean(alpha: f64, y_hat: Vec<f64>, reduction: Reduction) -> Self {
        Self { kind: LossKind::AntiMean, alpha, y_hat: Some(y_hat), reduction }
    }

    fn y_hat_for(&self, width: usize) -> Result<&[f64]> {
        let y_hat = self.y_hat.as_deref().ok_or(Error::Loss("anti-mean loss needs the label mean"))?;
        if y_hat.len() != width {
            return Err(Error::shape("label mean", width, y_hat.len()));
        }
        Ok(y_hat)
    }
}

fn check_shapes(pred: &ArrayView2<f64>, label: &ArrayView2<f64>) -> Result<()> {
    if pred.dim() != label.dim() {
        return Err(Error::shape("loss", format!("{:?}", label.dim()), format!("{:?}", pred.dim())));
    }
    Ok(())
}

fn squared_error_sum(pred: &ArrayView2<f64>, label: &ArrayView2<f64>) -> f64 {
    let mut s = 0.0;
    Zip::from(pred).and(label).for_each(|x, y| s += (x - y) * (x - y));
    s
}

fn mean_penalty_sum(pred: &ArrayView2<f64>, y_hat: &[f64]) -> f64 {
    pred.rows()
        .into_iter()
        .map(|row| row.iter().zip(y_hat).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum()
}

/// `Σ (x − y)²`, optionally divided by the element count.
pub fn loss_mse(pred: ArrayView2<f64>, label: ArrayView2<f64>, reduction: Reduction) -> Result<f64> {
    check_shapes(&pred, &label)?;
    Ok(squared_error_sum(&pred, &label) / reduction.divisor(pred.len()))
}

/// `Σ (x − y)² − α Σ (x − ŷ)²` with the same divisor on both terms.
pub fn loss_anti_mean(pred: ArrayView2<f64>, label: ArrayView2<f64>, cfg: &LossConfig) -> Result<f64> {
    check_shapes(&pred, &label)?;
    let y_hat = cfg.y_hat_for(pred.ncols())?;
    let mut total = squared_error_sum(&pred, &label);
    if cfg.alpha != 0.0 {
        total -= cfg.alpha * mean_penalty_sum(&pred, y_hat);
    }
    Ok(total / cfg.reduction.divisor(pred.len()))
}

/// Loss value and `∂L/∂pred` under `cfg`.
pub fn loss_and_grad(pred: ArrayView2<f64>, label: ArrayView2<f64>, cfg: &LossConfig) -> Result<(f64, Array2<f64>)> {
    let mut grad = Array2::zeros(pred.dim());
    let value = loss_and_grad_into(pred, label, cfg, &mut grad)?;
    Ok((value, grad))
}

/// [`loss_and_grad`] writing the gradient into a caller-owned buffer.
pub fn loss_and_grad_into(pred: ArrayView2<f64>, label: ArrayView2<f64>, cfg: &LossConfig, grad: &mut Array2<f64>) -> Result<f64> {
    check_shapes(&pred, &label)?;
    if grad.dim() != pred.dim() {
        return Err(Error::shape("loss gradient buffer", format!("{:?}", pred.dim()), format!("{:?}", grad.dim())));
    }
    let scale = 2.0 / cfg.reduction.divisor(pred.len());
    Zip::from(&mut *grad).and(&pred).and(&label).for_each(|g, x, y| *g = scale * (x - y));
    let value = match cfg.kind {
        LossKind::Mse => loss_mse(pred, label, cfg.reduction)?,
        LossKind::AntiMean => {
            let value = loss_anti_mean(pred, label, cfg)?;
            if cfg.alpha != 0.0 {
                let y_hat = cfg.y_hat_for(pred.ncols())?;
                for (mut g_row, x_row) in grad.rows_mut().into_iter().zip(pred.rows()) {
                    for ((g, x), m) in g_row.iter_mut().zip(x_row).zip(y_hat) {
                        *g -= scale * cfg.alpha * (x - m);
                    }
                }
            }
            value
        }
    };
    Ok(value)
}
