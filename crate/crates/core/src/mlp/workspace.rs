use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{fill_dropout_mask, loss_and_grad_into, DropoutConfig, DropoutMode, Gradients, LossConfig, MlpModel};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Buffers for repeated full-batch steps of one batch shape.
///
/// [`MlpModel::train_step`] reuses them, so a training loop allocates only
/// once. Results are bit-identical to [`MlpModel::forward`] followed by
/// [`loss_and_grad`](super::loss_and_grad) and [`MlpModel::backward`].
#[derive(Debug, Clone)]
pub struct BatchWorkspace {
    pre_activation: Array2<f64>,
    hidden: Array2<f64>,
    mask: Array2<f64>,
    out: Array2<f64>,
    grad_out: Array2<f64>,
    delta: Array2<f64>,
    pub grads: Gradients,
}

impl BatchWorkspace {
    pub fn new(model: &MlpModel, batch: usize) -> Self {
        let d = model.dims();
        Self {
            pre_activation: Array2::zeros((batch, d.hidden)),
            hidden: Array2::zeros((batch, d.hidden)),
            mask: Array2::zeros((batch, d.hidden)),
            out: Array2::zeros((batch, d.d_out)),
            grad_out: Array2::zeros((batch, d.d_out)),
            delta: Array2::zeros((batch, d.hidden)),
            grads: Gradients {
                w1: Array2::zeros((d.d_in, d.hidden)),
                b1: Array1::zeros(d.hidden),
                w2: Array2::zeros((d.hidden, d.d_out)),
                b2: Array1::zeros(d.d_out),
            },
        }
    }

    /// Output of the last forward pass.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.out.view()
    }
}

impl MlpModel {
    fn check_workspace(&self, x: &ArrayView2<f64>, ws: &BatchWorkspace) -> Result<()> {
        self.check_input(x)?;
        let d = self.dims();
        if ws.hidden.dim() != (x.nrows(), d.hidden) || ws.out.dim() != (x.nrows(), d.d_out) || ws.grads.w1.dim() != (d.d_in, d.hidden) {
            return Err(Error::shape(
                "batch workspace",
                format!("batch {} for {d:?}", x.nrows()),
                format!("hidden {:?}, out {:?}", ws.hidden.dim(), ws.out.dim()),
            ));
        }
        Ok(())
    }

    /// Forward pass into `ws`; the result is in [`BatchWorkspace::output`].
    pub fn forward_into(&self, x: ArrayView2<f64>, dropout: &DropoutConfig, rng: &mut Rng, ws: &mut BatchWorkspace) -> Result<()> {
        self.check_workspace(&x, ws)?;
        general_mat_mul(1.0, &x, &self.w1, 0.0, &mut ws.pre_activation);
        ws.pre_activation += &self.b1;
        let act = self.activation;
        let masked = dropout.mode == DropoutMode::Train && dropout.p > 0.0;
        if masked {
            if !(0.0..1.0).contains(&dropout.p) {
                return Err(Error::InvalidArgument(format!("dropout p must be in [0, 1), got {}", dropout.p)));
            }
            fill_dropout_mask(&mut ws.mask, dropout.p, rng);
            Zip::from(&mut ws.hidden)
                .and(&ws.pre_activation)
                .and(&ws.mask)
                .for_each(|h, &z, &m| *h = act.apply(z) * m);
        } else {
            ws.mask.fill(1.0);
            Zip::from(&mut ws.hidden).and(&ws.pre_activation).for_each(|h, &z| *h = act.apply(z));
        }
        general_mat_mul(1.0, &ws.hidden, &self.w2, 0.0, &mut ws.out);
        ws.out += &self.b2;
        Ok(())
    }

    /// One forward pass, loss and backward pass on a full batch. Returns the
    /// loss; gradients are left in `ws.grads`.
    pub fn train_step(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        dropout: &DropoutConfig,
        loss: &LossConfig,
        rng: &mut Rng,
        ws: &mut BatchWorkspace,
    ) -> Result<f64> {
        self.forward_into(x, dropout, rng, ws)?;
        let value = loss_and_grad_into(ws.out.view(), y, loss, &mut ws.grad_out)?;
        let g = &ws.grad_out;
        general_mat_mul(1.0, &ws.hidden.t(), g, 0.0, &mut ws.grads.w2);
        ws.grads.b2.assign(&g.sum_axis(Axis(0)));
        general_mat_mul(1.0, g, &self.w2.t(), 0.0, &mut ws.delta);
        let act = self.activation;
        Zip::from(&mut ws.delta)
            .and(&ws.mask)
            .and(&ws.pre_activation)
            .for_each(|d, &m, &z| *d = *d * m * act.derivative(z));
        general_mat_mul(1.0, &x.t(), &ws.delta, 0.0, &mut ws.grads.w1);
        ws.grads.b1.assign(&ws.delta.sum_axis(Axis(0)));
        Ok(value)
    }

    /// Eval-mode batch prediction into `out`, using `hidden` as scratch.
    pub fn predict_batch_into(&self, x: ArrayView2<f64>, hidden: &mut Array2<f64>, out: &mut Array2<f64>) -> Result<()> {
        self.check_input(&x)?;
        let d = self.dims();
        if hidden.dim() != (x.nrows(), d.hidden) || out.dim() != (x.nrows(), d.d_out) {
            return Err(Error::shape(
                "prediction buffers",
                format!("({0}, {1}), ({0}, {2})", x.nrows(), d.hidden, d.d_out),
                format!("{:?}, {:?}", hidden.dim(), out.dim()),
            ));
        }
        general_mat_mul(1.0, &x, &self.w1, 0.0, hidden);
        *hidden += &self.b1;
        let act = self.activation;
        hidden.mapv_inplace(|z| act.apply(z));
        general_mat_mul(1.0, &*hidden, &self.w2, 0.0, out);
        *out += &self.b2;
        Ok(())
    }
}
