//! Single-hidden-layer perceptron with hand-derived gradients.
//!
//! Batches are row-major `(batch, features)` matrices. Weights are stored in
//! input-major layout so a forward pass is `x · w + b`:
//! `w1` is `(d_in, hidden)` and `w2` is `(hidden, d_out)`, the transposes of
//! the usual `H×D_in` / `D_out×H` matrices.

mod loss;
mod optim;
mod workspace;

pub use loss::{loss_and_grad, loss_and_grad_into, loss_anti_mean, loss_mse, LossConfig, LossKind, Reduction};
pub use optim::{adam_update, AdamConfig, AdamState, EarlyStopper, PlateauScheduler, StopDecision};
pub use workspace::BatchWorkspace;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { d_in: 22, hidden: 294, d_out: 567 }
    }
}

impl Dims {
    pub fn new(d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self { d_in, hidden, d_out }
    }

    pub fn parameter_count(&self) -> usize {
        self.d_in * self.hidden + self.hidden + self.hidden * self.d_out + self.d_out
    }
}

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutConfig {
    pub p: f64,
    pub mode: DropoutMode,
}

impl DropoutConfig {
    pub fn train(p: f64) -> Self {
        Self { p, mode: DropoutMode::Train }
    }

    pub fn eval() -> Self {
        Self { p: 0.0, mode: DropoutMode::Eval }
    }
}

/// Samples an inverted-dropout mask: each entry is `0` with probability `p`
/// and `1 / (1 - p)` otherwise, drawn row-major.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Array2<f64> {
    let mut mask = Array2::zeros((rows, cols));
    fill_dropout_mask(&mut mask, p, rng);
    mask
}

/// [`dropout_mask`] into an existing buffer, with the same draw order.
pub fn fill_dropout_mask(mask: &mut Array2<f64>, p: f64, rng: &mut Rng) {
    let keep = 1.0 / (1.0 - p);
    mask.iter_mut().for_each(|m| *m = keep * f64::from(u8::from(rng::uniform_f64(rng) >= p)));
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub activation: Activation,
    generation: u64,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    hidden: Array2<f64>,
    mask: Option<Array2<f64>>,
    generation: u64,
}

impl ForwardCache {
    pub fn mask(&self) -> Option<&Array2<f64>> {
        self.mask.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }
}

impl MlpModel {
    pub fn zeros(dims: Dims, activation: Activation) -> Self {
        Self {
            w1: Array2::zeros((dims.d_in, dims.hidden)),
            b1: Array1::zeros(dims.hidden),
            w2: Array2::zeros((dims.hidden, dims.d_out)),
            b2: Array1::zeros(dims.d_out),
            activation,
            generation: 0,
        }
    }

    /// He-uniform weights, `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
    /// Drawn from `rng::stream(seed, tag::INIT, 0)`: all of `w1` row-major,
    /// then all of `w2`.
    pub fn init(dims: Dims, activation: Activation, seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::tag::INIT, 0);
        let draw = |fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            move |rng: &mut Rng| (2.0 * rng::uniform_f64(rng) - 1.0) * bound
        };
        let d1 = draw(dims.d_in);
        let w1 = Array2::from_shape_simple_fn((dims.d_in, dims.hidden), || d1(&mut rng));
        let d2 = draw(dims.hidden);
        let w2 = Array2::from_shape_simple_fn((dims.hidden, dims.d_out), || d2(&mut rng));
        Self {
            w1,
            b1: Array1::zeros(dims.hidden),
            w2,
            b2: Array1::zeros(dims.d_out),
            activation,
            generation: 0,
        }
    }

    /// Rebuilds a model from stored tensors, checking shapes and finiteness.
    pub fn from_parts(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let model = Self { w1, b1, w2, b2, activation, generation: 0 };
        let d = model.dims();
        if model.b1.len() != d.hidden || model.w2.nrows() != d.hidden || model.b2.len() != d.d_out {
            return Err(Error::shape(
                "model tensors",
                format!("{d:?}"),
                format!("b1 {}, w2 {:?}, b2 {}", model.b1.len(), model.w2.dim(), model.b2.len()),
            ));
        }
        if !model.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d_in: self.w1.nrows(),
            hidden: self.w1.ncols(),
            d_out: self.w2.ncols(),
        }
    }

    /// Bumped on every parameter update; caches from older generations are
    /// rejected by [`backward`](Self::backward).
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 4] {
        self.generation += 1;
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Mutable access to all parameters, for finite-difference probes and
    /// hand-built models. Invalidates outstanding caches.
    pub fn with_params_mut<R>(&mut self, f: impl FnOnce([&mut [f64]; 4]) -> R) -> R {
        f(self.params_mut())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        let d_in = self.dims().d_in;
        if x.ncols() != d_in {
            return Err(Error::shape("forward input width", d_in, x.ncols()));
        }
        Ok(())
    }

    /// Batch forward pass. In train mode a fresh dropout mask is drawn from
    /// `rng`; in eval mode `rng` is untouched and no scaling is applied.
    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        dropout: &DropoutConfig,
        rng: &mut Rng,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let mask = match dropout.mode {
            DropoutMode::Train if dropout.p > 0.0 => {
                if !(0.0..1.0).contains(&dropout.p) {
                    return Err(Error::InvalidArgument(format!("dropout p must be in [0, 1), got {}", dropout.p)));
                }
                Some(dropout_mask(x.nrows(), self.dims().hidden, dropout.p, rng))
            }
            _ => None,
        };
        self.forward_with_mask(x, mask)
    }

    /// Forward pass with an explicit (already scaled) hidden-layer mask.
    pub fn forward_with_mask(
        &self,
        x: ArrayView2<f64>,
        mask: Option<Array2<f64>>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let hidden_width = self.dims().hidden;
        if let Some(m) = &mask {
            if m.dim() != (x.nrows(), hidden_width) {
                return Err(Error::shape("dropout mask", format!("({}, {hidden_width})", x.nrows()), format!("{:?}", m.dim())));
            }
        }
        let pre_activation = x.dot(&self.w1) + &self.b1;
        let act = self.activation;
        let mut hidden = pre_activation.mapv(|z| act.apply(z));
        if let Some(m) = &mask {
            hidden *= m;
        }
        let out = hidden.dot(&self.w2) + &self.b2;
        let cache = ForwardCache {
            input: x.to_owned(),
            pre_activation,
            hidden,
            mask,
            generation: self.generation,
        };
        Ok((out, cache))
    }

    /// Eval-mode batch prediction.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let act = self.activation;
        let hidden = (x.dot(&self.w1) + &self.b1).mapv_into(|z| act.apply(z));
        Ok(hidden.dot(&self.w2) + &self.b2)
    }

    /// Eval-mode prediction of one input into caller-owned buffers.
    /// Does not allocate.
    pub fn predict_into(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) -> Result<()> {
        let d = self.dims();
        if x.len() != d.d_in || hidden.len() != d.hidden || out.len() != d.d_out {
            return Err(Error::shape(
                "predict_into buffers",
                format!("({}, {}, {})", d.d_in, d.hidden, d.d_out),
                format!("({}, {}, {})", x.len(), hidden.len(), out.len()),
            ));
        }
        hidden.copy_from_slice(self.b1.as_slice().expect("standard layout"));
        let w1 = self.w1.as_slice().expect("standard layout");
        for (xi, row) in x.iter().zip(w1.chunks_exact(d.hidden)) {
            axpy(*xi, row, hidden);
        }
        let act = self.activation;
        hidden.iter_mut().for_each(|h| *h = act.apply(*h));
        out.copy_from_slice(self.b2.as_slice().expect("standard layout"));
        let w2 = self.w2.as_slice().expect("standard layout");
        for (hj, row) in hidden.iter().zip(w2.chunks_exact(d.d_out)) {
            if *hj != 0.0 {
                axpy(*hj, row, out);
            }
        }
        Ok(())
    }

    /// Analytic gradients of the loss w.r.t. all parameters, given
    /// `grad_out = ∂L/∂output` for the batch in `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<Gradients> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache { cache: cache.generation, model: self.generation });
        }
        let d = self.dims();
        if grad_out.dim() != (cache.input.nrows(), d.d_out) {
            return Err(Error::shape(
                "backward grad_out",
                format!("({}, {})", cache.input.nrows(), d.d_out),
                format!("{:?}", grad_out.dim()),
            ));
        }
        // dot() may hand back column-major results for degenerate shapes
        let w2 = cache.hidden.t().dot(&grad_out).as_standard_layout().into_owned();
        let b2 = grad_out.sum_axis(Axis(0));
        let mut delta = grad_out.dot(&self.w2.t());
        if let Some(m) = &cache.mask {
            delta *= m;
        }
        let act = self.activation;
        Zip::from(&mut delta)
            .and(&cache.pre_activation)
            .for_each(|g, &z| *g *= act.derivative(z));
        let w1 = cache.input.t().dot(&delta).as_standard_layout().into_owned();
        let b1 = delta.sum_axis(Axis(0));
        Ok(Gradients { w1, b1, w2, b2 })
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
