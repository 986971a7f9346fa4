//! Layers with hand-written reverse-mode gradients.
//!
//! Training-mode forwards return an explicit cache instead of storing it on
//! the layer, so the same parameters can be run through several branches
//! and each branch backpropagated independently. Backward passes accumulate
//! into `Param::grad`.

use serde::{Deserialize, Serialize};

use super::{ComputeError, Matrix, Param, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Relu,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

impl Activation {
    fn slope(self) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => slope,
            Activation::Relu => 0.0,
        }
    }

    pub fn forward(self, x: &Matrix) -> Matrix {
        let s = self.slope();
        x.map(|v| if v > 0.0 { v } else { s * v })
    }

    /// Gradient through the activation given its input. At zero the
    /// negative-side slope is used.
    pub fn backward(self, x: &Matrix, dy: &Matrix) -> Matrix {
        let s = self.slope();
        let data = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&xv, &g)| if xv > 0.0 { g } else { s * g })
            .collect();
        Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
    }
}

/// Leaky-ReLU with the given negative slope.
pub fn leaky_relu(x: &Matrix, slope: f64) -> Matrix {
    Activation::LeakyRelu { slope }.forward(x)
}

pub fn leaky_relu_backward(x: &Matrix, slope: f64, dy: &Matrix) -> Matrix {
    Activation::LeakyRelu { slope }.backward(x, dy)
}

/// Fully connected layer `y = x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
}

impl Dense {
    /// He-style fan-in init, zero bias.
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        Self {
            w: Param::gaussian(format!("{name}.w"), fan_in, fan_out, std, rng),
            b: Param::zeros(format!("{name}.b"), 1, fan_out),
        }
    }

    pub fn zeros(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Param::zeros(format!("{name}.w"), fan_in, fan_out),
            b: Param::zeros(format!("{name}.b"), 1, fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, ComputeError> {
        if x.cols() != self.in_dim() {
            return Err(ComputeError::ShapeMismatch {
                op: "dense_forward",
                expected: (x.rows(), self.in_dim()),
                got: x.shape(),
            });
        }
        let mut y = x.matmul(&self.w.value)?;
        let b = self.b.value.data();
        for r in 0..y.rows() {
            for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(y)
    }

    /// Accumulates `dW = xᵀ·dy`, `db = Σ dy` and returns `dx = dy·Wᵀ`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Result<Matrix, ComputeError> {
        if dy.shape() != (x.rows(), self.out_dim()) {
            return Err(ComputeError::ShapeMismatch {
                op: "dense_backward",
                expected: (x.rows(), self.out_dim()),
                got: dy.shape(),
            });
        }
        x.matmul_tn_into(dy, &mut self.w.grad, true)?;
        self.b.grad.add_assign(&dy.col_sums())?;
        dy.matmul_nt(&self.w.value)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Matrix,
    inv_std: Vec<f64>,
}

/// Per-feature batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm {
    pub fn new(name: &str, features: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Matrix::filled(1, features, 1.0)),
            beta: Param::zeros(format!("{name}.beta"), 1, features),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    fn check(&self, x: &Matrix, op: &'static str) -> Result<(), ComputeError> {
        if x.cols() != self.features() {
            return Err(ComputeError::ShapeMismatch {
                op,
                expected: (x.rows(), self.features()),
                got: x.shape(),
            });
        }
        Ok(())
    }

    /// Normalizes by batch statistics and folds them into the running
    /// estimates (`running ← (1−momentum)·running + momentum·batch`).
    pub fn forward_train(&mut self, x: &Matrix) -> Result<(Matrix, BatchNormCache), ComputeError> {
        self.check(x, "batchnorm_forward")?;
        let n = x.rows();
        if n < 2 {
            return Err(ComputeError::BatchTooSmall(n));
        }
        let f = self.features();
        let mut mean = vec![0.0; f];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();

        let mut x_hat = Matrix::zeros(n, f);
        let mut y = Matrix::zeros(n, f);
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..n {
            let xr = x.row(r);
            let hr = x_hat.row_mut(r);
            for c in 0..f {
                hr[c] = (xr[c] - mean[c]) * inv_std[c];
            }
            let hr = x_hat.row(r).to_vec();
            for (c, out) in y.row_mut(r).iter_mut().enumerate() {
                *out = g[c] * hr[c] + b[c];
            }
        }

        let mom = self.momentum;
        for c in 0..f {
            self.running_mean[c] = (1.0 - mom) * self.running_mean[c] + mom * mean[c];
            self.running_var[c] = (1.0 - mom) * self.running_var[c] + mom * var[c];
        }
        Ok((y, BatchNormCache { x_hat, inv_std }))
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix, ComputeError> {
        self.check(x, "batchnorm_infer")?;
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        let scale: Vec<f64> = self
            .running_var
            .iter()
            .zip(g)
            .map(|(v, g)| g / (v + self.epsilon).sqrt())
            .collect();
        let mut y = x.clone();
        for r in 0..y.rows() {
            for (c, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.running_mean[c]) * scale[c] + b[c];
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix, ComputeError> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(y, _)| y),
            Mode::Infer => self.infer(x),
        }
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Matrix) -> Result<Matrix, ComputeError> {
        let (n, f) = cache.x_hat.shape();
        if dy.shape() != (n, f) {
            return Err(ComputeError::ShapeMismatch {
                op: "batchnorm_backward",
                expected: (n, f),
                got: dy.shape(),
            });
        }
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for r in 0..n {
            let (d, h) = (dy.row(r), cache.x_hat.row(r));
            for c in 0..f {
                sum_dy[c] += d[c];
                sum_dy_xhat[c] += d[c] * h[c];
            }
        }
        let g = self.gamma.value.data();
        let nf = n as f64;
        let mut dx = Matrix::zeros(n, f);
        for r in 0..n {
            let (d, h) = (dy.row(r), cache.x_hat.row(r));
            let out = dx.row_mut(r);
            for c in 0..f {
                out[c] = g[c] * cache.inv_std[c] / nf * (nf * d[c] - sum_dy[c] - h[c] * sum_dy_xhat[c]);
            }
        }
        for (gg, s) in self.gamma.grad.data_mut().iter_mut().zip(&sum_dy_xhat) {
            *gg += s;
        }
        for (bg, s) in self.beta.grad.data_mut().iter_mut().zip(&sum_dy) {
            *bg += s;
        }
        Ok(dx)
    }
}

/// Inverted dropout. Returns the output and, in training mode with a
/// nonzero rate, the per-entry scale mask used by [`dropout_backward`].
pub fn dropout(x: &Matrix, rate: f64, rng: &mut RngStream, mode: Mode) -> (Matrix, Option<Matrix>) {
    if mode == Mode::Infer || rate <= 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask_data: Vec<f64> = (0..x.len())
        .map(|_| if rng.uniform() < keep { scale } else { 0.0 })
        .collect();
    let mask = Matrix::from_vec(x.rows(), x.cols(), mask_data).expect("sized");
    let data = x.data().iter().zip(mask.data()).map(|(v, m)| v * m).collect();
    (Matrix::from_vec(x.rows(), x.cols(), data).expect("sized"), Some(mask))
}

pub fn dropout_backward(dy: &Matrix, mask: Option<&Matrix>) -> Matrix {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let data = dy.data().iter().zip(m.data()).map(|(g, s)| g * s).collect();
            Matrix::from_vec(dy.rows(), dy.cols(), data).expect("same shape")
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResidualCache {
    x: Matrix,
    bn1: BatchNormCache,
    pre1: Matrix,
    mask1: Option<Matrix>,
    a1: Matrix,
    bn2: BatchNormCache,
    pre2: Matrix,
    mask2: Option<Matrix>,
}

/// Two (dense → batchnorm → activation → dropout) stages with a skip
/// connection around the pair. Each dropout draws its own mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub dense1: Dense,
    pub bn1: BatchNorm,
    pub dense2: Dense,
    pub bn2: BatchNorm,
    pub activation: Activation,
    pub dropout: f64,
}

impl ResidualBlock {
    pub fn new(name: &str, width: usize, activation: Activation, dropout: f64, rng: &mut RngStream) -> Self {
        Self {
            dense1: Dense::new(&format!("{name}.dense1"), width, width, rng),
            bn1: BatchNorm::new(&format!("{name}.bn1"), width),
            dense2: Dense::new(&format!("{name}.dense2"), width, width, rng),
            bn2: BatchNorm::new(&format!("{name}.bn2"), width),
            activation,
            dropout,
        }
    }

    pub fn width(&self) -> usize {
        self.dense1.in_dim()
    }

    pub fn forward_train(&mut self, x: &Matrix, rng: &mut RngStream) -> Result<(Matrix, ResidualCache), ComputeError> {
        let z1 = self.dense1.forward(x)?;
        let (pre1, bn1) = self.bn1.forward_train(&z1)?;
        let act1 = self.activation.forward(&pre1);
        let (a1, mask1) = dropout(&act1, self.dropout, rng, Mode::Train);
        let z2 = self.dense2.forward(&a1)?;
        let (pre2, bn2) = self.bn2.forward_train(&z2)?;
        let act2 = self.activation.forward(&pre2);
        let (mut y, mask2) = dropout(&act2, self.dropout, rng, Mode::Train);
        y.add_assign(x)?;
        let cache = ResidualCache {
            x: x.clone(),
            bn1,
            pre1,
            mask1,
            a1,
            bn2,
            pre2,
            mask2,
        };
        Ok((y, cache))
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix, ComputeError> {
        let z1 = self.bn1.infer(&self.dense1.forward(x)?)?;
        let a1 = self.activation.forward(&z1);
        let z2 = self.bn2.infer(&self.dense2.forward(&a1)?)?;
        let mut y = self.activation.forward(&z2);
        y.add_assign(x)?;
        Ok(y)
    }

    pub fn backward(&mut self, cache: &ResidualCache, dy: &Matrix) -> Result<Matrix, ComputeError> {
        let d = dropout_backward(dy, cache.mask2.as_ref());
        let d = self.activation.backward(&cache.pre2, &d);
        let d = self.bn2.backward(&cache.bn2, &d)?;
        let d = self.dense2.backward(&cache.a1, &d)?;
        let d = dropout_backward(&d, cache.mask1.as_ref());
        let d = self.activation.backward(&cache.pre1, &d);
        let d = self.bn1.backward(&cache.bn1, &d)?;
        let mut dx = self.dense1.backward(&cache.x, &d)?;
        dx.add_assign(dy)?;
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![
            &self.dense1.w,
            &self.dense1.b,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.dense2.w,
            &self.dense2.b,
            &self.bn2.gamma,
            &self.bn2.beta,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.dense1.w,
            &mut self.dense1.b,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.dense2.w,
            &mut self.dense2.b,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ]
    }
}
