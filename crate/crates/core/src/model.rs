//! Encoder `f`, unit-column `3 × M` embedding, decoder `g`, and the
//! weight-shared siamese wrapper.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compute::{
    Activation, ComputeError, Dense, Matrix, Mode, Param, Parameterized, ResidualBlock, ResidualCache, RngStream,
};
use crate::data::{NormStats, PairBatch};
use crate::geometry::{Pose2D, Pose3D, Rotation3, NUM_JOINTS};
use crate::losses::{l2_pose_loss_grad, rotate_block, siamese_loss_grad, total_loss, LossBreakdown};

pub const INPUT_DIM: usize = 2 * NUM_JOINTS;
pub const OUTPUT_DIM: usize = 3 * NUM_JOINTS;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error("model has no normalization statistics attached")]
    StatsMissing,
}

/// Embedding size and normalization guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Number of 3-vectors.
    pub m: usize,
    pub norm_epsilon: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            m: 128,
            norm_epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the dense layers around and inside the residual blocks.
    pub hidden: usize,
    pub embedding: EmbeddingConfig,
    pub dropout: f64,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 1024,
            embedding: EmbeddingConfig::default(),
            dropout: 0.2,
            activation: Activation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden == 0 {
            return Err("model.hidden must be positive".into());
        }
        if self.embedding.m == 0 {
            return Err("model.embedding.m must be positive".into());
        }
        if !(self.embedding.norm_epsilon > 0.0) {
            return Err("model.embedding.norm_epsilon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("model.dropout must be in [0, 1)".into());
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !(slope > 0.0 && slope < 1.0) {
                return Err("leaky slope must be in (0, 1)".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EncodeCache {
    x: Matrix,
    z: Matrix,
    block: ResidualCache,
    y: Matrix,
    r: Matrix,
    /// Unit-column embedding.
    h: Matrix,
    /// Guarded column norms, `batch × M`.
    norms: Matrix,
}

#[derive(Debug, Clone)]
pub struct DecodeCache {
    h: Matrix,
    block: ResidualCache,
    c: Matrix,
}

/// One branch's forward results in training mode.
#[derive(Debug, Clone)]
pub struct BranchCache {
    pub enc: EncodeCache,
    pub dec: DecodeCache,
}

impl BranchCache {
    pub fn embedding(&self) -> &Matrix {
        &self.enc.h
    }
}

/// Embeddings and normalized predictions of both branches.
#[derive(Debug, Clone)]
pub struct SiameseOutput {
    pub h1: Matrix,
    pub h2: Matrix,
    pub pred1: Matrix,
    pub pred2: Matrix,
}

/// The lifting network. Both siamese branches run through this single
/// parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingModel {
    pub config: ModelConfig,
    pub enc_in: Dense,
    pub enc_block: ResidualBlock,
    pub enc_out: Dense,
    pub dec_in: Dense,
    pub dec_block: ResidualBlock,
    pub dec_out: Dense,
    pub stats: Option<NormStats>,
}

/// Scales each column to unit length as `r / √(‖r‖² + ε²)`. Squaring the
/// guard keeps unit norms exact to ~1e-16 for any column longer than ~1e-4.
fn normalize_columns(r: &Matrix, m: usize, eps: f64) -> (Matrix, Matrix) {
    let eps2 = eps * eps;
    let mut h = Matrix::zeros(r.rows(), r.cols());
    let mut norms = Matrix::zeros(r.rows(), m);
    for b in 0..r.rows() {
        let src = r.row(b);
        let dst = h.row_mut(b);
        let mut ns = vec![0.0; m];
        for j in 0..m {
            let (x, y, z) = (src[j], src[m + j], src[2 * m + j]);
            let n = (x * x + y * y + z * z + eps2).sqrt();
            dst[j] = x / n;
            dst[m + j] = y / n;
            dst[2 * m + j] = z / n;
            ns[j] = n;
        }
        norms.row_mut(b).copy_from_slice(&ns);
    }
    (h, norms)
}

/// Backward of `h = r / √(‖r‖² + ε²)` per column: `(dh − h·(h·dh)) / n`.
fn normalize_columns_backward(h: &Matrix, norms: &Matrix, dh: &Matrix, m: usize) -> Matrix {
    let mut dr = Matrix::zeros(h.rows(), h.cols());
    for b in 0..h.rows() {
        let (hv, g, n) = (h.row(b), dh.row(b), norms.row(b));
        let out = dr.row_mut(b);
        for j in 0..m {
            let idx = [j, m + j, 2 * m + j];
            let dot: f64 = idx.iter().map(|&i| hv[i] * g[i]).sum();
            for &i in &idx {
                out[i] = (g[i] - hv[i] * dot) / n[j];
            }
        }
    }
    dr
}

/// `R·h` for every sample of a `batch × 3M` embedding.
pub fn rotate_embedding(r: &Rotation3, h: &Matrix) -> Matrix {
    let m = h.cols() / 3;
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for b in 0..h.rows() {
        out.row_mut(b).copy_from_slice(&rotate_block(r, h.row(b), m));
    }
    out
}

/// Per-sample rotations of a `batch × 3M` embedding.
pub fn rotate_embedding_each(rots: &[Rotation3], h: &Matrix) -> Matrix {
    let m = h.cols() / 3;
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for (b, r) in rots.iter().enumerate() {
        out.row_mut(b).copy_from_slice(&rotate_block(r, h.row(b), m));
    }
    out
}

impl LiftingModel {
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Self {
        let (hd, m3) = (config.hidden, 3 * config.embedding.m);
        Self {
            enc_in: Dense::new("enc.in", INPUT_DIM, hd, rng),
            enc_block: ResidualBlock::new("enc.block", hd, config.activation, config.dropout, rng),
            enc_out: Dense::new("enc.out", hd, m3, rng),
            dec_in: Dense::new("dec.in", m3, hd, rng),
            dec_block: ResidualBlock::new("dec.block", hd, config.activation, config.dropout, rng),
            dec_out: Dense::new("dec.out", hd, OUTPUT_DIM, rng),
            config,
            stats: None,
        }
    }

    pub fn m(&self) -> usize {
        self.config.embedding.m
    }

    pub fn encode_train(&mut self, x: &Matrix, rng: &mut RngStream) -> Result<EncodeCache, ComputeError> {
        let z = self.enc_in.forward(x)?;
        let (y, block) = self.enc_block.forward_train(&z, rng)?;
        let r = self.enc_out.forward(&y)?;
        let (h, norms) = normalize_columns(&r, self.m(), self.config.embedding.norm_epsilon);
        Ok(EncodeCache {
            x: x.clone(),
            z,
            block,
            y,
            r,
            h,
            norms,
        })
    }

    /// Inference-mode encoder: running batch statistics, no dropout.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix, ComputeError> {
        let z = self.enc_in.forward(x)?;
        let y = self.enc_block.infer(&z)?;
        let r = self.enc_out.forward(&y)?;
        Ok(normalize_columns(&r, self.m(), self.config.embedding.norm_epsilon).0)
    }

    pub fn decode_train(&mut self, h: &Matrix, rng: &mut RngStream) -> Result<(Matrix, DecodeCache), ComputeError> {
        let a = self.dec_in.forward(h)?;
        let (c, block) = self.dec_block.forward_train(&a, rng)?;
        let y = self.dec_out.forward(&c)?;
        Ok((
            y,
            DecodeCache {
                h: h.clone(),
                block,
                c,
            },
        ))
    }

    pub fn decode(&self, h: &Matrix) -> Result<Matrix, ComputeError> {
        let a = self.dec_in.forward(h)?;
        let c = self.dec_block.infer(&a)?;
        self.dec_out.forward(&c)
    }

    /// Accumulates decoder gradients and returns `∂ℓ/∂h`.
    pub fn backward_decode(&mut self, cache: &DecodeCache, dy: &Matrix) -> Result<Matrix, ComputeError> {
        let dc = self.dec_out.backward(&cache.c, dy)?;
        let da = self.dec_block.backward(&cache.block, &dc)?;
        self.dec_in.backward(&cache.h, &da)
    }

    /// Accumulates encoder gradients and returns `∂ℓ/∂x`.
    pub fn backward_encode(&mut self, cache: &EncodeCache, dh: &Matrix) -> Result<Matrix, ComputeError> {
        let dr = normalize_columns_backward(&cache.h, &cache.norms, dh, self.m());
        let dy = self.enc_out.backward(&cache.y, &dr)?;
        let dz = self.enc_block.backward(&cache.block, &dy)?;
        self.enc_in.backward(&cache.x, &dz)
    }

    /// Training-mode forward of one branch.
    pub fn forward_branch(&mut self, x: &Matrix, rng: &mut RngStream) -> Result<(Matrix, BranchCache), ComputeError> {
        let enc = self.encode_train(x, rng)?;
        let (pred, dec) = self.decode_train(&enc.h, rng)?;
        Ok((pred, BranchCache { enc, dec }))
    }

    /// Backward of one branch given the loss gradient at the prediction and
    /// any extra gradient arriving directly at the embedding.
    pub fn backward_branch(
        &mut self,
        cache: &BranchCache,
        dpred: &Matrix,
        dh_extra: Option<&Matrix>,
    ) -> Result<Matrix, ComputeError> {
        let mut dh = self.backward_decode(&cache.dec, dpred)?;
        if let Some(e) = dh_extra {
            dh.add_assign(e)?;
        }
        self.backward_encode(&cache.enc, &dh)
    }

    /// Runs both branches with the shared parameters. Branch `a` draws its
    /// dropout masks from `rng` first, then branch `b`.
    pub fn forward_siamese(
        &mut self,
        batch: &PairBatch,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<SiameseOutput, ComputeError> {
        match mode {
            Mode::Infer => {
                let h1 = self.encode(&batch.inputs_a)?;
                let h2 = self.encode(&batch.inputs_b)?;
                Ok(SiameseOutput {
                    pred1: self.decode(&h1)?,
                    pred2: self.decode(&h2)?,
                    h1,
                    h2,
                })
            }
            Mode::Train => {
                let (pred1, c1) = self.forward_branch(&batch.inputs_a, rng)?;
                let (pred2, c2) = self.forward_branch(&batch.inputs_b, rng)?;
                Ok(SiameseOutput {
                    h1: c1.enc.h,
                    h2: c2.enc.h,
                    pred1,
                    pred2,
                })
            }
        }
    }

    /// Training-mode total loss `ℓ₂⁽¹⁾ + ℓ₂⁽²⁾ + λ₂·ℓ_S` on one batch. With
    /// `backprop`, gradients are accumulated into the parameters (callers
    /// zero them first).
    pub fn siamese_objective(
        &mut self,
        batch: &PairBatch,
        lambda2: f64,
        rng: &mut RngStream,
        backprop: bool,
    ) -> Result<LossBreakdown, ComputeError> {
        let (pred1, c1) = self.forward_branch(&batch.inputs_a, rng)?;
        let (pred2, c2) = self.forward_branch(&batch.inputs_b, rng)?;
        let (l2_a, g1) = l2_pose_loss_grad(&pred1, &batch.targets_a)?;
        let (l2_b, g2) = l2_pose_loss_grad(&pred2, &batch.targets_b)?;
        let (siamese, mut dh1, mut dh2) = siamese_loss_grad(&c1.enc.h, &c2.enc.h, &batch.siamese)?;
        let total = total_loss(l2_a, l2_b, siamese, lambda2);
        if backprop {
            if lambda2 != 0.0 {
                dh1.scale(lambda2);
                dh2.scale(lambda2);
                self.backward_branch(&c1, &g1, Some(&dh1))?;
                self.backward_branch(&c2, &g2, Some(&dh2))?;
            } else {
                self.backward_branch(&c1, &g1, None)?;
                self.backward_branch(&c2, &g2, None)?;
            }
        }
        Ok(LossBreakdown {
            l2_a,
            l2_b,
            siamese,
            total,
        })
    }

    /// Inference on already-normalized inputs: `g(f(x))`.
    pub fn infer_normalized(&self, x: &Matrix) -> Result<Matrix, ComputeError> {
        self.decode(&self.encode(x)?)
    }

    pub fn normalize_inputs(&self, poses: &[Pose2D]) -> Result<Matrix, ModelError> {
        let stats = self.stats.as_ref().ok_or(ModelError::StatsMissing)?;
        let mut x = Matrix::zeros(poses.len(), INPUT_DIM);
        for (i, p) in poses.iter().enumerate() {
            x.row_mut(i).copy_from_slice(&stats.normalize_2d(p));
        }
        Ok(x)
    }

    pub fn denormalize_outputs(&self, y: &Matrix) -> Result<Vec<Pose3D>, ModelError> {
        let stats = self.stats.as_ref().ok_or(ModelError::StatsMissing)?;
        Ok((0..y.rows()).map(|i| stats.denormalize_3d(y.row(i))).collect())
    }

    /// Hip-centered camera-frame predictions in mm.
    pub fn predict(&self, poses: &[Pose2D]) -> Result<Vec<Pose3D>, ModelError> {
        let x = self.normalize_inputs(poses)?;
        let y = self.infer_normalized(&x)?;
        self.denormalize_outputs(&y)
    }

    /// Digest of the architecture, parameter values and batch statistics.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.config.hidden, self.config.embedding.m] {
            h.update((v as u64).to_le_bytes());
        }
        for p in self.params() {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        for bn in self.batch_norms() {
            for v in bn.running_mean.iter().chain(&bn.running_var) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn batch_norms(&self) -> [&crate::compute::BatchNorm; 4] {
        [&self.enc_block.bn1, &self.enc_block.bn2, &self.dec_block.bn1, &self.dec_block.bn2]
    }

    pub fn batch_norms_mut(&mut self) -> [&mut crate::compute::BatchNorm; 4] {
        [
            &mut self.enc_block.bn1,
            &mut self.enc_block.bn2,
            &mut self.dec_block.bn1,
            &mut self.dec_block.bn2,
        ]
    }
}

impl EncodeCache {
    pub fn embedding(&self) -> &Matrix {
        &self.h
    }

    pub fn pre_normalization(&self) -> &Matrix {
        &self.r
    }

    pub fn dense_in(&self) -> &Matrix {
        &self.z
    }
}

impl Parameterized for LiftingModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.enc_in.w, &self.enc_in.b];
        v.extend(self.enc_block.params());
        v.extend([&self.enc_out.w, &self.enc_out.b, &self.dec_in.w, &self.dec_in.b]);
        v.extend(self.dec_block.params());
        v.extend([&self.dec_out.w, &self.dec_out.b]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.enc_in.w, &mut self.enc_in.b];
        v.extend(self.enc_block.params_mut());
        v.extend([
            &mut self.enc_out.w,
            &mut self.enc_out.b,
            &mut self.dec_in.w,
            &mut self.dec_in.b,
        ]);
        v.extend(self.dec_block.params_mut());
        v.extend([&mut self.dec_out.w, &mut self.dec_out.b]);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_vertical;

    fn tiny() -> ModelConfig {
        ModelConfig {
            hidden: 12,
            embedding: EmbeddingConfig {
                m: 4,
                ..EmbeddingConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    fn inputs(rows: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed);
        Matrix::from_vec(rows, INPUT_DIM, (0..rows * INPUT_DIM).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn embedding_columns_are_unit() {
        let model = LiftingModel::new(tiny(), &mut RngStream::new(1));
        let h = model.encode(&inputs(5, 2)).unwrap();
        let m = model.m();
        for b in 0..5 {
            let r = h.row(b);
            for j in 0..m {
                let n = (r[j] * r[j] + r[m + j] * r[m + j] + r[2 * m + j] * r[2 * m + j]).sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_columns_stay_finite() {
        let mut model = LiftingModel::new(tiny(), &mut RngStream::new(1));
        model.enc_out = Dense::zeros("enc.out", 12, 12);
        let h = model.encode(&inputs(3, 2)).unwrap();
        assert!(h.is_finite());
        assert!(h.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_decoder_outputs_bias() {
        let mut model = LiftingModel::new(tiny(), &mut RngStream::new(1));
        model.dec_in = Dense::zeros("dec.in", 12, 12);
        model.dec_out = Dense::zeros("dec.out", 12, OUTPUT_DIM);
        model.dec_out.b.value.data_mut()[5] = 2.5;
        let y = model.infer_normalized(&inputs(3, 2)).unwrap();
        assert_eq!(y.shape(), (3, OUTPUT_DIM));
        for b in 0..3 {
            assert_eq!(y.row(b), model.dec_out.b.value.data());
        }
    }

    #[test]
    fn rotate_embedding_laws() {
        let model = LiftingModel::new(tiny(), &mut RngStream::new(1));
        let h = model.encode(&inputs(2, 3)).unwrap();
        assert_eq!(rotate_embedding(&Rotation3::identity(), &h), h);
        let (r1, r2) = (rot_vertical(20.0), Rotation3::from_axis_angle([1.0, 2.0, 0.5], 0.7));
        let a = rotate_embedding(&r2, &rotate_embedding(&r1, &h));
        let b = rotate_embedding(&r2.compose(&r1), &h);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_needs_stats() {
        let model = LiftingModel::new(tiny(), &mut RngStream::new(1));
        let p = Pose2D {
            joints: [[0.0; 2]; NUM_JOINTS],
        };
        assert!(matches!(model.predict(&[p]), Err(ModelError::StatsMissing)));
    }
}
