//! Oracles and suites shared by the integration tests and the acceptance
//! target.
#![allow(dead_code, clippy::type_complexity)]

use eqlift::checkpoint::{self, CheckpointError, TrainingState};
use eqlift::compute::{
    dropout, dropout_backward, grad_check, grad_check_params, Activation, BatchNorm, Dense, GradCheckReport, Matrix,
    Mode, Param, Parameterized, ResidualBlock, RngStream,
};
use eqlift::data::{
    fit_norm_stats, generate_synthetic, read_dataset, sample_pairs, write_dataset, DataError, FrameRecord, PairBatch,
    PairIndex, PairSampling, SynthConfig,
};
use eqlift::geometry::{
    procrustes_align, project, relative_rotation, rot_vertical, Camera, Pose3D, PoseFrame, Rotation3, NUM_JOINTS,
};
use eqlift::losses::{l2_pose_loss_grad, siamese_loss_grad};
use eqlift::model::{EmbeddingConfig, LiftingModel, ModelConfig};
use eqlift::trainer::{self, TrainConfig, TrainData, TrainHooks};
use nalgebra::{Matrix3x4, Vector4};

pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

/// A few subjects, actions and cameras; fast to train on.
pub fn small_synth() -> SynthConfig {
    SynthConfig {
        subjects: vec![1, 5, 9],
        n_actions: 2,
        frames_per_action: 16,
        n_cameras: 4,
        ..SynthConfig::default()
    }
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn weighted_sum(y: &Matrix, w: &Matrix) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

struct DenseNet(Dense);
impl Parameterized for DenseNet {
    fn params(&self) -> Vec<&Param> {
        vec![&self.0.w, &self.0.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.0.w, &mut self.0.b]
    }
}

struct BnNet(BatchNorm);
impl Parameterized for BnNet {
    fn params(&self) -> Vec<&Param> {
        vec![&self.0.gamma, &self.0.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.0.gamma, &mut self.0.beta]
    }
}

struct BlockNet(ResidualBlock);
impl Parameterized for BlockNet {
    fn params(&self) -> Vec<&Param> {
        self.0.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.0.params_mut()
    }
}

/// Small batch of real training pairs for a model with the given `m`.
pub fn grad_batch(batch: usize) -> (Vec<FrameRecord>, PairBatch) {
    let records = generate_synthetic(&small_synth()).unwrap();
    let stats = fit_norm_stats(&records).unwrap();
    let index = PairIndex::new(&records);
    let sampling = PairSampling {
        batch_size: batch,
        same_pose_fraction: 0.5,
        lambda1: 0.01,
    };
    let b = sample_pairs(&records, &index, &stats, &sampling, &mut RngStream::new(11)).unwrap();
    (records, b)
}

pub fn grad_model(m: usize, activation: Activation) -> LiftingModel {
    let cfg = ModelConfig {
        hidden: 24,
        embedding: EmbeddingConfig {
            m,
            ..EmbeddingConfig::default()
        },
        dropout: 0.2,
        activation,
    };
    LiftingModel::new(cfg, &mut RngStream::new(3))
}

/// Central-difference checks of every layer and of the full siamese loss
/// (batch 8, M = 16, dropout masks frozen by replaying the stream).
pub fn gradient_suite() -> Vec<(&'static str, GradCheckReport)> {
    let mut out = Vec::new();
    let mut rng = RngStream::new(1);
    let (n, d_in, d_out) = (8, 6, 5);
    let x = random_matrix(n, d_in, 1.0, &mut rng);

    // Dense: inputs and parameters.
    let w_out = random_matrix(n, d_out, 1.0, &mut rng);
    let mut dense = DenseNet(Dense::new("d", d_in, d_out, &mut rng));
    dense.0.b.value = random_matrix(1, d_out, 0.1, &mut rng);
    let dx = {
        let mut d = dense.0.clone();
        d.backward(&x, &w_out).unwrap()
    };
    out.push((
        "dense/input",
        grad_check(x.data(), dx.data(), FD_STEP, |v| {
            let xm = Matrix::from_vec(n, d_in, v.to_vec()).unwrap();
            weighted_sum(&dense.0.forward(&xm).unwrap(), &w_out)
        }),
    ));
    out.push((
        "dense/params",
        grad_check_params(&mut dense, FD_STEP, |net, back| {
            let y = net.0.forward(&x).unwrap();
            if back {
                net.0.backward(&x, &w_out).unwrap();
            }
            weighted_sum(&y, &w_out)
        }),
    ));

    // Batch normalization in training mode.
    let w_bn = random_matrix(n, d_in, 1.0, &mut rng);
    let mut bn = BnNet(BatchNorm::new("bn", d_in));
    bn.0.gamma.value = random_matrix(1, d_in, 1.0, &mut rng);
    bn.0.beta.value = random_matrix(1, d_in, 1.0, &mut rng);
    let dx = {
        let mut b = bn.0.clone();
        let (_, cache) = b.forward_train(&x).unwrap();
        b.backward(&cache, &w_bn).unwrap()
    };
    out.push((
        "batchnorm/input",
        grad_check(x.data(), dx.data(), FD_STEP, |v| {
            let xm = Matrix::from_vec(n, d_in, v.to_vec()).unwrap();
            weighted_sum(&bn.0.clone().forward_train(&xm).unwrap().0, &w_bn)
        }),
    ));
    out.push((
        "batchnorm/params",
        grad_check_params(&mut bn, FD_STEP, |net, back| {
            let (y, cache) = net.0.forward_train(&x).unwrap();
            if back {
                net.0.backward(&cache, &w_bn).unwrap();
            }
            weighted_sum(&y, &w_bn)
        }),
    ));

    // Activations, away from the kink.
    let xa = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let w_a = random_matrix(n, d_in, 1.0, &mut rng);
    for (name, act) in [
        ("leaky_relu", Activation::LeakyRelu { slope: 0.01 }),
        ("relu", Activation::Relu),
    ] {
        let g = act.backward(&xa, &w_a);
        out.push((
            name,
            grad_check(xa.data(), g.data(), FD_STEP, |v| {
                let xm = Matrix::from_vec(n, d_in, v.to_vec()).unwrap();
                weighted_sum(&act.forward(&xm), &w_a)
            }),
        ));
    }

    // Dropout with a frozen mask.
    let seed = RngStream::new(5);
    let (_, mask) = dropout(&x, 0.2, &mut seed.clone(), Mode::Train);
    let g = dropout_backward(&w_a, mask.as_ref());
    out.push((
        "dropout",
        grad_check(x.data(), g.data(), FD_STEP, |v| {
            let xm = Matrix::from_vec(n, d_in, v.to_vec()).unwrap();
            weighted_sum(&dropout(&xm, 0.2, &mut seed.clone(), Mode::Train).0, &w_a)
        }),
    ));

    // Residual block, both activations.
    for (name, act) in [
        ("residual_block/leaky", Activation::LeakyRelu { slope: 0.01 }),
        ("residual_block/relu", Activation::Relu),
    ] {
        let mut block = BlockNet(ResidualBlock::new("blk", d_in, act, 0.2, &mut rng));
        let w_b = random_matrix(n, d_in, 1.0, &mut rng);
        let dx = {
            let mut b = block.0.clone();
            let (_, cache) = b.forward_train(&x, &mut seed.clone()).unwrap();
            b.backward(&cache, &w_b).unwrap()
        };
        let input_name = if name.ends_with("leaky") {
            "residual_block/leaky/input"
        } else {
            "residual_block/relu/input"
        };
        out.push((
            input_name,
            grad_check(x.data(), dx.data(), FD_STEP, |v| {
                let xm = Matrix::from_vec(n, d_in, v.to_vec()).unwrap();
                weighted_sum(&block.0.clone().forward_train(&xm, &mut seed.clone()).unwrap().0, &w_b)
            }),
        ));
        out.push((
            name,
            grad_check_params(&mut block, FD_STEP, |net, back| {
                let (y, cache) = net.0.forward_train(&x, &mut seed.clone()).unwrap();
                if back {
                    net.0.backward(&cache, &w_b).unwrap();
                }
                weighted_sum(&y, &w_b)
            }),
        ));
    }

    // Pose and siamese losses with respect to their inputs.
    let m = 16;
    let (_, batch) = grad_batch(8);
    let pred = random_matrix(8, 48, 1.0, &mut rng);
    let (_, g) = l2_pose_loss_grad(&pred, &batch.targets_a).unwrap();
    out.push((
        "l2_pose_loss",
        grad_check(pred.data(), g.data(), FD_STEP, |v| {
            let pm = Matrix::from_vec(8, 48, v.to_vec()).unwrap();
            l2_pose_loss_grad(&pm, &batch.targets_a).unwrap().0
        }),
    ));
    let h1 = random_matrix(8, 3 * m, 0.5, &mut rng);
    let h2 = random_matrix(8, 3 * m, 0.5, &mut rng);
    let (_, g1, g2) = siamese_loss_grad(&h1, &h2, &batch.siamese).unwrap();
    out.push((
        "siamese_loss/h1",
        grad_check(h1.data(), g1.data(), FD_STEP, |v| {
            let hm = Matrix::from_vec(8, 3 * m, v.to_vec()).unwrap();
            siamese_loss_grad(&hm, &h2, &batch.siamese).unwrap().0
        }),
    ));
    out.push((
        "siamese_loss/h2",
        grad_check(h2.data(), g2.data(), FD_STEP, |v| {
            let hm = Matrix::from_vec(8, 3 * m, v.to_vec()).unwrap();
            siamese_loss_grad(&h1, &hm, &batch.siamese).unwrap().0
        }),
    ));

    // Encoder alone: column normalization included.
    let mut model = grad_model(m, Activation::default());
    let w_h = random_matrix(8, 3 * m, 1.0, &mut rng);
    let dx = {
        let mut mm = model.clone();
        let cache = mm.encode_train(&batch.inputs_a, &mut seed.clone()).unwrap();
        mm.backward_encode(&cache, &w_h).unwrap()
    };
    out.push((
        "encoder/input",
        grad_check(batch.inputs_a.data(), dx.data(), FD_STEP, |v| {
            let xm = Matrix::from_vec(8, 32, v.to_vec()).unwrap();
            let cache = model.clone().encode_train(&xm, &mut seed.clone()).unwrap();
            weighted_sum(cache.embedding(), &w_h)
        }),
    ));

    // Full siamese total loss through both branches.
    for (name, act) in [
        ("siamese_total/leaky", Activation::LeakyRelu { slope: 0.01 }),
        ("siamese_total/relu", Activation::Relu),
    ] {
        model = grad_model(m, act);
        out.push((
            name,
            grad_check_params(&mut model, FD_STEP, |net, back| {
                net.siamese_objective(&batch, 1.0, &mut seed.clone(), back).unwrap().total
            }),
        ));
    }
    out
}

/// Uniformly random rotation from a random unit quaternion.
pub fn random_rotation(rng: &mut RngStream) -> Rotation3 {
    let q: [f64; 4] = std::array::from_fn(|_| rng.normal());
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    Rotation3::from_rows([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
    .unwrap()
}

pub fn random_pose(rng: &mut RngStream, frame: PoseFrame) -> Pose3D {
    let joints = std::array::from_fn(|_| std::array::from_fn(|_| 300.0 * rng.normal()));
    Pose3D::new(joints, frame)
}

fn max_joint_error(a: &Pose3D, b: &Pose3D) -> f64 {
    a.joints
        .iter()
        .zip(&b.joints)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn max_entry_diff(a: &Rotation3, b: &Rotation3) -> f64 {
    a.to_row_vec()
        .iter()
        .zip(b.to_row_vec())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Homogeneous pinhole pipeline `K·[R | −R·c]·X` built with nalgebra.
pub fn homogeneous_projection(cam: &Camera, p: [f64; 3]) -> [f64; 2] {
    let r = cam.rot.rows();
    let c = cam.center;
    let t: Vec<f64> = (0..3).map(|i| -(r[i][0] * c[0] + r[i][1] * c[1] + r[i][2] * c[2])).collect();
    let rt = Matrix3x4::new(
        r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
    );
    let k = nalgebra::Matrix3::new(cam.focal[0], 0.0, cam.principal[0], 0.0, cam.focal[1], cam.principal[1], 0.0, 0.0, 1.0);
    let x = k * rt * Vector4::new(p[0], p[1], p[2], 1.0);
    [x[0] / x[2], x[1] / x[2]]
}

/// `(check, max error, tolerance)` for the geometry oracles.
pub fn geometry_suite() -> Vec<(&'static str, f64, f64)> {
    let mut rng = RngStream::new(2024);
    let mut out = Vec::new();

    let mut rigid = 0.0f64;
    let mut similarity = 0.0f64;
    for _ in 0..100 {
        let gt = random_pose(&mut rng, PoseFrame::Camera);
        let r = random_rotation(&mut rng);
        let t: [f64; 3] = std::array::from_fn(|_| 1000.0 * rng.normal());
        let s = 0.5 + rng.uniform();
        let moved = gt.rotated(&r).translated(t);
        rigid = rigid.max(max_joint_error(&procrustes_align(&moved, &gt, false).unwrap(), &gt));
        let scaled = Pose3D::new(moved.joints.map(|p| p.map(|v| s * v)), PoseFrame::Camera);
        similarity = similarity.max(max_joint_error(&procrustes_align(&scaled, &gt, true).unwrap(), &gt));
    }
    out.push(("procrustes rigid recovery (mm)", rigid, 1e-9));
    out.push(("procrustes similarity recovery (mm)", similarity, 1e-9));

    let mut proj = 0.0f64;
    for k in 0..100 {
        let az = 3.6 * k as f64;
        let center = rot_vertical(az).apply([0.0, 1400.0 + 200.0 * rng.normal(), 4500.0]);
        let cam = Camera::look_at(
            format!("c{k}"),
            center,
            [100.0 * rng.normal(), 1000.0, 100.0 * rng.normal()],
            [1100.0 + 100.0 * rng.uniform(), 1100.0 + 100.0 * rng.uniform()],
            [500.0, 480.0],
        );
        let joints = std::array::from_fn(|_| [300.0 * rng.normal(), 1000.0 + 300.0 * rng.normal(), 300.0 * rng.normal()]);
        let pose = Pose3D::new(joints, PoseFrame::World);
        let p2 = project(&cam, &pose).unwrap();
        for (j, p) in pose.joints.iter().enumerate() {
            let o = homogeneous_projection(&cam, *p);
            proj = proj.max((o[0] - p2.joints[j][0]).abs()).max((o[1] - p2.joints[j][1]).abs());
        }
    }
    out.push(("projection vs homogeneous pipeline (px)", proj, 1e-9));

    let mut group = 0.0f64;
    for _ in 0..100 {
        let (a, b, c) = (random_rotation(&mut rng), random_rotation(&mut rng), random_rotation(&mut rng));
        let id = Rotation3::identity();
        group = group
            .max(max_entry_diff(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))))
            .max(max_entry_diff(&a.compose(&a.inverse()), &id))
            .max(max_entry_diff(&a.compose(&id), &a))
            .max((a.compose(&b).det() - 1.0).abs())
            .max(a.compose(&b).orthonormality_error());
        let (x, y) = (360.0 * rng.uniform() - 180.0, 360.0 * rng.uniform() - 180.0);
        group = group.max(max_entry_diff(&rot_vertical(x).compose(&rot_vertical(y)), &rot_vertical(x + y)));
        let cams: Vec<Camera> = [a, b, c]
            .iter()
            .enumerate()
            .map(|(i, r)| Camera {
                id: format!("g{i}"),
                rot: *r,
                center: [0.0; 3],
                focal: [1.0, 1.0],
                principal: [0.0, 0.0],
            })
            .collect();
        let chain = relative_rotation(&cams[1], &cams[2]).compose(&relative_rotation(&cams[0], &cams[1]));
        group = group.max(max_entry_diff(&chain, &relative_rotation(&cams[0], &cams[2])));
    }
    out.push(("rotation group laws", group, 1e-12));
    out
}

fn tiny_train_config(seed: u64) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        hidden: 32,
        embedding: EmbeddingConfig {
            m: 8,
            ..EmbeddingConfig::default()
        },
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 2,
        batch_size: 64,
        lambda1: 0.005,
        lambda2: 0.1,
        seed,
        ..TrainConfig::default()
    };
    (model, train)
}

/// Records, train split, test split and stats for smoke runs.
pub fn smoke_data() -> (Vec<FrameRecord>, Vec<FrameRecord>, eqlift::NormStats) {
    let records = generate_synthetic(&small_synth()).unwrap();
    let (train, test): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.subject != 9);
    let stats = fit_norm_stats(&train).unwrap();
    (train, test, stats)
}

/// Two identical smoke runs must write byte-identical logs and checkpoints.
pub fn determinism_check() -> Result<String, String> {
    let (train, test, stats) = smoke_data();
    let (model, cfg) = tiny_train_config(42);
    let run = |dir: &std::path::Path| -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
        let hooks = TrainHooks {
            checkpoint_dir: Some(dir.to_path_buf()),
            config_hash: "smoke".into(),
            ..TrainHooks::default()
        };
        let data = TrainData {
            train: &train,
            test: &test,
            stats: &stats,
        };
        let out = trainer::train(&model, &cfg, data, hooks).map_err(|e| e.to_string())?;
        let read = |n: &str| std::fs::read(dir.join(n)).map_err(|e| e.to_string());
        Ok((
            out.log.to_csv("smoke", 42).into_bytes(),
            read(trainer::FINAL_CHECKPOINT)?,
            read(trainer::BEST_CHECKPOINT)?,
        ))
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = run(d1.path())?;
    let b = run(d2.path())?;
    for (what, x, y) in [("log", &a.0, &b.0), ("final checkpoint", &a.1, &b.1), ("best checkpoint", &a.2, &b.2)] {
        if x != y {
            return Err(format!("{what} differs between runs"));
        }
    }
    Ok(format!(
        "log {} B, final checkpoint {} B, best checkpoint {} B identical",
        a.0.len(),
        a.1.len(),
        a.2.len()
    ))
}

/// JSONL and checkpoint round trips and corruption handling.
pub fn format_checks() -> Vec<(&'static str, Result<(), String>)> {
    let dir = tempfile::tempdir().unwrap();
    let mut out = Vec::new();
    let records = generate_synthetic(&small_synth()).unwrap();

    let path = dir.path().join("d.jsonl");
    out.push((
        "jsonl round trip",
        (|| {
            write_dataset(&records, &path).map_err(|e| e.to_string())?;
            let back = read_dataset(&path).map_err(|e| e.to_string())?;
            (back == records).then_some(()).ok_or("records differ".to_string())
        })(),
    ));
    out.push((
        "jsonl malformed line",
        {
            let text = std::fs::read_to_string(&path).unwrap();
            let mut lines: Vec<&str> = text.lines().collect();
            lines[2] = "{\"schema\": 1, \"subject\": ";
            let bad = dir.path().join("bad.jsonl");
            std::fs::write(&bad, lines.join("\n")).unwrap();
            match read_dataset(&bad) {
                Err(DataError::Parse { line: 3, .. }) => Ok(()),
                other => Err(format!("expected Parse at line 3, got {other:?}")),
            }
        },
    ));
    out.push((
        "jsonl schema version",
        {
            let text = std::fs::read_to_string(&path).unwrap();
            let first = text.lines().next().unwrap().replacen("\"schema\":1", "\"schema\":2", 1);
            let bad = dir.path().join("ver.jsonl");
            std::fs::write(&bad, first).unwrap();
            match read_dataset(&bad) {
                Err(DataError::SchemaVersionMismatch { found: 2, .. }) => Ok(()),
                other => Err(format!("expected SchemaVersionMismatch, got {other:?}")),
            }
        },
    ));

    let (model_cfg, _) = tiny_train_config(1);
    let mut model = LiftingModel::new(model_cfg, &mut RngStream::new(9));
    model.stats = Some(fit_norm_stats(&records).unwrap());
    let state = TrainingState {
        model,
        adam: eqlift::compute::Adam::new(Default::default()),
        epoch: 3,
        step: 17,
        seed: u64::MAX - 5,
        best_test_mpjpe: 81.25,
        config_hash: "abc123".into(),
        rng: RngStream::from_state(7, 99),
    };
    let bytes = checkpoint::encode(&state.to_tensors());
    out.push((
        "checkpoint bit-exact round trip",
        (|| {
            let back = TrainingState::from_tensors(&checkpoint::decode(&bytes).map_err(|e| e.to_string())?, Some(&model_cfg))
                .map_err(|e| e.to_string())?;
            let again = checkpoint::encode(&back.to_tensors());
            if again != bytes {
                return Err("re-encoded bytes differ".into());
            }
            if back.model != state.model || back.seed != state.seed || back.rng != state.rng {
                return Err("decoded state differs".into());
            }
            Ok(())
        })(),
    ));
    out.push((
        "checkpoint corruption",
        {
            let mut bad = bytes.clone();
            let mid = bad.len() / 2;
            bad[mid] ^= 0x40;
            match checkpoint::decode(&bad) {
                Err(CheckpointError::CrcMismatch { .. }) => Ok(()),
                other => Err(format!("expected CrcMismatch, got {:?}", other.map(|_| ()))),
            }
        },
    ));
    out.push((
        "checkpoint truncation",
        match checkpoint::decode(&bytes[..bytes.len() / 3]) {
            Err(CheckpointError::CrcMismatch { .. }) | Err(CheckpointError::Truncated) => Ok(()),
            other => Err(format!("expected a CRC or truncation error, got {:?}", other.map(|_| ()))),
        },
    ));
    out.push((
        "checkpoint magic",
        {
            let mut bad = bytes.clone();
            bad[0] = b'X';
            match checkpoint::decode(&bad) {
                Err(CheckpointError::BadMagic) => Ok(()),
                other => Err(format!("expected BadMagic, got {:?}", other.map(|_| ()))),
            }
        },
    ));
    out.push((
        "checkpoint architecture mismatch",
        {
            let wrong = ModelConfig {
                embedding: EmbeddingConfig {
                    m: 9,
                    ..EmbeddingConfig::default()
                },
                ..model_cfg
            };
            match TrainingState::from_tensors(&checkpoint::decode(&bytes).unwrap(), Some(&wrong)) {
                Err(CheckpointError::SchemaMismatch(_)) => Ok(()),
                other => Err(format!("expected SchemaMismatch, got {:?}", other.map(|_| ()))),
            }
        },
    ));
    let _ = NUM_JOINTS;
    out
}
