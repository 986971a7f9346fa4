mod support;

use std::collections::{BTreeMap, BTreeSet};

use eqlift::compute::RngStream;
use eqlift::data::{
    augment_cameras, fit_norm_stats, generate_synthetic, sample_pairs, simulate_detector_noise, split_protocol,
    AugmentationConfig, NoiseSigma, PairIndex, PairSampling, Protocol, SubjectSplit, SynthConfig,
};
use eqlift::geometry::NUM_JOINTS;

/// Upper χ² quantile at p ≈ 0.001 (Wilson–Hilferty).
fn chi2_critical(df: f64) -> f64 {
    let z = 3.09;
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

fn chi2(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

fn ring_azimuth(c: [f64; 3]) -> f64 {
    let a = c[0].atan2(c[2]).to_degrees().rem_euclid(360.0);
    let r = a.round();
    if (a - r).abs() < 1e-6 {
        r.rem_euclid(360.0)
    } else {
        a
    }
}

#[test]
fn augmentation_enumerates_the_expected_synthetic_cameras() {
    let synth = SynthConfig {
        subjects: vec![1, 9],
        n_actions: 1,
        frames_per_action: 6,
        n_cameras: 4,
        ..SynthConfig::default()
    };
    let records = generate_synthetic(&synth).unwrap();
    let subjects = SubjectSplit { test_subjects: vec![9] };
    let (train, test) = split_protocol(&records, Protocol::Three, &subjects, "cam1").unwrap();
    let test_cam = test[0].camera.clone();
    let cfg = AugmentationConfig::default();
    let out = augment_cameras(&train, &cfg, std::slice::from_ref(&test_cam), &RngStream::new(1)).unwrap();

    // Cameras sit at 0, 90, 180, 270 degrees; cam1 (90) is held out. The
    // 15-degree ring minus the four coincident positions minus the two
    // positions nearest 90 leaves 18 synthetic cameras.
    let mut expected: BTreeSet<i64> = (0..24).map(|k| 15 * k).collect();
    for a in [0, 90, 180, 270, 75, 105] {
        expected.remove(&a);
    }
    let synthetic: Vec<_> = out.iter().filter(|r| r.synthetic_cam).collect();
    let mut by_cam: BTreeMap<String, usize> = BTreeMap::new();
    let mut azimuths = BTreeSet::new();
    for r in &synthetic {
        *by_cam.entry(r.camera.id.clone()).or_default() += 1;
        let az = ring_azimuth(r.camera.center);
        assert_eq!(az.fract(), 0.0, "synthetic camera off the grid at {az}");
        azimuths.insert(az as i64);
    }
    assert_eq!(azimuths, expected);

    let instants: BTreeSet<_> = train.iter().map(|r| (r.subject, r.action.clone(), r.frame)).collect();
    assert_eq!(out.len(), train.len() + instants.len() * expected.len());
    assert!(by_cam.values().all(|&n| n == instants.len()));
    assert_eq!(&out[..train.len()], &train[..]);

    // Every synthetic camera keeps the ring radius, height, intrinsics and
    // aim; its records agree with an independent projection of the pose.
    let radius = |c: [f64; 3]| (c[0] * c[0] + c[2] * c[2]).sqrt();
    let target = [0.0, synth.look_at_height_mm, 0.0];
    for r in &synthetic {
        let c = r.camera.center;
        assert!((radius(c) - synth.camera_radius_mm).abs() < 1e-6);
        assert!((c[1] - synth.camera_height_mm).abs() < 1e-9);
        assert_eq!(r.camera.focal, synth.focal_px);
        let aim = r.camera.to_camera_frame(target);
        assert!(aim[0].abs() < 1e-6 && aim[1].abs() < 1e-6 && aim[2] > 0.0);
        let world = r.world_pose().unwrap();
        for (j, p) in world.joints.iter().enumerate() {
            let o = support::homogeneous_projection(&r.camera, *p);
            assert!((o[0] - r.pose2d.joints[j][0]).abs() < 1e-9);
            assert!((o[1] - r.pose2d.joints[j][1]).abs() < 1e-9);
        }
        assert!(r.pose3d.unwrap().joints[0].iter().all(|v| v.abs() < 1e-9));
    }
}

#[test]
fn exclusion_zone_removes_cameras_near_the_test_view() {
    let records = generate_synthetic(&SynthConfig {
        subjects: vec![1],
        n_actions: 1,
        frames_per_action: 2,
        n_cameras: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let test_cam = records.iter().find(|r| r.camera.id == "cam1").unwrap().camera.clone();
    let train: Vec<_> = records.iter().filter(|r| r.camera.id != "cam1").cloned().collect();
    let cfg = AugmentationConfig {
        drop_nearest: 0,
        exclusion_deg: Some(45.0),
        ..AugmentationConfig::default()
    };
    let out = augment_cameras(&train, &cfg, &[test_cam], &RngStream::new(1)).unwrap();
    let az: BTreeSet<i64> = out
        .iter()
        .filter(|r| r.synthetic_cam)
        .map(|r| ring_azimuth(r.camera.center) as i64)
        .collect();
    // Ring positions strictly within 45 degrees of 90 are gone; 45 and 135 stay.
    for a in [60, 75, 105, 120] {
        assert!(!az.contains(&a));
    }
    assert!(az.contains(&45) && az.contains(&135));
    assert_eq!(az.len(), 24 - 4 - 4);
}

#[test]
fn pair_sampling_is_uniform() {
    let records = generate_synthetic(&support::small_synth()).unwrap();
    let stats = fit_norm_stats(&records).unwrap();
    let index = PairIndex::new(&records);
    let sampling = PairSampling {
        batch_size: 512,
        same_pose_fraction: 0.5,
        lambda1: 0.01,
    };
    let cam_index = |id: &str| id.trim_start_matches("cam").parse::<usize>().unwrap();
    let mut rng = RngStream::new(99);
    let mut first = vec![0usize; records.len()];
    let mut second = vec![0usize; records.len()];
    let mut cam_pairs = [0usize; 16];
    for _ in 0..400 {
        let b = sample_pairs(&records, &index, &stats, &sampling, &mut rng).unwrap();
        assert_eq!(b.same_pose.iter().filter(|s| **s).count(), 256);
        for (&(i, j), &same) in b.indices.iter().zip(&b.same_pose) {
            if same {
                let (ra, rb) = (&records[i], &records[j]);
                assert_eq!(ra.frame_key(), rb.frame_key());
                assert_ne!(ra.camera.id, rb.camera.id);
                assert_eq!(b.siamese[0].lambda1, 0.01);
                cam_pairs[4 * cam_index(&ra.camera.id) + cam_index(&rb.camera.id)] += 1;
            } else {
                first[i] += 1;
                second[j] += 1;
            }
        }
    }
    let n = records.len() as f64;
    for counts in [&first, &second] {
        let x = chi2(counts);
        assert!(x < chi2_critical(n - 1.0), "random pairs: chi2 {x} over {n} cells");
    }
    let off_diag: Vec<usize> = (0..16).filter(|k| k / 4 != k % 4).map(|k| cam_pairs[k]).collect();
    assert!((0..4).all(|c| cam_pairs[5 * c] == 0));
    let x = chi2(&off_diag);
    assert!(x < chi2_critical(11.0), "camera pairs: chi2 {x}, counts {off_diag:?}");
}

#[test]
fn same_pose_pairs_have_zero_target_distance() {
    let (records, batch) = support::grad_batch(64);
    for ((&(i, j), &same), t) in batch.indices.iter().zip(&batch.same_pose).zip(&batch.siamese) {
        if same {
            assert!(t.pose_dist < 1e-9, "{} {}", records[i].camera.id, records[j].camera.id);
        }
    }
}

#[test]
fn detector_noise_has_the_configured_spread() {
    let records = generate_synthetic(&support::small_synth()).unwrap();
    let clean = records[0].pose2d;
    let mut rng = RngStream::new(8);
    let sigma = NoiseSigma::Scalar(5.0);
    let n_poses = 100_000 / NUM_JOINTS + 1;
    let mut d = Vec::with_capacity(2 * n_poses * NUM_JOINTS);
    for _ in 0..n_poses {
        let noisy = simulate_detector_noise(&clean, &sigma, &mut rng);
        for (a, b) in noisy.joints.iter().zip(&clean.joints) {
            d.push(a[0] - b[0]);
            d.push(a[1] - b[1]);
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let std = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64).sqrt();
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((std - 5.0).abs() <= 0.05, "std {std}");
}

#[test]
fn augmentation_noise_is_reproducible_and_leaves_originals_clean() {
    let records = generate_synthetic(&support::small_synth()).unwrap();
    let train: Vec<_> = records.iter().filter(|r| r.camera.id != "cam1").cloned().collect();
    let test_cam = records.iter().find(|r| r.camera.id == "cam1").unwrap().camera.clone();
    let cfg = AugmentationConfig {
        noise_enabled: true,
        ..AugmentationConfig::default()
    };
    let a = augment_cameras(&train, &cfg, std::slice::from_ref(&test_cam), &RngStream::new(3)).unwrap();
    let b = augment_cameras(&train, &cfg, std::slice::from_ref(&test_cam), &RngStream::new(3)).unwrap();
    let c = augment_cameras(&train, &cfg, &[test_cam], &RngStream::new(4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(&a[..train.len()], &train[..]);
}
