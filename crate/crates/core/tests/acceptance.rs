//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod support;

use std::time::Instant;

use eqlift::compute::RngStream;
use eqlift::data::{generate_synthetic, sample_pairs, FrameRecord, PairIndex, PairSampling, SynthConfig};
use eqlift::eval::{
    aug_distance_sweep, embedding_rotation_experiment, equivariance_error, median, record_errors, Alignment,
    EvalError, SweepVariant,
};
use eqlift::trainer::{
    ablation_suite, init_model, prepare_experiment, spec_hash, train_and_score, AblationVariant, ExperimentData,
    ExperimentSpec,
};
use eqlift::{LiftingModel, PairBatch};

const SEEDS: [u64; 3] = [0, 1, 2];
const SWEEP_DISTANCES: [f64; 3] = [15.0, 45.0, 90.0];
const SWEEP_EPOCHS: usize = 10;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn run(name: &'static str, f: impl FnOnce() -> Result<(bool, String), String>) -> Outcome {
    let t = Instant::now();
    let (pass, detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".into()),
    };
    let o = Outcome {
        name,
        pass,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    };
    println!(
        "{} {} ({:.1} s): {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.name,
        o.seconds,
        o.detail
    );
    o
}

/// Same-pose pairs of the held-out subjects seen from every camera.
fn held_out_pairs(records: &[FrameRecord], data: &ExperimentData, spec: &ExperimentSpec) -> Vec<PairBatch> {
    let held: Vec<FrameRecord> = records
        .iter()
        .filter(|r| spec.subjects.is_test(r.subject))
        .cloned()
        .collect();
    let index = PairIndex::new(&held);
    let sampling = PairSampling {
        batch_size: 256,
        same_pose_fraction: 1.0,
        lambda1: spec.train.lambda1,
    };
    let mut rng = RngStream::new(77);
    (0..8)
        .map(|_| sample_pairs(&held, &index, &data.stats, &sampling, &mut rng).unwrap())
        .collect()
}

struct Trained {
    rows: Vec<(AblationVariant, u64, f64)>,
    all_on: Vec<(u64, LiftingModel)>,
}

fn train_ablation(data: &ExperimentData, spec: &ExperimentSpec) -> Result<Trained, String> {
    let mut all_on = Vec::new();
    let variants = [AblationVariant::AllOn, AblationVariant::NoSiamese, AblationVariant::Baseline];
    let rows = ablation_suite(data, spec, &variants, &SEEDS, |row, out| {
        println!("    {:<16} seed {} mpjpe {:.2} mm", row.variant.name(), row.seed, row.mpjpe);
        if row.variant == AblationVariant::AllOn {
            all_on.push((row.seed, out.model().clone()));
        }
    })
    .map_err(|e| e.to_string())?;
    Ok(Trained {
        rows: rows.iter().map(|r| (r.variant, r.seed, r.mpjpe)).collect(),
        all_on,
    })
}

fn variant_median(t: &Trained, v: AblationVariant) -> f64 {
    median(&t.rows.iter().filter(|r| r.0 == v).map(|r| r.2).collect::<Vec<_>>())
}

fn main() {
    let total = Instant::now();
    let mut results = Vec::new();

    results.push(run("gradient suite", || {
        let reports = support::gradient_suite();
        let worst = reports
            .iter()
            .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
            .unwrap();
        let n: usize = reports.iter().map(|r| r.1.checked).sum();
        let ok = reports.iter().all(|r| r.1.max_rel_error <= support::GRAD_TOL);
        Ok((
            ok,
            format!(
                "{} checks over {n} coordinates, worst {} at {:.2e} (tolerance {:.0e})",
                reports.len(),
                worst.0,
                worst.1.max_rel_error,
                support::GRAD_TOL
            ),
        ))
    }));

    results.push(run("geometry oracle suite", || {
        let checks = support::geometry_suite();
        let ok = checks.iter().all(|c| c.1 <= c.2);
        let detail = checks
            .iter()
            .map(|c| format!("{} {:.1e}/{:.0e}", c.0, c.1, c.2))
            .collect::<Vec<_>>()
            .join("; ");
        Ok((ok, detail))
    }));

    let records = generate_synthetic(&SynthConfig::default()).unwrap();
    let spec = ExperimentSpec::desk_scale();
    let data = prepare_experiment(&records, &spec).unwrap();
    println!(
        "    dataset: {} records, train {} (augmented {}), test {} on {}",
        records.len(),
        data.train.len(),
        data.train_augmented.len(),
        data.test.len(),
        spec.test_camera
    );
    let t_train = Instant::now();
    let trained = train_ablation(&data, &spec);
    println!("    ablation training took {:.0} s", t_train.elapsed().as_secs_f64());

    results.push(run("equivariance training property", || {
        let t = trained.as_ref().map_err(|e| e.clone())?;
        let pairs = held_out_pairs(&records, &data, &spec);
        let mut ratios = Vec::new();
        for (seed, model) in &t.all_on {
            let mut init = init_model(&spec.model, *seed);
            init.stats = Some(data.stats.clone());
            let before = equivariance_error(&init, &pairs).map_err(|e| e.to_string())?;
            let after = equivariance_error(model, &pairs).map_err(|e| e.to_string())?;
            println!(
                "    seed {seed}: mean equivariance error {:.4} -> {:.4} over {} pairs",
                before.mean, after.mean, after.n_pairs
            );
            ratios.push(after.mean / before.mean);
        }
        let m = median(&ratios);
        Ok((m <= 0.5, format!("median after/init ratio {m:.3} (need <= 0.5), per seed {ratios:.3?}")))
    }));

    results.push(run("cross-camera ablation ordering", || {
        let t = trained.as_ref().map_err(|e| e.clone())?;
        let a = variant_median(t, AblationVariant::AllOn);
        let s = variant_median(t, AblationVariant::NoSiamese);
        let b = variant_median(t, AblationVariant::Baseline);
        Ok((
            a < s && s < b,
            format!("3-seed medians: all-on {a:.2} mm, w/o siamese {s:.2} mm, baseline {b:.2} mm"),
        ))
    }));

    results.push(run("augmentation distance sweep", || {
        let test_cam = data.test_camera.clone().ok_or("no held-out camera")?;
        let mut sweep_spec = spec.clone();
        sweep_spec.train.epochs = SWEEP_EPOCHS;
        let train_fn = |set: &[FrameRecord], test: &[FrameRecord], v: SweepVariant, seed: u64| {
            let variant = match v {
                SweepVariant::Siamese => AblationVariant::AllOn,
                SweepVariant::Baseline => AblationVariant::Baseline,
            };
            let mut s = variant.apply(&sweep_spec);
            s.train.seed = seed;
            let (_, mpjpe) = train_and_score(&s.model, &s.train, set, test, &data.stats, &spec_hash(&s))
                .map_err(|e| EvalError::Other(e.to_string()))?;
            println!("    {:<8} seed {seed} on {} records: mpjpe {mpjpe:.2} mm", v.name(), set.len());
            Ok(mpjpe)
        };
        let rows = aug_distance_sweep(
            train_fn,
            &data.train,
            &data.test,
            &test_cam,
            &SWEEP_DISTANCES,
            &[SweepVariant::Siamese, SweepVariant::Baseline],
            &SEEDS,
            &spec.augmentation,
        )
        .map_err(|e| e.to_string())?;
        let mut ok = true;
        let mut parts = Vec::new();
        for d in SWEEP_DISTANCES {
            let med = |v: SweepVariant| {
                median(&rows.iter().filter(|r| r.distance_deg == d && r.variant == v).map(|r| r.mpjpe).collect::<Vec<_>>())
            };
            let (s, b) = (med(SweepVariant::Siamese), med(SweepVariant::Baseline));
            ok &= s <= b;
            parts.push(format!("{d}°: siamese {s:.2} vs baseline {b:.2}"));
        }
        Ok((ok, parts.join("; ")))
    }));

    results.push(run("embedding rotation sanity", || {
        let t = trained.as_ref().map_err(|e| e.clone())?;
        let (_, model) = t.all_on.first().ok_or("no trained model")?;
        let rows = embedding_rotation_experiment(model, &data.test, &[-45.0, 0.0, 45.0]).map_err(|e| e.to_string())?;
        let zero = rows[1].median_mpjpe;
        let plain = median(&record_errors(model, &data.test, Alignment::None).map_err(|e| e.to_string())?);
        let worst = rows[0].median_mpjpe.max(rows[2].median_mpjpe);
        Ok((
            worst <= 1.5 * zero && (zero - plain).abs() < 1e-9,
            format!(
                "median MPJPE -45° {:.2}, 0° {:.2}, +45° {:.2} mm (limit {:.2})",
                rows[0].median_mpjpe,
                zero,
                rows[2].median_mpjpe,
                1.5 * zero
            ),
        ))
    }));

    results.push(run("determinism", || support::determinism_check().map(|d| (true, d))));

    results.push(run("format suite", || {
        let checks = support::format_checks();
        let failed: Vec<String> = checks
            .iter()
            .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
            .collect();
        Ok((
            failed.is_empty(),
            if failed.is_empty() {
                format!("{} checks passed", checks.len())
            } else {
                failed.join("; ")
            },
        ))
    }));

    let passed = results.iter().filter(|r| r.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0} s",
        results.len(),
        total.elapsed().as_secs_f64()
    );
    if passed != results.len() {
        std::process::exit(1);
    }
}
