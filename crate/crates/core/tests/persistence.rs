//! Golden files pin the dataset and checkpoint layouts byte for byte. Run
//! with `TCMR_BLESS=1` to regenerate them after an intentional format change.

mod common;

use std::path::Path;
use std::sync::Arc;

use tcmr::bodymodel::{BodyModel, BodyParams};
use tcmr::pipeline::{evaluate, predict, train, Checkpoint, Predictions};
use tcmr::synthdata::{generate_split, Dataset, FeatureMap, Split};

use common::{golden, small_run_config, tiny_body, tiny_config};

fn tiny_dataset(split: Split) -> Dataset {
    let cfg = tiny_config();
    generate_split(&tiny_body(), &cfg.data, cfg.seed, split).unwrap()
}

/// Compares `bytes` with a golden file, or rewrites it when blessing.
fn check_golden(name: &str, bytes: &[u8]) {
    let path = golden(name);
    if std::env::var_os("TCMR_BLESS").is_some() {
        std::fs::write(&path, bytes).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(
        expected == bytes,
        "{name} differs from its golden file ({} vs {} bytes)",
        bytes.len(),
        expected.len()
    );
}

fn saved_bytes(save: impl FnOnce(&Path)) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("file");
    save(&path);
    std::fs::read(&path).unwrap()
}

fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Splits a container into its magic line, JSON header and payload.
fn container(bytes: &[u8]) -> (String, serde_json::Value, &[u8]) {
    let first = bytes.iter().position(|&b| b == b'\n').unwrap();
    let second = first + 1 + bytes[first + 1..].iter().position(|&b| b == b'\n').unwrap();
    let magic = String::from_utf8(bytes[..first].to_vec()).unwrap();
    let header = serde_json::from_slice(&bytes[first + 1..second]).unwrap();
    (magic, header, &bytes[second + 1..])
}

#[test]
fn dataset_matches_golden_file() {
    let mut ds = tiny_dataset(Split::Train);
    check_golden("tiny_train.tcds", &saved_bytes(|p| ds.save(p).unwrap()));
}

#[test]
fn golden_dataset_layout_is_params_joints_vertices_features() {
    let bytes = std::fs::read(golden("tiny_train.tcds")).unwrap();
    let (magic, header, payload) = container(&bytes);
    assert_eq!(magic, "TCMR-DATASET 1");
    let body = tiny_body();
    let (j, b, v) = (body.joint_count(), body.shape_dim(), body.vertex_count());
    assert_eq!(header["joint_count"], j);
    assert_eq!(header["vertex_count"], v);
    let d = header["feature_dim"].as_u64().unwrap() as usize;
    let lengths: Vec<usize> = serde_json::from_value(header["sequence_lengths"].clone()).unwrap();
    assert_eq!(lengths, vec![6, 6]);
    assert_eq!(header["payload_bytes"], payload.len());

    let per_frame = BodyParams::flat_len(j, b) + 3 * j + 3 * v + d;
    let values = f64s(payload);
    assert_eq!(values.len(), 12 * per_frame);
    let cfg = tiny_config();
    let map = FeatureMap::new(&body, &cfg.data, cfg.seed).unwrap();
    for record in values.chunks(per_frame) {
        let (params, rest) = record.split_at(BodyParams::flat_len(j, b));
        let (joints, rest) = rest.split_at(3 * j);
        let (vertices, features) = rest.split_at(3 * v);
        let p = BodyParams::from_flat(params, j, b).unwrap();
        let fk = body.forward_params(&p).unwrap();
        assert_eq!(joints, fk.joints.as_flattened());
        assert_eq!(vertices, fk.vertices.as_flattened());
        assert_eq!(features, map.apply(&p, &fk.joints).as_slice());
    }
}

#[test]
fn dataset_round_trip_is_lossless() {
    let mut ds = tiny_dataset(Split::Eval);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.tcds");
    ds.save(&path).unwrap();
    let mut back = Dataset::load(&path).unwrap();
    assert_eq!(back, ds);
    let again = dir.path().join("again.tcds");
    back.save(&again).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn damaged_dataset_files_are_rejected() {
    let bytes = std::fs::read(golden("tiny_train.tcds")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tcds");
    let expect_format_error = |data: &[u8], what: &str| {
        std::fs::write(&path, data).unwrap();
        let err = Dataset::load(&path).unwrap_err();
        assert!(matches!(err, tcmr::Error::Format { .. }), "{what}: {err}");
    };
    expect_format_error(&bytes[..bytes.len() - 8], "truncated");
    expect_format_error(&bytes[..bytes.len() - 3], "cut mid-value");
    let mut flipped = bytes.clone();
    *flipped.last_mut().unwrap() ^= 1;
    expect_format_error(&flipped, "flipped bit");
    let mut extended = bytes.clone();
    extended.extend_from_slice(&[0; 8]);
    expect_format_error(&extended, "trailing bytes");
    let mut renamed = bytes.clone();
    renamed[..4].copy_from_slice(b"XCMR");
    expect_format_error(&renamed, "wrong magic");
}

fn tiny_trained() -> tcmr::pipeline::TrainOutcome {
    let cfg = tiny_config();
    train(&cfg, tiny_body(), &tiny_dataset(Split::Train), None).unwrap()
}

#[test]
fn checkpoint_matches_golden_file() {
    let outcome = tiny_trained();
    check_golden("tiny.tcck", &saved_bytes(|p| outcome.last.save(p).unwrap()));
}

#[test]
fn golden_checkpoint_round_trips_bit_for_bit() {
    let path = golden("tiny.tcck");
    let ckpt = Checkpoint::load(&path).unwrap();
    let (magic, header, payload) = {
        let bytes = std::fs::read(&path).unwrap();
        let (m, h, p) = container(&bytes);
        (m, h, p.to_vec())
    };
    assert_eq!(magic, "TCMR-CHECKPOINT 1");
    assert_eq!(header["epoch"], 2);
    // Payload order: mean estimate, then every weight, every first moment, every second moment.
    let values = f64s(&payload);
    let n_mean = ckpt.mean_theta.len();
    assert_eq!(&values[..n_mean], ckpt.mean_theta.as_slice());
    let weights: Vec<f64> = ckpt
        .weights
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let firsts: Vec<f64> = ckpt.adam.iter().flat_map(|s| s.m.data().to_vec()).collect();
    let seconds: Vec<f64> = ckpt.adam.iter().flat_map(|s| s.v.data().to_vec()).collect();
    let k = weights.len();
    assert_eq!(&values[n_mean..n_mean + k], weights.as_slice());
    assert_eq!(&values[n_mean + k..n_mean + 2 * k], firsts.as_slice());
    assert_eq!(&values[n_mean + 2 * k..], seconds.as_slice());

    let resaved = saved_bytes(|p| ckpt.save(p).unwrap());
    assert_eq!(resaved, std::fs::read(&path).unwrap());
}

#[test]
fn checkpoint_reload_reproduces_every_prediction_bit() {
    let outcome = tiny_trained();
    let body = tiny_body();
    let eval_set = tiny_dataset(Split::Eval);
    let before = predict(&outcome.best.to_model(body.clone()).unwrap(), &eval_set).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.tcck");
    outcome.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, outcome.best);
    let after = predict(&loaded.to_model(body).unwrap(), &eval_set).unwrap();
    assert_eq!(before, after);

    let pred_path = dir.path().join("pred.json");
    after.save(&pred_path).unwrap();
    assert_eq!(Predictions::load(&pred_path).unwrap(), after);
}

#[test]
fn checkpoint_for_another_architecture_is_rejected() {
    let outcome = tiny_trained();
    let mut other = outcome.best.clone();
    other.config.temporal.forecast_dim = 4;
    let err = other.to_model(tiny_body()).unwrap_err();
    assert!(
        matches!(
            err,
            tcmr::Error::Incompatible { .. } | tcmr::Error::Shape(_)
        ),
        "{err}"
    );
    // A dataset with a different feature width is refused at evaluation.
    let model = outcome.best.to_model(tiny_body()).unwrap();
    let mut cfg = tiny_config();
    cfg.data.feature_dim = 24;
    let wide = generate_split(&tiny_body(), &cfg.data, 0, Split::Eval).unwrap();
    assert!(matches!(
        evaluate(&model, &wide).unwrap_err(),
        tcmr::Error::Incompatible { .. }
    ));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = std::fs::read(golden("tiny.tcck")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tcck");
    std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
    assert!(matches!(
        Checkpoint::load(&path).unwrap_err(),
        tcmr::Error::Format { .. }
    ));
    std::fs::write(&path, b"TCMR-CHECKPOINT 9\n{}\n").unwrap();
    assert!(matches!(
        Checkpoint::load(&path).unwrap_err(),
        tcmr::Error::Format { .. }
    ));
}

#[test]
fn repeated_runs_give_identical_reports() {
    let cfg = small_run_config();
    let body = Arc::new(BodyModel::default_model());
    let run = || {
        let train_set = generate_split(&body, &cfg.data, cfg.seed, Split::Train).unwrap();
        let val = generate_split(&body, &cfg.data, cfg.seed, Split::Val).unwrap();
        let eval_set = generate_split(&body, &cfg.data, cfg.seed, Split::Eval).unwrap();
        let outcome = train(&cfg, body.clone(), &train_set, Some(&val)).unwrap();
        let (_, report) =
            evaluate(&outcome.best.to_model(body.clone()).unwrap(), &eval_set).unwrap();
        (outcome.log, report.to_text())
    };
    let (log_a, report_a) = run();
    let (log_b, report_b) = run();
    assert_eq!(report_a, report_b);
    assert_eq!(format!("{log_a:?}"), format!("{log_b:?}"));
}
