mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tcmr::bodymodel::BodyModel;
use tcmr::objective::SupervisionTarget;
use tcmr::pipeline::train::epoch_windows;
use tcmr::pipeline::{
    evaluate, evaluate_predictions, ground_truth_predictions, predict, train, RunConfig, Trainer,
    WindowRef,
};
use tcmr::synthdata::{generate_split, window_starts, Split};

use common::small_run_config;

fn body() -> Arc<BodyModel> {
    Arc::new(BodyModel::default_model())
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let mut cfg = small_run_config();
    cfg.optimizer.learning_rate = 0.0;
    cfg.optimizer.epochs = 3;
    let train_set = generate_split(&body(), &cfg.data, cfg.seed, Split::Train).unwrap();
    let initial = Trainer::new(&cfg, body(), &train_set.header.mean_theta).unwrap();
    let outcome = train(&cfg, body(), &train_set, None).unwrap();
    assert!(outcome
        .log
        .iter()
        .all(|e| e.batches > 0 && e.skipped_batches == 0));
    assert_eq!(outcome.last.weights, initial.model.params.tensors());
}

#[test]
fn loss_on_a_fixed_batch_decreases_for_ten_steps() {
    let cfg = RunConfig::default();
    let train_set = generate_split(&body(), &cfg.data, cfg.seed, Split::Train).unwrap();
    // The first batch a seed-0 training run would draw.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut refs = epoch_windows(
        &train_set,
        cfg.temporal.window,
        cfg.optimizer.window_stride,
        &mut rng,
    );
    refs.truncate(cfg.optimizer.batch_size);
    let mut trainer = Trainer::new(&cfg, body(), &train_set.header.mean_theta).unwrap();
    let mut losses = vec![trainer.batch_loss(&train_set, &refs).unwrap().total];
    for _ in 0..10 {
        trainer.step(&train_set, &refs).unwrap();
        losses.push(trainer.batch_loss(&train_set, &refs).unwrap().total);
    }
    for w in losses.windows(2) {
        assert!(
            w[1] < w[0],
            "loss went from {} to {}: {losses:?}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn evaluation_covers_every_full_window_and_builds_no_side_estimates() {
    let cfg = small_run_config();
    let data = generate_split(&body(), &cfg.data, 4, Split::Eval).unwrap();
    let train_set = generate_split(&body(), &cfg.data, 4, Split::Train).unwrap();
    let outcome = train(&cfg, body(), &train_set, None).unwrap();
    let model = outcome.best.to_model(body()).unwrap();
    let (preds, report) = evaluate(&model, &data).unwrap();
    assert_eq!(model.side_estimate_count(), 0);
    let t = cfg.temporal.window;
    let expected: usize = data.motions.iter().map(|m| m.len() - t + 1).sum();
    assert_eq!(report.frame_count, expected);
    assert_eq!(
        report.skipped_frames,
        data.motions.iter().map(|m| m.len()).sum::<usize>() - expected
    );
    assert_eq!(
        preds
            .sequences
            .iter()
            .map(|s| s.params.len())
            .sum::<usize>(),
        expected
    );
    assert!(preds
        .sequences
        .iter()
        .all(|s| s.first_frame == tcmr::temporal::current_index(t)));

    // Training does build them when the side branches are supervised.
    let mut trainer = Trainer::new(&cfg, body(), &train_set.header.mean_theta).unwrap();
    assert_eq!(cfg.loss.supervision, SupervisionTarget::Current);
    trainer
        .step(
            &train_set,
            &[WindowRef {
                sequence: 0,
                start: 0,
            }],
        )
        .unwrap();
    assert_eq!(trainer.model.side_estimate_count(), 2);
}

#[test]
fn ground_truth_as_predictions_scores_zero() {
    let cfg = small_run_config();
    let data = generate_split(&body(), &cfg.data, 9, Split::Eval).unwrap();
    let report = evaluate_predictions(
        &body(),
        &data,
        &ground_truth_predictions(&data, cfg.temporal.window),
    )
    .unwrap();
    assert_eq!(report.mpjpe_mm, 0.0);
    assert!(report.pa_mpjpe_mm < 1e-9);
    assert_eq!(report.mpvpe_mm, Some(0.0));
    assert_eq!(report.accel_err_mm_s2, 0.0);
}

#[test]
fn a_sequence_of_one_window_gives_one_estimate() {
    let mut cfg = small_run_config();
    cfg.data.frames = cfg.temporal.window;
    let data = generate_split(&body(), &cfg.data, 1, Split::Eval).unwrap();
    assert_eq!(
        window_starts(cfg.data.frames, cfg.temporal.window, 1).len(),
        1
    );
    let model = tcmr::pipeline::TemporalModel::new(
        &cfg.temporal,
        &cfg.regressor,
        body(),
        &data.header.mean_theta,
        0,
    )
    .unwrap();
    let preds = predict(&model, &data).unwrap();
    assert!(preds.sequences.iter().all(|s| s.params.len() == 1));
}

#[test]
fn invalid_configurations_are_refused_before_training() {
    let mut cfg = small_run_config();
    let train_set = generate_split(&body(), &cfg.data, 0, Split::Train).unwrap();
    cfg.temporal.use_residual = true;
    cfg.temporal.hidden_dim = 10;
    let err = train(&cfg, body(), &train_set, None).unwrap_err();
    assert!(err.to_string().contains("use_residual"), "{err}");
}
