#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tcmr::bodymodel::BodyModel;
use tcmr::nn::ParamStore;
use tcmr::numerics::Tensor;
use tcmr::pipeline::RunConfig;
use tcmr::regressor::RegressorConfig;
use tcmr::temporal::{TemporalConfig, TemporalEncoder};

/// Default model dimensions on a dataset small enough for a few seconds of training.
pub fn small_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.frames = 24;
    cfg.data.train_sequences = 6;
    cfg.data.val_sequences = 2;
    cfg.data.eval_sequences = 3;
    cfg.optimizer.epochs = 2;
    cfg
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        std * Distribution::<f64>::sample(&StandardNormal, rng)
    })
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-loop GRU step. Weight columns are laid out reset | update | candidate.
pub fn naive_gru_step(w: &Tensor, u: &Tensor, b: &[f64], x: &[f64], h: &[f64]) -> Vec<f64> {
    let d = h.len();
    let gate = |col: usize| -> (f64, f64) {
        let mut from_x = b[col];
        for (i, xi) in x.iter().enumerate() {
            from_x += xi * w.get(i, col);
        }
        let mut from_h = 0.0;
        for (i, hi) in h.iter().enumerate() {
            from_h += hi * u.get(i, col);
        }
        (from_x, from_h)
    };
    (0..d)
        .map(|k| {
            let (rx, rh) = gate(k);
            let (zx, zh) = gate(d + k);
            let (nx, nh) = gate(2 * d + k);
            let r = sigmoid(rx + rh);
            let z = sigmoid(zx + zh);
            let n = (nx + r * nh).tanh();
            (1.0 - z) * n + z * h[k]
        })
        .collect()
}

pub fn random_encoder(cfg: &TemporalConfig, seed: u64) -> (TemporalEncoder, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let enc = TemporalEncoder::new(cfg, &mut store, &mut rng).unwrap();
    // Non-zero biases everywhere so no path is trivially dead.
    for t in store.tensors_mut() {
        if t.rows() == 1 {
            *t = gaussian(&mut rng, 1, t.cols(), 0.3);
        }
    }
    (enc, store)
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

pub fn tiny_body() -> Arc<BodyModel> {
    Arc::new(BodyModel::load(&golden("tiny_body.json")).unwrap())
}

/// Golden-file configuration; every setting that shapes the bytes is pinned here.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 3;
    cfg.data.frames = 6;
    cfg.data.max_frequency_bin = 2;
    cfg.data.train_sequences = 2;
    cfg.data.val_sequences = 0;
    cfg.data.eval_sequences = 1;
    cfg.data.feature_dim = 20;
    cfg.data.feature_hidden = 8;
    // Noise-free, so the stored features can be recomputed exactly.
    cfg.data.feature_noise = 0.0;
    cfg.temporal = TemporalConfig {
        window: 4,
        feature_dim: 20,
        hidden_dim: 3,
        forecast_dim: 3,
        bottleneck_dim: 2,
        attention_hidden: vec![3],
        ..TemporalConfig::default()
    };
    cfg.regressor = RegressorConfig {
        hidden: vec![4],
        iterations: 2,
    };
    cfg.optimizer.learning_rate = 1e-3;
    cfg.optimizer.epochs = 2;
    cfg.optimizer.batch_size = 2;
    cfg.optimizer.window_stride = 1;
    cfg
}
