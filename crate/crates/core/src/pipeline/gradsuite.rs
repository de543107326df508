//! Finite-difference check of every differentiable operation and of the
//! whole training chain, on small random instances.

use std::fmt::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bodymodel::{
    forward_kinematics_graph, project_weak_perspective_graph, root_relative_graph, BodyModel,
    BodyParams,
};
use crate::error::Result;
use crate::nn::{Bound, ParamStore};
use crate::numerics::gradcheck::{check_gradients, GradCheck};
use crate::numerics::{Graph, Tensor, Var};
use crate::objective::{
    window_loss, Estimates, FrameTargets, LossWeights, SupervisionTarget, WindowTargets,
};
use crate::regressor::{params_to_flat6d, BodyParamVars, RegressorConfig, RegressorHead};
use crate::rotations::{axis_angle_to_matrix_graph, rot6d_to_matrix_graph};
use crate::temporal::{GruCell, TemporalConfig, TemporalEncoder};

use super::model::TemporalModel;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    /// Outer finite-difference step; the compared estimate uses half of it.
    pub step: f64,
    pub tolerance: f64,
    /// Probed coordinates per input tensor of the network-sized cases.
    pub max_coords: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            step: 1e-3,
            tolerance: 1e-4,
            max_coords: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    pub instances: usize,
    pub check: GradCheck,
    pub passed: bool,
}

type CaseFn = fn(&mut ChaCha8Rng, &SuiteConfig) -> Result<GradCheck>;

const CASES: &[(&str, CaseFn)] = &[
    ("add", case_add),
    ("sub", case_sub),
    ("mul", case_mul),
    ("affine", case_affine),
    ("scale", case_scale),
    ("matmul", case_matmul),
    ("add_row", case_add_row),
    ("mul_col", case_mul_col),
    ("linear", case_linear),
    ("sigmoid", case_sigmoid),
    ("tanh", case_tanh),
    ("relu", case_relu),
    ("softmax", case_softmax),
    ("concat", case_concat),
    ("slice", case_slice),
    ("sum", case_sum),
    ("mean", case_mean),
    ("squared_norm", case_squared_norm),
    ("rot6d_to_matrix", case_rot6d),
    ("axis_angle_to_matrix", case_axis_angle),
    ("forward_kinematics", case_fk),
    ("weak_perspective", case_projection),
    ("root_relative", case_root_relative),
    ("gru_step", case_gru),
    ("temporal_encoder", case_encoder),
    ("temporal_encoder_residual", case_encoder_residual),
    ("regressor", case_regressor),
    ("window_loss", case_window_loss),
    ("end_to_end", case_end_to_end),
];

pub fn case_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.0).collect()
}

/// Runs every case `instances` times; cases run in parallel, each with its own stream.
/// A case passes when its worst relative error is within tolerance and at most
/// 1% of its probes straddled a kink.
pub fn run_gradient_suite(cfg: &SuiteConfig) -> Result<Vec<CaseResult>> {
    CASES
        .par_iter()
        .enumerate()
        .map(|(k, &(name, case))| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            let mut check = GradCheck::default();
            for _ in 0..cfg.instances {
                check.merge(&case(&mut rng, cfg)?);
            }
            let passed =
                check.max_rel_err <= cfg.tolerance && check.nonsmooth * 100 <= check.coordinates;
            Ok(CaseResult {
                name,
                instances: cfg.instances,
                check,
                passed,
            })
        })
        .collect()
}

pub fn suite_to_text(results: &[CaseResult], tolerance: f64) -> String {
    let mut s = format!(
        "{:<28} {:>9} {:>11} {:>8} {:>13} {:>13}  status\n",
        "case", "instances", "coordinates", "skipped", "max_rel_err", "max_abs_err"
    );
    for r in results {
        writeln!(
            s,
            "{:<28} {:>9} {:>11} {:>8} {:>13.3e} {:>13.3e}  {}",
            r.name,
            r.instances,
            r.check.coordinates,
            r.check.nonsmooth,
            r.check.max_rel_err,
            r.check.max_abs_err,
            if r.passed { "ok" } else { "FAIL" }
        )
        .unwrap();
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    writeln!(
        s,
        "tolerance {tolerance:e}: {} passed, {failed} failed",
        results.len() - failed
    )
    .unwrap();
    s
}

fn randn(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        std * Distribution::<f64>::sample(&StandardNormal, rng)
    })
}

/// Checks `⟨w, f(inputs)⟩` for a random `w` of the output's shape.
fn check_projected<F>(
    rng: &mut impl Rng,
    cfg: &SuiteConfig,
    inputs: Vec<Tensor>,
    coords: Option<usize>,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let (r, c) = g.value(out).shape();
    let w = randn(rng, r, c, 1.0);
    check_gradients(&inputs, cfg.step, coords, |g, v| {
        let o = f(g, v)?;
        let wv = g.constant(w.clone());
        let m = g.mul(o, wv)?;
        Ok(g.sum(m))
    })
}

fn pair(rng: &mut impl Rng) -> Vec<Tensor> {
    vec![randn(rng, 3, 4, 1.0), randn(rng, 3, 4, 1.0)]
}

fn case_add(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = pair(rng);
    check_projected(rng, cfg, x, None, |g, v| g.add(v[0], v[1]))
}

fn case_sub(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = pair(rng);
    check_projected(rng, cfg, x, None, |g, v| g.sub(v[0], v[1]))
}

fn case_mul(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = pair(rng);
    check_projected(rng, cfg, x, None, |g, v| g.mul(v[0], v[1]))
}

fn case_affine(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let x = vec![randn(rng, 3, 4, 1.0)];
    check_projected(rng, cfg, x, None, move |g, v| Ok(g.affine(v[0], a, b)))
}

fn case_scale(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let a = rng.random_range(-2.0..2.0);
    let x = vec![randn(rng, 3, 4, 1.0)];
    check_projected(rng, cfg, x, None, move |g, v| Ok(g.scale(v[0], a)))
}

fn case_matmul(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 4, 1.0), randn(rng, 4, 2, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| g.matmul(v[0], v[1]))
}

fn case_add_row(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 4, 1.0), randn(rng, 1, 4, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| g.add_row(v[0], v[1]))
}

fn case_mul_col(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 4, 1.0), randn(rng, 3, 1, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| g.mul_col(v[0], v[1]))
}

fn case_linear(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![
        randn(rng, 3, 4, 1.0),
        randn(rng, 4, 5, 1.0),
        randn(rng, 1, 5, 1.0),
    ];
    check_projected(rng, cfg, x, None, |g, v| g.linear(v[0], v[1], v[2]))
}

fn case_sigmoid(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 4, 2.0)];
    check_projected(rng, cfg, x, None, |g, v| Ok(g.sigmoid(v[0])))
}

fn case_tanh(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 4, 2.0)];
    check_projected(rng, cfg, x, None, |g, v| Ok(g.tanh(v[0])))
}

fn case_relu(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    // Keep every entry well away from the kink.
    let mut x = randn(rng, 3, 4, 1.0);
    for v in x.data_mut() {
        *v += 0.1 * v.signum();
    }
    check_projected(rng, cfg, vec![x], None, |g, v| Ok(g.relu(v[0])))
}

fn case_softmax(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 5, 2.0)];
    check_projected(rng, cfg, x, None, |g, v| Ok(g.softmax(v[0])))
}

fn case_concat(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 2, 1.0), randn(rng, 3, 3, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| g.concat(v))
}

fn case_slice(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 6, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| g.slice(v[0], 1, 4))
}

fn case_sum(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 4, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| Ok(g.sum(v[0])))
}

fn case_mean(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 4, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| g.mean(v[0]))
}

fn case_squared_norm(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 3, 4, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| Ok(g.squared_norm(v[0])))
}

fn case_rot6d(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 2, 12, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| rot6d_to_matrix_graph(g, v[0]))
}

fn case_axis_angle(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 2, 6, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| {
        axis_angle_to_matrix_graph(g, v[0])
    })
}

fn body() -> Arc<BodyModel> {
    Arc::new(BodyModel::default_model())
}

/// Rotation matrices of random axis-angles, `n × 9J`.
fn random_rotations(rng: &mut impl Rng, n: usize, joints: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let aa = g.constant(randn(rng, n, 3 * joints, 0.6));
    let r = axis_angle_to_matrix_graph(&mut g, aa)?;
    Ok(g.value(r).clone())
}

fn case_fk(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let model = body();
    let x = vec![
        random_rotations(rng, 1, model.joint_count())?,
        randn(rng, 1, model.shape_dim(), 1.0),
    ];
    check_projected(rng, cfg, x, None, move |g, v| {
        forward_kinematics_graph(g, &model, v[0], v[1], true)
    })
}

fn case_projection(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 2, 15, 0.5), randn(rng, 2, 3, 1.0)];
    check_projected(rng, cfg, x, None, |g, v| {
        project_weak_perspective_graph(g, v[0], v[1])
    })
}

fn case_root_relative(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let x = vec![randn(rng, 2, 15, 0.5)];
    check_projected(rng, cfg, x, None, |g, v| root_relative_graph(g, v[0], 0))
}

/// Replaces every tensor with `N(0, (gain/√rows)²)` so no block is near zero.
fn randomize(store: &mut ParamStore, rng: &mut impl Rng, gain: f64) {
    for t in store.tensors_mut() {
        let (r, c) = t.shape();
        *t = randn(rng, r, c, gain / (r as f64).sqrt());
    }
}

/// Inputs are the store's tensors followed by `extra`; `f` gets the bound weights and the extra vars.
fn check_module<F>(
    rng: &mut impl Rng,
    cfg: &SuiteConfig,
    store: &ParamStore,
    extra: Vec<Tensor>,
    coords: Option<usize>,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &Bound, &[Var]) -> Result<Var>,
{
    let np = store.len();
    let mut inputs = store.tensors().to_vec();
    inputs.extend(extra);
    check_projected(rng, cfg, inputs, coords, move |g, v| {
        f(g, &Bound::from_vars(v[..np].to_vec()), &v[np..])
    })
}

fn case_gru(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "cell", 4, 3, rng);
    randomize(&mut store, rng, 1.0);
    let extra = vec![randn(rng, 2, 4, 1.0), randn(rng, 2, 3, 0.5)];
    check_module(rng, cfg, &store, extra, None, move |g, p, v| {
        cell.step(g, p, v[0], v[1])
    })
}

fn small_temporal(use_residual: bool, poseforecast: bool) -> TemporalConfig {
    TemporalConfig {
        window: 4,
        feature_dim: 6,
        hidden_dim: 3,
        forecast_dim: 4,
        bottleneck_dim: 2,
        attention_hidden: vec![3],
        use_residual,
        poseforecast,
        poseforecast_includes_current: false,
    }
}

fn encoder_case(rng: &mut ChaCha8Rng, cfg: &SuiteConfig, tc: TemporalConfig) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let enc = TemporalEncoder::new(&tc, &mut store, rng)?;
    randomize(&mut store, rng, 1.0);
    let frames: Vec<Tensor> = (0..tc.window)
        .map(|_| randn(rng, 2, tc.feature_dim, 1.0))
        .collect();
    check_module(
        rng,
        cfg,
        &store,
        frames,
        Some(cfg.max_coords),
        move |g, p, v| Ok(enc.encode(g, p, v)?.output),
    )
}

fn case_encoder(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    encoder_case(rng, cfg, small_temporal(false, true))
}

fn case_encoder_residual(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    encoder_case(rng, cfg, small_temporal(true, false))
}

fn random_params(rng: &mut impl Rng, model: &BodyModel, n: usize) -> Vec<BodyParams> {
    (0..n)
        .map(|_| {
            let mut p = BodyParams::rest(model.joint_count(), model.shape_dim());
            for aa in &mut p.pose {
                *aa = [
                    0.4 * rng.random::<f64>() - 0.2,
                    0.4 * rng.random::<f64>() - 0.2,
                    0.4 * rng.random::<f64>() - 0.2,
                ];
            }
            for b in &mut p.shape {
                *b = rng.random_range(-1.0..1.0);
            }
            p.scale = rng.random_range(0.9..1.1);
            p.translation = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
            p
        })
        .collect()
}

fn mean_theta(rng: &mut impl Rng, model: &BodyModel) -> Vec<f64> {
    params_to_flat6d(&random_params(rng, model, 1)[0])
}

fn small_regressor() -> RegressorConfig {
    RegressorConfig {
        hidden: vec![8],
        iterations: 2,
    }
}

fn case_regressor(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let model = body();
    let mut store = ParamStore::new();
    let mean = Tensor::row(&mean_theta(rng, &model));
    let head = RegressorHead::new(
        &small_regressor(),
        5,
        mean,
        model.joint_count(),
        model.shape_dim(),
        &mut store,
        rng,
    )?;
    randomize(&mut store, rng, 0.5);
    let extra = vec![randn(rng, 2, 5, 1.0)];
    check_module(
        rng,
        cfg,
        &store,
        extra,
        Some(cfg.max_coords),
        move |g, p, v| {
            let est = head.regress(g, p, v[0])?;
            let parts = [est.rotations, est.shape, est.camera];
            g.concat(&parts)
        },
    )
}

fn all_ones() -> LossWeights {
    LossWeights {
        pose: 1.0,
        shape: 1.0,
        joints3d: 1.0,
        joints2d: 1.0,
        supervision: SupervisionTarget::Adjacent,
    }
}

fn random_targets(rng: &mut impl Rng, model: &BodyModel, n: usize) -> Result<WindowTargets> {
    Ok(WindowTargets {
        current: FrameTargets::from_params(model, &random_params(rng, model, n))?,
        previous: Some(FrameTargets::from_params(
            model,
            &random_params(rng, model, n),
        )?),
        next: Some(FrameTargets::from_params(
            model,
            &random_params(rng, model, n),
        )?),
    })
}

fn case_window_loss(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let model = body();
    let (j, b, n) = (model.joint_count(), model.shape_dim(), 2);
    let targets = random_targets(rng, &model, n)?;
    let mut inputs = Vec::new();
    for _ in 0..3 {
        inputs.push(random_rotations(rng, n, j)?);
        inputs.push(randn(rng, n, b, 1.0));
        let mut cam = randn(rng, n, 3, 0.1);
        for r in 0..n {
            cam.set(r, 0, cam.get(r, 0) + 1.0);
        }
        inputs.push(cam);
    }
    let weights = all_ones();
    check_gradients(&inputs, cfg.step, Some(cfg.max_coords * 4), move |g, v| {
        let est = |k: usize| BodyParamVars {
            rotations: v[3 * k],
            shape: v[3 * k + 1],
            camera: v[3 * k + 2],
        };
        let estimates = Estimates {
            integrated: est(0),
            past: Some(est(1)),
            future: Some(est(2)),
        };
        Ok(window_loss(g, &model, &estimates, &targets, &weights)?.total)
    })
}

/// Features of a window batch through encoder, integration, regressor,
/// kinematics and the full loss, against frames and every weight.
fn case_end_to_end(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<GradCheck> {
    let model_body = body();
    let tc = small_temporal(false, true);
    // Targets and the starting estimate share a base pose, and a damped head
    // keeps estimates close to it, so the loss stays O(1) and rounding does
    // not swamp the differences.
    let base = random_params(rng, &model_body, 1).remove(0);
    let mut net = TemporalModel::new(
        &tc,
        &small_regressor(),
        model_body.clone(),
        &params_to_flat6d(&base),
        rng.random(),
    )?;
    randomize(&mut net.params, rng, 0.5);
    let head: Vec<usize> = (0..net.params.len())
        .filter(|&k| net.params.names()[k].starts_with("regressor"))
        .collect();
    for k in head {
        let t = &mut net.params.tensors_mut()[k];
        *t = t.scale(HEAD_DAMPING);
    }
    let n = 2;
    let mut near = || -> Result<FrameTargets> {
        let frames: Vec<BodyParams> = (0..n)
            .map(|_| perturbed(rng, &base, TARGET_SPREAD))
            .collect();
        FrameTargets::from_params(&model_body, &frames)
    };
    let targets = WindowTargets {
        current: near()?,
        previous: Some(near()?),
        next: Some(near()?),
    };
    let np = net.params.len();
    let mut inputs = net.params.tensors().to_vec();
    inputs.extend((0..tc.window).map(|_| randn(rng, n, tc.feature_dim, 1.0)));
    let weights = all_ones();
    check_gradients(&inputs, cfg.step, Some(cfg.max_coords), move |g, v| {
        let p = Bound::from_vars(v[..np].to_vec());
        let est = net.forward_train(g, &p, &v[np..], weights.supervision)?;
        Ok(window_loss(g, &net.body, &est, &targets, &weights)?.total)
    })
}

const HEAD_DAMPING: f64 = 0.3;
const TARGET_SPREAD: f64 = 0.05;

fn perturbed(rng: &mut impl Rng, base: &BodyParams, spread: f64) -> BodyParams {
    let mut p = base.clone();
    for v in p.pose.iter_mut().flatten().chain(p.shape.iter_mut()) {
        *v += rng.random_range(-spread..spread);
    }
    p.scale += rng.random_range(-spread..spread);
    p
}
