//! Iterative regression of body parameters from a temporal feature.
//!
//! The estimate lives in a flat layout `[6D rotations (6J) | shape (B) | s, tx, ty]`
//! and is refined additively from a fixed mean.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bodymodel::BodyParams;
use crate::error::{Error, Result};
use crate::nn::{Bound, Mlp, ParamStore};
use crate::numerics::{Graph, Tensor, Var};
use crate::rotations::{matrix_to_axis_angle, rot6d_to_matrix_graph, AxisAngle, RotationMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub hidden: Vec<usize>,
    pub iterations: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![192, 192],
            iterations: 3,
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::config("regressor.hidden", "widths must be positive"));
        }
        Ok(())
    }
}

/// Width of the flat regression layout.
pub fn theta_dim(joint_count: usize, shape_dim: usize) -> usize {
    6 * joint_count + shape_dim + 3
}

/// Graph handles for one batch of body parameters.
#[derive(Clone, Copy, Debug)]
pub struct BodyParamVars {
    /// `n × 9J` row-major rotation matrices.
    pub rotations: Var,
    pub shape: Var,
    /// `n × 3` as `(s, tx, ty)`.
    pub camera: Var,
}

impl BodyParamVars {
    /// Constant handles for known parameters.
    pub fn constant(g: &mut Graph, params: &[BodyParams]) -> Result<Self> {
        let n = params.len();
        let j = params.first().map_or(0, |p| p.pose.len());
        let b = params.first().map_or(0, |p| p.shape.len());
        let mut rot = Tensor::zeros(n, 9 * j);
        let mut shape = Tensor::zeros(n, b);
        let mut cam = Tensor::zeros(n, 3);
        for (i, p) in params.iter().enumerate() {
            if p.pose.len() != j || p.shape.len() != b {
                return Err(Error::Shape(
                    "body parameter batch with mixed dimensions".into(),
                ));
            }
            for (k, aa) in p.pose.iter().enumerate() {
                let m = crate::rotations::axis_angle_to_matrix(&AxisAngle(*aa)).flat();
                rot.row_slice_mut(i)[9 * k..9 * k + 9].copy_from_slice(&m);
            }
            shape.row_slice_mut(i).copy_from_slice(&p.shape);
            cam.row_slice_mut(i)
                .copy_from_slice(&[p.scale, p.translation[0], p.translation[1]]);
        }
        Ok(Self {
            rotations: g.constant(rot),
            shape: g.constant(shape),
            camera: g.constant(cam),
        })
    }

    /// Reads the values back as [`BodyParams`], converting rotations to axis-angle.
    pub fn to_params(&self, g: &Graph) -> Result<Vec<BodyParams>> {
        let rot = g.value(self.rotations);
        let shape = g.value(self.shape);
        let cam = g.value(self.camera);
        let j = rot.cols() / 9;
        (0..rot.rows())
            .map(|i| {
                let r = rot.row_slice(i);
                let pose = (0..j)
                    .map(|k| {
                        matrix_to_axis_angle(&RotationMatrix::from_flat(&r[9 * k..9 * k + 9])).0
                    })
                    .collect();
                let c = cam.row_slice(i);
                let p = BodyParams {
                    pose,
                    shape: shape.row_slice(i).to_vec(),
                    scale: c[0],
                    translation: [c[1], c[2]],
                };
                if !p.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "regressed parameters of window {i}"
                    )));
                }
                Ok(p)
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct RegressorHead {
    pub config: RegressorConfig,
    pub joint_count: usize,
    pub shape_dim: usize,
    pub feature_dim: usize,
    /// Initial estimate in the flat layout.
    pub mean: Tensor,
    pub mlp: Mlp,
    calls: AtomicUsize,
}

impl Clone for RegressorHead {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            joint_count: self.joint_count,
            shape_dim: self.shape_dim,
            feature_dim: self.feature_dim,
            mean: self.mean.clone(),
            mlp: self.mlp.clone(),
            calls: AtomicUsize::new(self.calls.load(Ordering::Relaxed)),
        }
    }
}

impl RegressorHead {
    pub fn new(
        config: &RegressorConfig,
        feature_dim: usize,
        mean: Tensor,
        joint_count: usize,
        shape_dim: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = theta_dim(joint_count, shape_dim);
        if mean.shape() != (1, d) {
            return Err(Error::Shape(format!(
                "mean estimate {:?}, expected (1, {d})",
                mean.shape()
            )));
        }
        let mut widths = vec![feature_dim + d];
        widths.extend(&config.hidden);
        widths.push(d);
        let mlp = Mlp::new(store, "regressor", &widths, 0.01, rng);
        Ok(Self {
            config: config.clone(),
            joint_count,
            shape_dim,
            feature_dim,
            mean,
            mlp,
            calls: AtomicUsize::new(0),
        })
    }

    /// Number of [`regress`](Self::regress) calls since construction.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Flat estimate after the refinement iterations, `n × theta_dim`.
    pub fn regress_flat(&self, g: &mut Graph, p: &Bound, feature: Var) -> Result<Var> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (n, c) = g.value(feature).shape();
        if c != self.feature_dim {
            return Err(Error::Shape(format!(
                "regressor feature {n}x{c}, expected width {}",
                self.feature_dim
            )));
        }
        let d = self.mean.cols();
        let mut est = g.constant(Tensor::from_fn(n, d, |_, j| self.mean.data()[j]));
        for _ in 0..self.config.iterations {
            let x = g.concat(&[feature, est])?;
            let delta = self.mlp.forward(g, p, x)?;
            est = g.add(est, delta)?;
        }
        Ok(est)
    }

    pub fn regress(&self, g: &mut Graph, p: &Bound, feature: Var) -> Result<BodyParamVars> {
        let est = self.regress_flat(g, p, feature)?;
        let (j6, b) = (6 * self.joint_count, self.shape_dim);
        let r6 = g.slice(est, 0, j6)?;
        let rotations = rot6d_to_matrix_graph(g, r6)?;
        let shape = g.slice(est, j6, j6 + b)?;
        let camera = g.slice(est, j6 + b, j6 + b + 3)?;
        Ok(BodyParamVars {
            rotations,
            shape,
            camera,
        })
    }
}

/// Flat regression layout of known parameters.
pub fn params_to_flat6d(params: &BodyParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(theta_dim(params.pose.len(), params.shape.len()));
    for aa in &params.pose {
        v.extend_from_slice(
            &crate::rotations::axis_angle_to_matrix(&AxisAngle(*aa))
                .to_rot6d()
                .0,
        );
    }
    v.extend_from_slice(&params.shape);
    v.extend_from_slice(&[params.scale, params.translation[0], params.translation[1]]);
    v
}
