//! Training loss over the integrated, past and future estimates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bodymodel::{
    forward_kinematics_graph, project_weak_perspective, project_weak_perspective_graph,
    root_relative_graph, BodyModel, BodyParams,
};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::regressor::BodyParamVars;
use crate::rotations::{axis_angle_to_matrix, AxisAngle};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionTarget {
    /// All three estimates are compared with the current frame.
    #[default]
    Current,
    /// The past estimate is compared with the frame before the current one and
    /// the future estimate with the frame after it.
    Adjacent,
    /// Only the integrated estimate is supervised.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pose: f64,
    pub shape: f64,
    pub joints3d: f64,
    pub joints2d: f64,
    #[serde(default)]
    pub supervision: SupervisionTarget,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pose: 60.0,
            shape: 0.06,
            joints3d: 300.0,
            joints2d: 300.0,
            supervision: SupervisionTarget::Current,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.pose, self.shape, self.joints3d, self.joints2d];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config(
                "loss",
                "weights must be finite and nonnegative",
            ));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::config(
                "loss",
                "at least one weight must be positive",
            ));
        }
        Ok(())
    }

    fn get(&self, term: Term) -> f64 {
        match term {
            Term::Pose => self.pose,
            Term::Shape => self.shape,
            Term::Joints3d => self.joints3d,
            Term::Joints2d => self.joints2d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Integrated,
    Past,
    Future,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Pose,
    Shape,
    Joints3d,
    Joints2d,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::Pose, Term::Shape, Term::Joints3d, Term::Joints2d];
}

/// Ground truth for one frame of every window in a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTargets {
    /// `n × 9J`.
    pub rotations: Tensor,
    pub shape: Tensor,
    /// Root-relative joints, `n × 3J`.
    pub joints3d: Tensor,
    /// Ground-truth joints projected with the ground-truth camera, `n × 2J`.
    pub joints2d: Tensor,
}

impl FrameTargets {
    pub fn from_params(model: &BodyModel, params: &[BodyParams]) -> Result<Self> {
        let j = model.joint_count();
        let n = params.len();
        let mut t = Self {
            rotations: Tensor::zeros(n, 9 * j),
            shape: Tensor::zeros(n, model.shape_dim()),
            joints3d: Tensor::zeros(n, 3 * j),
            joints2d: Tensor::zeros(n, 2 * j),
        };
        for (i, p) in params.iter().enumerate() {
            let fk = model.forward_params(p)?;
            t.fill_row(i, p, &fk.joints);
        }
        Ok(t)
    }

    /// Uses already computed joints instead of running kinematics.
    pub fn from_params_and_joints(params: &[BodyParams], joints: &[Vec<[f64; 3]>]) -> Self {
        let n = params.len();
        let j = joints.first().map_or(0, Vec::len);
        let b = params.first().map_or(0, |p| p.shape.len());
        let mut t = Self {
            rotations: Tensor::zeros(n, 9 * j),
            shape: Tensor::zeros(n, b),
            joints3d: Tensor::zeros(n, 3 * j),
            joints2d: Tensor::zeros(n, 2 * j),
        };
        for (i, (p, js)) in params.iter().zip(joints).enumerate() {
            t.fill_row(i, p, js);
        }
        t
    }

    fn fill_row(&mut self, i: usize, p: &BodyParams, joints: &[[f64; 3]]) {
        for (k, aa) in p.pose.iter().enumerate() {
            self.rotations.row_slice_mut(i)[9 * k..9 * k + 9]
                .copy_from_slice(&axis_angle_to_matrix(&AxisAngle(*aa)).flat());
        }
        self.shape.row_slice_mut(i).copy_from_slice(&p.shape);
        let root = joints[0];
        let rel = self.joints3d.row_slice_mut(i);
        for (k, q) in joints.iter().enumerate() {
            for c in 0..3 {
                rel[3 * k + c] = q[c] - root[c];
            }
        }
        let p2 = project_weak_perspective(joints, p.scale, p.translation);
        let out = self.joints2d.row_slice_mut(i);
        for (k, q) in p2.iter().enumerate() {
            out[2 * k] = q[0];
            out[2 * k + 1] = q[1];
        }
    }
}

/// Current-frame targets plus the neighbours used by [`SupervisionTarget::Adjacent`].
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTargets {
    pub current: FrameTargets,
    pub previous: Option<FrameTargets>,
    pub next: Option<FrameTargets>,
}

/// The three estimates of a batch; past and future are absent at inference
/// and when the past/future encoders are disabled.
#[derive(Clone, Copy, Debug)]
pub struct Estimates {
    pub integrated: BodyParamVars,
    pub past: Option<BodyParamVars>,
    pub future: Option<BodyParamVars>,
}

/// Loss graph node plus its weighted parts, each already divided by the batch size.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub parts: Vec<(Branch, Term, Var)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub parts: Vec<(Branch, Term, f64)>,
}

impl LossBreakdown {
    pub fn term(&self, branch: Branch, term: Term) -> f64 {
        self.parts
            .iter()
            .filter(|(b, t, _)| *b == branch && *t == term)
            .map(|p| p.2)
            .sum()
    }

    pub fn term_total(&self, term: Term) -> f64 {
        self.parts
            .iter()
            .filter(|(_, t, _)| *t == term)
            .map(|p| p.2)
            .sum()
    }
}

impl LossTerms {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            total: g.value(self.total).data()[0],
            parts: self
                .parts
                .iter()
                .map(|&(b, t, v)| (b, t, g.value(v).data()[0]))
                .collect(),
        }
    }
}

fn squared_error(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    let t = g.constant(target.clone());
    let d = g.sub(pred, t)?;
    Ok(g.squared_norm(d))
}

fn branch_terms(
    g: &mut Graph,
    model: &Arc<BodyModel>,
    est: &BodyParamVars,
    target: &FrameTargets,
    weights: &LossWeights,
    scale: f64,
    branch: Branch,
    out: &mut Vec<(Branch, Term, Var)>,
) -> Result<()> {
    let mut joints = None;
    for term in Term::ALL {
        let w = weights.get(term);
        if w == 0.0 {
            continue;
        }
        let raw = match term {
            Term::Pose => squared_error(g, est.rotations, &target.rotations)?,
            Term::Shape => squared_error(g, est.shape, &target.shape)?,
            Term::Joints3d | Term::Joints2d => {
                let j = match joints {
                    Some(j) => j,
                    None => {
                        let j =
                            forward_kinematics_graph(g, model, est.rotations, est.shape, false)?;
                        joints = Some(j);
                        j
                    }
                };
                if term == Term::Joints3d {
                    let rel = root_relative_graph(g, j, 0)?;
                    squared_error(g, rel, &target.joints3d)?
                } else {
                    let p2 = project_weak_perspective_graph(g, j, est.camera)?;
                    squared_error(g, p2, &target.joints2d)?
                }
            }
        };
        out.push((branch, term, g.scale(raw, w * scale)));
    }
    Ok(())
}

/// Weighted sum of squared errors, averaged over the windows of the batch.
pub fn window_loss(
    g: &mut Graph,
    model: &Arc<BodyModel>,
    estimates: &Estimates,
    targets: &WindowTargets,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let n = targets.current.rotations.rows();
    if n == 0 {
        return Err(Error::Shape("loss over an empty batch".into()));
    }
    let scale = 1.0 / n as f64;
    let mut parts = Vec::new();
    branch_terms(
        g,
        model,
        &estimates.integrated,
        &targets.current,
        weights,
        scale,
        Branch::Integrated,
        &mut parts,
    )?;
    let side = match weights.supervision {
        SupervisionTarget::None => None,
        SupervisionTarget::Current => Some((&targets.current, &targets.current)),
        SupervisionTarget::Adjacent => match (&targets.previous, &targets.next) {
            (Some(p), Some(f)) => Some((p, f)),
            _ => {
                return Err(Error::Shape(
                    "adjacent supervision without neighbouring ground truth".into(),
                ))
            }
        },
    };
    if let Some((past_target, future_target)) = side {
        if let Some(est) = &estimates.past {
            branch_terms(
                g,
                model,
                est,
                past_target,
                weights,
                scale,
                Branch::Past,
                &mut parts,
            )?;
        }
        if let Some(est) = &estimates.future {
            branch_terms(
                g,
                model,
                est,
                future_target,
                weights,
                scale,
                Branch::Future,
                &mut parts,
            )?;
        }
    }
    let mut total = parts[0].2;
    for &(_, _, v) in &parts[1..] {
        total = g.add(total, v)?;
    }
    Ok(LossTerms { total, parts })
}
