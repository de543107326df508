//! Simplified articulated body: a kinematic tree with shape-dependent bone
//! offsets, rigidly attached surface vertices and weak-perspective projection.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Graph, Tensor, Var};
use crate::rotations::{axis_angle_to_matrix, AxisAngle, RotationMatrix};

const DEFAULT_MODEL: &str = include_str!("../assets/body24.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub parent: i64,
    pub rest_offset: [f64; 3],
    pub shape_basis: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexSpec {
    pub joint: usize,
    pub offset: [f64; 3],
}

/// On-disk layout of a body model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyModelFile {
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub vertices: Vec<VertexSpec>,
    #[serde(default)]
    pub eval_joints: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodyModel {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    rest_offsets: Vec<[f64; 3]>,
    /// `shape_basis[k][b]` is the offset delta of joint `k` per unit of `β_b`.
    shape_basis: Vec<Vec<[f64; 3]>>,
    shape_dim: usize,
    vertices: Vec<VertexSpec>,
    eval_joints: Vec<usize>,
    /// Parents precede children.
    order: Vec<usize>,
}

/// Per-frame body parameters `Θ = {θ, β, s, t}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// One axis-angle per joint; entry 0 is the global orientation.
    pub pose: Vec<[f64; 3]>,
    pub shape: Vec<f64>,
    pub scale: f64,
    pub translation: [f64; 2],
}

impl BodyParams {
    pub fn rest(joint_count: usize, shape_dim: usize) -> Self {
        Self {
            pose: vec![[0.0; 3]; joint_count],
            shape: vec![0.0; shape_dim],
            scale: 1.0,
            translation: [0.0; 2],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose
            .iter()
            .flatten()
            .chain(&self.shape)
            .chain(&self.translation)
            .all(|x| x.is_finite())
            && self.scale.is_finite()
    }

    /// Flat `[θ (3J) | β (B) | s, tx, ty]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.pose.iter().flatten().copied().collect();
        v.extend_from_slice(&self.shape);
        v.push(self.scale);
        v.extend_from_slice(&self.translation);
        v
    }

    pub fn from_flat(flat: &[f64], joint_count: usize, shape_dim: usize) -> Result<Self> {
        let expected = joint_count * 3 + shape_dim + 3;
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "body parameter vector of {} values, expected {expected}",
                flat.len()
            )));
        }
        let pose = flat[..joint_count * 3]
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let shape = flat[joint_count * 3..joint_count * 3 + shape_dim].to_vec();
        let cam = &flat[joint_count * 3 + shape_dim..];
        Ok(Self {
            pose,
            shape,
            scale: cam[0],
            translation: [cam[1], cam[2]],
        })
    }

    pub fn flat_len(joint_count: usize, shape_dim: usize) -> usize {
        joint_count * 3 + shape_dim + 3
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FkOutput {
    pub joints: Vec<[f64; 3]>,
    pub vertices: Vec<[f64; 3]>,
}

impl BodyModel {
    /// The bundled 24-joint model.
    pub fn default_model() -> Self {
        Self::from_json(DEFAULT_MODEL, Path::new("<bundled body24.json>"))
            .expect("bundled body model is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let file: BodyModelFile = serde_json::from_str(text)
            .map_err(|e| Error::format(origin, format!("body model: {e}")))?;
        Self::from_file(file)
    }

    pub fn from_file(file: BodyModelFile) -> Result<Self> {
        let n = file.joints.len();
        if n == 0 {
            return Err(Error::body("joints", "model has no joints"));
        }
        let mut parents = Vec::with_capacity(n);
        for (k, j) in file.joints.iter().enumerate() {
            let field = format!("joints[{k}].parent");
            if k == 0 {
                if j.parent != -1 && j.parent != 0 {
                    return Err(Error::body(
                        field,
                        format!("root parent must be -1 or itself, found {}", j.parent),
                    ));
                }
                parents.push(None);
                continue;
            }
            if j.parent < 0 || j.parent as usize >= n {
                return Err(Error::body(
                    field,
                    format!("parent {} out of range 0..{n}", j.parent),
                ));
            }
            if j.parent as usize == k {
                return Err(Error::body(field, "joint is its own parent"));
            }
            parents.push(Some(j.parent as usize));
        }
        let shape_dim = file.joints[0].shape_basis.len();
        for (k, j) in file.joints.iter().enumerate() {
            if j.shape_basis.len() != shape_dim {
                return Err(Error::body(
                    format!("joints[{k}].shape_basis"),
                    format!(
                        "{} shape columns, joint 0 has {shape_dim}",
                        j.shape_basis.len()
                    ),
                ));
            }
            if j.rest_offset
                .iter()
                .chain(j.shape_basis.iter().flatten())
                .any(|x| !x.is_finite())
            {
                return Err(Error::body(format!("joints[{k}]"), "non-finite offset"));
            }
        }
        let order = topological_order(&parents)?;
        for (i, v) in file.vertices.iter().enumerate() {
            if v.joint >= n {
                return Err(Error::body(
                    format!("vertices[{i}].joint"),
                    format!("joint {} out of range 0..{n}", v.joint),
                ));
            }
        }
        let names: Vec<String> = file.joints.iter().map(|j| j.name.clone()).collect();
        let mut eval_joints = Vec::with_capacity(file.eval_joints.len());
        for name in &file.eval_joints {
            let idx = names.iter().position(|n| n == name).ok_or_else(|| {
                Error::body("eval_joints", format!("unknown joint name {name:?}"))
            })?;
            eval_joints.push(idx);
        }
        if eval_joints.is_empty() {
            eval_joints = (0..n).collect();
        }
        Ok(Self {
            names,
            parents,
            rest_offsets: file.joints.iter().map(|j| j.rest_offset).collect(),
            shape_basis: file.joints.into_iter().map(|j| j.shape_basis).collect(),
            shape_dim,
            vertices: file.vertices,
            eval_joints,
            order,
        })
    }

    pub fn to_file(&self) -> BodyModelFile {
        BodyModelFile {
            joints: (0..self.joint_count())
                .map(|k| JointSpec {
                    name: self.names[k].clone(),
                    parent: self.parents[k].map_or(-1, |p| p as i64),
                    rest_offset: self.rest_offsets[k],
                    shape_basis: self.shape_basis[k].clone(),
                })
                .collect(),
            vertices: self.vertices.clone(),
            eval_joints: self
                .eval_joints
                .iter()
                .map(|&i| self.names[i].clone())
                .collect(),
        }
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.names
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parents[k]
    }

    pub fn eval_joints(&self) -> &[usize] {
        &self.eval_joints
    }

    pub fn rest_offset(&self, k: usize) -> [f64; 3] {
        self.rest_offsets[k]
    }

    /// Replaces the rest offset of joint `k`.
    pub fn set_rest_offset(&mut self, k: usize, offset: [f64; 3]) {
        self.rest_offsets[k] = offset;
    }

    pub fn shape_column(&self, k: usize, b: usize) -> [f64; 3] {
        self.shape_basis[k][b]
    }

    /// `rest offset + shape basis · β` for joint `k`.
    pub fn bone_offset(&self, k: usize, shape: &[f64]) -> [f64; 3] {
        let mut d = self.rest_offsets[k];
        for (b, &beta) in shape.iter().enumerate() {
            let s = self.shape_basis[k][b];
            for i in 0..3 {
                d[i] += beta * s[i];
            }
        }
        d
    }

    fn check_dims(&self, pose_len: usize, shape_len: usize) -> Result<()> {
        if pose_len != self.joint_count() || shape_len != self.shape_dim {
            return Err(Error::Shape(format!(
                "forward kinematics with {pose_len} rotations and {shape_len} shape values; model has J={} B={}",
                self.joint_count(),
                self.shape_dim
            )));
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, pose: &[[f64; 3]], shape: &[f64]) -> Result<FkOutput> {
        self.check_dims(pose.len(), shape.len())?;
        let rots: Vec<RotationMatrix> = pose
            .iter()
            .map(|aa| axis_angle_to_matrix(&AxisAngle(*aa)))
            .collect();
        self.forward_kinematics_matrices(&rots, shape)
    }

    pub fn forward_kinematics_matrices(
        &self,
        rots: &[RotationMatrix],
        shape: &[f64],
    ) -> Result<FkOutput> {
        self.check_dims(rots.len(), shape.len())?;
        let j = self.joint_count();
        let mut global = vec![RotationMatrix::IDENTITY; j];
        let mut pos = vec![[0.0; 3]; j];
        for &k in &self.order {
            let d = self.bone_offset(k, shape);
            match self.parents[k] {
                None => {
                    global[k] = rots[k];
                    pos[k] = d;
                }
                Some(p) => {
                    let r = global[p].apply(d);
                    pos[k] = [pos[p][0] + r[0], pos[p][1] + r[1], pos[p][2] + r[2]];
                    global[k] = global[p].mul(&rots[k]);
                }
            }
        }
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let r = global[v.joint].apply(v.offset);
                [
                    pos[v.joint][0] + r[0],
                    pos[v.joint][1] + r[1],
                    pos[v.joint][2] + r[2],
                ]
            })
            .collect();
        Ok(FkOutput {
            joints: pos,
            vertices,
        })
    }

    pub fn forward_params(&self, params: &BodyParams) -> Result<FkOutput> {
        self.forward_kinematics(&params.pose, &params.shape)
    }
}

fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut children = vec![Vec::new(); n];
    for (k, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(k);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0usize];
    while let Some(k) = stack.pop() {
        order.push(k);
        stack.extend(children[k].iter().rev());
    }
    if order.len() != n {
        let reached: std::collections::HashSet<usize> = order.iter().copied().collect();
        let stray = (0..n).find(|k| !reached.contains(k)).unwrap_or(0);
        return Err(Error::body(
            format!("joints[{stray}].parent"),
            "parent graph has a cycle or is not connected to the root",
        ));
    }
    Ok(order)
}

/// `p2d = s·(x, y) + t` for every point.
pub fn project_weak_perspective(
    points: &[[f64; 3]],
    scale: f64,
    translation: [f64; 2],
) -> Vec<[f64; 2]> {
    points
        .iter()
        .map(|p| [scale * p[0] + translation[0], scale * p[1] + translation[1]])
        .collect()
}

/// Batched forward kinematics: rotations `n × 9J`, shape `n × B` → `n × 3J`
/// joints, followed by `3V` vertex coordinates when requested.
struct FkKernel {
    model: Arc<BodyModel>,
    with_vertices: bool,
}

struct FkTrace {
    global: Vec<[f64; 9]>,
    offsets: Vec<[f64; 3]>,
}

fn mat_mul9(a: &[f64; 9], b: &[f64]) -> [f64; 9] {
    let mut r = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            r[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
        }
    }
    r
}

fn mat_vec9(a: &[f64; 9], v: [f64; 3]) -> [f64; 3] {
    [
        a[0] * v[0] + a[1] * v[1] + a[2] * v[2],
        a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
        a[6] * v[0] + a[7] * v[1] + a[8] * v[2],
    ]
}

fn mat_t_vec9(a: &[f64; 9], v: [f64; 3]) -> [f64; 3] {
    [
        a[0] * v[0] + a[3] * v[1] + a[6] * v[2],
        a[1] * v[0] + a[4] * v[1] + a[7] * v[2],
        a[2] * v[0] + a[5] * v[1] + a[8] * v[2],
    ]
}

impl FkKernel {
    fn out_cols(&self) -> usize {
        let m = &self.model;
        3 * m.joint_count()
            + if self.with_vertices {
                3 * m.vertex_count()
            } else {
                0
            }
    }

    fn run_row(&self, rots: &[f64], shape: &[f64], out: &mut [f64]) -> FkTrace {
        let m = &self.model;
        let j = m.joint_count();
        let mut global = vec![[0.0; 9]; j];
        let mut offsets = vec![[0.0; 3]; j];
        for &k in &m.order {
            let d = m.bone_offset(k, shape);
            offsets[k] = d;
            let rk = &rots[k * 9..k * 9 + 9];
            match m.parents[k] {
                None => {
                    global[k].copy_from_slice(rk);
                    out[k * 3..k * 3 + 3].copy_from_slice(&d);
                }
                Some(p) => {
                    let r = mat_vec9(&global[p], d);
                    for i in 0..3 {
                        out[k * 3 + i] = out[p * 3 + i] + r[i];
                    }
                    global[k] = mat_mul9(&global[p], rk);
                }
            }
        }
        if self.with_vertices {
            for (i, v) in m.vertices.iter().enumerate() {
                let r = mat_vec9(&global[v.joint], v.offset);
                for c in 0..3 {
                    out[3 * j + i * 3 + c] = out[v.joint * 3 + c] + r[c];
                }
            }
        }
        FkTrace { global, offsets }
    }
}

impl CustomOp for FkKernel {
    fn name(&self) -> &str {
        "forward_kinematics"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (rots, shape) = (inputs[0], inputs[1]);
        let m = &self.model;
        if rots.cols() != 9 * m.joint_count()
            || shape.cols() != m.shape_dim()
            || rots.rows() != shape.rows()
        {
            return Err(Error::Shape(format!(
                "forward kinematics on rotations {}x{} and shape {}x{}; model has J={} B={}",
                rots.rows(),
                rots.cols(),
                shape.rows(),
                shape.cols(),
                m.joint_count(),
                m.shape_dim()
            )));
        }
        let mut out = Tensor::zeros(rots.rows(), self.out_cols());
        for i in 0..rots.rows() {
            self.run_row(rots.row_slice(i), shape.row_slice(i), out.row_slice_mut(i));
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (rots, shape) = (inputs[0], inputs[1]);
        let m = &self.model;
        let j = m.joint_count();
        let mut g_rots = Tensor::zeros(rots.rows(), rots.cols());
        let mut g_shape = Tensor::zeros(shape.rows(), shape.cols());
        let mut scratch = vec![0.0; self.out_cols()];
        for row in 0..rots.rows() {
            let r = rots.row_slice(row);
            let trace = self.run_row(r, shape.row_slice(row), &mut scratch);
            let g = grad.row_slice(row);
            let mut gp: Vec<[f64; 3]> = (0..j)
                .map(|k| [g[k * 3], g[k * 3 + 1], g[k * 3 + 2]])
                .collect();
            let mut g_global = vec![[0.0; 9]; j];
            if self.with_vertices {
                for (i, v) in m.vertices.iter().enumerate() {
                    let gv = &g[3 * j + i * 3..3 * j + i * 3 + 3];
                    for a in 0..3 {
                        gp[v.joint][a] += gv[a];
                        for b in 0..3 {
                            g_global[v.joint][a * 3 + b] += gv[a] * v.offset[b];
                        }
                    }
                }
            }
            let mut g_off = vec![[0.0; 3]; j];
            let gr = g_rots.row_slice_mut(row);
            for &k in m.order.iter().rev() {
                match m.parents[k] {
                    None => {
                        gr[k * 9..k * 9 + 9].copy_from_slice(&g_global[k]);
                        g_off[k] = gp[k];
                    }
                    Some(p) => {
                        let gpk = gp[k];
                        let gp_par = &mut gp[p];
                        for a in 0..3 {
                            gp_par[a] += gpk[a];
                        }
                        let d = trace.offsets[k];
                        let gp_global = trace.global[p];
                        g_off[k] = mat_t_vec9(&gp_global, gpk);
                        let ggk = g_global[k];
                        let rk = &r[k * 9..k * 9 + 9];
                        for a in 0..3 {
                            for b in 0..3 {
                                // ∂/∂G_p of G_p·d and of G_p·R_k
                                let mut acc = gpk[a] * d[b];
                                for c in 0..3 {
                                    acc += ggk[a * 3 + c] * rk[b * 3 + c];
                                }
                                g_global[p][a * 3 + b] += acc;
                                // ∂/∂R_k of G_p·R_k
                                let mut acc = 0.0;
                                for c in 0..3 {
                                    acc += gp_global[c * 3 + a] * ggk[c * 3 + b];
                                }
                                gr[k * 9 + a * 3 + b] = acc;
                            }
                        }
                    }
                }
            }
            let gs = g_shape.row_slice_mut(row);
            for (k, go) in g_off.iter().enumerate() {
                for (b, out) in gs.iter_mut().enumerate() {
                    let s = m.shape_basis[k][b];
                    *out += s[0] * go[0] + s[1] * go[1] + s[2] * go[2];
                }
            }
        }
        vec![g_rots, g_shape]
    }
}

/// Differentiable batched forward kinematics. Output columns are `3J` joint
/// coordinates, then `3V` vertex coordinates if `with_vertices`.
pub fn forward_kinematics_graph(
    g: &mut Graph,
    model: &Arc<BodyModel>,
    rotations: Var,
    shape: Var,
    with_vertices: bool,
) -> Result<Var> {
    g.custom(
        Arc::new(FkKernel {
            model: model.clone(),
            with_vertices,
        }),
        &[rotations, shape],
    )
}

/// Points `n × 3P`, camera `n × 3` as `(s, tx, ty)` → `n × 2P`.
struct ProjectKernel;

impl CustomOp for ProjectKernel {
    fn name(&self) -> &str {
        "project_weak_perspective"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (pts, cam) = (inputs[0], inputs[1]);
        if pts.cols() % 3 != 0 || cam.cols() != 3 || cam.rows() != pts.rows() {
            return Err(Error::Shape(format!(
                "projection of points {}x{} with camera {}x{}",
                pts.rows(),
                pts.cols(),
                cam.rows(),
                cam.cols()
            )));
        }
        let n = pts.cols() / 3;
        let mut out = Tensor::zeros(pts.rows(), 2 * n);
        for i in 0..pts.rows() {
            let (p, c) = (pts.row_slice(i), cam.row_slice(i));
            let o = out.row_slice_mut(i);
            for k in 0..n {
                o[2 * k] = c[0] * p[3 * k] + c[1];
                o[2 * k + 1] = c[0] * p[3 * k + 1] + c[2];
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (pts, cam) = (inputs[0], inputs[1]);
        let n = pts.cols() / 3;
        let mut gp = Tensor::zeros(pts.rows(), pts.cols());
        let mut gc = Tensor::zeros(cam.rows(), 3);
        for i in 0..pts.rows() {
            let (p, c, g) = (pts.row_slice(i), cam.row_slice(i), grad.row_slice(i));
            let mut acc = [0.0; 3];
            {
                let o = gp.row_slice_mut(i);
                for k in 0..n {
                    o[3 * k] = c[0] * g[2 * k];
                    o[3 * k + 1] = c[0] * g[2 * k + 1];
                    acc[0] += g[2 * k] * p[3 * k] + g[2 * k + 1] * p[3 * k + 1];
                    acc[1] += g[2 * k];
                    acc[2] += g[2 * k + 1];
                }
            }
            gc.row_slice_mut(i).copy_from_slice(&acc);
        }
        vec![gp, gc]
    }
}

pub fn project_weak_perspective_graph(g: &mut Graph, points: Var, camera: Var) -> Result<Var> {
    g.custom(Arc::new(ProjectKernel), &[points, camera])
}

/// Subtracts point `root` from every point of each `n × 3P` row.
struct RootRelativeKernel {
    root: usize,
}

impl CustomOp for RootRelativeKernel {
    fn name(&self) -> &str {
        "root_relative"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if !x.cols().is_multiple_of(3) || 3 * self.root + 3 > x.cols() {
            return Err(Error::Shape(format!(
                "root {} of points {}x{}",
                self.root,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for i in 0..x.rows() {
            let r = &x.row_slice(i)[3 * self.root..3 * self.root + 3];
            for (k, v) in out.row_slice_mut(i).iter_mut().enumerate() {
                *v -= r[k % 3];
            }
        }
        Ok(out)
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let mut gx = grad.clone();
        for i in 0..grad.rows() {
            let mut s = [0.0; 3];
            for (k, v) in grad.row_slice(i).iter().enumerate() {
                s[k % 3] += v;
            }
            for c in 0..3 {
                gx.row_slice_mut(i)[3 * self.root + c] -= s[c];
            }
        }
        vec![gx]
    }
}

pub fn root_relative_graph(g: &mut Graph, points: Var, root: usize) -> Result<Var> {
    g.custom(Arc::new(RootRelativeKernel { root }), &[points])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::rotations::axis_angle_to_matrix_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng, j: usize, amp: f64) -> Vec<[f64; 3]> {
        (0..j)
            .map(|_| std::array::from_fn(|_| rng.random_range(-amp..amp)))
            .collect()
    }

    #[test]
    fn default_model_dimensions() {
        let m = BodyModel::default_model();
        assert_eq!(m.joint_count(), 24);
        assert_eq!(m.shape_dim(), 10);
        assert_eq!(m.vertex_count(), 64);
        assert_eq!(m.eval_joints().len(), 14);
        assert!(!m.eval_joints().contains(&0));
    }

    #[test]
    fn rejects_bad_root_and_cycles() {
        let mut f = BodyModel::default_model().to_file();
        f.joints[0].parent = 3;
        let err = BodyModel::from_file(f).unwrap_err().to_string();
        assert!(err.contains("joints[0].parent"), "{err}");

        let mut f = BodyModel::default_model().to_file();
        // 1 -> 4 -> 1
        f.joints[1].parent = 4;
        let err = BodyModel::from_file(f).unwrap_err().to_string();
        assert!(err.contains("cycle"), "{err}");

        let mut f = BodyModel::default_model().to_file();
        f.joints[5].shape_basis.pop();
        let err = BodyModel::from_file(f).unwrap_err().to_string();
        assert!(err.contains("joints[5].shape_basis"), "{err}");
    }

    #[test]
    fn missing_vertex_table_is_allowed() {
        let text = r#"{"joints": [
            {"name": "root", "parent": -1, "rest_offset": [0,0,0], "shape_basis": [[0,0,0]]},
            {"name": "a", "parent": 0, "rest_offset": [0,1,0], "shape_basis": [[0,0.1,0]]}
        ]}"#;
        let m = BodyModel::from_json(text, Path::new("inline")).unwrap();
        assert_eq!(m.vertex_count(), 0);
        assert_eq!(m.eval_joints(), &[0, 1]);
        let fk = m.forward_kinematics(&[[0.0; 3]; 2], &[1.0]).unwrap();
        assert!(fk.vertices.is_empty());
        assert!((fk.joints[1][1] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn rest_pose_is_cumulative_offsets() {
        let m = BodyModel::default_model();
        let fk = m
            .forward_kinematics(&vec![[0.0; 3]; 24], &[0.0; 10])
            .unwrap();
        for k in 0..24 {
            let mut expect = [0.0; 3];
            let mut cur = Some(k);
            while let Some(c) = cur {
                for i in 0..3 {
                    expect[i] += m.rest_offset(c)[i];
                }
                cur = m.parent(c);
            }
            for i in 0..3 {
                assert!((fk.joints[k][i] - expect[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn root_rotation_is_rigid() {
        let m = BodyModel::default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pose = random_pose(&mut rng, 24, 0.5);
        let shape: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        pose[0] = [0.0; 3];
        let base = m.forward_kinematics(&pose, &shape).unwrap();
        let aa = [0.3, -1.1, 0.4];
        pose[0] = aa;
        let rotated = m.forward_kinematics(&pose, &shape).unwrap();
        let r = axis_angle_to_matrix(&AxisAngle(aa));
        let root = base.joints[0];
        for (a, b) in base
            .joints
            .iter()
            .chain(&base.vertices)
            .zip(rotated.joints.iter().chain(&rotated.vertices))
        {
            let rel = r.apply([a[0] - root[0], a[1] - root[1], a[2] - root[2]]);
            for i in 0..3 {
                assert!((root[i] + rel[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_shifts_bones_by_basis_column() {
        let m = BodyModel::default_model();
        let mut e1 = vec![0.0; 10];
        e1[0] = 1.0;
        let rest = m
            .forward_kinematics(&vec![[0.0; 3]; 24], &[0.0; 10])
            .unwrap();
        let shaped = m.forward_kinematics(&vec![[0.0; 3]; 24], &e1).unwrap();
        for k in 1..24 {
            let p = m.parent(k).unwrap();
            for i in 0..3 {
                let bone_rest = rest.joints[k][i] - rest.joints[p][i];
                let bone = shaped.joints[k][i] - shaped.joints[p][i];
                assert!((bone - bone_rest - m.shape_column(k, 0)[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bone_lengths_match_offsets() {
        let m = BodyModel::default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pose = random_pose(&mut rng, 24, 1.5);
        let shape: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fk = m.forward_kinematics(&pose, &shape).unwrap();
        for k in 1..24 {
            let p = m.parent(k).unwrap();
            let len = (0..3)
                .map(|i| (fk.joints[k][i] - fk.joints[p][i]).powi(2))
                .sum::<f64>()
                .sqrt();
            let d = m.bone_offset(k, &shape);
            let expect = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((len - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn root_offset_translates_everything() {
        let mut m = BodyModel::default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pose = random_pose(&mut rng, 24, 1.0);
        let shape = vec![0.5; 10];
        let a = m.forward_kinematics(&pose, &shape).unwrap();
        let c = [0.3, -0.2, 1.5];
        let r0 = m.rest_offset(0);
        m.set_rest_offset(0, [r0[0] + c[0], r0[1] + c[1], r0[2] + c[2]]);
        let b = m.forward_kinematics(&pose, &shape).unwrap();
        for (x, y) in a
            .joints
            .iter()
            .chain(&a.vertices)
            .zip(b.joints.iter().chain(&b.vertices))
        {
            for i in 0..3 {
                assert!((x[i] + c[i] - y[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weak_perspective_cases() {
        let pts = [[1.0, 2.0, 3.0], [-0.5, 0.25, 9.0]];
        assert_eq!(
            project_weak_perspective(&pts, 1.0, [0.0, 0.0]),
            vec![[1.0, 2.0], [-0.5, 0.25]]
        );
        assert_eq!(
            project_weak_perspective(&pts, 2.0, [0.0, 0.0]),
            vec![[2.0, 4.0], [-1.0, 0.5]]
        );
        assert_eq!(
            project_weak_perspective(&pts, 0.0, [0.1, 0.2]),
            vec![[0.1, 0.2], [0.1, 0.2]]
        );
    }

    #[test]
    fn graph_fk_matches_direct() {
        let m = Arc::new(BodyModel::default_model());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pose = random_pose(&mut rng, 24, 1.0);
        let shape: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let direct = m.forward_kinematics(&pose, &shape).unwrap();
        let mut g = Graph::new();
        let aa = g.constant(Tensor::row(
            &pose.iter().flatten().copied().collect::<Vec<_>>(),
        ));
        let rots = axis_angle_to_matrix_graph(&mut g, aa).unwrap();
        let b = g.constant(Tensor::row(&shape));
        let out = forward_kinematics_graph(&mut g, &m, rots, b, true).unwrap();
        let flat: Vec<f64> = direct
            .joints
            .iter()
            .chain(&direct.vertices)
            .flatten()
            .copied()
            .collect();
        for (a, b) in g.value(out).data().iter().zip(&flat) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fk_gradients_match_finite_differences() {
        let m = Arc::new(BodyModel::default_model());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = Tensor::from_fn(2, 72, |_, _| rng.random_range(-1.0..1.0));
        let shape = Tensor::from_fn(2, 10, |_, _| rng.random_range(-2.0..2.0));
        let cols = 3 * (24 + 64);
        let w = Tensor::from_fn(2, cols, |_, _| rng.random_range(-1.0..1.0));
        let cam = Tensor::from_fn(2, 3, |_, _| rng.random_range(0.5..1.5));
        let w2 = Tensor::from_fn(2, 48, |_, _| rng.random_range(-1.0..1.0));
        let rep = check_gradients(&[pose, shape, cam], 1e-5, None, |g, v| {
            let rots = axis_angle_to_matrix_graph(g, v[0])?;
            let out = forward_kinematics_graph(g, &m, rots, v[1], true)?;
            let wc = g.constant(w.clone());
            let weighted = g.mul(out, wc)?;
            let s1 = g.sum(weighted);
            let joints = forward_kinematics_graph(g, &m, rots, v[1], false)?;
            let rel = root_relative_graph(g, joints, 0)?;
            let p2 = project_weak_perspective_graph(g, rel, v[2])?;
            let wc2 = g.constant(w2.clone());
            let weighted2 = g.mul(p2, wc2)?;
            let s2 = g.squared_norm(weighted2);
            g.add(s1, s2)
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }
}
