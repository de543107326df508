//! Pose accuracy and smoothness metrics. Geometry comes in meters and errors
//! go out in millimeters.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

const MM: f64 = 1000.0;

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn centroid(p: &[Point]) -> Point {
    let mut c = [0.0; 3];
    for q in p {
        for i in 0..3 {
            c[i] += q[i];
        }
    }
    c.map(|v| v / p.len() as f64)
}

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn transpose(a: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

fn det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// One-sided Jacobi SVD `a = u·diag(s)·vᵀ`, singular values descending.
pub fn svd3(a: &Mat3) -> (Mat3, [f64; 3], Mat3) {
    let mut w = *a;
    let mut v: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..60 {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
            for row in &w {
                alpha += row[p] * row[p];
                beta += row[q] * row[q];
                gamma += row[p] * row[q];
            }
            if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for m in [&mut w, &mut v] {
                for row in m.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: [f64; 3] =
        std::array::from_fn(|j| (0..3).map(|i| w[i][j] * w[i][j]).sum::<f64>().sqrt());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]));
    let w: Mat3 = std::array::from_fn(|i| order.map(|j| w[i][j]));
    let v: Mat3 = std::array::from_fn(|i| order.map(|j| v[i][j]));
    sigma = order.map(|j| sigma[j]);

    let mut u = [[0.0; 3]; 3];
    let scale_ref = sigma[0].max(f64::MIN_POSITIVE);
    let mut cols: Vec<Point> = Vec::new();
    for j in 0..3 {
        let col = if sigma[j] > 1e-14 * scale_ref {
            [w[0][j] / sigma[j], w[1][j] / sigma[j], w[2][j] / sigma[j]]
        } else {
            complete_basis(&cols)
        };
        cols.push(col);
        for i in 0..3 {
            u[i][j] = col[i];
        }
    }
    (u, sigma, v)
}

/// A unit vector orthogonal to the given orthonormal vectors.
fn complete_basis(existing: &[Point]) -> Point {
    let mut best = [0.0; 3];
    let mut best_norm = -1.0;
    for e in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
        let mut c: Point = e;
        for b in existing {
            let d = c[0] * b[0] + c[1] * b[1] + c[2] * b[2];
            for i in 0..3 {
                c[i] -= d * b[i];
            }
        }
        let n = norm(c);
        if n > best_norm {
            best_norm = n;
            best = c.map(|x| x / n);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub aligned: Vec<Point>,
    pub rotation: Mat3,
    pub scale: f64,
    pub translation: Point,
    /// The prediction had no spread, so only a translation was applied.
    pub translation_only: bool,
}

/// Least-squares similarity transform of `pred` onto `gt`.
pub fn procrustes_align(pred: &[Point], gt: &[Point]) -> Result<Alignment> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "alignment of {} points onto {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 3 {
        return Err(Error::Shape(format!(
            "alignment needs at least 3 points, got {}",
            pred.len()
        )));
    }
    let (mx, my) = (centroid(pred), centroid(gt));
    let x: Vec<Point> = pred.iter().map(|p| sub(*p, mx)).collect();
    let y: Vec<Point> = gt.iter().map(|p| sub(*p, my)).collect();
    let var_x: f64 = x
        .iter()
        .map(|p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        .sum();
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if var_x <= f64::MIN_POSITIVE {
        return Ok(Alignment {
            aligned: x
                .iter()
                .map(|p| [p[0] + my[0], p[1] + my[1], p[2] + my[2]])
                .collect(),
            rotation: identity,
            scale: 1.0,
            translation: sub(my, mx),
            translation_only: true,
        });
    }
    // Cross-covariance Σ yᵢ xᵢᵀ.
    let mut m = [[0.0; 3]; 3];
    for (xi, yi) in x.iter().zip(&y) {
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += yi[r] * xi[c];
            }
        }
    }
    let (u, s, v) = svd3(&m);
    let vt = transpose(&v);
    let d = if det(&mat_mul(&u, &vt)) < 0.0 {
        -1.0
    } else {
        1.0
    };
    let ud: Mat3 = std::array::from_fn(|i| [u[i][0], u[i][1], d * u[i][2]]);
    let rotation = mat_mul(&ud, &vt);
    let scale = (s[0] + s[1] + d * s[2]) / var_x;
    let rm = apply(&rotation, mx);
    let translation = [
        my[0] - scale * rm[0],
        my[1] - scale * rm[1],
        my[2] - scale * rm[2],
    ];
    let aligned = pred
        .iter()
        .map(|p| {
            let r = apply(&rotation, *p);
            [
                scale * r[0] + translation[0],
                scale * r[1] + translation[1],
                scale * r[2] + translation[2],
            ]
        })
        .collect();
    Ok(Alignment {
        aligned,
        rotation,
        scale,
        translation,
        translation_only: false,
    })
}

fn apply(r: &Mat3, p: Point) -> Point {
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

fn check_counts(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{what}: {a} predicted points vs {b} ground-truth points"
        )));
    }
    Ok(())
}

/// Mean distance over `subset` after moving both roots to the origin.
pub fn mpjpe(pred: &[Point], gt: &[Point], root: usize, subset: &[usize]) -> Result<f64> {
    check_counts("mpjpe", pred.len(), gt.len())?;
    if subset.is_empty() || subset.iter().chain([&root]).any(|&k| k >= pred.len()) {
        return Err(Error::Shape(format!(
            "joint subset {subset:?} with root {root} over {} joints",
            pred.len()
        )));
    }
    let (pr, gr) = (pred[root], gt[root]);
    let total: f64 = subset
        .iter()
        .map(|&k| norm(sub(sub(pred[k], pr), sub(gt[k], gr))))
        .sum();
    Ok(MM * total / subset.len() as f64)
}

/// Mean distance over `subset` after similarity alignment on that subset.
pub fn pa_mpjpe(pred: &[Point], gt: &[Point], subset: &[usize]) -> Result<f64> {
    check_counts("pa_mpjpe", pred.len(), gt.len())?;
    let p: Vec<Point> = subset.iter().map(|&k| pred[k]).collect();
    let g: Vec<Point> = subset.iter().map(|&k| gt[k]).collect();
    let a = procrustes_align(&p, &g)?;
    Ok(MM
        * a.aligned
            .iter()
            .zip(&g)
            .map(|(x, y)| norm(sub(*x, *y)))
            .sum::<f64>()
        / g.len() as f64)
}

/// Mean vertex distance after subtracting each side's root joint.
pub fn mpvpe(pred: &[Point], gt: &[Point], pred_root: Point, gt_root: Point) -> Result<f64> {
    check_counts("mpvpe", pred.len(), gt.len())?;
    if pred.is_empty() {
        return Err(Error::Shape("mpvpe over an empty vertex set".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| norm(sub(sub(*p, pred_root), sub(*g, gt_root))))
        .sum();
    Ok(MM * total / pred.len() as f64)
}

/// Per interior frame, the joint-averaged `‖a_pred − a_gt‖` in mm/frame²,
/// where `a(t) = x(t+1) − 2x(t) + x(t−1)`.
pub fn accel_error_trace(pred: &[Vec<Point>], gt: &[Vec<Point>]) -> Result<Vec<f64>> {
    check_counts("accel_error frames", pred.len(), gt.len())?;
    if pred.len() < 3 {
        return Err(Error::Shape(format!(
            "acceleration needs at least 3 frames, got {}",
            pred.len()
        )));
    }
    let joints = pred[0].len();
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != joints || g.len() != joints {
            return Err(Error::Shape(
                "acceleration over frames with differing joint counts".into(),
            ));
        }
    }
    Ok((1..pred.len() - 1)
        .map(|t| {
            let mut acc = 0.0;
            for k in 0..joints {
                let mut d = [0.0; 3];
                for i in 0..3 {
                    let ap = pred[t + 1][k][i] - 2.0 * pred[t][k][i] + pred[t - 1][k][i];
                    let ag = gt[t + 1][k][i] - 2.0 * gt[t][k][i] + gt[t - 1][k][i];
                    d[i] = ap - ag;
                }
                acc += norm(d);
            }
            MM * acc / joints as f64
        })
        .collect())
}

/// Mean acceleration error in mm/s².
pub fn accel_error(pred: &[Vec<Point>], gt: &[Vec<Point>], fps: f64) -> Result<f64> {
    let trace = accel_error_trace(pred, gt)?;
    Ok(trace.iter().sum::<f64>() / trace.len() as f64 * fps * fps)
}

/// The `subset` joints of every frame, relative to that frame's joint 0.
pub fn root_aligned_subset(frames: &[Vec<Point>], subset: &[usize]) -> Vec<Vec<Point>> {
    frames
        .iter()
        .map(|f| subset.iter().map(|&k| sub(f[k], f[0])).collect())
        .collect()
}

/// Errors of one evaluated sequence, averaged over its frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub sequence: usize,
    pub frames: usize,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub mpvpe_mm: Option<f64>,
    pub accel_err_mm_s2: f64,
    pub accel_err_mm_frame2: f64,
}

/// Geometry of one sequence's evaluated frames.
pub struct SequenceGeometry<'a> {
    pub pred_joints: &'a [Vec<Point>],
    pub gt_joints: &'a [Vec<Point>],
    pub pred_vertices: Option<&'a [Vec<Point>]>,
    pub gt_vertices: Option<&'a [Vec<Point>]>,
}

impl SequenceMetrics {
    /// Root joint 0; accelerations use root-aligned evaluation joints.
    pub fn compute(
        sequence: usize,
        geo: &SequenceGeometry<'_>,
        eval_joints: &[usize],
        fps: f64,
    ) -> Result<Self> {
        let n = geo.pred_joints.len();
        check_counts("sequence frames", n, geo.gt_joints.len())?;
        if n == 0 {
            return Err(Error::Shape(format!(
                "sequence {sequence} has no evaluated frames"
            )));
        }
        let mut mp = 0.0;
        let mut pa = 0.0;
        for (p, g) in geo.pred_joints.iter().zip(geo.gt_joints) {
            mp += mpjpe(p, g, 0, eval_joints)?;
            pa += pa_mpjpe(p, g, eval_joints)?;
        }
        let mpvpe_mm = match (geo.pred_vertices, geo.gt_vertices) {
            (Some(pv), Some(gv)) if !pv.is_empty() && !pv[0].is_empty() => {
                let mut total = 0.0;
                for t in 0..n {
                    total += mpvpe(&pv[t], &gv[t], geo.pred_joints[t][0], geo.gt_joints[t][0])?;
                }
                Some(total / n as f64)
            }
            _ => None,
        };
        let trace = accel_error_trace(
            &root_aligned_subset(geo.pred_joints, eval_joints),
            &root_aligned_subset(geo.gt_joints, eval_joints),
        )?;
        let per_frame2 = trace.iter().sum::<f64>() / trace.len() as f64;
        Ok(Self {
            sequence,
            frames: n,
            mpjpe_mm: mp / n as f64,
            pa_mpjpe_mm: pa / n as f64,
            mpvpe_mm,
            accel_err_mm_s2: per_frame2 * fps * fps,
            accel_err_mm_frame2: per_frame2,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub mpvpe_mm: Option<f64>,
    pub accel_err_mm_s2: f64,
    pub accel_err_mm_frame2: f64,
    pub frame_count: usize,
    pub sequence_count: usize,
    pub fps: f64,
    /// Frames at sequence edges without a full window of context.
    pub skipped_frames: usize,
    pub per_sequence: Vec<SequenceMetrics>,
}

impl MetricReport {
    /// Averages over sequences of the per-sequence frame averages.
    pub fn aggregate(
        per_sequence: Vec<SequenceMetrics>,
        fps: f64,
        skipped_frames: usize,
    ) -> Result<Self> {
        if per_sequence.is_empty() {
            return Err(Error::Shape("metric report over zero sequences".into()));
        }
        let n = per_sequence.len() as f64;
        let mean =
            |f: &dyn Fn(&SequenceMetrics) -> f64| per_sequence.iter().map(f).sum::<f64>() / n;
        let mpvpe_mm = if per_sequence.iter().all(|s| s.mpvpe_mm.is_some()) {
            Some(mean(&|s| s.mpvpe_mm.unwrap_or(0.0)))
        } else {
            None
        };
        Ok(Self {
            mpjpe_mm: mean(&|s| s.mpjpe_mm),
            pa_mpjpe_mm: mean(&|s| s.pa_mpjpe_mm),
            mpvpe_mm,
            accel_err_mm_s2: mean(&|s| s.accel_err_mm_s2),
            accel_err_mm_frame2: mean(&|s| s.accel_err_mm_frame2),
            frame_count: per_sequence.iter().map(|s| s.frames).sum(),
            sequence_count: per_sequence.len(),
            fps,
            skipped_frames,
            per_sequence,
        })
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt =
            |v: Option<f64>| v.map_or_else(|| "unavailable".to_string(), |x| format!("{x:.6}"));
        writeln!(s, "mpjpe_mm = {:.6}", self.mpjpe_mm).unwrap();
        writeln!(s, "pa_mpjpe_mm = {:.6}", self.pa_mpjpe_mm).unwrap();
        writeln!(s, "mpvpe_mm = {}", opt(self.mpvpe_mm)).unwrap();
        writeln!(s, "accel_err_mm_s2 = {:.6}", self.accel_err_mm_s2).unwrap();
        writeln!(s, "accel_err_mm_frame2 = {:.6}", self.accel_err_mm_frame2).unwrap();
        writeln!(s, "frame_count = {}", self.frame_count).unwrap();
        writeln!(s, "sequence_count = {}", self.sequence_count).unwrap();
        writeln!(s, "skipped_frames = {}", self.skipped_frames).unwrap();
        writeln!(s, "fps = {}", self.fps).unwrap();
        writeln!(s, "averaging = frames_then_sequences").unwrap();
        s
    }

    /// Comma-separated table: one row per sequence, then an `all` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "sequence,frames,mpjpe_mm,pa_mpjpe_mm,mpvpe_mm,accel_err_mm_s2,accel_err_mm_frame2\n",
        );
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for q in &self.per_sequence {
            writeln!(
                s,
                "{},{},{:.6},{:.6},{},{:.6},{:.6}",
                q.sequence,
                q.frames,
                q.mpjpe_mm,
                q.pa_mpjpe_mm,
                opt(q.mpvpe_mm),
                q.accel_err_mm_s2,
                q.accel_err_mm_frame2
            )
            .unwrap();
        }
        writeln!(
            s,
            "all,{},{:.6},{:.6},{},{:.6},{:.6}",
            self.frame_count,
            self.mpjpe_mm,
            self.pa_mpjpe_mm,
            opt(self.mpvpe_mm),
            self.accel_err_mm_s2,
            self.accel_err_mm_frame2
        )
        .unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let a: Mat3 =
                std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0)));
            let (u, s, v) = svd3(&a);
            assert!(s[0] >= s[1] && s[1] >= s[2] && s[2] >= 0.0);
            let us: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| u[i][j] * s[j]));
            let back = mat_mul(&us, &transpose(&v));
            for i in 0..3 {
                for j in 0..3 {
                    assert!((back[i][j] - a[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn svd_of_rank_deficient_matrix() {
        let a = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 0.0]];
        let (u, s, v) = svd3(&a);
        assert!(s[1] < 1e-12 && s[2] < 1e-12);
        let utu = mat_mul(&transpose(&u), &u);
        for i in 0..3 {
            for j in 0..3 {
                assert!((utu[i][j] - f64::from(i == j)).abs() < 1e-12);
            }
        }
        let _ = v;
    }

    #[test]
    fn identical_and_offset_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_points(&mut rng, 24);
        let subset: Vec<usize> = (1..15).collect();
        assert_eq!(mpjpe(&gt, &gt, 0, &subset).unwrap(), 0.0);
        let shifted: Vec<Point> = gt
            .iter()
            .map(|p| [p[0] + 0.3, p[1] - 1.0, p[2] + 2.0])
            .collect();
        assert!(mpjpe(&shifted, &gt, 0, &subset).unwrap() < 1e-9);
        assert!(pa_mpjpe(&gt, &gt, &subset).unwrap() < 1e-9);
    }

    #[test]
    fn one_joint_off_by_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_points(&mut rng, 24);
        let subset: Vec<usize> = (10..24).collect();
        let mut pred = gt.clone();
        let d_mm = 37.5;
        pred[12][1] += d_mm / 1000.0;
        let e = mpjpe(&pred, &gt, 0, &subset).unwrap();
        assert!((e - d_mm / 14.0).abs() < 1e-9, "{e}");
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let a = vec![[0.0; 3]; 4];
        let b = vec![[0.0; 3]; 5];
        assert!(mpjpe(&a, &b, 0, &[1]).is_err());
        assert!(mpvpe(&a, &b, [0.0; 3], [0.0; 3]).is_err());
        assert!(accel_error(&[a.clone(), a.clone()], &[a.clone(), a], 25.0).is_err());
    }

    #[test]
    fn similarity_transform_is_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_points(&mut rng, 14);
        let r =
            crate::rotations::axis_angle_to_matrix(&crate::rotations::AxisAngle([0.4, -2.0, 1.1]))
                .0;
        let pred: Vec<Point> = gt
            .iter()
            .map(|p| apply(&r, *p).map(|x| 2.0 * x + 0.7))
            .collect();
        let a = procrustes_align(&pred, &gt).unwrap();
        for (x, y) in a.aligned.iter().zip(&gt) {
            assert!(norm(sub(*x, *y)) < 1e-12);
        }
        assert!((a.scale - 0.5).abs() < 1e-12);
    }

    #[test]
    fn alignment_beats_a_brute_force_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let gt = random_points(&mut rng, 14);
            let pred = random_points(&mut rng, 14);
            let a = procrustes_align(&pred, &gt).unwrap();
            let residual = |q: &[Point]| {
                q.iter()
                    .zip(&gt)
                    .map(|(x, y)| norm(sub(*x, *y)).powi(2))
                    .sum::<f64>()
            };
            let best = residual(&a.aligned);
            let (mp, mg) = (centroid(&pred), centroid(&gt));
            let steps = 12;
            for i in 0..steps {
                for j in 0..steps {
                    for k in 0..steps {
                        let aa = [i, j, k].map(|v| -3.0 + 6.0 * v as f64 / (steps - 1) as f64);
                        let r = crate::rotations::axis_angle_to_matrix(
                            &crate::rotations::AxisAngle(aa),
                        )
                        .0;
                        for s in [0.25, 0.5, 1.0, 2.0] {
                            let q: Vec<Point> = pred
                                .iter()
                                .map(|p| {
                                    let x = apply(&r, sub(*p, mp));
                                    [s * x[0] + mg[0], s * x[1] + mg[1], s * x[2] + mg[2]]
                                })
                                .collect();
                            assert!(best <= residual(&q) + 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn collapsed_prediction_is_translation_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_points(&mut rng, 5);
        let pred = vec![[0.1, 0.2, 0.3]; 5];
        let a = procrustes_align(&pred, &gt).unwrap();
        assert!(a.translation_only);
        let c = centroid(&gt);
        for p in &a.aligned {
            assert!(norm(sub(*p, c)) < 1e-15);
        }
    }

    #[test]
    fn acceleration_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt: Vec<Vec<Point>> = (0..10).map(|_| random_points(&mut rng, 4)).collect();
        assert_eq!(accel_error(&gt, &gt, 25.0).unwrap(), 0.0);
        let drift: Vec<Vec<Point>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| {
                f.iter()
                    .map(|p| [p[0] + 0.1 + 0.02 * t as f64, p[1] - 0.3 * t as f64, p[2]])
                    .collect()
            })
            .collect();
        assert!(accel_error(&drift, &gt, 25.0).unwrap() < 1e-9);
        let c_mm = 3.0;
        let quad: Vec<Vec<Point>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| {
                f.iter()
                    .map(|p| [p[0] + c_mm / 1000.0 * (t * t) as f64, p[1], p[2]])
                    .collect()
            })
            .collect();
        let e = accel_error(&quad, &gt, 30.0).unwrap();
        let expect = 2.0 * c_mm * 30.0 * 30.0;
        assert!(((e - expect) / expect).abs() < 1e-9, "{e} vs {expect}");
    }

    #[test]
    fn report_averages_sequences_equally() {
        let s = |i, frames, v| SequenceMetrics {
            sequence: i,
            frames,
            mpjpe_mm: v,
            pa_mpjpe_mm: v,
            mpvpe_mm: None,
            accel_err_mm_s2: v,
            accel_err_mm_frame2: v,
        };
        let r = MetricReport::aggregate(vec![s(0, 10, 1.0), s(1, 30, 3.0)], 25.0, 4).unwrap();
        assert_eq!(r.mpjpe_mm, 2.0);
        assert_eq!(r.frame_count, 40);
        assert_eq!(r.mpvpe_mm, None);
        assert!(r.to_text().contains("mpvpe_mm = unavailable"));
        assert_eq!(r.to_csv().lines().count(), 4);
    }
}
