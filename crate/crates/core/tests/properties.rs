use proptest::prelude::*;

use tcmr::metrics::{accel_error, mpjpe, pa_mpjpe, Point};
use tcmr::numerics::{Graph, Tensor};
use tcmr::rotations::{
    axis_angle_to_matrix, axis_angle_to_quaternion, matrix_to_axis_angle, quaternion_to_axis_angle,
    rot6d_to_matrix, slerp, AxisAngle, RotationMatrix,
};

fn axis_angle(max_angle: f64) -> impl Strategy<Value = AxisAngle> {
    (prop::array::uniform3(-1.0..1.0f64), 0.0..max_angle).prop_filter_map("zero axis", |(v, th)| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        (n > 1e-3).then(|| AxisAngle(v.map(|x| x / n * th)))
    })
}

fn point(range: f64) -> impl Strategy<Value = Point> {
    prop::array::uniform3(-range..range)
}

/// Proper rotation, scale and translation applied to every point.
fn similarity(points: &[Point], r: &RotationMatrix, s: f64, t: Point) -> Vec<Point> {
    points
        .iter()
        .map(|p| std::array::from_fn(|i| s * r.apply(*p)[i] + t[i]))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_rows_lie_on_the_simplex(values in prop::collection::vec(-700.0..700.0f64, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(3, 4, values).unwrap());
        let s = g.softmax(x);
        for r in 0..3 {
            let row = g.value(s).row_slice(r);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_in_the_root(
        values in prop::collection::vec(-2.0..2.0f64, 6),
        weights in prop::collection::vec(-1.0..1.0f64, 12),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let x0 = Tensor::from_vec(2, 3, values).unwrap();
        let w0 = Tensor::from_vec(3, 4, weights).unwrap();
        let grads = |ca: f64, cb: f64| {
            let mut g = Graph::new();
            let x = g.param(x0.clone());
            let w = g.constant(w0.clone());
            let h = g.matmul(x, w).unwrap();
            let h = g.tanh(h);
            let f = g.sum(h);
            let s = g.sigmoid(x);
            let q = g.squared_norm(s);
            let f = g.scale(f, ca);
            let q = g.scale(q, cb);
            let root = g.add(f, q).unwrap();
            g.backward(root).unwrap().get(x).unwrap().clone()
        };
        let (ga, gb, gab) = (grads(1.0, 0.0), grads(0.0, 1.0), grads(a, b));
        for ((u, v), c) in ga.data().iter().zip(gb.data()).zip(gab.data()) {
            prop_assert!((a * u + b * v - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn axis_angle_matrix_round_trip(aa in axis_angle(std::f64::consts::PI)) {
        let r = axis_angle_to_matrix(&aa);
        let back = axis_angle_to_matrix(&matrix_to_axis_angle(&r));
        prop_assert!(r.max_abs_diff(&back) <= 1e-9);
        let (orth, det) = r.orthonormality_error();
        prop_assert!(orth <= 1e-12 && (det - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn quaternion_round_trip(aa in axis_angle(3.1)) {
        let back = quaternion_to_axis_angle(&axis_angle_to_quaternion(&aa));
        for k in 0..3 {
            prop_assert!((aa.0[k] - back.0[k]).abs() <= 1e-9);
        }
    }

    #[test]
    fn rot6d_of_a_rotation_recovers_it(aa in axis_angle(std::f64::consts::PI), s in 0.1..10.0f64) {
        let r = axis_angle_to_matrix(&aa);
        let scaled = tcmr::rotations::Rot6D(r.to_rot6d().0.map(|v| s * v));
        prop_assert!(rot6d_to_matrix(&scaled).unwrap().max_abs_diff(&r) <= 1e-9);
    }

    #[test]
    fn slerp_angle_grows_linearly(a in axis_angle(3.0), b in axis_angle(3.0), u in 0.0..=1.0f64) {
        let (q0, q1) = (axis_angle_to_quaternion(&a), axis_angle_to_quaternion(&b));
        let total = q0.angle_to(&q1);
        let q = slerp(&q0, &q1, u).unwrap();
        prop_assert!((q0.angle_to(&q) - u * total).abs() <= 1e-9);
        prop_assert!((q.angle_to(&q1) - (1.0 - u) * total).abs() <= 1e-9);
    }

    /// Every joint is perturbed, so the error is spread rather than concentrated.
    #[test]
    fn alignment_never_increases_the_error_of_isotropic_noise(
        gt in prop::collection::vec(point(1.0), 14),
        noise in prop::collection::vec(point(0.05), 14),
    ) {
        let pred: Vec<Point> = gt.iter().zip(&noise).map(|(g, n)| std::array::from_fn(|i| g[i] + n[i])).collect();
        let all: Vec<usize> = (0..gt.len()).collect();
        let pa = pa_mpjpe(&pred, &gt, &all).unwrap();
        let plain = mpjpe(&pred, &gt, 0, &all).unwrap();
        prop_assert!(pa <= plain, "{pa} > {plain}");
    }

    #[test]
    fn pa_mpjpe_ignores_similarity_transforms(
        gt in prop::collection::vec(point(1.0), 14),
        noise in prop::collection::vec(point(0.05), 14),
        aa in axis_angle(std::f64::consts::PI),
        s in 0.2..5.0f64,
        t in point(10.0),
    ) {
        let pred: Vec<Point> = gt.iter().zip(&noise).map(|(g, n)| std::array::from_fn(|i| g[i] + n[i])).collect();
        let all: Vec<usize> = (0..gt.len()).collect();
        let moved = similarity(&pred, &axis_angle_to_matrix(&aa), s, t);
        let base = pa_mpjpe(&pred, &gt, &all).unwrap();
        prop_assert!((pa_mpjpe(&moved, &gt, &all).unwrap() - base).abs() <= 1e-8);
    }

    #[test]
    fn affine_drift_has_no_acceleration_error(
        gt in prop::collection::vec(prop::collection::vec(point(1.0), 5), 3..20),
        offset in point(1.0),
        velocity in point(0.1),
    ) {
        let pred: Vec<Vec<Point>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| f.iter().map(|p| std::array::from_fn(|i| p[i] + offset[i] + velocity[i] * t as f64)).collect())
            .collect();
        prop_assert!(accel_error(&pred, &gt, 30.0).unwrap().abs() <= 1e-6);
    }
}
