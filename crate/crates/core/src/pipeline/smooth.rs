//! Average filter over predicted sequences: slerp averaging for joint
//! rotations, moving average for shape and camera.

use crate::bodymodel::BodyParams;
use crate::error::{Error, Result};
use crate::rotations::{
    axis_angle_to_quaternion, quaternion_to_axis_angle, slerp, AxisAngle, Quaternion,
};

use super::evaluate::Predictions;

/// Running slerp mean: the k-th quaternion is blended in with weight `1/k`.
pub fn slerp_average(quats: &[Quaternion]) -> Result<Quaternion> {
    let (first, rest) = quats
        .split_first()
        .ok_or_else(|| Error::Shape("slerp average of zero rotations".into()))?;
    let mut acc = first.normalized();
    for (i, q) in rest.iter().enumerate() {
        acc = slerp(&acc, q, 1.0 / (i + 2) as f64)?;
    }
    Ok(acc)
}

/// Smooths one sequence with an odd window `W`. Frame `t` averages frames
/// `t−h..=t+h` with `h = min((W−1)/2, t, n−1−t)`, so edge windows shrink
/// symmetrically.
pub fn smooth_sequence(frames: &[BodyParams], window: usize) -> Result<Vec<BodyParams>> {
    check_window(window)?;
    let half = (window - 1) / 2;
    let n = frames.len();
    let quats: Vec<Vec<Quaternion>> = frames
        .iter()
        .map(|p| {
            p.pose
                .iter()
                .map(|aa| axis_angle_to_quaternion(&AxisAngle(*aa)))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let h = half.min(t).min(n - 1 - t);
        if h == 0 {
            out.push(frames[t].clone());
            continue;
        }
        let span = t - h..=t + h;
        let m = (2 * h + 1) as f64;
        let joints = frames[t].pose.len();
        let mut pose = Vec::with_capacity(joints);
        for k in 0..joints {
            let qs: Vec<Quaternion> = span.clone().map(|s| quats[s][k]).collect();
            pose.push(quaternion_to_axis_angle(&slerp_average(&qs)?).0);
        }
        let mean = |get: &dyn Fn(&BodyParams) -> f64| {
            span.clone().map(|s| get(&frames[s])).sum::<f64>() / m
        };
        let shape = (0..frames[t].shape.len())
            .map(|b| mean(&|p| p.shape[b]))
            .collect();
        out.push(BodyParams {
            pose,
            shape,
            scale: mean(&|p| p.scale),
            translation: [mean(&|p| p.translation[0]), mean(&|p| p.translation[1])],
        });
    }
    Ok(out)
}

pub fn smooth_predictions(preds: &Predictions, window: usize) -> Result<Predictions> {
    check_window(window)?;
    let mut out = preds.clone();
    for seq in &mut out.sequences {
        let frames = preds.frame_params(seq)?;
        seq.params = smooth_sequence(&frames, window)?
            .iter()
            .map(BodyParams::to_flat)
            .collect();
    }
    Ok(out)
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::config(
            "smooth.window",
            format!("must be odd and at least 1, got {window}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(angle: f64, shape0: f64) -> BodyParams {
        let mut p = BodyParams::rest(3, 2);
        p.pose[1] = [0.0, 0.0, angle];
        p.shape[0] = shape0;
        p.scale = 1.0 + shape0;
        p
    }

    #[test]
    fn even_or_zero_window_is_rejected() {
        let seq = vec![params(0.0, 0.0); 4];
        assert!(smooth_sequence(&seq, 4).is_err());
        assert!(smooth_sequence(&seq, 0).is_err());
    }

    #[test]
    fn unit_window_is_identity() {
        let seq: Vec<_> = (0..6).map(|i| params(0.1 * i as f64, i as f64)).collect();
        assert_eq!(smooth_sequence(&seq, 1).unwrap(), seq);
    }

    #[test]
    fn constant_sequence_is_unchanged() {
        let seq = vec![params(0.7, 0.3); 9];
        for (a, b) in smooth_sequence(&seq, 5).unwrap().iter().zip(&seq) {
            for (x, y) in a.to_flat().iter().zip(b.to_flat()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_rotation_and_linear_shape_pass_through() {
        // Symmetric windows leave constant-velocity signals where they are.
        let seq: Vec<_> = (0..11)
            .map(|i| params(0.05 * i as f64, 0.2 * i as f64))
            .collect();
        for (a, b) in smooth_sequence(&seq, 5).unwrap().iter().zip(&seq) {
            for (x, y) in a.to_flat().iter().zip(b.to_flat()) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn alternating_jitter_is_damped() {
        let seq: Vec<_> = (0..9)
            .map(|i| params(if i % 2 == 0 { 0.2 } else { -0.2 }, 0.0))
            .collect();
        let out = smooth_sequence(&seq, 3).unwrap();
        assert!((out[4].pose[1][2] + 0.2 / 3.0).abs() < 1e-12);
        assert_eq!(out[0], seq[0]);
    }

    #[test]
    fn two_point_average_is_the_midpoint() {
        let a = axis_angle_to_quaternion(&AxisAngle([0.0, 0.4, 0.0]));
        let b = axis_angle_to_quaternion(&AxisAngle([0.0, 1.0, 0.0]));
        let m = slerp_average(&[a, b]).unwrap();
        assert!((quaternion_to_axis_angle(&m).0[1] - 0.7).abs() < 1e-12);
        assert!(slerp_average(&[] as &[Quaternion]).is_err());
    }
}
