//! Per-frame acceleration-error traces for plotting.

use std::fmt::Write;

use crate::bodymodel::BodyModel;
use crate::error::Result;
use crate::metrics::{accel_error_trace, root_aligned_subset};
use crate::synthdata::Dataset;

use super::evaluate::{evaluated_geometry, Predictions};

/// Default spike threshold as a multiple of the method's median.
pub const SPIKE_FACTOR: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub method: String,
    pub sequence: usize,
    /// Dataset frame at the centre of the second difference.
    pub frame: usize,
    pub accel_err_mm_s2: f64,
}

/// One row per interior evaluated frame, `frames − 2` per sequence.
pub fn accel_traces(
    body: &BodyModel,
    ds: &Dataset,
    method: &str,
    preds: &Predictions,
) -> Result<Vec<TraceRow>> {
    let fps2 = ds.header.fps * ds.header.fps;
    let mut rows = Vec::new();
    for e in evaluated_geometry(body, ds, preds)? {
        if e.pred_joints.len() < 3 {
            continue;
        }
        let trace = accel_error_trace(
            &root_aligned_subset(&e.pred_joints, body.eval_joints()),
            &root_aligned_subset(&e.gt_joints, body.eval_joints()),
        )?;
        rows.extend(trace.into_iter().enumerate().map(|(i, v)| TraceRow {
            method: method.to_string(),
            sequence: e.sequence,
            frame: e.first_frame + i + 1,
            accel_err_mm_s2: v * fps2,
        }));
    }
    Ok(rows)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Entries strictly above `factor` times the median of `values`.
pub fn spike_count(values: &[f64], factor: f64) -> usize {
    median(values).map_or(0, |m| values.iter().filter(|&&v| v > factor * m).count())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSummary {
    pub method: String,
    pub frames: usize,
    pub median_mm_s2: f64,
    pub spikes: usize,
}

pub fn summarize(rows: &[TraceRow], factor: f64) -> Vec<TraceSummary> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.accel_err_mm_s2)
                .collect();
            TraceSummary {
                method: m.to_string(),
                frames: v.len(),
                median_mm_s2: median(&v).unwrap_or(0.0),
                spikes: spike_count(&v, factor),
            }
        })
        .collect()
}

pub fn traces_to_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("method,sequence,frame,accel_err_mm_s2\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{:.6}",
            r.method, r.sequence, r.frame, r.accel_err_mm_s2
        )
        .unwrap();
    }
    s
}

pub fn summary_to_csv(summary: &[TraceSummary], factor: f64) -> String {
    let mut s = format!("method,frames,median_mm_s2,spikes_above_{factor}x_median\n");
    for t in summary {
        writeln!(
            s,
            "{},{},{:.6},{}",
            t.method, t.frames, t.median_mm_s2, t.spikes
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_spikes() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(spike_count(&[1.0, 1.0, 1.0, 3.0, 3.1], 3.0), 1);
        assert_eq!(spike_count(&[0.0; 5], 3.0), 0);
    }
}
