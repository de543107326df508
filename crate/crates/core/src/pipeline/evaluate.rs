//! Window batching, sliding-window inference, prediction files and metric reports.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodymodel::{BodyModel, BodyParams};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, Point, SequenceGeometry, SequenceMetrics};
use crate::numerics::{Graph, Tensor};
use crate::objective::{FrameTargets, WindowTargets};
use crate::synthdata::{window_starts, Dataset};
use crate::temporal::current_index;

use super::model::TemporalModel;

/// Windows per inference graph.
const EVAL_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub sequence: usize,
    pub start: usize,
}

/// `T` tensors of `n × d_f`, one per window position.
pub fn batch_frames(ds: &Dataset, refs: &[WindowRef], window: usize) -> Vec<Tensor> {
    let d = ds.header.feature_dim;
    (0..window)
        .map(|i| {
            let mut t = Tensor::zeros(refs.len(), d);
            for (r, w) in refs.iter().enumerate() {
                t.row_slice_mut(r)
                    .copy_from_slice(&ds.features[w.sequence].features[w.start + i]);
            }
            t
        })
        .collect()
}

pub fn batch_targets(ds: &Dataset, refs: &[WindowRef], window: usize) -> WindowTargets {
    let c = current_index(window);
    let at = |offset: usize| {
        let params: Vec<BodyParams> = refs
            .iter()
            .map(|w| ds.motions[w.sequence].params[w.start + offset].clone())
            .collect();
        let joints: Vec<Vec<Point>> = refs
            .iter()
            .map(|w| ds.motions[w.sequence].joints[w.start + offset].clone())
            .collect();
        FrameTargets::from_params_and_joints(&params, &joints)
    };
    WindowTargets {
        current: at(c),
        previous: (c > 0).then(|| at(c - 1)),
        next: (c + 1 < window).then(|| at(c + 1)),
    }
}

pub const PREDICTIONS_FORMAT: &str = "tcmr-predictions";
pub const PREDICTIONS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequencePrediction {
    pub sequence: usize,
    /// Dataset frame of the first entry of `params`.
    pub first_frame: usize,
    /// Flat `[θ (3J) | β (B) | s, tx, ty]` per frame.
    pub params: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predictions {
    pub format: String,
    pub version: u32,
    pub fps: f64,
    pub window: usize,
    pub joint_count: usize,
    pub shape_dim: usize,
    pub sequences: Vec<SequencePrediction>,
}

impl Predictions {
    pub fn new(fps: f64, window: usize, joint_count: usize, shape_dim: usize) -> Self {
        Self {
            format: PREDICTIONS_FORMAT.into(),
            version: PREDICTIONS_VERSION,
            fps,
            window,
            joint_count,
            shape_dim,
            sequences: Vec::new(),
        }
    }

    pub fn frame_params(&self, seq: &SequencePrediction) -> Result<Vec<BodyParams>> {
        seq.params
            .iter()
            .map(|p| BodyParams::from_flat(p, self.joint_count, self.shape_dim))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if p.format != PREDICTIONS_FORMAT || p.version != PREDICTIONS_VERSION {
            return Err(Error::format(
                path,
                format!("not a version 1 {PREDICTIONS_FORMAT} document"),
            ));
        }
        Ok(p)
    }
}

/// One estimate per frame that has a full window of context, stride 1.
pub fn predict(model: &TemporalModel, ds: &Dataset) -> Result<Predictions> {
    let cfg = model.temporal_config();
    let body = &model.body;
    ds.check_compatible(cfg.feature_dim, body.joint_count(), body.shape_dim())?;
    let t = cfg.window;
    let refs: Vec<WindowRef> = ds
        .motions
        .iter()
        .enumerate()
        .flat_map(|(s, m)| {
            window_starts(m.len(), t, 1)
                .into_iter()
                .map(move |start| WindowRef { sequence: s, start })
        })
        .collect();
    let chunks: Vec<Vec<BodyParams>> = refs
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, false);
            let frames: Vec<_> = batch_frames(ds, chunk, t)
                .into_iter()
                .map(|x| g.constant(x))
                .collect();
            let est = model.forward_eval(&mut g, &p, &frames)?;
            est.to_params(&g)
        })
        .collect::<Result<_>>()?;
    let mut out = Predictions::new(ds.header.fps, t, body.joint_count(), body.shape_dim());
    let c = current_index(t);
    for (w, params) in refs.iter().zip(chunks.into_iter().flatten()) {
        if out
            .sequences
            .last()
            .is_none_or(|s| s.sequence != w.sequence)
        {
            out.sequences.push(SequencePrediction {
                sequence: w.sequence,
                first_frame: w.start + c,
                params: Vec::new(),
            });
        }
        out.sequences
            .last_mut()
            .expect("pushed above")
            .params
            .push(params.to_flat());
    }
    Ok(out)
}

/// Ground truth laid out as predictions over the same frames inference would cover.
pub fn ground_truth_predictions(ds: &Dataset, window: usize) -> Predictions {
    let mut out = Predictions::new(
        ds.header.fps,
        window,
        ds.header.joint_count,
        ds.header.shape_dim,
    );
    let c = current_index(window);
    for (s, m) in ds.motions.iter().enumerate() {
        let starts = window_starts(m.len(), window, 1);
        if starts.is_empty() {
            continue;
        }
        out.sequences.push(SequencePrediction {
            sequence: s,
            first_frame: c,
            params: starts
                .iter()
                .map(|&st| m.params[st + c].to_flat())
                .collect(),
        });
    }
    out
}

/// Per-sequence joints (and vertices) for predicted and ground-truth frames.
pub struct EvaluatedSequence {
    pub sequence: usize,
    pub first_frame: usize,
    pub pred_joints: Vec<Vec<Point>>,
    pub gt_joints: Vec<Vec<Point>>,
    pub pred_vertices: Vec<Vec<Point>>,
    pub gt_vertices: Vec<Vec<Point>>,
}

pub fn evaluated_geometry(
    body: &BodyModel,
    ds: &Dataset,
    preds: &Predictions,
) -> Result<Vec<EvaluatedSequence>> {
    if preds.joint_count != body.joint_count() || preds.shape_dim != body.shape_dim() {
        return Err(Error::Incompatible {
            what: "prediction dimensions (J, B)".into(),
            expected: format!("({}, {})", body.joint_count(), body.shape_dim()),
            found: format!("({}, {})", preds.joint_count, preds.shape_dim),
        });
    }
    ds.check_compatible(ds.header.feature_dim, preds.joint_count, preds.shape_dim)?;
    preds
        .sequences
        .par_iter()
        .map(|s| {
            let m = ds.motions.get(s.sequence).ok_or_else(|| {
                Error::Shape(format!(
                    "prediction for sequence {} beyond the {} in the dataset",
                    s.sequence,
                    ds.len()
                ))
            })?;
            if s.first_frame + s.params.len() > m.len() {
                return Err(Error::Shape(format!(
                    "sequence {} predictions cover frames {}..{} of {}",
                    s.sequence,
                    s.first_frame,
                    s.first_frame + s.params.len(),
                    m.len()
                )));
            }
            let params = preds.frame_params(s)?;
            let mut pred_joints = Vec::with_capacity(params.len());
            let mut pred_vertices = Vec::with_capacity(params.len());
            for p in &params {
                let fk = body.forward_params(p)?;
                pred_joints.push(fk.joints);
                pred_vertices.push(fk.vertices);
            }
            let range = s.first_frame..s.first_frame + params.len();
            Ok(EvaluatedSequence {
                sequence: s.sequence,
                first_frame: s.first_frame,
                pred_joints,
                gt_joints: m.joints[range.clone()].to_vec(),
                pred_vertices,
                gt_vertices: m.vertices[range].to_vec(),
            })
        })
        .collect()
}

pub fn evaluate_predictions(
    body: &BodyModel,
    ds: &Dataset,
    preds: &Predictions,
) -> Result<MetricReport> {
    let geo = evaluated_geometry(body, ds, preds)?;
    let per_sequence = geo
        .par_iter()
        .map(|e| {
            let g = SequenceGeometry {
                pred_joints: &e.pred_joints,
                gt_joints: &e.gt_joints,
                pred_vertices: Some(&e.pred_vertices),
                gt_vertices: Some(&e.gt_vertices),
            };
            SequenceMetrics::compute(e.sequence, &g, body.eval_joints(), ds.header.fps)
        })
        .collect::<Result<Vec<_>>>()?;
    let covered: usize = per_sequence.iter().map(|s| s.frames).sum();
    let total: usize = ds.header.sequence_lengths.iter().sum();
    MetricReport::aggregate(per_sequence, ds.header.fps, total.saturating_sub(covered))
}

/// Inference followed by scoring.
pub fn evaluate(model: &TemporalModel, ds: &Dataset) -> Result<(Predictions, MetricReport)> {
    let preds = predict(model, ds)?;
    let report = evaluate_predictions(&model.body, ds, &preds)?;
    Ok((preds, report))
}
