//! Synthetic band-limited motion, noisy per-frame features, sliding windows
//! and the binary dataset container.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bodymodel::{BodyModel, BodyParams};
use crate::error::{Error, Result};
use crate::metrics::Point;
use crate::numerics::Tensor;
use crate::regressor::params_to_flat6d;
use crate::temporal::current_index;

pub const DATASET_MAGIC: &str = "TCMR-DATASET";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_EXTENSION: &str = "tcds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub frames: usize,
    pub fps: f64,
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub eval_sequences: usize,
    /// Highest DFT bin (of a `frames`-long sequence) any trajectory may use.
    pub max_frequency_bin: usize,
    /// Sinusoids summed per pose channel.
    pub components: usize,
    /// Global multiplier on all motion; 0 gives the rest pose and a fixed camera.
    pub amplitude: f64,
    /// Range of per-sinusoid amplitudes in radians.
    pub joint_amplitude: [f64; 2],
    /// Half-width of the uniform per-channel static offset in radians.
    pub static_pose: f64,
    pub shape_std: f64,
    pub shape_limit: f64,
    pub camera_scale: [f64; 2],
    pub camera_translation: f64,
    /// Relative amplitude of camera drift.
    pub camera_motion: f64,
    pub feature_dim: usize,
    pub feature_hidden: usize,
    /// Standard deviation of the per-element feature noise.
    pub feature_noise: f64,
    pub outlier_prob: f64,
    pub outlier_factor: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            fps: 25.0,
            train_sequences: 200,
            val_sequences: 20,
            eval_sequences: 40,
            max_frequency_bin: 4,
            components: 3,
            amplitude: 1.0,
            joint_amplitude: [0.05, 0.35],
            static_pose: 0.2,
            shape_std: 1.0,
            shape_limit: 3.0,
            camera_scale: [0.9, 1.1],
            camera_translation: 0.1,
            camera_motion: 0.05,
            feature_dim: 96,
            feature_hidden: 128,
            feature_noise: 0.1,
            outlier_prob: 0.05,
            outlier_factor: 5.0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        if self.frames < 3 {
            return Err(Error::config(
                "data.frames",
                "need at least 3 frames per sequence",
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::config("data.fps", "must be positive"));
        }
        if self.max_frequency_bin == 0 || 2 * self.max_frequency_bin >= self.frames {
            return Err(Error::config(
                "data.max_frequency_bin",
                format!(
                    "must lie in 1..{} for {} frames",
                    self.frames.div_ceil(2),
                    self.frames
                ),
            ));
        }
        if self.joint_amplitude[0] > self.joint_amplitude[1]
            || self.camera_scale[0] > self.camera_scale[1]
        {
            return Err(Error::config("data", "ranges must be ordered low, high"));
        }
        let param_dim = BodyParams::flat_len(model.joint_count(), model.shape_dim());
        if self.feature_dim < param_dim {
            return Err(Error::config(
                "data.feature_dim",
                format!(
                    "{} is below the body parameter dimension {param_dim}",
                    self.feature_dim
                ),
            ));
        }
        if self.feature_hidden == 0 {
            return Err(Error::config("data.feature_hidden", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.outlier_prob)
            || self.feature_noise < 0.0
            || self.outlier_factor < 0.0
        {
            return Err(Error::config("data", "noise settings out of range"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Eval => 3,
        }
    }

    /// File name of the split inside a data directory.
    pub fn file_name(self) -> String {
        format!("{}.{DATASET_EXTENSION}", self.name())
    }

    pub fn count(self, cfg: &DataConfig) -> usize {
        match self {
            Split::Train => cfg.train_sequences,
            Split::Val => cfg.val_sequences,
            Split::Eval => cfg.eval_sequences,
        }
    }
}

/// Independent generator for a `(purpose, split, index)` triple under one master seed.
fn stream_rng(master_seed: u64, purpose: u64, split: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((purpose << 56) | (split << 48) | index);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub params: Vec<BodyParams>,
    pub joints: Vec<Vec<Point>>,
    pub vertices: Vec<Vec<Point>>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub features: Vec<Vec<f64>>,
    /// Frames whose noise was scaled by the outlier factor.
    pub outliers: Vec<bool>,
}

struct Channel {
    dc: f64,
    terms: Vec<(f64, usize, f64)>,
}

impl Channel {
    fn random(rng: &mut impl Rng, cfg: &DataConfig, dc_range: f64, amp: [f64; 2]) -> Self {
        let dc = cfg.amplitude * rng.random_range(-dc_range..=dc_range);
        let terms = (0..cfg.components)
            .map(|_| {
                let a = cfg.amplitude * rng.random_range(amp[0]..=amp[1]);
                let bin = rng.random_range(1..=cfg.max_frequency_bin);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (a, bin, phase)
            })
            .collect();
        Self { dc, terms }
    }

    fn at(&self, t: usize, n: usize) -> f64 {
        let w = std::f64::consts::TAU * t as f64 / n as f64;
        self.dc
            + self
                .terms
                .iter()
                .map(|&(a, bin, phase)| a * (w * bin as f64 + phase).sin())
                .sum::<f64>()
    }
}

/// Sum-of-sinusoids motion on exact DFT bins up to `max_frequency_bin`.
pub fn generate_motion(
    model: &BodyModel,
    cfg: &DataConfig,
    rng: &mut impl Rng,
) -> Result<MotionSequence> {
    let n = cfg.frames;
    let j = model.joint_count();
    let pose: Vec<Channel> = (0..3 * j)
        .map(|_| Channel::random(rng, cfg, cfg.static_pose, cfg.joint_amplitude))
        .collect();
    let normal = Normal::new(0.0, cfg.shape_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let shape: Vec<f64> = (0..model.shape_dim())
        .map(|_| {
            if cfg.shape_std == 0.0 {
                0.0
            } else {
                normal.sample(rng).clamp(-cfg.shape_limit, cfg.shape_limit)
            }
        })
        .collect();
    let s0 = rng.random_range(cfg.camera_scale[0]..=cfg.camera_scale[1]);
    let t0 = [
        rng.random_range(-cfg.camera_translation..=cfg.camera_translation),
        rng.random_range(-cfg.camera_translation..=cfg.camera_translation),
    ];
    let cam_amp = [0.0, cfg.camera_motion];
    let cam: Vec<Channel> = (0..3)
        .map(|_| Channel::random(rng, cfg, 0.0, cam_amp))
        .collect();
    let mut params = Vec::with_capacity(n);
    let mut joints = Vec::with_capacity(n);
    let mut vertices = Vec::with_capacity(n);
    for t in 0..n {
        let p = BodyParams {
            pose: (0..j)
                .map(|k| std::array::from_fn(|c| pose[3 * k + c].at(t, n)))
                .collect(),
            shape: shape.clone(),
            scale: s0 * (1.0 + cam[0].at(t, n)),
            translation: [t0[0] + cam[1].at(t, n), t0[1] + cam[2].at(t, n)],
        };
        let fk = model.forward_params(&p)?;
        params.push(p);
        joints.push(fk.joints);
        vertices.push(fk.vertices);
    }
    Ok(MotionSequence {
        fps: cfg.fps,
        params,
        joints,
        vertices,
    })
}

/// Weight of root-relative joint positions (meters) next to the flat parameters at the map input.
const JOINT_INPUT_SCALE: f64 = 2.0;
/// Standard deviation of the first layer is this over the square root of its fan-in.
const FIRST_LAYER_GAIN: f64 = 0.5;

/// Frozen random two-layer map from a frame's flat body parameters and its
/// root-relative joints to static features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub first: Tensor,
    pub first_bias: Vec<f64>,
    pub second: Tensor,
    pub second_bias: Vec<f64>,
}

impl FeatureMap {
    pub fn new(model: &BodyModel, cfg: &DataConfig, master_seed: u64) -> Result<Self> {
        cfg.validate(model)?;
        let d_in =
            BodyParams::flat_len(model.joint_count(), model.shape_dim()) + 3 * model.joint_count();
        let mut rng = stream_rng(master_seed, 0, 0, 0);
        let w1 = Normal::new(0.0, FIRST_LAYER_GAIN / (d_in as f64).sqrt()).expect("valid std");
        let w2 = Normal::new(0.0, 1.0 / (cfg.feature_hidden as f64).sqrt()).expect("valid std");
        let first = Tensor::from_fn(d_in, cfg.feature_hidden, |_, _| w1.sample(&mut rng));
        let first_bias = (0..cfg.feature_hidden)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let second = Tensor::from_fn(cfg.feature_hidden, cfg.feature_dim, |_, _| {
            w2.sample(&mut rng)
        });
        let second_bias = (0..cfg.feature_dim)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        Ok(Self {
            first,
            first_bias,
            second,
            second_bias,
        })
    }

    /// `joints` are the frame's world joints; joint 0 is taken as the root.
    pub fn apply(&self, params: &BodyParams, joints: &[Point]) -> Vec<f64> {
        let mut input = params.to_flat();
        let root = joints.first().copied().unwrap_or_default();
        input.extend(
            joints
                .iter()
                .flat_map(|j| (0..3).map(move |k| JOINT_INPUT_SCALE * (j[k] - root[k]))),
        );
        let x = Tensor::row(&input);
        let mut h = x.matmul(&self.first).expect("dims fixed at construction");
        for (v, b) in h.data_mut().iter_mut().zip(&self.first_bias) {
            *v = (*v + b).tanh();
        }
        let mut f = h.matmul(&self.second).expect("dims fixed at construction");
        for (v, b) in f.data_mut().iter_mut().zip(&self.second_bias) {
            *v += b;
        }
        f.into_vec()
    }
}

/// `f_t = φ(Θ_t) + ε_t`; a frame is an outlier with probability `outlier_prob`.
pub fn encode_features(
    motion: &MotionSequence,
    map: &FeatureMap,
    cfg: &DataConfig,
    rng: &mut impl Rng,
) -> FeatureSequence {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(motion.len());
    let mut outliers = Vec::with_capacity(motion.len());
    for (p, joints) in motion.params.iter().zip(&motion.joints) {
        let outlier = rng.random::<f64>() < cfg.outlier_prob;
        let sigma = cfg.feature_noise * if outlier { cfg.outlier_factor } else { 1.0 };
        let mut f = map.apply(p, joints);
        for v in &mut f {
            *v += sigma * normal.sample(rng);
        }
        features.push(f);
        outliers.push(outlier);
    }
    FeatureSequence { features, outliers }
}

/// Window start offsets; `⌊(n−T)/stride⌋+1` of them when `n ≥ T`.
pub fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    if n < window || stride == 0 || window == 0 {
        return Vec::new();
    }
    (0..=n - window).step_by(stride).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameTruth {
    pub frame: usize,
    pub params: BodyParams,
    pub joints: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceWindow {
    pub sequence: usize,
    pub start: usize,
    pub features: Vec<Vec<f64>>,
    pub current: FrameTruth,
    pub previous: Option<FrameTruth>,
    pub next: Option<FrameTruth>,
}

impl SequenceWindow {
    pub fn window(&self) -> usize {
        self.features.len()
    }

    /// Position of the current frame inside the window.
    pub fn current_offset(&self) -> usize {
        self.current.frame - self.start
    }
}

pub fn make_windows(
    sequence: usize,
    features: &FeatureSequence,
    motion: &MotionSequence,
    window: usize,
    stride: usize,
) -> Vec<SequenceWindow> {
    let n = motion.len().min(features.features.len());
    if n < window {
        log::warn!("sequence {sequence} has {n} frames, fewer than the window of {window}; no windows produced");
    }
    let c = current_index(window);
    let truth = |f: usize| FrameTruth {
        frame: f,
        params: motion.params[f].clone(),
        joints: motion.joints[f].clone(),
    };
    window_starts(n, window, stride)
        .into_iter()
        .map(|s| SequenceWindow {
            sequence,
            start: s,
            features: features.features[s..s + window].to_vec(),
            current: truth(s + c),
            previous: (c > 0).then(|| truth(s + c - 1)),
            next: (c + 1 < window).then(|| truth(s + c + 1)),
        })
        .collect()
}

/// One split of a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub motions: Vec<MotionSequence>,
    pub features: Vec<FeatureSequence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub split: Split,
    pub master_seed: u64,
    pub config: DataConfig,
    pub feature_dim: usize,
    pub joint_count: usize,
    pub shape_dim: usize,
    pub vertex_count: usize,
    pub fps: f64,
    pub sequence_lengths: Vec<usize>,
    /// Mean of the training frames in the regressor's flat 6D layout.
    pub mean_theta: Vec<f64>,
    /// Per sequence, the frames generated as feature outliers.
    pub outlier_frames: Vec<Vec<usize>>,
    pub payload_bytes: u64,
    /// `sha256:` followed by the hex digest of the payload.
    pub checksum: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }

    pub fn param_dim(&self) -> usize {
        BodyParams::flat_len(self.header.joint_count, self.header.shape_dim)
    }

    /// Rejects a dataset whose dimensions differ from what a model expects.
    pub fn check_compatible(
        &self,
        feature_dim: usize,
        joint_count: usize,
        shape_dim: usize,
    ) -> Result<()> {
        for (what, expected, found) in [
            ("feature dimension", feature_dim, self.header.feature_dim),
            ("joint count", joint_count, self.header.joint_count),
            ("shape dimension", shape_dim, self.header.shape_dim),
        ] {
            if expected != found {
                return Err(Error::Incompatible {
                    what: format!("dataset {what}"),
                    expected: expected.to_string(),
                    found: found.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn windows(&self, window: usize, stride: usize) -> Vec<SequenceWindow> {
        self.motions
            .iter()
            .zip(&self.features)
            .enumerate()
            .flat_map(|(i, (m, f))| make_windows(i, f, m, window, stride))
            .collect()
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (m, f) in self.motions.iter().zip(&self.features) {
            for t in 0..m.len() {
                let values = m.params[t]
                    .to_flat()
                    .into_iter()
                    .chain(m.joints[t].iter().flatten().copied())
                    .chain(m.vertices[t].iter().flatten().copied())
                    .chain(f.features[t].iter().copied());
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let payload = self.payload();
        self.header.payload_bytes = payload.len() as u64;
        self.header.checksum = sha256_tag(&payload);
        let header = serde_json::to_string(&self.header)?;
        let mut file =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let write = |file: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
            writeln!(file, "{DATASET_MAGIC} {DATASET_VERSION}")?;
            writeln!(file, "{header}")?;
            file.write_all(&payload)?;
            file.flush()
        };
        write(&mut file).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let header: DatasetHeader =
            read_container_header(&mut reader, path, DATASET_MAGIC, DATASET_VERSION)?;
        if header.format_version != DATASET_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "dataset version {} unsupported (expected {DATASET_VERSION})",
                    header.format_version
                ),
            ));
        }
        let mut payload = Vec::new();
        reader
            .read_to_end(&mut payload)
            .map_err(|e| Error::io(path, e))?;
        verify_payload(path, &payload, header.payload_bytes, &header.checksum)?;
        let (j, b, v, d) = (
            header.joint_count,
            header.shape_dim,
            header.vertex_count,
            header.feature_dim,
        );
        let per_frame = BodyParams::flat_len(j, b) + 3 * j + 3 * v + d;
        let total_frames: usize = header.sequence_lengths.iter().sum();
        if payload.len() != total_frames * per_frame * 8 {
            return Err(Error::format(
                path,
                "payload size does not match the declared dimensions",
            ));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |k: usize| -> Vec<f64> { values.by_ref().take(k).collect() };
        let points = |flat: Vec<f64>| -> Vec<Point> {
            flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
        };
        let mut motions = Vec::with_capacity(header.sequence_lengths.len());
        let mut features = Vec::with_capacity(header.sequence_lengths.len());
        if header.outlier_frames.len() != header.sequence_lengths.len() {
            return Err(Error::format(
                path,
                "outlier table does not match the sequence count",
            ));
        }
        for (s, &n) in header.sequence_lengths.iter().enumerate() {
            let mut m = MotionSequence {
                fps: header.fps,
                params: vec![],
                joints: vec![],
                vertices: vec![],
            };
            let mut f = FeatureSequence {
                features: vec![],
                outliers: vec![false; n],
            };
            for &t in &header.outlier_frames[s] {
                if t >= n {
                    return Err(Error::format(
                        path,
                        format!("outlier frame {t} beyond sequence {s} of {n} frames"),
                    ));
                }
                f.outliers[t] = true;
            }
            for _ in 0..n {
                m.params.push(BodyParams::from_flat(
                    &take(BodyParams::flat_len(j, b)),
                    j,
                    b,
                )?);
                m.joints.push(points(take(3 * j)));
                m.vertices.push(points(take(3 * v)));
                f.features.push(take(d));
            }
            motions.push(m);
            features.push(f);
        }
        Ok(Self {
            header,
            motions,
            features,
        })
    }
}

pub(crate) fn sha256_tag(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::from("sha256:");
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub(crate) fn read_container_header<T: serde::de::DeserializeOwned>(
    reader: &mut impl BufRead,
    path: &Path,
    magic: &str,
    version: u32,
) -> Result<T> {
    let mut line = String::new();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::io(path, e))?;
    let mut parts = line.trim_end().split(' ');
    if parts.next() != Some(magic) {
        return Err(Error::format(path, format!("missing {magic} magic line")));
    }
    let found: u32 = parts.next().and_then(|v| v.parse().ok()).unwrap_or(0);
    if found != version {
        return Err(Error::format(
            path,
            format!("version {found} unsupported (expected {version})"),
        ));
    }
    line.clear();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&line).map_err(|e| Error::format(path, format!("header: {e}")))
}

pub(crate) fn verify_payload(
    path: &Path,
    payload: &[u8],
    declared: u64,
    checksum: &str,
) -> Result<()> {
    if sha256_tag(payload) != checksum {
        return Err(Error::format(
            path,
            "checksum mismatch (file truncated or corrupted)",
        ));
    }
    if payload.len() as u64 != declared {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, header declares {declared}",
                payload.len()
            ),
        ));
    }
    Ok(())
}

/// Generates one split. Sequence `i` of a split always gets the same random
/// streams, and the feature map depends only on the master seed.
pub fn generate_split(
    model: &BodyModel,
    cfg: &DataConfig,
    master_seed: u64,
    split: Split,
) -> Result<Dataset> {
    cfg.validate(model)?;
    let map = FeatureMap::new(model, cfg, master_seed)?;
    let count = split.count(cfg);
    let mut motions = Vec::with_capacity(count);
    let mut features = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let mut motion_rng = stream_rng(master_seed, 1, split.stream(), i);
        let m = generate_motion(model, cfg, &mut motion_rng)?;
        let mut noise_rng = stream_rng(master_seed, 2, split.stream(), i);
        features.push(encode_features(&m, &map, cfg, &mut noise_rng));
        motions.push(m);
    }
    let mean_theta = mean_theta(model, cfg, master_seed)?;
    let outlier_frames = features
        .iter()
        .map(|f| {
            f.outliers
                .iter()
                .enumerate()
                .filter(|o| *o.1)
                .map(|o| o.0)
                .collect()
        })
        .collect();
    Ok(Dataset {
        header: DatasetHeader {
            format_version: DATASET_VERSION,
            split,
            master_seed,
            config: cfg.clone(),
            feature_dim: cfg.feature_dim,
            joint_count: model.joint_count(),
            shape_dim: model.shape_dim(),
            vertex_count: model.vertex_count(),
            fps: cfg.fps,
            sequence_lengths: vec![cfg.frames; count],
            mean_theta,
            outlier_frames,
            payload_bytes: 0,
            checksum: String::new(),
        },
        motions,
        features,
    })
}

/// Mean over all training frames in the flat 6D layout.
fn mean_theta(model: &BodyModel, cfg: &DataConfig, master_seed: u64) -> Result<Vec<f64>> {
    let d = crate::regressor::theta_dim(model.joint_count(), model.shape_dim());
    let mut acc = vec![0.0; d];
    let mut frames = 0usize;
    for i in 0..cfg.train_sequences.max(1) as u64 {
        let mut rng = stream_rng(master_seed, 1, Split::Train.stream(), i);
        let m = generate_motion(model, cfg, &mut rng)?;
        for p in &m.params {
            for (a, v) in acc.iter_mut().zip(params_to_flat6d(p)) {
                *a += v;
            }
            frames += 1;
        }
    }
    Ok(acc.into_iter().map(|v| v / frames as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DataConfig {
        DataConfig {
            train_sequences: 3,
            val_sequences: 1,
            eval_sequences: 2,
            frames: 20,
            ..DataConfig::default()
        }
    }

    #[test]
    fn zero_amplitude_is_static_rest_pose() {
        let model = BodyModel::default_model();
        let cfg = DataConfig {
            amplitude: 0.0,
            ..small_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = generate_motion(&model, &cfg, &mut rng).unwrap();
        for p in &m.params {
            assert!(p.pose.iter().flatten().all(|&x| x == 0.0));
            assert_eq!(p.scale, m.params[0].scale);
            assert_eq!(p.translation, m.params[0].translation);
        }
        let acc = crate::metrics::accel_error(&m.joints, &m.joints, cfg.fps).unwrap();
        assert_eq!(acc, 0.0);
        for w in m.joints.windows(3) {
            assert_eq!(w[0], w[2]);
        }
    }

    #[test]
    fn shape_is_constant_and_clipped() {
        let model = BodyModel::default_model();
        let cfg = DataConfig {
            shape_std: 10.0,
            ..small_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = generate_motion(&model, &cfg, &mut rng).unwrap();
        assert!(m.params[0].shape.iter().all(|b| b.abs() <= 3.0));
        assert!(m.params[0].shape.iter().any(|b| b.abs() == 3.0));
        assert!(m.params.iter().all(|p| p.shape == m.params[0].shape));
    }

    #[test]
    fn stored_joints_match_kinematics() {
        let model = BodyModel::default_model();
        let d = generate_split(&model, &small_config(), 5, Split::Eval).unwrap();
        for m in &d.motions {
            for (p, j) in m.params.iter().zip(&m.joints) {
                let fk = model.forward_params(p).unwrap();
                for (a, b) in fk.joints.iter().zip(j) {
                    for i in 0..3 {
                        assert!((a[i] - b[i]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_split_dependent() {
        let model = BodyModel::default_model();
        let cfg = small_config();
        let a = generate_split(&model, &cfg, 9, Split::Train).unwrap();
        let b = generate_split(&model, &cfg, 9, Split::Train).unwrap();
        let c = generate_split(&model, &cfg, 9, Split::Val).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.motions[0], c.motions[0]);
    }

    #[test]
    fn feature_dim_below_param_dim_is_rejected() {
        let model = BodyModel::default_model();
        let cfg = DataConfig {
            feature_dim: 84,
            ..small_config()
        };
        let err = generate_split(&model, &cfg, 0, Split::Train)
            .unwrap_err()
            .to_string();
        assert!(err.contains("85"), "{err}");
    }

    #[test]
    fn noiseless_features_depend_only_on_params() {
        let model = BodyModel::default_model();
        let cfg = DataConfig {
            feature_noise: 0.0,
            ..small_config()
        };
        let map = FeatureMap::new(&model, &cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = generate_motion(&model, &cfg, &mut rng).unwrap();
        let mut twice = m.clone();
        twice.params[1] = twice.params[0].clone();
        twice.joints[1] = twice.joints[0].clone();
        let f = encode_features(&twice, &map, &cfg, &mut rng);
        assert_eq!(f.features[0], f.features[1]);

        let noisy_cfg = DataConfig {
            feature_noise: 0.1,
            outlier_prob: 0.0,
            ..cfg
        };
        let g = encode_features(&twice, &map, &noisy_cfg, &mut rng);
        let clean = map.apply(&twice.params[0], &twice.joints[0]);
        let d0: Vec<f64> = g.features[0]
            .iter()
            .zip(&clean)
            .map(|(a, b)| a - b)
            .collect();
        let d1: Vec<f64> = g.features[1]
            .iter()
            .zip(&clean)
            .map(|(a, b)| a - b)
            .collect();
        assert_ne!(d0, d1);
        let rms = (d0.iter().map(|x| x * x).sum::<f64>() / d0.len() as f64).sqrt();
        assert!(rms > 0.05 && rms < 0.2, "{rms}");
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(16, 16, 1).len(), 1);
        assert_eq!(window_starts(20, 16, 1).len(), 5);
        assert_eq!(window_starts(15, 16, 1).len(), 0);
        for (n, t, s) in [(60, 16, 1), (60, 16, 4), (61, 16, 5), (33, 7, 3)] {
            assert_eq!(window_starts(n, t, s).len(), (n - t) / s + 1);
        }
    }

    #[test]
    fn windows_carry_neighbouring_truth() {
        let model = BodyModel::default_model();
        let d = generate_split(&model, &small_config(), 4, Split::Eval).unwrap();
        let ws = make_windows(1, &d.features[1], &d.motions[1], 16, 2);
        assert_eq!(ws.len(), 3);
        for w in &ws {
            assert_eq!(w.current_offset(), 7);
            assert_eq!(w.previous.as_ref().unwrap().frame + 1, w.current.frame);
            assert_eq!(w.next.as_ref().unwrap().frame, w.current.frame + 1);
            assert_eq!(w.features[7], d.features[1].features[w.current.frame]);
            let ranges = crate::temporal::FrameRanges::new(16, false);
            assert_eq!((ranges.past.len(), ranges.future.len()), (7, 8));
        }
        let short = make_windows(0, &d.features[0], &d.motions[0], 21, 1);
        assert!(short.is_empty());
    }
}
