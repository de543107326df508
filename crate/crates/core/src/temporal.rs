//! Recurrent temporal encoders and attention-based feature integration.
//!
//! Windows hold `T` frames indexed from 0. The current frame is
//! `⌊T/2⌋ − 1` (frame 8 of 16 when counting from 1). The all-frames encoder
//! runs a forward GRU over `0..=c` and a backward GRU over `T−1..=c`. The past
//! encoder reads `0..c` and the future encoder reads `T−1` down to `c+1`; both
//! optionally extend to `c` itself.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_weight, Bound, Linear, Mlp, ParamId, ParamStore};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalConfig {
    /// Frames per window, `T`.
    pub window: usize,
    pub feature_dim: usize,
    /// Hidden size of each direction of the all-frames GRU; `g_all` is twice this.
    pub hidden_dim: usize,
    /// Hidden size of the past and future GRUs.
    pub forecast_dim: usize,
    pub bottleneck_dim: usize,
    /// Hidden widths of the attention MLP between the concatenated codes and the three logits.
    pub attention_hidden: Vec<usize>,
    pub use_residual: bool,
    pub poseforecast: bool,
    pub poseforecast_includes_current: bool,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            window: 16,
            feature_dim: 96,
            hidden_dim: 48,
            forecast_dim: 48,
            bottleneck_dim: 12,
            attention_hidden: vec![12],
            use_residual: false,
            poseforecast: true,
            poseforecast_includes_current: false,
        }
    }
}

impl TemporalConfig {
    /// The dimensions of the original architecture.
    pub fn full_scale() -> Self {
        Self {
            window: 16,
            feature_dim: 2048,
            hidden_dim: 1024,
            forecast_dim: 1024,
            bottleneck_dim: 256,
            attention_hidden: vec![256],
            ..Self::default()
        }
    }

    pub fn all_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Width of the feature handed to the regressor.
    pub fn output_dim(&self) -> usize {
        if self.poseforecast {
            self.feature_dim
        } else {
            self.all_dim()
        }
    }

    pub fn current_index(&self) -> usize {
        current_index(self.window)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("window", self.window),
            ("feature_dim", self.feature_dim),
            ("hidden_dim", self.hidden_dim),
            ("forecast_dim", self.forecast_dim),
            ("bottleneck_dim", self.bottleneck_dim),
        ] {
            if v == 0 {
                return Err(Error::config(
                    format!("temporal.{field}"),
                    "must be positive",
                ));
            }
        }
        if self.window < 3 {
            return Err(Error::config(
                "temporal.window",
                format!("T={} is below the minimum of 3", self.window),
            ));
        }
        if self.poseforecast && !self.poseforecast_includes_current && self.window < 4 {
            return Err(Error::config(
                "temporal.window",
                format!("T={} leaves the past encoder without frames", self.window),
            ));
        }
        if self.attention_hidden.contains(&0) {
            return Err(Error::config(
                "temporal.attention_hidden",
                "widths must be positive",
            ));
        }
        if self.use_residual && self.feature_dim != self.all_dim() {
            return Err(Error::config(
                "temporal.use_residual",
                format!(
                    "needs feature_dim ({}) equal to 2·hidden_dim ({})",
                    self.feature_dim,
                    self.all_dim()
                ),
            ));
        }
        Ok(())
    }

    pub fn frames(&self) -> FrameRanges {
        FrameRanges::new(self.window, self.poseforecast_includes_current)
    }
}

/// 0-based index of the current frame.
pub fn current_index(window: usize) -> usize {
    (window / 2).saturating_sub(1)
}

/// Which frames each encoder consumes, in consumption order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRanges {
    pub current: usize,
    pub all_forward: Vec<usize>,
    pub all_backward: Vec<usize>,
    pub past: Vec<usize>,
    pub future: Vec<usize>,
}

impl FrameRanges {
    pub fn new(window: usize, includes_current: bool) -> Self {
        let c = current_index(window);
        let extra = usize::from(includes_current);
        Self {
            current: c,
            all_forward: (0..=c).collect(),
            all_backward: (c..window).rev().collect(),
            past: (0..c + extra).collect(),
            future: (c + 1 - extra..window).rev().collect(),
        }
    }
}

/// Gate order along the `3·d_h` axis is reset, update, candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GruCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input_weight = store.add(
            format!("{name}.input_weight"),
            init_weight(rng, d_in, 3 * d_h, 1.0),
        );
        let hidden_weight = store.add(
            format!("{name}.hidden_weight"),
            init_weight(rng, d_h, 3 * d_h, 1.0),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, 3 * d_h));
        Self {
            input_weight,
            hidden_weight,
            bias,
            d_in,
            d_h,
        }
    }

    /// `h′ = (1−z)⊙n + z⊙h`, `n = tanh(W_n x + b_n + r⊙(U_n h))`.
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h: Var) -> Result<Var> {
        let (xr, xc) = g.value(x).shape();
        let (hr, hc) = g.value(h).shape();
        if xc != self.d_in || hc != self.d_h || xr != hr {
            return Err(Error::Shape(format!(
                "GRU step with input {xr}x{xc} and hidden {hr}x{hc}; cell is {}→{}",
                self.d_in, self.d_h
            )));
        }
        let d = self.d_h;
        let xw = g.matmul(x, p.var(self.input_weight))?;
        let xw = g.add_row(xw, p.var(self.bias))?;
        let hw = g.matmul(h, p.var(self.hidden_weight))?;
        let xrz = g.slice(xw, 0, 2 * d)?;
        let hrz = g.slice(hw, 0, 2 * d)?;
        let rz = g.add(xrz, hrz)?;
        let rz = g.sigmoid(rz);
        let r = g.slice(rz, 0, d)?;
        let z = g.slice(rz, d, 2 * d)?;
        let xn = g.slice(xw, 2 * d, 3 * d)?;
        let hn = g.slice(hw, 2 * d, 3 * d)?;
        let rhn = g.mul(r, hn)?;
        let pre = g.add(xn, rhn)?;
        let n = g.tanh(pre);
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }

    /// Runs the cell over `inputs` from a zero hidden state; returns the final state.
    pub fn rollout(&self, g: &mut Graph, p: &Bound, inputs: &[Var]) -> Result<Var> {
        let rows = match inputs.first() {
            Some(&x) => g.value(x).rows(),
            None => return Err(Error::Shape("GRU rollout over an empty sequence".into())),
        };
        let mut h = g.constant(Tensor::zeros(rows, self.d_h));
        for &x in inputs {
            h = self.step(g, p, x, h)?;
        }
        Ok(h)
    }
}

/// Evaluates one cell step on plain vectors.
pub fn gru_cell_step(cell: &GruCell, store: &ParamStore, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let xv = g.constant(Tensor::row(x));
    let hv = g.constant(Tensor::row(h));
    let out = cell.step(&mut g, &p, xv, hv)?;
    Ok(g.value(out).data().to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Integration {
    pub fc_all: Linear,
    pub fc_past: Linear,
    pub fc_future: Linear,
    pub shared: Linear,
    pub attention: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalEncoder {
    pub config: TemporalConfig,
    pub all_forward: GruCell,
    pub all_backward: GruCell,
    pub past: Option<GruCell>,
    pub future: Option<GruCell>,
    pub integration: Option<Integration>,
}

/// Graph handles of one batch's temporal features. Primed names are the
/// resized branch features; `attention` is `n × 3` in (all, past, future) order.
#[derive(Clone, Copy, Debug)]
pub struct TemporalFeatures {
    pub g_all: Var,
    pub g_past: Option<Var>,
    pub g_future: Option<Var>,
    pub g_all_prime: Option<Var>,
    pub g_past_prime: Option<Var>,
    pub g_future_prime: Option<Var>,
    pub g_int: Option<Var>,
    pub attention: Option<Var>,
    /// Input of the regressor for the final estimate.
    pub output: Var,
}

impl TemporalEncoder {
    pub fn new(
        config: &TemporalConfig,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let c = config;
        let all_forward = GruCell::new(
            store,
            "temporal.all_forward",
            c.feature_dim,
            c.hidden_dim,
            rng,
        );
        let all_backward = GruCell::new(
            store,
            "temporal.all_backward",
            c.feature_dim,
            c.hidden_dim,
            rng,
        );
        let (past, future, integration) = if c.poseforecast {
            let past = GruCell::new(store, "temporal.past", c.feature_dim, c.forecast_dim, rng);
            let future = GruCell::new(store, "temporal.future", c.feature_dim, c.forecast_dim, rng);
            let root2 = std::f64::consts::SQRT_2;
            let fc_all = Linear::new(
                store,
                "integration.fc_all",
                c.all_dim(),
                c.feature_dim,
                root2,
                rng,
            );
            let fc_past = Linear::new(
                store,
                "integration.fc_past",
                c.forecast_dim,
                c.feature_dim,
                root2,
                rng,
            );
            let fc_future = Linear::new(
                store,
                "integration.fc_future",
                c.forecast_dim,
                c.feature_dim,
                root2,
                rng,
            );
            let shared = Linear::new(
                store,
                "integration.shared",
                c.feature_dim,
                c.bottleneck_dim,
                1.0,
                rng,
            );
            let mut widths = vec![3 * c.bottleneck_dim];
            widths.extend(&c.attention_hidden);
            widths.push(3);
            let attention = Mlp::new(store, "integration.attention", &widths, 1.0, rng);
            (
                Some(past),
                Some(future),
                Some(Integration {
                    fc_all,
                    fc_past,
                    fc_future,
                    shared,
                    attention,
                }),
            )
        } else {
            (None, None, None)
        };
        Ok(Self {
            config: config.clone(),
            all_forward,
            all_backward,
            past,
            future,
            integration,
        })
    }

    fn check_frames(&self, g: &Graph, frames: &[Var]) -> Result<()> {
        if frames.len() != self.config.window {
            return Err(Error::Shape(format!(
                "window of {} frames, expected T={}",
                frames.len(),
                self.config.window
            )));
        }
        let rows = g.value(frames[0]).rows();
        for &f in frames {
            let (r, c) = g.value(f).shape();
            if r != rows || c != self.config.feature_dim {
                return Err(Error::Shape(format!(
                    "frame features {r}x{c}, expected {rows}x{}",
                    self.config.feature_dim
                )));
            }
        }
        Ok(())
    }

    /// Concatenated forward and backward hidden states at the current frame,
    /// plus the current static feature when the residual is enabled.
    pub fn encode_all(&self, g: &mut Graph, p: &Bound, frames: &[Var]) -> Result<Var> {
        self.check_frames(g, frames)?;
        let ranges = self.config.frames();
        let fwd: Vec<Var> = ranges.all_forward.iter().map(|&i| frames[i]).collect();
        let bwd: Vec<Var> = ranges.all_backward.iter().map(|&i| frames[i]).collect();
        let hf = self.all_forward.rollout(g, p, &fwd)?;
        let hb = self.all_backward.rollout(g, p, &bwd)?;
        let g_all = g.concat(&[hf, hb])?;
        if self.config.use_residual {
            g.add(g_all, frames[ranges.current])
        } else {
            Ok(g_all)
        }
    }

    pub fn encode_past(&self, g: &mut Graph, p: &Bound, frames: &[Var]) -> Result<Var> {
        self.check_frames(g, frames)?;
        let cell = self
            .past
            .as_ref()
            .ok_or_else(|| Error::config("temporal.poseforecast", "disabled"))?;
        let inputs: Vec<Var> = self
            .config
            .frames()
            .past
            .iter()
            .map(|&i| frames[i])
            .collect();
        cell.rollout(g, p, &inputs)
    }

    pub fn encode_future(&self, g: &mut Graph, p: &Bound, frames: &[Var]) -> Result<Var> {
        self.check_frames(g, frames)?;
        let cell = self
            .future
            .as_ref()
            .ok_or_else(|| Error::config("temporal.poseforecast", "disabled"))?;
        let inputs: Vec<Var> = self
            .config
            .frames()
            .future
            .iter()
            .map(|&i| frames[i])
            .collect();
        cell.rollout(g, p, &inputs)
    }

    /// Resizes the three features, scores them and blends them. `forced`
    /// replaces the learned attention with fixed weights.
    pub fn integrate(
        &self,
        g: &mut Graph,
        p: &Bound,
        g_all: Var,
        g_past: Var,
        g_future: Var,
        forced: Option<[f64; 3]>,
    ) -> Result<TemporalFeatures> {
        let it = self
            .integration
            .as_ref()
            .ok_or_else(|| Error::config("temporal.poseforecast", "disabled"))?;
        let mut primes = [g_all; 3];
        for (k, (fc, x)) in [
            (&it.fc_all, g_all),
            (&it.fc_past, g_past),
            (&it.fc_future, g_future),
        ]
        .into_iter()
        .enumerate()
        {
            let a = g.relu(x);
            primes[k] = fc.forward(g, p, a)?;
        }
        let codes = primes
            .iter()
            .map(|&x| it.shared.forward(g, p, x))
            .collect::<Result<Vec<_>>>()?;
        let rows = g.value(g_all).rows();
        let attention = match forced {
            Some(w) => g.constant(Tensor::from_fn(rows, 3, |_, c| w[c])),
            None => {
                let cat = g.concat(&codes)?;
                let logits = it.attention.forward(g, p, cat)?;
                g.softmax(logits)
            }
        };
        let mut g_int = None;
        for (k, &x) in primes.iter().enumerate() {
            let a = g.slice(attention, k, k + 1)?;
            let term = g.mul_col(x, a)?;
            g_int = Some(match g_int {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let g_int = g_int.expect("three branches");
        Ok(TemporalFeatures {
            g_all,
            g_past: Some(g_past),
            g_future: Some(g_future),
            g_all_prime: Some(primes[0]),
            g_past_prime: Some(primes[1]),
            g_future_prime: Some(primes[2]),
            g_int: Some(g_int),
            attention: Some(attention),
            output: g_int,
        })
    }

    /// Full temporal stage for a window batch; `frames[i]` is `n × d_f`.
    pub fn encode(&self, g: &mut Graph, p: &Bound, frames: &[Var]) -> Result<TemporalFeatures> {
        self.encode_with(g, p, frames, None)
    }

    pub fn encode_with(
        &self,
        g: &mut Graph,
        p: &Bound,
        frames: &[Var],
        forced: Option<[f64; 3]>,
    ) -> Result<TemporalFeatures> {
        let g_all = self.encode_all(g, p, frames)?;
        if !self.config.poseforecast {
            return Ok(TemporalFeatures {
                g_all,
                g_past: None,
                g_future: None,
                g_all_prime: None,
                g_past_prime: None,
                g_future_prime: None,
                g_int: None,
                attention: None,
                output: g_all,
            });
        }
        let g_past = self.encode_past(g, p, frames)?;
        let g_future = self.encode_future(g, p, frames)?;
        self.integrate(g, p, g_all, g_past, g_future, forced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> TemporalConfig {
        TemporalConfig {
            window: 16,
            feature_dim: 6,
            hidden_dim: 3,
            forecast_dim: 4,
            bottleneck_dim: 2,
            attention_hidden: vec![3],
            ..TemporalConfig::default()
        }
    }

    fn random_frames(
        g: &mut Graph,
        rng: &mut impl Rng,
        t: usize,
        rows: usize,
        d: usize,
    ) -> Vec<Var> {
        (0..t)
            .map(|_| g.constant(Tensor::from_fn(rows, d, |_, _| rng.random_range(-2.0..2.0))))
            .collect()
    }

    #[test]
    fn frame_ranges_for_sixteen() {
        let r = FrameRanges::new(16, false);
        assert_eq!(r.current, 7);
        assert_eq!(r.all_forward.len(), 8);
        assert_eq!(r.all_backward.len(), 9);
        assert_eq!(r.all_backward[0], 15);
        assert_eq!(r.past, (0..7).collect::<Vec<_>>());
        assert_eq!(r.future, (8..16).rev().collect::<Vec<_>>());
        let r = FrameRanges::new(16, true);
        assert_eq!(r.past.len(), 8);
        assert_eq!(r.future.len(), 9);
        assert_eq!(*r.future.last().unwrap(), 7);
    }

    #[test]
    fn config_validation() {
        let mut c = TemporalConfig::default();
        assert!(c.validate().is_ok());
        c.window = 3;
        assert!(c.validate().is_err());
        c.poseforecast_includes_current = true;
        assert!(c.validate().is_ok());
        c.window = 2;
        assert!(c.validate().is_err());
        let mut c = TemporalConfig {
            use_residual: true,
            ..TemporalConfig::default()
        };
        assert!(c.validate().is_ok());
        c.feature_dim = 100;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("use_residual"), "{err}");
        assert!(TemporalConfig::full_scale().validate().is_ok());
    }

    #[test]
    fn zero_cell_halves_hidden_state() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruCell::new(&mut store, "c", 3, 2, &mut rng);
        store.zero_all();
        assert_eq!(
            gru_cell_step(&cell, &store, &[1.0, -2.0, 3.0], &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            gru_cell_step(&cell, &store, &[1.0, -2.0, 3.0], &[0.8, -0.4]).unwrap(),
            vec![0.4, -0.2]
        );
        assert!(gru_cell_step(&cell, &store, &[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = TemporalEncoder::new(&small_config(), &mut store, &mut rng).unwrap();
        store.zero_all();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let frames = random_frames(&mut g, &mut rng, 16, 2, 6);
        let f = enc.encode(&mut g, &p, &frames).unwrap();
        for v in [
            f.g_all,
            f.g_past.unwrap(),
            f.g_future.unwrap(),
            f.g_int.unwrap(),
        ] {
            assert!(g.value(v).data().iter().all(|&x| x == 0.0));
        }
        for &a in g.value(f.attention.unwrap()).data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_toggle_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cfg = small_config();
        cfg.use_residual = true;
        let mut store = ParamStore::new();
        let with = TemporalEncoder::new(&cfg, &mut store, &mut rng).unwrap();
        let without = TemporalEncoder {
            config: TemporalConfig {
                use_residual: false,
                ..cfg
            },
            ..with.clone()
        };
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let frames = random_frames(&mut g, &mut rng, 16, 3, 6);
        let a = with.encode_all(&mut g, &p, &frames).unwrap();
        let b = without.encode_all(&mut g, &p, &frames).unwrap();
        let res = g.value(frames[7]).clone();
        // (b + r) − r need not round back to b, so compare in the forward direction.
        for ((x, y), r) in g
            .value(a)
            .data()
            .iter()
            .zip(g.value(b).data())
            .zip(res.data())
        {
            assert_eq!(*x, y + r);
        }
    }

    #[test]
    fn forced_attention_selects_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = TemporalEncoder::new(&small_config(), &mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let frames = random_frames(&mut g, &mut rng, 16, 2, 6);
        let f = enc
            .encode_with(&mut g, &p, &frames, Some([1.0, 0.0, 0.0]))
            .unwrap();
        assert_eq!(g.value(f.g_int.unwrap()), g.value(f.g_all_prime.unwrap()));
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let enc = TemporalEncoder::new(&small_config(), &mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let frames = random_frames(&mut g, &mut rng, 15, 2, 6);
        let err = enc.encode(&mut g, &p, &frames).unwrap_err().to_string();
        assert!(err.contains("15 frames"), "{err}");
    }
}
