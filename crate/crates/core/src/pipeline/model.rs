//! The assembled network: temporal encoders, integration and the shared regressor.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bodymodel::BodyModel;
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore};
use crate::numerics::{Graph, Tensor, Var};
use crate::objective::{Estimates, SupervisionTarget};
use crate::regressor::{theta_dim, BodyParamVars, RegressorConfig, RegressorHead};
use crate::temporal::{TemporalConfig, TemporalEncoder, TemporalFeatures};

#[derive(Debug)]
pub struct TemporalModel {
    pub body: Arc<BodyModel>,
    pub params: ParamStore,
    pub encoder: TemporalEncoder,
    pub regressor: RegressorHead,
    side_estimates: AtomicUsize,
}

impl Clone for TemporalModel {
    fn clone(&self) -> Self {
        Self {
            body: self.body.clone(),
            params: self.params.clone(),
            encoder: self.encoder.clone(),
            regressor: self.regressor.clone(),
            side_estimates: AtomicUsize::new(self.side_estimate_count()),
        }
    }
}

impl TemporalModel {
    /// Builds freshly initialized weights; `mean_theta` is the regressor's starting estimate.
    pub fn new(
        temporal: &TemporalConfig,
        regressor: &RegressorConfig,
        body: Arc<BodyModel>,
        mean_theta: &[f64],
        seed: u64,
    ) -> Result<Self> {
        let d = theta_dim(body.joint_count(), body.shape_dim());
        if mean_theta.len() != d {
            return Err(Error::Incompatible {
                what: "mean estimate length".into(),
                expected: d.to_string(),
                found: mean_theta.len().to_string(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = TemporalEncoder::new(temporal, &mut params, &mut rng)?;
        let head = RegressorHead::new(
            regressor,
            temporal.output_dim(),
            Tensor::row(mean_theta),
            body.joint_count(),
            body.shape_dim(),
            &mut params,
            &mut rng,
        )?;
        Ok(Self {
            body,
            params,
            encoder,
            regressor: head,
            side_estimates: AtomicUsize::new(0),
        })
    }

    pub fn temporal_config(&self) -> &TemporalConfig {
        &self.encoder.config
    }

    /// How many past or future estimates have been built so far.
    pub fn side_estimate_count(&self) -> usize {
        self.side_estimates.load(Ordering::Relaxed)
    }

    pub fn features(&self, g: &mut Graph, p: &Bound, frames: &[Var]) -> Result<TemporalFeatures> {
        self.encoder.encode(g, p, frames)
    }

    /// All estimates needed for training under `supervision`.
    pub fn forward_train(
        &self,
        g: &mut Graph,
        p: &Bound,
        frames: &[Var],
        supervision: SupervisionTarget,
    ) -> Result<Estimates> {
        let f = self.features(g, p, frames)?;
        let integrated = self.regressor.regress(g, p, f.output)?;
        let (mut past, mut future) = (None, None);
        if supervision != SupervisionTarget::None {
            if let (Some(gp), Some(gf)) = (f.g_past_prime, f.g_future_prime) {
                self.side_estimates.fetch_add(2, Ordering::Relaxed);
                past = Some(self.regressor.regress(g, p, gp)?);
                future = Some(self.regressor.regress(g, p, gf)?);
            }
        }
        Ok(Estimates {
            integrated,
            past,
            future,
        })
    }

    /// The integrated estimate only.
    pub fn forward_eval(&self, g: &mut Graph, p: &Bound, frames: &[Var]) -> Result<BodyParamVars> {
        let f = self.features(g, p, frames)?;
        self.regressor.regress(g, p, f.output)
    }
}
