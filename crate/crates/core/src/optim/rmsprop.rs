use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Decay of the running mean of squared gradients.
    pub decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            decay: 0.9,
            epsilon: 1e-8,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.decay > 0.0
            && self.decay < 1.0
            && self.epsilon >= 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// One RMSProp update in place:
/// `ms = decay·ms + (1 − decay)·g²`, `w −= lr·g / (√ms + ε)`.
///
/// Every gradient is checked before anything is written, so a non-finite
/// gradient leaves both parameters and state untouched.
pub fn rmsprop_step(
    params: &mut [f64],
    grads: &[f64],
    mean_square: &mut [f64],
    config: &OptimizerConfig,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), mean_square.len());
    if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index, value });
    }
    let rho = config.decay;
    for ((w, &g), ms) in params.iter_mut().zip(grads).zip(mean_square.iter_mut()) {
        *ms = rho * *ms + (1.0 - rho) * g * g;
        *w -= config.learning_rate * g / (ms.sqrt() + config.epsilon);
    }
    Ok(())
}

/// RMSProp over a whole [`ParameterSet`], updating only the flagged layers.
#[derive(Debug, Clone)]
pub struct RmsProp {
    config: OptimizerConfig,
    mean_square: Option<ParameterSet>,
}

impl RmsProp {
    pub fn new(config: OptimizerConfig) -> Self {
        RmsProp {
            config,
            mean_square: None,
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParameterSet,
        grads: &ParameterSet,
        trainable: &[bool],
    ) -> Result<()> {
        if !grads.is_finite() {
            let (index, value) = grads
                .slices()
                .flatten()
                .enumerate()
                .find(|(_, g)| !g.is_finite())
                .map(|(i, &g)| (i, g))
                .expect("a non-finite entry exists");
            return Err(Error::NonFiniteGradient { index, value });
        }
        let state = self.mean_square.get_or_insert_with(|| params.zeros_like());
        for (layer, &on) in trainable.iter().enumerate() {
            if !on {
                continue;
            }
            let p = params.layer_slices_mut(layer);
            let s = state.layer_slices_mut(layer);
            let g = grads.layers()[layer]
                .iter()
                .flat_map(|l| [l.weights.data(), l.biases.data()]);
            for ((p, s), g) in p.zip(s).zip(g) {
                rmsprop_step(p, g, s, &self.config)?;
            }
        }
        Ok(())
    }
}
