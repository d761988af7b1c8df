//! Dense kernels, Adam, seeded randomness and finite-difference checking
//! shared by the autoencoder and the flow.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::{dense_backward, dense_forward, Activation, DenseGrads, DenseLayer, LayerGrads};
pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error};
pub use rng::{gaussian_sample, RngStream};

/// Adam state for a whole network: one [`AdamState`] per parameter tensor.
#[derive(Debug, Clone)]
pub struct NetOptimizer {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl NetOptimizer {
    pub fn new(config: AdamConfig, layers: &[&DenseLayer]) -> Self {
        let states = layers
            .iter()
            .flat_map(|l| [AdamState::new(l.weights.len()), AdamState::new(l.bias.len())])
            .collect();
        Self { config, states }
    }

    /// Applies one update to `layers` using the matching `grads`.
    pub fn step(&mut self, layers: &mut [&mut DenseLayer], grads: &[&LayerGrads]) -> crate::Result<()> {
        crate::error::ensure(layers.len() * 2 == self.states.len() && grads.len() == layers.len(), || {
            "optimizer/layer count mismatch".into()
        })?;
        // Validate every tensor first so a bad gradient leaves the net untouched.
        for g in grads {
            if let Some(i) = g.weights.iter().chain(&g.bias).position(|v| !v.is_finite()) {
                return Err(crate::Error::Training {
                    step: self.states[0].step_count as usize + 1,
                    message: format!("non-finite gradient (tensor offset {i})"),
                });
            }
        }
        for (k, (layer, g)) in layers.iter_mut().zip(grads).enumerate() {
            adam_step(&mut layer.weights, &g.weights, &mut self.states[2 * k], &self.config)?;
            adam_step(&mut layer.bias, &g.bias, &mut self.states[2 * k + 1], &self.config)?;
        }
        Ok(())
    }
}
