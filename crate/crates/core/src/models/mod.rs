//! The three networks shared by every agent: the noise model, the return
//! classifier and the inverse-dynamics model.
//!
//! Trajectory inputs are flattened row-major as `[x (H x 4) | xbar (H x 4)]`
//! and always standardized with the dataset statistics first.

mod nets;

pub use nets::{timestep_embedding, InverseDynamicsNet, ParamSet, ResidualNet};

use crate::dataset::DatasetStats;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

pub const OBS_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub horizon: usize,
    /// Number of diffusion steps `K`; valid noise levels are `1..=K`.
    pub diffusion_steps: usize,
    pub width: usize,
    pub denoiser_blocks: usize,
    pub classifier_blocks: usize,
    pub inverse_width: usize,
    pub temb_dim: usize,
    /// When false the mean-field half of every input is replaced by the
    /// agent's own sequence.
    pub mean_field: bool,
}

impl ModelConfig {
    /// Residual MLPs of width 256: four blocks for the noise model, two for
    /// the classifier.
    pub fn standard(horizon: usize, diffusion_steps: usize) -> Self {
        ModelConfig {
            horizon,
            diffusion_steps,
            width: 256,
            denoiser_blocks: 4,
            classifier_blocks: 2,
            inverse_width: 256,
            temb_dim: 32,
            mean_field: true,
        }
    }

    /// A narrow variant that trains and plans in minutes on one core.
    pub fn compact(horizon: usize, diffusion_steps: usize) -> Self {
        ModelConfig {
            width: 64,
            denoiser_blocks: 2,
            classifier_blocks: 2,
            inverse_width: 64,
            ..Self::standard(horizon, diffusion_steps)
        }
    }

    /// Width of one flattened `(x, xbar)` input row.
    pub fn traj_dim(&self) -> usize {
        2 * self.horizon * OBS_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::config("model.horizon", "must be >= 2 (inverse dynamics needs a pair)"));
        }
        if self.diffusion_steps < 1 {
            return Err(Error::config("model.diffusion_steps", "must be >= 1"));
        }
        if self.width < 1 || self.inverse_width < 1 {
            return Err(Error::config("model.width", "must be >= 1"));
        }
        if self.temb_dim < 2 || self.temb_dim % 2 != 0 {
            return Err(Error::config("model.temb_dim", "must be even and >= 2"));
        }
        Ok(())
    }
}

/// Parameter leaves of a bundle registered on one tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub denoiser: Vec<Var>,
    pub classifier: Vec<Var>,
    pub inverse: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub denoiser: ResidualNet,
    pub classifier: ResidualNet,
    pub inverse: InverseDynamicsNet,
    pub stats: DatasetStats,
}

impl ModelBundle {
    pub fn new(config: ModelConfig, stats: DatasetStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let d = config.traj_dim();
        Ok(ModelBundle {
            denoiser: ResidualNet::new("denoiser", d, d, config.width, config.denoiser_blocks, config.temb_dim, true, &mut rng),
            classifier: ResidualNet::new(
                "classifier",
                d,
                1,
                config.width,
                config.classifier_blocks,
                config.temb_dim,
                false,
                &mut rng,
            ),
            inverse: InverseDynamicsNet::new("inverse", 2 * OBS_DIM, config.inverse_width, &mut rng),
            config,
            stats,
        })
    }

    pub fn param_count(&self) -> usize {
        [&self.denoiser.params, &self.classifier.params, &self.inverse.params]
            .iter()
            .flat_map(|p| &p.tensors)
            .map(Tensor::len)
            .sum()
    }

    /// Every parameter tensor in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.denoiser
            .params
            .tensors
            .iter()
            .chain(&self.classifier.params.tensors)
            .chain(&self.inverse.params.tensors)
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.denoiser
            .params
            .tensors
            .iter_mut()
            .chain(self.classifier.params.tensors.iter_mut())
            .chain(self.inverse.params.tensors.iter_mut())
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            denoiser: self.denoiser.params.bind(tape),
            classifier: self.classifier.params.bind(tape),
            inverse: self.inverse.params.bind(tape),
        }
    }

    pub fn check_levels(&self, k: &[usize]) -> Result<()> {
        match k.iter().find(|&&k| k < 1 || k > self.config.diffusion_steps) {
            Some(bad) => Err(Error::domain(format!(
                "noise level {bad} outside 1..={}",
                self.config.diffusion_steps
            ))),
            None => Ok(()),
        }
    }

    fn check_traj(&self, z: &Tensor, k: &[usize]) -> Result<()> {
        let d = self.config.traj_dim();
        if z.shape().len() != 2 || z.cols() != d || z.rows() != k.len() {
            return Err(Error::Shape {
                op: "trajectory input",
                left: z.shape().to_vec(),
                right: vec![k.len(), d],
            });
        }
        self.check_levels(k)
    }

    pub fn embed(&self, k: &[usize]) -> Tensor {
        timestep_embedding(k, self.config.temb_dim)
    }

    /// Predicted noise for a batch of noisy trajectories `z` at levels `k`.
    pub fn denoiser_forward(&self, z: &Tensor, k: &[usize]) -> Result<Tensor> {
        self.check_traj(z, k)?;
        let mut tape = Tape::new();
        let p = self.denoiser.params.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let tv = tape.leaf(self.embed(k));
        let out = self.denoiser.forward(&mut tape, &p, zv, tv)?;
        Ok(tape.value(out).clone())
    }

    /// Predicted normalized return per row.
    pub fn classifier_forward(&self, z: &Tensor, k: &[usize]) -> Result<Vec<f64>> {
        self.check_traj(z, k)?;
        let mut tape = Tape::new();
        let p = self.classifier.params.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let tv = tape.leaf(self.embed(k));
        let out = self.classifier.forward(&mut tape, &p, zv, tv)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Predicted returns and their gradients with respect to each row of
    /// `z`. Rows do not interact, so differentiating the batch sum gives
    /// every per-row gradient at once.
    pub fn classifier_grad(&self, z: &Tensor, k: &[usize]) -> Result<(Vec<f64>, Tensor)> {
        self.check_traj(z, k)?;
        let mut tape = Tape::new();
        let p = self.classifier.params.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let tv = tape.leaf(self.embed(k));
        let out = self.classifier.forward(&mut tape, &p, zv, tv)?;
        let values = tape.value(out).data().to_vec();
        let mean = tape.mean(out);
        let total = tape.scale(mean, k.len() as f64);
        let grads = tape.backward(total)?;
        Ok((values, grads.get_or_zeros(zv, z.shape())))
    }

    /// Predicted raw (standardized) actions for rows `[o_t | o_next]`.
    pub fn inv_dyn_forward(&self, pairs: &Tensor) -> Result<Vec<f64>> {
        if pairs.shape().len() != 2 || pairs.cols() != 2 * OBS_DIM {
            return Err(Error::Shape {
                op: "inv_dyn_forward",
                left: pairs.shape().to_vec(),
                right: vec![pairs.rows(), 2 * OBS_DIM],
            });
        }
        let mut tape = Tape::new();
        let p = self.inverse.params.bind(&mut tape);
        let x = tape.leaf(pairs.clone());
        let out = self.inverse.forward(&mut tape, &p, x)?;
        Ok(tape.value(out).data().to_vec())
    }
}
