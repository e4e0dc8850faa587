//! Fully convolutional VAE whose decoder likelihood is a pixel noise model.

mod arch;
mod checkpoint;
mod model;
mod objective;

pub use arch::{ArchitectureConfig, Mode};
pub use checkpoint::{read_checkpoint, write_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{reparameterize, DecodedOutput, EvalOptions, LatentCode, Likelihood, LossEval, VaeModel, LOG_VAR_CLAMP};
pub use objective::{kl_divergence, reconstruction_nll, LossParts};
