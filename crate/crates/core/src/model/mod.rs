//! The hierarchical set VAE: a bottom-up ISAB encoder, an initial-set prior,
//! and a top-down stack of attentive bottleneck layers.

mod config;
mod loss;
mod prior;
mod setvae;

pub use config::{ModelConfig, OutActivation};
pub use loss::{chamfer_on_graph, elbo_loss, ElboTerms};
pub use prior::{gaussian_kl, CardinalityDist, MogPrior};
pub use setvae::{
    Abl, AblMode, AblOutput, AttentionSide, DecoderTrace, EncoderTrace, InferTrace, Inference,
    LatentHierarchy, LevelLatents, LossValues, SetVae, LOG_SIGMA_CLAMP,
};
