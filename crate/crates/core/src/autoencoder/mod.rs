//! Concept autoencoders: losses, the autoencoded model, and staged training.

pub mod loss;
pub mod model;
pub mod train;

pub use loss::{deep_loss, interpretability_loss, shallow_loss, Interpretability, LossWeights};
pub use model::{
    concept_name, intervene_zero_channel, AutoencodedModel, ConceptAutoencoder, ConceptFeatureImage,
    InterventionMask, ModelTrace,
};
pub use train::{
    autoencoder_gradient_check, autoencoder_objective, autoencoder_objective_value, train_autoencoder_stack, AeTrainConfig, LevelReport,
    LossTerms, StackReport,
};
