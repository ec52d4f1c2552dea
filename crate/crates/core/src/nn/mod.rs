//! Minimal deterministic network substrate.

pub mod checkpoint;
pub mod classifier;
mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod sequential;
pub mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use classifier::LayeredClassifier;
pub use gradcheck::{check_gradients, gradient_check, layer_gradient_check, GradCheck};
pub use layers::{softmax, Layer, LayerSpec};
pub use loss::{kl_divergence, OutputLoss};
pub use sequential::{Gradients, Sequential};
pub use sgd::{Sgd, SgdConfig};
