//! Minimal CNN engine: layers with hand-written backward passes, training,
//! fine-tuning initialization and the TLNS model format.

mod io;
mod layer;
mod model;
mod train;

pub use layer::{correlate2d, Layer, LayerSpec, Params};
pub use model::{Architecture, Domain, EpochRecord, ForwardTrace, ModelMeta, TensorModel};
pub use train::{fine_tune_init, loss_gradients, softmax_cross_entropy, train, EvalSets, TrainConfig};

pub(crate) use layer::dot;
