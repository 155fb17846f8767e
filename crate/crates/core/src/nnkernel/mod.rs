//! Dense-network engine: layers, binary cross-entropy, backprop, the Adam /
//! SGD / AdaGrad optimizers and an early-stopping training loop.

mod fit;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;
pub mod weights;

pub use fit::{fit, EpochRecord, FitOutcome, TrainSchedule, TrainingData};
pub use layer::{dense_forward, sigmoid, Activation, DenseLayer, DenseOutput};
pub use loss::{bce_grad, bce_loss, PROB_EPSILON};
pub use network::{Gradients, LayerGrad, Network};
pub use optim::{OptimizerKind, OptimizerState, Param};
pub use tensor::Tensor;
pub use weights::{load_network, read_network, save_network, write_network};
