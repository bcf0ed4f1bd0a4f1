//! Dense f32 tensors, a reverse-mode tape over a fixed layer vocabulary, the
//! small convolutional classifier, SGD with momentum, parameter EMA and the
//! checkpoint format.

pub mod checkpoint;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use model::{Forward, Mode, SmallConvNet};
pub use optim::{ema_update, sgd_step, EmaState, OptimizerState};
pub use params::{ParamKind, ParameterSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
