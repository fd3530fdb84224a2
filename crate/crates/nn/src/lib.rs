//! Minimal CPU neural-network layers with explicit forward/backward passes.
//!
//! Convolutions lower to im2col + `sgemm`; every layer records what its
//! backward pass needs during a recorded forward pass. Models are composed
//! from [`Sequential`] chains or hand-written containers implementing
//! [`Layer`].

pub mod activation;
pub mod conv;
pub mod gemm;
pub mod init;
pub mod layer;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod pool;
pub mod sequential;
pub mod tensor;

pub use activation::{sigmoid, Activation, ActivationLayer};
pub use conv::{Conv2d, ConvTranspose2d};
pub use init::Init;
pub use layer::{
    count_params, load_named, set_trainable, snapshot, zero_grad, Layer, Param, Pass, Window,
};
pub use linear::{Dropout, Flatten, Linear};
pub use norm::BatchNorm2d;
pub use optim::Adam;
pub use pool::{MaxPool2d, Upsample2d};
pub use sequential::{receptive_field, Sequential};
pub use tensor::Tensor;
