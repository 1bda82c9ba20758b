//! Small dense-tensor kernels with hand-written backward passes: 3D
//! convolution, batch normalization, fully-connected layers, activations,
//! and SGD with learning-rate schedules.

mod activation;
mod batchnorm;
mod checkpoint;
mod conv;
mod dense;
mod optim;
mod tensor;

pub use activation::{dropout, dropout_mask, log_softmax, mul, relu, relu_backward, softmax};
pub use batchnorm::{BatchNorm, BnCache, BnGrads, Mode};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, DecodedCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{conv3d_backward, conv3d_forward, Conv3d, ConvGrads, Padding};
pub use dense::{Dense, DenseGrads};
pub use optim::{sgd_step, LrSchedule, Sgd};
pub use tensor::{Real, Tensor};
