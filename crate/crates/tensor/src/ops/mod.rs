pub mod conv;
pub mod layout;
pub mod matmul;
pub mod norm;
pub mod pointwise;
pub mod reduce;
pub mod resample;
pub mod softmax;

pub use conv::conv2d;
pub use layout::{concat, concat_channels};
pub use matmul::matmul;
pub use norm::{batch_norm, BnMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use pointwise::{pointwise, Operand, Pointwise};
pub use resample::{upsample_bilinear, PadMode};
pub use softmax::softmax_lastdim;
