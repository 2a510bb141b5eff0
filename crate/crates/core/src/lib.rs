//! Layout-aware CNN layer kernels: 4D tensors in NCHW/CHWN (and NHWC/HWCN),
//! tiled layout transforms, direct/im2col/FFT convolution, coarsened
//! pooling, fused softmax, the per-layer layout heuristic and a small
//! network runner. Kernels are generic over `f32`/`f64` through [`Real`].

pub mod conv;
pub mod error;
pub mod layout;
pub mod net;
pub mod pool;
pub mod random;
pub mod scalar;
pub mod select;
pub mod softmax;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::{Filter, Layout, Matrix, Shape, Tensor};

pub type Tensor4D = Tensor<f32>;
pub type Tensor4D64 = Tensor<f64>;
pub type FilterBank = Filter<f32>;
pub type FilterBank64 = Filter<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
