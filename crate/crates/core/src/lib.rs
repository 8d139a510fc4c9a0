//! Memory-frugal training of convolutional networks.
//!
//! Activations saved for the backward pass are compressed with a truncated
//! SVD or HOSVD chosen by an explained-variance threshold, and conv weight
//! gradients are computed straight from the HOSVD factors. The crate also
//! carries closed-form predictions of the resulting memory, speed and
//! gradient-quality trade-offs, and a small trainer that logs them.

pub mod analytics;
pub mod autograd;
pub mod compress;
pub mod data;
pub mod error;
pub mod linalg;
pub mod tensor;
pub mod train;

pub use analytics::{LayerShape, RankTuple};
pub use autograd::{ConvSpec, ConvWeights, LinearWeights};
pub use compress::{hosvd_compress, svd_compress, svd_compress_tensor, Compressed, HosvdCompressed, SvdCompressed};
pub use data::Dataset;
pub use error::{Error, Result};
pub use linalg::{rank_for_variance, svd, SvdFactors};
pub use train::{kj_trajectory, ledger_aggregate, train, MemoryLedger, Method, TrainConfig, TrainReport};
pub use tensor::{mode_fold, mode_product, mode_unfold, Matrix, Tensor4};

