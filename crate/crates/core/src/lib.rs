//! Raw-to-RGB reconstruction with a residual multi-frequency attention
//! network.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`io`]: the `RAWI` sensor container and binary PPM.
//! - [`cfa`]: black-level correction and the three- and four-channel packings.
//! - [`autodiff`]: a small reverse-mode tensor engine with finite-difference checks.
//! - [`model`]: the network, its presets and its weight file.
//! - [`loss`]: the composite training loss, plus PSNR/SSIM in [`metrics`].
//! - [`train`]: Adam, the warm-restart cosine schedule, training, evaluation and ablations.
//! - [`synth`]: a synthetic camera that produces raw/RGB pairs and test patterns.
//! - [`cli`]: the command implementations behind the `rmfa` binary.

pub mod autodiff;
pub mod cfa;
pub mod cli;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use tensor::{Scalar, Tensor};
