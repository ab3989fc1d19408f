//! Dense arithmetic, MLPs with reverse-mode gradients, optimizers and
//! finite-difference checks.

pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use gradcheck::{central_difference, grad_check, grad_check_vec, relative_error, FD_STEP};
pub use mlp::{Activation, ForwardCache, Layer, MlpGrads, MlpParams, VecTape, LEAKY_SLOPE};
pub use optim::{OptimKind, OptimState};
pub use tensor::{dot, norm, Tensor2};
