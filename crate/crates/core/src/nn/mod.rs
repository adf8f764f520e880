//! Small hand-written differentiable kernels: parameter storage, the layers
//! used by the encoders and heads, AdamW, checkpoints and gradient checks.

mod attention;
mod checkpoint;
mod gradcheck;
mod head;
mod layers;
mod optim;
mod store;
pub mod trace;

pub use attention::{Mhca, MhcaCache, HEAD_DIM};
pub use checkpoint::{load_checkpoint, manifest_path, read_manifest, save_checkpoint, CheckpointManifest, ManifestEntry, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{check_store_gradients, finite_diff_check, GradCheckOptions, GradCheckReport};
pub use head::{gaussian_log_prob, gaussian_log_prob_backward, GaussianHead, GaussianOutput, LOG_STD_MAX, LOG_STD_MIN};
pub use layers::{
    dot, film, film_backward, layer_norm, linear, max_pool_set, max_pool_set_backward, LayerNorm,
    LayerNormCache, Linear, MlpBlock, MlpCache, LN_EPS,
};
pub use optim::{clip_grad_norm, AdamW};
pub use store::{Grads, Init, ParamId, ParamStore, Tensor, Weights};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Compute precision of the kernels. Parameters are always stored as
/// `f32`; `f64` is used for gradient checking.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn lift(x: f64) -> Self;
    fn from_f32(x: f32) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lift(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lift(x: f64) -> Self {
        x
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
