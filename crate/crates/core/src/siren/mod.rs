//! Sinusoidal coordinate networks with exact spatial derivatives.
//!
//! Spatial Jacobians and Hessians are propagated forward through the layers
//! alongside the values (three first-order and six second-order direction
//! streams per sample). Parameter gradients are obtained by reversing that
//! computation, so losses on `phi`, `grad phi` and `grad^2 phi` all
//! backpropagate exactly.

mod adam;
mod checkpoint;
mod fastmath;
mod network;
mod pool;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_params, save_params, sha256_hex, LayerFile, ParamManifest};
pub use network::{
    eval_spatial, init_siren, param_gradients, Adjoints, DerivOrder, ForwardPass, Gradients,
    Layer, SirenParams, SpatialEval, CHUNK,
};
