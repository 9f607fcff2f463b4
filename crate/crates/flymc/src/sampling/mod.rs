//! Samplers over the augmented joint and the full posterior.
//!
//! The pieces compose in layers: [`TargetDensity`] abstracts a log density
//! with metered evaluations, [`kernel_step`] advances any such target with
//! one of three kernels, and [`FlymcChain`] / [`FullChain`] drive whole
//! runs, producing a [`ChainTrace`].

mod chain;
mod joint;
mod kernels;

pub use chain::{
    ChainTrace, FlymcChain, FlymcChainConfig, FullChain, FullChainConfig, QDarkToBright,
    ResampleMode, TraceRow,
};
pub use joint::{BrightEvals, FlymcTarget, FlymcView, FullTarget, TargetDensity};
pub use kernels::{
    kernel_step, CurrentPoint, KernelConfig, KernelKind, KernelState, MAX_SLICE_SHRINK,
};
