//! Firefly Monte Carlo, a sampler whose iterations evaluate only a random
//! subset of likelihood terms yet leave the posterior unchanged.
//!
//! The posterior over parameters `theta` is augmented with one Bernoulli
//! "brightness" variable per datum. A datum that is *bright* contributes its
//! exact likelihood; a *dark* datum contributes a cheap lower bound instead.
//! When the bounds have a closed collapsed form, the product of bounds over
//! the whole dataset is a single quadratic in `theta`, so a sweep only ever
//! pays for the bright points. Marginalizing the brightness variables
//! recovers the exact posterior, so no approximation is introduced.
//!
//! The crate is organized around that augmentation:
//!
//! - [`data`]: dense datasets and the CSV interchange format.
//! - [`model`]: likelihood families (logistic, softmax, robust regression)
//!   and priors.
//! - [`bounds`]: per-datum lower bounds, their collapsed whole-dataset form,
//!   and MAP-based tightening.
//! - [`brightness`]: the bright/dark partition and the two resampling moves
//!   (explicit Gibbs and implicit Metropolis-Hastings).
//! - [`sampling`]: the augmented target density, parameter-update kernels
//!   (random-walk MH, MALA, coordinate slice), and chain drivers.
//! - [`diagnostics`]: likelihood-query metering, effective sample size,
//!   per-query efficiency, and moment comparisons.
//!
//! Likelihood evaluations are the unit of cost throughout. Every code path
//! that touches a likelihood term goes through a [`diagnostics::QueryMeter`],
//! so the per-iteration cost reported in traces is exact, not estimated.
//!
//! ```
//! use flymc::bounds::{collapse, BoundSpec, Tightness};
//! use flymc::data::Dataset;
//! use flymc::model::{Model, Prior};
//! use flymc::sampling::{FlymcChain, FlymcChainConfig, KernelKind, ResampleMode};
//! use ndarray::{array, Array1};
//!
//! let data = Dataset::new(
//!     array![[0.4, 1.0], [-1.3, 1.0], [2.1, 1.0], [-0.2, 1.0]],
//!     array![1.0, -1.0, 1.0, -1.0],
//!     None,
//! )?;
//! let model = Model::Logistic;
//! let prior = Prior::gaussian(2.0)?;
//! let bound = BoundSpec::JaakkolaJordan { xi: Tightness::Shared(1.5) };
//! let collapsed = collapse(&bound, &model, &data)?;
//!
//! let cfg = FlymcChainConfig {
//!     kernel: KernelKind::RandomWalkMh { step: 0.5 }.into(),
//!     resample: ResampleMode::explicit(0.25)?,
//!     iterations: 200,
//!     burn_in: 100,
//!     thin: 1,
//!     seed: 7,
//! };
//! let mut chain = FlymcChain::new(&model, &data, &prior, &bound, &collapsed, cfg, Array1::zeros(2))?;
//! chain.run()?;
//! assert_eq!(chain.trace().len(), 200);
//! # Ok::<(), flymc::Error>(())
//! ```

pub mod bounds;
pub mod brightness;
pub mod data;
pub mod diagnostics;
mod error;
pub mod exec;
pub mod model;
pub mod sampling;

pub use error::{Error, Result};
