//! Target densities for the parameter-update kernels.
//!
//! [`FlymcTarget`] is the augmented joint over parameters and brightness:
//! prior, plus the collapsed bound over *all* data, plus one correction
//! `log((L_n - B_n) / B_n)` per bright datum. Only the corrections touch
//! likelihoods, so an evaluation costs exactly `M` queries where `M` is the
//! bright count. Summing the joint over both brightness states of a datum
//! telescopes `B_n + (L_n - B_n) = L_n`, which is the exactness argument in
//! one line.
//!
//! [`FullTarget`] is the ordinary full posterior (every evaluation costs `N`
//! queries), with an optional likelihood temper used by the harness to build
//! deliberately mis-specified baselines for diagnostics.

use ndarray::Array1;

use crate::bounds::{BoundSpec, CollapsedBound};
use crate::brightness::{ln_expm1, BrightnessSet, LikBound};
use crate::data::Dataset;
use crate::diagnostics::QueryMeter;
use crate::exec::{self, ExecMode};
use crate::model::{Model, Prior};
use crate::{Error, Result};

/// Fresh bright-side evaluations produced by a target evaluation, in bright
/// set order. On kernel acceptance these become the new bright cache.
pub type BrightEvals = Vec<(usize, LikBound)>;

/// A log density over `theta` that kernels can step against. `Aux` is
/// whatever the evaluation produced besides the value; chains use it to keep
/// caches in sync on acceptance.
pub trait TargetDensity {
    type Aux;

    fn dim(&self) -> usize;

    /// Log density at `theta`, metering whatever likelihood work it does.
    fn value(&self, theta: &Array1<f64>, meter: &mut QueryMeter) -> Result<(f64, Self::Aux)>;

    /// Value and gradient in one pass. Costs the same queries as `value`:
    /// value and gradient at one point count as one query per datum.
    fn value_grad(
        &self,
        theta: &Array1<f64>,
        meter: &mut QueryMeter,
    ) -> Result<(f64, Array1<f64>, Self::Aux)>;
}

/// The augmented joint density, fixed over one (model, data, prior, bound,
/// collapsed bound) tuple.
pub struct FlymcTarget<'a> {
    pub(crate) model: &'a Model,
    pub(crate) data: &'a Dataset,
    pub(crate) prior: &'a Prior,
    pub(crate) bound: &'a BoundSpec,
    pub(crate) collapsed: &'a CollapsedBound,
}

impl<'a> FlymcTarget<'a> {
    pub fn new(
        model: &'a Model,
        data: &'a Dataset,
        prior: &'a Prior,
        bound: &'a BoundSpec,
        collapsed: &'a CollapsedBound,
    ) -> Result<Self> {
        model.check_dataset(data)?;
        bound.check_compatible(model, data)?;
        if collapsed.n_points() != data.n_points() {
            return Err(Error::InvalidConfig(format!(
                "collapsed bound covers {} points but the dataset has {}",
                collapsed.n_points(),
                data.n_points()
            )));
        }
        Ok(Self { model, data, prior, bound, collapsed })
    }

    pub fn dim(&self) -> usize {
        self.model.param_dim(self.data.n_features())
    }

    fn check_theta(&self, theta: &Array1<f64>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidConfig(format!(
                "theta has length {} but the model needs {}",
                theta.len(),
                self.dim()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "theta" });
        }
        Ok(())
    }

    /// Prior plus collapsed bound: the dark side of the joint. No queries.
    pub fn base_value(&self, theta: &Array1<f64>) -> f64 {
        self.prior.log_density(theta) + self.collapsed.evaluate(theta)
    }

    /// Log joint at `(theta, set)`. Costs `set.num_bright()` queries and
    /// returns the underlying per-datum evaluations for cache upkeep.
    pub fn log_joint(
        &self,
        theta: &Array1<f64>,
        set: &BrightnessSet,
        meter: &mut QueryMeter,
    ) -> Result<(f64, BrightEvals)> {
        self.check_theta(theta)?;
        let th = theta.as_slice().expect("contiguous theta");
        meter.bump(set.num_bright() as u64);
        let mut evals = Vec::with_capacity(set.num_bright());
        let mut sum = 0.0;
        let mut touched = false;
        for &n in set.bright_indices() {
            let lb = LikBound::new(
                n,
                self.model.log_lik_unchecked(self.data, n, th),
                self.bound.log_bound_unchecked(self.model, self.data, n, th),
            )?;
            let f = lb.delta();
            if f == 0.0 {
                // A bright datum whose bound touches its likelihood has zero
                // joint density; the caller sees -inf and rejects.
                touched = true;
            } else {
                sum += ln_expm1(f);
            }
            evals.push((n, lb));
        }
        let value = if touched { f64::NEG_INFINITY } else { self.base_value(theta) + sum };
        Ok((value, evals))
    }

    /// [`Self::log_joint`] plus its gradient in `theta`; same query count.
    pub fn log_joint_with_grad(
        &self,
        theta: &Array1<f64>,
        set: &BrightnessSet,
        meter: &mut QueryMeter,
    ) -> Result<(f64, Array1<f64>, BrightEvals)> {
        self.check_theta(theta)?;
        let th = theta.as_slice().expect("contiguous theta");
        let p = theta.len();
        meter.bump(set.num_bright() as u64);
        let mut evals = Vec::with_capacity(set.num_bright());
        let mut sum = 0.0;
        let mut touched = false;
        let mut grad = vec![0.0; p];
        for &n in set.bright_indices() {
            let lb = LikBound::new(
                n,
                self.model.log_lik_unchecked(self.data, n, th),
                self.bound.log_bound_unchecked(self.model, self.data, n, th),
            )?;
            let delta = lb.delta();
            if delta == 0.0 {
                touched = true;
            } else {
                sum += ln_expm1(delta);
                // d/dtheta log((L-B)/B) = (grad logL - grad logB)/(1 - e^-delta).
                let w = 1.0 / -(-delta).exp_m1();
                self.model.add_grad_log_lik(self.data, n, th, w, &mut grad);
                self.bound.add_grad_log_bound(self.model, self.data, n, th, -w, &mut grad);
            }
            evals.push((n, lb));
        }
        if touched {
            return Ok((f64::NEG_INFINITY, Array1::zeros(p), evals));
        }
        let value = self.base_value(theta) + sum;
        let mut grad = Array1::from_vec(grad);
        grad += &self.prior.grad_log_density(theta);
        self.collapsed.add_grad(theta, grad.as_slice_mut().expect("contiguous grad"));
        Ok((value, grad, evals))
    }
}

/// [`FlymcTarget`] with a brightness state pinned: the density the
/// parameter kernels actually step against between brightness updates.
pub struct FlymcView<'a, 'b> {
    pub target: &'b FlymcTarget<'a>,
    pub set: &'b BrightnessSet,
}

impl TargetDensity for FlymcView<'_, '_> {
    type Aux = BrightEvals;

    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn value(&self, theta: &Array1<f64>, meter: &mut QueryMeter) -> Result<(f64, BrightEvals)> {
        self.target.log_joint(theta, self.set, meter)
    }

    fn value_grad(
        &self,
        theta: &Array1<f64>,
        meter: &mut QueryMeter,
    ) -> Result<(f64, Array1<f64>, BrightEvals)> {
        self.target.log_joint_with_grad(theta, self.set, meter)
    }
}

/// The plain full posterior, optionally with a tempered likelihood.
/// `temper != 1` deliberately targets the *wrong* distribution; the harness
/// uses it as a negative control that moment comparisons must flag.
pub struct FullTarget<'a> {
    model: &'a Model,
    data: &'a Dataset,
    prior: &'a Prior,
    temper: f64,
}

impl<'a> FullTarget<'a> {
    pub fn new(model: &'a Model, data: &'a Dataset, prior: &'a Prior, temper: f64) -> Result<Self> {
        model.check_dataset(data)?;
        if !(temper.is_finite() && temper > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "likelihood temper must be positive, got {temper}"
            )));
        }
        Ok(Self { model, data, prior, temper })
    }

    fn check_theta(&self, theta: &Array1<f64>) -> Result<()> {
        let p = self.model.param_dim(self.data.n_features());
        if theta.len() != p {
            return Err(Error::InvalidConfig(format!(
                "theta has length {} but the model needs {p}",
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "theta" });
        }
        Ok(())
    }
}

impl TargetDensity for FullTarget<'_> {
    type Aux = ();

    fn dim(&self) -> usize {
        self.model.param_dim(self.data.n_features())
    }

    fn value(&self, theta: &Array1<f64>, meter: &mut QueryMeter) -> Result<(f64, ())> {
        self.check_theta(theta)?;
        let th = theta.as_slice().expect("contiguous theta");
        meter.bump(self.data.n_points() as u64);
        let lik = exec::sum_chunked(self.data.n_points(), ExecMode::Auto, |n| {
            self.model.log_lik_unchecked(self.data, n, th)
        });
        Ok((self.prior.log_density(theta) + self.temper * lik, ()))
    }

    fn value_grad(
        &self,
        theta: &Array1<f64>,
        meter: &mut QueryMeter,
    ) -> Result<(f64, Array1<f64>, ())> {
        self.check_theta(theta)?;
        let th = theta.as_slice().expect("contiguous theta");
        let p = theta.len();
        meter.bump(self.data.n_points() as u64);

        struct Partial {
            value: f64,
            grad: Vec<f64>,
        }
        let parts = exec::chunked_partials(self.data.n_points(), ExecMode::Auto, |range| {
            let mut part = Partial { value: 0.0, grad: vec![0.0; p] };
            for n in range {
                part.value += self.model.log_lik_unchecked(self.data, n, th);
                self.model.add_grad_log_lik(self.data, n, th, 1.0, &mut part.grad);
            }
            part
        });
        let merged = exec::fold_pairwise(parts, |mut a, b| {
            a.value += b.value;
            for (ga, gb) in a.grad.iter_mut().zip(&b.grad) {
                *ga += gb;
            }
            a
        })
        .unwrap_or(Partial { value: 0.0, grad: vec![0.0; p] });

        let value = self.prior.log_density(theta) + self.temper * merged.value;
        let mut grad = Array1::from_vec(merged.grad);
        grad.mapv_inplace(|g| self.temper * g);
        grad += &self.prior.grad_log_density(theta);
        Ok((value, grad, ()))
    }
}
