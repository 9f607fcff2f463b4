//! Likelihood families and priors.
//!
//! Three observation families share one parameter layout: a flat `theta` of
//! length `D` (logistic, robust regression) or `K*D` row-major (softmax, one
//! weight row per class). Each family exposes the per-datum log likelihood
//! and its gradient; whole-dataset sums live in [`full_log_posterior`] and
//! are metered, since likelihood evaluations are the cost unit everything
//! else is measured in.

use ndarray::{Array1, ArrayView1};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::diagnostics::QueryMeter;
use crate::exec::{self, ExecMode};
use crate::{Error, Result};

/// Isotropic priors over the flat parameter vector, with normalizing
/// constants included so posterior values are comparable across priors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prior {
    GaussianIsotropic { scale: f64 },
    Laplace { scale: f64 },
}

impl Prior {
    pub fn gaussian(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!("prior scale must be positive, got {scale}")));
        }
        Ok(Self::GaussianIsotropic { scale })
    }

    pub fn laplace(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!("prior scale must be positive, got {scale}")));
        }
        Ok(Self::Laplace { scale })
    }

    pub fn scale(&self) -> f64 {
        match *self {
            Self::GaussianIsotropic { scale } | Self::Laplace { scale } => scale,
        }
    }

    pub fn log_density(&self, theta: &Array1<f64>) -> f64 {
        let p = theta.len() as f64;
        match *self {
            Self::GaussianIsotropic { scale } => {
                let ss: f64 = theta.iter().map(|v| v * v).sum();
                -0.5 * p * (2.0 * std::f64::consts::PI).ln() - p * scale.ln()
                    - ss / (2.0 * scale * scale)
            }
            Self::Laplace { scale } => {
                let l1: f64 = theta.iter().map(|v| v.abs()).sum();
                -p * (2.0 * scale).ln() - l1 / scale
            }
        }
    }

    /// Gradient of the log density. The Laplace prior uses subgradient 0 at
    /// the kink, which keeps gradient-based kernels well defined there.
    pub fn grad_log_density(&self, theta: &Array1<f64>) -> Array1<f64> {
        match *self {
            Self::GaussianIsotropic { scale } => theta.mapv(|v| -v / (scale * scale)),
            Self::Laplace { scale } => theta.mapv(|v| {
                if v == 0.0 { 0.0 } else { -v.signum() / scale }
            }),
        }
    }
}

/// Observation families. `theta` is flat; softmax interprets it as `K` rows
/// of `D` weights in row-major order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Model {
    /// Binary labels in `{-1, +1}`.
    Logistic,
    /// Class ids `1..=n_classes`.
    Softmax { n_classes: usize },
    /// Real targets with Student-t residuals: heavier tails than Gaussian,
    /// so outliers are not catastrophic.
    RobustT { nu: f64, noise_scale: f64 },
}

impl Model {
    pub fn softmax(n_classes: usize) -> Result<Self> {
        let m = Self::Softmax { n_classes };
        m.validate()?;
        Ok(m)
    }

    pub fn robust_t(nu: f64, noise_scale: f64) -> Result<Self> {
        let m = Self::RobustT { nu, noise_scale };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Logistic => Ok(()),
            Self::Softmax { n_classes } => {
                if n_classes < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "softmax needs at least 2 classes, got {n_classes}"
                    )));
                }
                Ok(())
            }
            Self::RobustT { nu, noise_scale } => {
                if !(nu.is_finite() && nu > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "degrees of freedom must be positive, got {nu}"
                    )));
                }
                if !(noise_scale.is_finite() && noise_scale > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "noise scale must be positive, got {noise_scale}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Self::Logistic => "logistic",
            Self::Softmax { .. } => "softmax",
            Self::RobustT { .. } => "robust_t",
        }
    }

    /// Length of the flat parameter vector for feature width `d`.
    pub fn param_dim(&self, d: usize) -> usize {
        match *self {
            Self::Logistic | Self::RobustT { .. } => d,
            Self::Softmax { n_classes } => n_classes * d,
        }
    }

    /// Family-specific target validation; shape and finiteness were already
    /// checked by [`Dataset::new`].
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        self.validate()?;
        match *self {
            Self::Logistic => {
                for n in 0..data.n_points() {
                    let t = data.target(n);
                    if t != 1.0 && t != -1.0 {
                        return Err(Error::Dataset(format!(
                            "logistic target at row {n} must be -1 or +1, got {t}"
                        )));
                    }
                }
            }
            Self::Softmax { n_classes } => {
                if data.n_classes() != Some(n_classes) {
                    return Err(Error::Dataset(format!(
                        "dataset declares {:?} classes but the model has {n_classes}",
                        data.n_classes()
                    )));
                }
                for n in 0..data.n_points() {
                    let t = data.target(n);
                    if t.fract() != 0.0 || t < 1.0 || t > n_classes as f64 {
                        return Err(Error::Dataset(format!(
                            "softmax target at row {n} must be a class id in 1..={n_classes}, got {t}"
                        )));
                    }
                }
            }
            Self::RobustT { .. } => {}
        }
        Ok(())
    }

    /// Log likelihood of datum `n`, with input checking. Hot paths inside
    /// the crate validate `theta` once and use the unchecked variant.
    pub fn log_lik(&self, data: &Dataset, n: usize, theta: &Array1<f64>) -> Result<f64> {
        self.check_inputs(data, n, theta)?;
        Ok(self.log_lik_unchecked(data, n, theta.as_slice().expect("contiguous theta")))
    }

    /// Gradient of the log likelihood of datum `n` with respect to `theta`.
    pub fn grad_log_lik(&self, data: &Dataset, n: usize, theta: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_inputs(data, n, theta)?;
        let mut out = vec![0.0; theta.len()];
        self.add_grad_log_lik(data, n, theta.as_slice().expect("contiguous theta"), 1.0, &mut out);
        Ok(Array1::from_vec(out))
    }

    fn check_inputs(&self, data: &Dataset, n: usize, theta: &Array1<f64>) -> Result<()> {
        self.validate()?;
        if n >= data.n_points() {
            return Err(Error::IndexOutOfRange { index: n, len: data.n_points() });
        }
        let p = self.param_dim(data.n_features());
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

    pub(crate) fn log_lik_unchecked(&self, data: &Dataset, n: usize, theta: &[f64]) -> f64 {
        let x = data.feature_row(n);
        match *self {
            Self::Logistic => {
                let m = data.target(n) * dot(x, theta);
                log_sigmoid(m)
            }
            Self::Softmax { n_classes } => {
                let d = data.n_features();
                let t = data.target(n) as usize - 1;
                let mut max = f64::NEG_INFINITY;
                let mut scores = [0.0; 16];
                let mut heap;
                let scores: &mut [f64] = if n_classes <= 16 {
                    &mut scores[..n_classes]
                } else {
                    heap = vec![0.0; n_classes];
                    &mut heap
                };
                for (k, s) in scores.iter_mut().enumerate() {
                    *s = dot(x, &theta[k * d..(k + 1) * d]);
                    max = max.max(*s);
                }
                let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
                scores[t] - lse
            }
            Self::RobustT { nu, noise_scale } => {
                let r = (data.target(n) - dot(x, theta)) / noise_scale;
                student_t_log_norm(nu) - noise_scale.ln()
                    - 0.5 * (nu + 1.0) * (r * r / nu).ln_1p()
            }
        }
    }

    /// Adds `scale * grad log_lik(n)` into `out`. Shares the forward pass
    /// with the value where possible; one datum, one query.
    pub(crate) fn add_grad_log_lik(
        &self,
        data: &Dataset,
        n: usize,
        theta: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let x = data.feature_row(n);
        match *self {
            Self::Logistic => {
                let t = data.target(n);
                let m = t * dot(x, theta);
                let coeff = scale * t * sigmoid(-m);
                for (o, xi) in out.iter_mut().zip(x.iter()) {
                    *o += coeff * xi;
                }
            }
            Self::Softmax { n_classes } => {
                let d = data.n_features();
                let t = data.target(n) as usize - 1;
                let mut max = f64::NEG_INFINITY;
                let mut scores = vec![0.0; n_classes];
                for (k, s) in scores.iter_mut().enumerate() {
                    *s = dot(x, &theta[k * d..(k + 1) * d]);
                    max = max.max(*s);
                }
                let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                for k in 0..n_classes {
                    let p_k = (scores[k] - max).exp() / z;
                    let coeff = scale * (if k == t { 1.0 } else { 0.0 } - p_k);
                    for (o, xi) in out[k * d..(k + 1) * d].iter_mut().zip(x.iter()) {
                        *o += coeff * xi;
                    }
                }
            }
            Self::RobustT { nu, noise_scale } => {
                let r = (data.target(n) - dot(x, theta)) / noise_scale;
                // d/dr of the log density is -(nu+1) r / (nu + r^2); chain
                // rule through r brings in -x/noise_scale.
                let coeff = scale * (nu + 1.0) * r / ((nu + r * r) * noise_scale);
                for (o, xi) in out.iter_mut().zip(x.iter()) {
                    *o += coeff * xi;
                }
            }
        }
    }
}

pub(crate) fn dot(x: ArrayView1<'_, f64>, w: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), w.len());
    x.iter().zip(w).map(|(a, b)| a * b).sum()
}

pub(crate) fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(m)`, stable over the whole real line.
pub(crate) fn log_sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        -(-m).exp().ln_1p()
    } else {
        m - m.exp().ln_1p()
    }
}

fn student_t_log_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
}

fn check_posterior_inputs(
    theta: &Array1<f64>,
    data: &Dataset,
    model: &Model,
    _prior: &Prior,
) -> Result<()> {
    model.validate()?;
    let p = model.param_dim(data.n_features());
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

/// Log posterior density (up to the evidence constant): prior plus the sum
/// of all `N` per-datum log likelihoods. Meters `N` queries.
pub fn full_log_posterior(
    theta: &Array1<f64>,
    data: &Dataset,
    model: &Model,
    prior: &Prior,
    meter: &mut QueryMeter,
) -> Result<f64> {
    check_posterior_inputs(theta, data, model, prior)?;
    meter.bump(data.n_points() as u64);
    let th = theta.as_slice().expect("contiguous theta");
    let lik = exec::sum_chunked(data.n_points(), ExecMode::Auto, |n| {
        model.log_lik_unchecked(data, n, th)
    });
    Ok(prior.log_density(theta) + lik)
}

/// Value and gradient of [`full_log_posterior`] in one sweep; still one
/// query per datum since value and gradient share the forward pass.
pub fn full_log_posterior_with_grad(
    theta: &Array1<f64>,
    data: &Dataset,
    model: &Model,
    prior: &Prior,
    meter: &mut QueryMeter,
) -> Result<(f64, Array1<f64>)> {
    check_posterior_inputs(theta, data, model, prior)?;
    meter.bump(data.n_points() as u64);
    let th = theta.as_slice().expect("contiguous theta");
    let p = theta.len();

    struct Partial {
        value: f64,
        grad: Vec<f64>,
    }
    let parts = exec::chunked_partials(data.n_points(), ExecMode::Auto, |range| {
        let mut part = Partial { value: 0.0, grad: vec![0.0; p] };
        for n in range {
            part.value += model.log_lik_unchecked(data, n, th);
            model.add_grad_log_lik(data, n, th, 1.0, &mut part.grad);
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

    let value = prior.log_density(theta) + merged.value;
    let grad = Array1::from_vec(merged.grad) + prior.grad_log_density(theta);
    Ok((value, grad))
}
