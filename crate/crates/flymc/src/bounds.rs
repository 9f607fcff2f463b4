//! Per-datum likelihood lower bounds and their collapsed whole-dataset form.
//!
//! Each family pairs with one bound shape, chosen so the log bound is an
//! exact quadratic in the flat parameter vector:
//!
//! - logistic: tangent-quadratic in the margin, touching the likelihood at
//!   margin `+-xi`;
//! - softmax: quadratic expansion around a reference parameter whose fixed
//!   curvature dominates the log-sum-exp Hessian, touching at the reference;
//! - robust regression: tangent line in *squared* residual at `xi^2`, which
//!   the likelihood's convexity in that variable turns into a global
//!   Gaussian-shaped lower bound, touching at residual `+-xi`.
//!
//! Because every log bound is quadratic, the sum over all `N` data collapses
//! into a single quadratic form that is accumulated once per bound choice
//! and then evaluated in `O(P^2)` per parameter value, with zero likelihood
//! queries. That collapsed form is what makes dark data free.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::diagnostics::QueryMeter;
use crate::exec::{self, ExecMode};
use crate::model::{dot, log_sigmoid, Model, Prior};
use crate::{Error, Result};

/// Largest collapsed statistic we will materialize (1 GiB of f64s).
const MAX_STATISTIC_BYTES: usize = 1 << 30;

/// Tightness parameter per datum: one shared value or one per datum.
/// Values are locations in margin or residual units and must be
/// non-negative and finite; the bounds are symmetric in the sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tightness {
    Shared(f64),
    PerDatum(Vec<f64>),
}

impl Tightness {
    fn validate(&self, n_points: usize) -> Result<()> {
        let check = |v: f64| -> Result<()> {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "tightness values must be finite and non-negative, got {v}"
                )));
            }
            Ok(())
        };
        match self {
            Self::Shared(v) => check(*v),
            Self::PerDatum(vs) => {
                if vs.len() != n_points {
                    return Err(Error::InvalidConfig(format!(
                        "{} per-datum tightness values for {} data points",
                        vs.len(),
                        n_points
                    )));
                }
                vs.iter().try_for_each(|v| check(*v))
            }
        }
    }

    #[inline]
    fn get(&self, n: usize) -> f64 {
        match self {
            Self::Shared(v) => *v,
            Self::PerDatum(vs) => vs[n],
        }
    }
}

/// A lower-bound choice. Serializable so tuned bounds can be cached on disk
/// and reloaded instead of re-tuned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BoundSpec {
    /// Logistic margin bound, tight at margin `+-xi`.
    JaakkolaJordan { xi: Tightness },
    /// Softmax expansion around `reference`, a flat row-major `K x D`
    /// parameter; tight exactly at the reference.
    Bohning { reference: Vec<f64> },
    /// Robust-regression bound, tight at residual `+-xi`.
    TTangent { xi: Tightness },
}

impl BoundSpec {
    fn family_name(&self) -> &'static str {
        match self {
            Self::JaakkolaJordan { .. } => "logistic",
            Self::Bohning { .. } => "softmax",
            Self::TTangent { .. } => "robust_t",
        }
    }

    /// Checks that this bound matches the model family and that its
    /// parameters are well formed for `data`.
    pub fn check_compatible(&self, model: &Model, data: &Dataset) -> Result<()> {
        let ok = matches!(
            (self, model),
            (Self::JaakkolaJordan { .. }, Model::Logistic)
                | (Self::Bohning { .. }, Model::Softmax { .. })
                | (Self::TTangent { .. }, Model::RobustT { .. })
        );
        if !ok {
            return Err(Error::FamilyMismatch {
                op: "bound evaluation",
                expected: self.family_name(),
                got: model.family_name(),
            });
        }
        match self {
            Self::JaakkolaJordan { xi } | Self::TTangent { xi } => xi.validate(data.n_points()),
            Self::Bohning { reference } => {
                let p = model.param_dim(data.n_features());
                if reference.len() != p {
                    return Err(Error::InvalidConfig(format!(
                        "reference has length {} but the model needs {p}",
                        reference.len()
                    )));
                }
                if reference.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { context: "bound reference" });
                }
                Ok(())
            }
        }
    }

    /// Log of the per-datum lower bound at `theta`, with input checking.
    pub fn log_bound(
        &self,
        model: &Model,
        data: &Dataset,
        n: usize,
        theta: &Array1<f64>,
    ) -> Result<f64> {
        self.check_compatible(model, data)?;
        if n >= data.n_points() {
            return Err(Error::IndexOutOfRange { index: n, len: data.n_points() });
        }
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
        Ok(self.log_bound_unchecked(model, data, n, theta.as_slice().expect("contiguous theta")))
    }

    pub(crate) fn log_bound_unchecked(
        &self,
        model: &Model,
        data: &Dataset,
        n: usize,
        theta: &[f64],
    ) -> f64 {
        let x = data.feature_row(n);
        match (self, model) {
            (Self::JaakkolaJordan { xi }, Model::Logistic) => {
                let m = data.target(n) * dot(x, theta);
                let JjCoefficients { a, b, c } = jj_coefficients(xi.get(n));
                a * m * m + b * m + c
            }
            (Self::TTangent { xi }, Model::RobustT { nu, noise_scale }) => {
                let r = (data.target(n) - dot(x, theta)) / noise_scale;
                let t = TTangentCoefficients::new(*nu, *noise_scale, xi.get(n));
                t.value + t.slope * (r * r - t.anchor_sq)
            }
            (Self::Bohning { reference }, Model::Softmax { n_classes }) => {
                let k = *n_classes;
                let d = data.n_features();
                let t = data.target(n) as usize - 1;
                let mut psi = vec![0.0; k];
                let mut psi0 = vec![0.0; k];
                for c in 0..k {
                    psi[c] = dot(x, &theta[c * d..(c + 1) * d]);
                    psi0[c] = dot(x, &reference[c * d..(c + 1) * d]);
                }
                let p0 = softmax_probs(&psi0);
                let l0 = psi0[t] - log_sum_exp(&psi0);
                let mut acc = l0;
                let delta: Vec<f64> = psi.iter().zip(&psi0).map(|(a, b)| a - b).collect();
                let a_delta = curvature_apply(&delta);
                for c in 0..k {
                    let g = if c == t { 1.0 } else { 0.0 } - p0[c];
                    acc += g * delta[c] - 0.5 * delta[c] * a_delta[c];
                }
                acc
            }
            _ => unreachable!("compatibility checked at construction"),
        }
    }

    /// Adds `scale * grad log_bound(n)` into `out`.
    pub(crate) fn add_grad_log_bound(
        &self,
        model: &Model,
        data: &Dataset,
        n: usize,
        theta: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let x = data.feature_row(n);
        match (self, model) {
            (Self::JaakkolaJordan { xi }, Model::Logistic) => {
                let t = data.target(n);
                let m = t * dot(x, theta);
                let JjCoefficients { a, b, .. } = jj_coefficients(xi.get(n));
                let coeff = scale * (2.0 * a * m + b) * t;
                for (o, xi_) in out.iter_mut().zip(x.iter()) {
                    *o += coeff * xi_;
                }
            }
            (Self::TTangent { xi }, Model::RobustT { nu, noise_scale }) => {
                let r = (data.target(n) - dot(x, theta)) / noise_scale;
                let t = TTangentCoefficients::new(*nu, *noise_scale, xi.get(n));
                // d(r^2)/dtheta = -2 r x / noise_scale.
                let coeff = scale * t.slope * (-2.0) * r / noise_scale;
                for (o, xi_) in out.iter_mut().zip(x.iter()) {
                    *o += coeff * xi_;
                }
            }
            (Self::Bohning { reference }, Model::Softmax { n_classes }) => {
                let k = *n_classes;
                let d = data.n_features();
                let t = data.target(n) as usize - 1;
                let mut delta = vec![0.0; k];
                let mut psi0 = vec![0.0; k];
                for c in 0..k {
                    psi0[c] = dot(x, &reference[c * d..(c + 1) * d]);
                    delta[c] = dot(x, &theta[c * d..(c + 1) * d]) - psi0[c];
                }
                let p0 = softmax_probs(&psi0);
                let a_delta = curvature_apply(&delta);
                for c in 0..k {
                    let g = if c == t { 1.0 } else { 0.0 } - p0[c];
                    let coeff = scale * (g - a_delta[c]);
                    for (o, xi_) in out[c * d..(c + 1) * d].iter_mut().zip(x.iter()) {
                        *o += coeff * xi_;
                    }
                }
            }
            _ => unreachable!("compatibility checked at construction"),
        }
    }
}

/// Quadratic coefficients of the logistic margin bound:
/// `log B(m) = a m^2 + b m + c`.
#[derive(Clone, Copy, Debug)]
pub struct JjCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Below this tightness the exact coefficients lose digits to cancellation;
/// the limit values are accurate to O(xi^4) there.
const JJ_SMALL_XI: f64 = 1e-6;

/// Coefficients of the margin bound tight at `+-xi`.
pub fn jj_coefficients(xi: f64) -> JjCoefficients {
    debug_assert!(xi.is_finite() && xi >= 0.0);
    if xi.abs() < JJ_SMALL_XI {
        return JjCoefficients { a: -0.125, b: 0.5, c: -std::f64::consts::LN_2 };
    }
    let lambda = (0.5 * xi).tanh() / (4.0 * xi);
    let a = -lambda;
    let c = log_sigmoid(xi) + lambda * xi * xi - 0.5 * xi;
    JjCoefficients { a, b: 0.5, c }
}

/// Tangent-in-squared-residual coefficients for the robust bound.
struct TTangentCoefficients {
    /// Log density at the anchor squared residual, noise scale included.
    value: f64,
    /// Derivative with respect to squared residual at the anchor; negative.
    slope: f64,
    anchor_sq: f64,
}

impl TTangentCoefficients {
    fn new(nu: f64, noise_scale: f64, xi: f64) -> Self {
        let anchor_sq = xi * xi;
        let log_norm =
            ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
        let value = log_norm - noise_scale.ln() - 0.5 * (nu + 1.0) * (anchor_sq / nu).ln_1p();
        let slope = -(nu + 1.0) / (2.0 * (nu + anchor_sq));
        Self { value, slope, anchor_sq }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|u| (u - max).exp()).sum::<f64>().ln()
}

fn softmax_probs(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|u| (u - lse).exp()).collect()
}

/// Applies the fixed softmax curvature `A = (I - 11^T/K)/2` to a vector:
/// `A v = (v - mean(v) 1)/2`.
fn curvature_apply(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|u| 0.5 * (u - mean)).collect()
}

/// Sum of all `N` per-datum log bounds, reduced to one quadratic form
/// `theta' Q theta + l' theta + c`. Built once per bound choice; evaluation
/// afterwards costs no likelihood queries at all.
#[derive(Clone, Debug)]
pub struct CollapsedBound {
    quad: Array2<f64>,
    lin: Array1<f64>,
    constant: f64,
    n_points: usize,
}

impl CollapsedBound {
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Evaluates the collapsed sum at `theta`. Never meters: the whole point
    /// is that this replaces `N` likelihood queries.
    pub fn evaluate(&self, theta: &Array1<f64>) -> f64 {
        debug_assert_eq!(theta.len(), self.lin.len());
        let q_theta = self.quad.dot(theta);
        theta.dot(&q_theta) + self.lin.dot(theta) + self.constant
    }

    /// Gradient `2 Q theta + l` (the quadratic is stored symmetric).
    pub fn grad(&self, theta: &Array1<f64>) -> Array1<f64> {
        let mut out = self.quad.dot(theta);
        out.mapv_inplace(|v| 2.0 * v);
        out + &self.lin
    }

    pub(crate) fn add_grad(&self, theta: &Array1<f64>, out: &mut [f64]) {
        let g = self.grad(theta);
        for (o, gi) in out.iter_mut().zip(g.iter()) {
            *o += gi;
        }
    }
}

struct CollapsePartial {
    scatter: Vec<f64>,
    lin: Vec<f64>,
    constant: f64,
}

impl CollapsePartial {
    fn zero(d: usize, p: usize) -> Self {
        Self { scatter: vec![0.0; d * d], lin: vec![0.0; p], constant: 0.0 }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.scatter.iter_mut().zip(&other.scatter) {
            *a += b;
        }
        for (a, b) in self.lin.iter_mut().zip(&other.lin) {
            *a += b;
        }
        self.constant += other.constant;
        self
    }
}

/// Collapses the bound over the whole dataset. `O(N D^2)` once; see
/// [`CollapsedBound::evaluate`] for why this pays off.
pub fn collapse(bound: &BoundSpec, model: &Model, data: &Dataset) -> Result<CollapsedBound> {
    collapse_with_mode(bound, model, data, ExecMode::Auto)
}

/// [`collapse`] with the execution mode pinned; the bench suite uses this to
/// compare the sequential and parallel paths on identical inputs.
#[doc(hidden)]
pub fn collapse_with_mode(
    bound: &BoundSpec,
    model: &Model,
    data: &Dataset,
    mode: ExecMode,
) -> Result<CollapsedBound> {
    bound.check_compatible(model, data)?;
    model.check_dataset(data)?;
    let d = data.n_features();
    let p = model.param_dim(d);
    let bytes = p
        .checked_mul(p)
        .and_then(|e| e.checked_mul(std::mem::size_of::<f64>()))
        .ok_or(Error::StatisticTooLarge { p, bytes: usize::MAX })?;
    if bytes > MAX_STATISTIC_BYTES {
        return Err(Error::StatisticTooLarge { p, bytes });
    }

    let parts = exec::chunked_partials(data.n_points(), mode, |range| {
        let mut part = CollapsePartial::zero(d, p);
        for n in range {
            accumulate_datum(bound, model, data, n, &mut part);
        }
        part
    });
    let merged = exec::fold_pairwise(parts, CollapsePartial::merge)
        .unwrap_or_else(|| CollapsePartial::zero(d, p));

    let quad = match (bound, model) {
        (BoundSpec::Bohning { .. }, Model::Softmax { n_classes }) => {
            expand_softmax_quad(&merged.scatter, d, *n_classes)
        }
        _ => Array2::from_shape_vec((d, d), merged.scatter).expect("scatter is d*d"),
    };
    Ok(CollapsedBound {
        quad,
        lin: Array1::from_vec(merged.lin),
        constant: merged.constant,
        n_points: data.n_points(),
    })
}

fn accumulate_datum(
    bound: &BoundSpec,
    model: &Model,
    data: &Dataset,
    n: usize,
    part: &mut CollapsePartial,
) {
    let x = data.feature_row(n);
    let d = x.len();
    match (bound, model) {
        (BoundSpec::JaakkolaJordan { xi }, Model::Logistic) => {
            let t = data.target(n);
            let JjCoefficients { a, b, c } = jj_coefficients(xi.get(n));
            for i in 0..d {
                for j in 0..d {
                    part.scatter[i * d + j] += a * x[i] * x[j];
                }
                part.lin[i] += b * t * x[i];
            }
            part.constant += c;
        }
        (BoundSpec::TTangent { xi }, Model::RobustT { nu, noise_scale }) => {
            let t = data.target(n);
            let tc = TTangentCoefficients::new(*nu, *noise_scale, xi.get(n));
            // r^2 = (t - theta.x)^2 / s^2 expands into quadratic, linear,
            // and constant pieces, each weighted by the tangent slope.
            let w = tc.slope / (noise_scale * noise_scale);
            for i in 0..d {
                for j in 0..d {
                    part.scatter[i * d + j] += w * x[i] * x[j];
                }
                part.lin[i] += -2.0 * w * t * x[i];
            }
            part.constant += tc.value - tc.slope * tc.anchor_sq + w * t * t;
        }
        (BoundSpec::Bohning { reference }, Model::Softmax { n_classes }) => {
            let k = *n_classes;
            let t = data.target(n) as usize - 1;
            let mut psi0 = vec![0.0; k];
            for c in 0..k {
                psi0[c] = dot(x, &reference[c * d..(c + 1) * d]);
            }
            let p0 = softmax_probs(&psi0);
            let a_psi0 = curvature_apply(&psi0);
            let l0 = psi0[t] - log_sum_exp(&psi0);
            let mut const_n = l0;
            for c in 0..k {
                let g = if c == t { 1.0 } else { 0.0 } - p0[c];
                // Linear coefficient per class block: (g + A psi0)_c x.
                let coeff = g + a_psi0[c];
                for i in 0..d {
                    part.lin[c * d + i] += coeff * x[i];
                }
                const_n += -g * psi0[c] - 0.5 * psi0[c] * a_psi0[c];
            }
            part.constant += const_n;
            // The quadratic piece shares the curvature across data, so only
            // the unweighted feature scatter is accumulated here.
            for i in 0..d {
                for j in 0..d {
                    part.scatter[i * d + j] += x[i] * x[j];
                }
            }
        }
        _ => unreachable!("compatibility checked at entry"),
    }
}

/// Builds `-(A kron S)/2` for the softmax quadratic, row-major blocks.
fn expand_softmax_quad(scatter: &[f64], d: usize, k: usize) -> Array2<f64> {
    let p = k * d;
    let mut quad = Array2::zeros((p, p));
    for bk in 0..k {
        for bk2 in 0..k {
            let a = 0.5 * (if bk == bk2 { 1.0 } else { 0.0 } - 1.0 / k as f64);
            let w = -0.5 * a;
            for i in 0..d {
                for j in 0..d {
                    quad[(bk * d + i, bk2 * d + j)] = w * scatter[i * d + j];
                }
            }
        }
    }
    quad
}

/// The default bound of each family before any tuning: margin tightness 1.5
/// for logistic, anchor 0 for robust residuals, zero reference for softmax.
pub fn untuned(model: &Model, n_features: usize) -> BoundSpec {
    match *model {
        Model::Logistic => BoundSpec::JaakkolaJordan { xi: Tightness::Shared(1.5) },
        Model::RobustT { .. } => BoundSpec::TTangent { xi: Tightness::Shared(0.0) },
        Model::Softmax { n_classes } => {
            BoundSpec::Bohning { reference: vec![0.0; n_classes * n_features] }
        }
    }
}

/// Bound made tight at `theta_ref`: per-datum tightness equal to each
/// datum's margin or residual there, or the reference itself for softmax.
/// At `theta_ref` every per-datum bound then touches its likelihood.
pub fn tightened_at(model: &Model, data: &Dataset, theta_ref: &Array1<f64>) -> Result<BoundSpec> {
    model.check_dataset(data)?;
    let p = model.param_dim(data.n_features());
    if theta_ref.len() != p {
        return Err(Error::InvalidConfig(format!(
            "theta_ref has length {} but the model needs {p}",
            theta_ref.len()
        )));
    }
    if theta_ref.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "theta_ref" });
    }
    let th = theta_ref.as_slice().expect("contiguous theta");
    Ok(match *model {
        Model::Logistic => {
            let xis = (0..data.n_points())
                .map(|n| (data.target(n) * dot(data.feature_row(n), th)).abs())
                .collect();
            BoundSpec::JaakkolaJordan { xi: Tightness::PerDatum(xis) }
        }
        Model::RobustT { noise_scale, .. } => {
            let xis = (0..data.n_points())
                .map(|n| ((data.target(n) - dot(data.feature_row(n), th)) / noise_scale).abs())
                .collect();
            BoundSpec::TTangent { xi: Tightness::PerDatum(xis) }
        }
        Model::Softmax { .. } => BoundSpec::Bohning { reference: th.to_vec() },
    })
}

/// Stochastic-gradient MAP search settings. The step decays as
/// `step / sqrt(epoch)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub step: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { step: 0.01, minibatch: 32, epochs: 20, seed: 0 }
    }
}

impl SgdConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidConfig(format!("SGD step must be positive, got {}", self.step)));
        }
        if self.minibatch == 0 {
            return Err(Error::InvalidConfig("SGD minibatch must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("SGD needs at least one epoch".into()));
        }
        Ok(())
    }
}

/// Rough posterior mode via minibatch stochastic gradient ascent, started
/// at zero. Tuning queries are metered like any other likelihood work.
pub fn map_estimate(
    model: &Model,
    data: &Dataset,
    prior: &Prior,
    cfg: &SgdConfig,
    meter: &mut QueryMeter,
) -> Result<Array1<f64>> {
    cfg.validate()?;
    model.check_dataset(data)?;
    let n = data.n_points();
    let p = model.param_dim(data.n_features());
    let mut theta = vec![0.0; p];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; p];

    for epoch in 1..=cfg.epochs {
        let step = cfg.step / (epoch as f64).sqrt();
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.minibatch) {
            grad.fill(0.0);
            // Unbiased full-data gradient estimate: likelihood terms are
            // scaled up by N / batch size, the prior enters exactly.
            let lik_scale = n as f64 / batch.len() as f64;
            for &i in batch {
                model.add_grad_log_lik(data, i, &theta, lik_scale, &mut grad);
            }
            meter.bump(batch.len() as u64);
            let theta_arr = Array1::from_vec(theta.clone());
            let prior_grad = prior.grad_log_density(&theta_arr);
            for ((t, g), pg) in theta.iter_mut().zip(&grad).zip(prior_grad.iter()) {
                *t += step * (g + pg);
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::DivergentOptimization { epoch });
            }
        }
        if n == 0 {
            break;
        }
    }
    Ok(Array1::from_vec(theta))
}

/// MAP-tunes the bound: finds a rough mode, then tightens the bound there.
/// Returns the bound together with the mode it was anchored at.
pub fn map_tune(
    model: &Model,
    data: &Dataset,
    prior: &Prior,
    cfg: &SgdConfig,
    meter: &mut QueryMeter,
) -> Result<(BoundSpec, Array1<f64>)> {
    let theta_map = map_estimate(model, data, prior, cfg, meter)?;
    let bound = tightened_at(model, data, &theta_map)?;
    Ok((bound, theta_map))
}
