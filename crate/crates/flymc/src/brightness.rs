//! The bright/dark partition over data and its two resampling moves.
//!
//! Each datum carries a Bernoulli indicator: bright data contribute their
//! exact likelihood to the augmented target, dark data are covered by the
//! collapsed bound. Conditional on the parameters, indicator `n` is bright
//! with probability `(L_n - B_n) / L_n`, which is exactly what
//! [`bright_probability`] computes (in log space, stably).
//!
//! Two updates leave the conditional distribution invariant:
//!
//! - [`explicit_resample`]: direct draws for uniformly chosen data. Simple,
//!   but every visit costs one likelihood query whatever the outcome.
//! - [`implicit_resample`]: per-site Metropolis-Hastings with asymmetric
//!   proposal rates, arranged so a *bright* site is judged from cached
//!   values and a *dark* site only pays a query when it is actually
//!   proposed. With a small dark-proposal rate, a sweep touches a handful
//!   of likelihoods.
//!
//! The partition itself is a swap-based permutation with O(1) flips and O(1)
//! membership, so bookkeeping never dominates the likelihood work it is
//! supposed to avoid.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundSpec;
use crate::data::Dataset;
use crate::diagnostics::QueryMeter;
use crate::model::Model;
use crate::{Error, Result};

/// Tolerance for `log_bound > log_lik` before it is treated as a real bound
/// violation rather than rounding. Deltas inside the slack clamp to zero.
pub const BOUND_SLACK: f64 = 1e-9;

/// A paired likelihood/bound evaluation for one datum at one parameter
/// value. Construction enforces the bound inequality up to [`BOUND_SLACK`].
#[derive(Clone, Copy, Debug)]
pub struct LikBound {
    log_lik: f64,
    log_bound: f64,
}

impl LikBound {
    pub fn new(index: usize, log_lik: f64, log_bound: f64) -> Result<Self> {
        if log_bound > log_lik + BOUND_SLACK {
            return Err(Error::BoundViolation { index, log_lik, log_bound });
        }
        Ok(Self { log_lik, log_bound })
    }

    pub fn log_lik(&self) -> f64 {
        self.log_lik
    }

    pub fn log_bound(&self) -> f64 {
        self.log_bound
    }

    /// `log L - log B`, clamped into `[0, inf)`.
    pub fn delta(&self) -> f64 {
        (self.log_lik - self.log_bound).max(0.0)
    }

    /// `log(L - B)`, the bright-state contribution to the augmented target;
    /// `-inf` when the bound touches the likelihood exactly.
    pub fn bright_log_factor(&self) -> f64 {
        self.log_bound + ln_expm1(self.delta())
    }

    /// Conditional probability that this datum is bright: `(L - B) / L`.
    pub fn bright_prob(&self) -> f64 {
        -(-self.delta()).exp_m1()
    }
}

/// `ln(e^delta - 1)` for `delta >= 0`, stable at both ends.
pub(crate) fn ln_expm1(delta: f64) -> f64 {
    debug_assert!(delta >= 0.0);
    if delta == 0.0 {
        f64::NEG_INFINITY
    } else if delta > 33.0 {
        // exp_m1 would overflow the intermediate; switch representations.
        delta + (-(-delta).exp()).ln_1p()
    } else {
        delta.exp_m1().ln()
    }
}

/// Cached bright-side evaluations at the chain's current parameters, keyed
/// by datum index. Kept exactly in sync with the bright set.
pub type BrightCache = HashMap<usize, LikBound>;

/// Evaluates likelihood and bound for one datum: one metered query.
pub(crate) fn eval_likbound(
    model: &Model,
    data: &Dataset,
    bound: &BoundSpec,
    n: usize,
    theta: &[f64],
    meter: &mut QueryMeter,
) -> Result<LikBound> {
    meter.bump(1);
    let log_lik = model.log_lik_unchecked(data, n, theta);
    let log_bound = bound.log_bound_unchecked(model, data, n, theta);
    LikBound::new(n, log_lik, log_bound)
}

/// Probability that datum `n` is bright given `theta`. Costs one query.
pub fn bright_probability(
    model: &Model,
    data: &Dataset,
    bound: &BoundSpec,
    n: usize,
    theta: &ndarray::Array1<f64>,
    meter: &mut QueryMeter,
) -> Result<f64> {
    bound.check_compatible(model, data)?;
    if n >= data.n_points() {
        return Err(Error::IndexOutOfRange { index: n, len: data.n_points() });
    }
    if theta.len() != model.param_dim(data.n_features()) {
        return Err(Error::InvalidConfig(format!(
            "theta has length {} but the model needs {}",
            theta.len(),
            model.param_dim(data.n_features())
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "theta" });
    }
    let th = theta.as_slice().expect("contiguous theta");
    Ok(eval_likbound(model, data, bound, n, th, meter)?.bright_prob())
}

/// Bright/dark membership for `n` data with O(1) flips and O(1) queries.
///
/// Internally a permutation `order` of `0..n` with bright indices occupying
/// the prefix `order[..num_bright]`, plus the inverse map `position`.
/// Flipping a datum swaps it with the datum at the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct BrightnessSet {
    order: Vec<usize>,
    position: Vec<usize>,
    num_bright: usize,
}

impl BrightnessSet {
    pub fn new_all_dark(n: usize) -> Self {
        Self { order: (0..n).collect(), position: (0..n).collect(), num_bright: 0 }
    }

    /// Builds a set with exactly the given indices bright.
    pub fn from_bright_indices<I: IntoIterator<Item = usize>>(n: usize, bright: I) -> Result<Self> {
        let mut set = Self::new_all_dark(n);
        for idx in bright {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
            set.brighten(idx);
        }
        Ok(set)
    }

    pub fn n_points(&self) -> usize {
        self.order.len()
    }

    pub fn num_bright(&self) -> usize {
        self.num_bright
    }

    pub fn num_dark(&self) -> usize {
        self.order.len() - self.num_bright
    }

    pub fn is_bright(&self, n: usize) -> bool {
        self.position[n] < self.num_bright
    }

    /// The `i`-th bright datum, `i < num_bright`. Which datum holds which
    /// slot is an implementation detail; only set membership is meaningful.
    pub fn ith_bright(&self, i: usize) -> usize {
        debug_assert!(i < self.num_bright);
        self.order[i]
    }

    /// The `i`-th dark datum, `i < num_dark`.
    pub fn ith_dark(&self, i: usize) -> usize {
        debug_assert!(i < self.num_dark());
        self.order[self.num_bright + i]
    }

    pub fn bright_indices(&self) -> &[usize] {
        &self.order[..self.num_bright]
    }

    /// Marks `n` bright. Returns whether the state changed.
    pub fn brighten(&mut self, n: usize) -> bool {
        if self.is_bright(n) {
            return false;
        }
        let from = self.position[n];
        let boundary = self.num_bright;
        self.swap_slots(from, boundary);
        self.num_bright += 1;
        debug_assert!(self.position[n] == boundary && self.order[boundary] == n);
        true
    }

    /// Marks `n` dark. Returns whether the state changed.
    pub fn darken(&mut self, n: usize) -> bool {
        if !self.is_bright(n) {
            return false;
        }
        let from = self.position[n];
        let boundary = self.num_bright - 1;
        self.swap_slots(from, boundary);
        self.num_bright -= 1;
        debug_assert!(self.position[n] == boundary && self.order[boundary] == n);
        true
    }

    fn swap_slots(&mut self, a: usize, b: usize) {
        self.order.swap(a, b);
        self.position[self.order[a]] = a;
        self.position[self.order[b]] = b;
    }

    /// Full structural check: `order` is a permutation, `position` is its
    /// inverse, membership agrees with the boundary. O(n); for tests.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.order.len();
        if self.position.len() != n || self.num_bright > n {
            return Err(Error::Dataset("brightness set shape is inconsistent".into()));
        }
        let mut seen = vec![false; n];
        for (slot, &idx) in self.order.iter().enumerate() {
            if idx >= n || seen[idx] {
                return Err(Error::Dataset(format!("order is not a permutation at slot {slot}")));
            }
            seen[idx] = true;
            if self.position[idx] != slot {
                return Err(Error::Dataset(format!("position[{idx}] does not invert order")));
            }
        }
        Ok(())
    }

    /// Sorted bright indices, the canonical external form.
    pub fn sorted_bright(&self) -> Vec<usize> {
        let mut v = self.bright_indices().to_vec();
        v.sort_unstable();
        v
    }

    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let repr = SnapshotRepr { n_points: self.n_points(), bright: self.sorted_bright() };
        let json = serde_json::to_string_pretty(&repr)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let repr: SnapshotRepr = serde_json::from_str(&text)?;
        Self::from_bright_indices(repr.n_points, repr.bright)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotRepr {
    n_points: usize,
    bright: Vec<usize>,
}

/// Direct conditional draws for `ceil(fraction * n)` uniformly chosen data.
/// Every visit costs one query; repeat visits are legal and re-draw.
/// The cache is refreshed for every visited datum. Returns whether the
/// bright membership changed.
#[allow(clippy::too_many_arguments)]
pub fn explicit_resample<R: Rng>(
    model: &Model,
    data: &Dataset,
    bound: &BoundSpec,
    theta: &[f64],
    set: &mut BrightnessSet,
    cache: &mut BrightCache,
    fraction: f64,
    rng: &mut R,
    meter: &mut QueryMeter,
) -> Result<bool> {
    debug_assert!(fraction > 0.0 && fraction <= 1.0);
    let n = set.n_points();
    if n == 0 {
        return Ok(false);
    }
    let mut changed = false;
    let visits = (n as f64 * fraction).ceil() as usize;
    for _ in 0..visits {
        let idx = rng.random_range(0..n);
        let lb = eval_likbound(model, data, bound, idx, theta, meter)?;
        if rng.random_bool(lb.bright_prob()) {
            changed |= set.brighten(idx);
            cache.insert(idx, lb);
        } else {
            changed |= set.darken(idx);
            cache.remove(&idx);
        }
    }
    Ok(changed)
}

/// Log acceptance probability for darkening a bright site whose
/// likelihood/bound gap is `delta`, under proposal rates `q_db` (dark to
/// bright) and `q_bd` (bright to dark).
pub fn log_accept_bright_to_dark(delta: f64, q_db: f64, q_bd: f64) -> f64 {
    (q_db.ln() - ln_expm1(delta) - q_bd.ln()).min(0.0)
}

/// Log acceptance probability for brightening a dark site with gap `delta`.
/// A touching bound (`delta == 0`) is never accepted: the bright state
/// would have zero density.
pub fn log_accept_dark_to_bright(delta: f64, q_db: f64, q_bd: f64) -> f64 {
    (ln_expm1(delta) + q_bd.ln() - q_db.ln()).min(0.0)
}

/// One Metropolis-Hastings sweep over all sites. Each pre-sweep dark site is
/// proposed with probability `q_db`, each pre-sweep bright site with
/// probability `q_bd`; acceptance ratios make the pair reversible for the
/// conditional brightness distribution.
///
/// Bright sites are judged from `cache` (no queries; a missing entry is an
/// error, since the cache contract is that it covers the bright set). Dark
/// sites pay one query each *only when proposed*, so the expected sweep cost
/// is `q_db * num_dark` queries. Returns whether the bright membership
/// changed.
#[allow(clippy::too_many_arguments)]
pub fn implicit_resample<R: Rng>(
    model: &Model,
    data: &Dataset,
    bound: &BoundSpec,
    theta: &[f64],
    set: &mut BrightnessSet,
    cache: &mut BrightCache,
    q_db: f64,
    q_bd: f64,
    rng: &mut R,
    meter: &mut QueryMeter,
) -> Result<bool> {
    debug_assert!(q_db > 0.0 && q_db <= 1.0 && q_bd > 0.0 && q_bd <= 1.0);

    // Candidate dark sites are fixed before any flips so each site is
    // considered exactly once per sweep, in a deterministic draw order.
    let dark_candidates: Vec<usize> = (0..set.num_dark())
        .filter(|_| rng.random_bool(q_db))
        .map(|i| set.ith_dark(i))
        .collect();
    let bright_snapshot: Vec<usize> = set.bright_indices().to_vec();
    let mut changed = false;

    for n in bright_snapshot {
        if !rng.random_bool(q_bd) {
            continue;
        }
        let lb = cache.get(&n).ok_or(Error::MissingBrightCache { index: n })?;
        let log_accept = log_accept_bright_to_dark(lb.delta(), q_db, q_bd);
        let u: f64 = rng.random();
        if u.ln() < log_accept {
            changed |= set.darken(n);
            cache.remove(&n);
        }
    }

    for n in dark_candidates {
        debug_assert!(!set.is_bright(n));
        let lb = eval_likbound(model, data, bound, n, theta, meter)?;
        let log_accept = log_accept_dark_to_bright(lb.delta(), q_db, q_bd);
        let u: f64 = rng.random();
        if u.ln() < log_accept {
            changed |= set.brighten(n);
            cache.insert(n, lb);
        }
    }
    Ok(changed)
}
