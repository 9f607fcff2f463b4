//! Chain drivers: the subsampling chain over the augmented joint, and a
//! conventional full-data chain for baselines.
//!
//! One iteration of [`FlymcChain`] is a brightness resampling move followed
//! by one parameter kernel transition against the joint with brightness
//! pinned. Both moves leave the augmented joint invariant, and the joint
//! marginalizes to the exact posterior, so the parameter marginal of the
//! chain is the posterior itself; no evaluation ever touches more than the
//! bright data plus the resampling visits.

use std::path::Path;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::joint::{BrightEvals, FlymcTarget, FlymcView, FullTarget, TargetDensity};
use super::kernels::{kernel_step, CurrentPoint, KernelConfig, KernelState};
use crate::bounds::{BoundSpec, CollapsedBound};
use crate::brightness::{
    eval_likbound, explicit_resample, implicit_resample, ln_expm1, BrightCache, BrightnessSet,
};
use crate::data::Dataset;
use crate::diagnostics::QueryMeter;
use crate::model::{Model, Prior};
use crate::{Error, Result};

/// Dark-to-bright proposal rate for implicit resampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QDarkToBright {
    /// Track `max(M/N, 10/N)` during burn-in, then freeze the rate so the
    /// post-burn-in kernel is homogeneous.
    Auto,
    Fixed(f64),
}

/// How brightness gets resampled each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResampleMode {
    /// Draw the brightness of `ceil(fraction * N)` uniformly chosen data
    /// directly from their conditionals. Costs that many queries per
    /// iteration regardless of the bright count.
    Explicit { fraction: f64 },
    /// Metropolis-Hastings flips: propose each dark site with rate
    /// `q_dark_to_bright` (paying one query only for proposed sites) and
    /// each bright site with rate `q_bright_to_dark` (judged from cache,
    /// free). Expected cost is `q_dark_to_bright * num_dark` per iteration.
    Implicit { q_dark_to_bright: QDarkToBright, q_bright_to_dark: f64 },
}

impl ResampleMode {
    pub fn explicit(fraction: f64) -> Result<Self> {
        let mode = Self::Explicit { fraction };
        mode.validate()?;
        Ok(mode)
    }

    pub fn implicit_fixed(q_dark_to_bright: f64, q_bright_to_dark: f64) -> Result<Self> {
        let mode = Self::Implicit {
            q_dark_to_bright: QDarkToBright::Fixed(q_dark_to_bright),
            q_bright_to_dark,
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn implicit_auto(q_bright_to_dark: f64) -> Result<Self> {
        let mode =
            Self::Implicit { q_dark_to_bright: QDarkToBright::Auto, q_bright_to_dark };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        let check_rate = |name: &str, v: f64| {
            if !(v.is_finite() && v > 0.0 && v <= 1.0) {
                Err(Error::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")))
            } else {
                Ok(())
            }
        };
        match *self {
            ResampleMode::Explicit { fraction } => check_rate("resample fraction", fraction),
            ResampleMode::Implicit { q_dark_to_bright, q_bright_to_dark } => {
                if let QDarkToBright::Fixed(q) = q_dark_to_bright {
                    check_rate("q_dark_to_bright", q)?;
                }
                check_rate("q_bright_to_dark", q_bright_to_dark)
            }
        }
    }
}

/// Full configuration for a subsampling chain.
#[derive(Debug, Clone)]
pub struct FlymcChainConfig {
    pub kernel: KernelConfig,
    pub resample: ResampleMode,
    /// Total iterations, burn-in included.
    pub iterations: usize,
    /// Iterations treated as burn-in: kernel steps adapt (if enabled) and
    /// the auto dark-to-bright rate tracks the bright count, both frozen
    /// after.
    pub burn_in: usize,
    /// Keep every `thin`-th parameter snapshot (trace rows are always kept).
    pub thin: usize,
    pub seed: u64,
}

impl FlymcChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.resample.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// Configuration for the conventional full-data chain.
#[derive(Debug, Clone)]
pub struct FullChainConfig {
    pub kernel: KernelConfig,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Likelihood temper; 1 targets the true posterior. Other values build
    /// deliberately wrong baselines for diagnostic negative controls.
    pub temper: f64,
}

impl FullChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-iteration scalar record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub log_joint: f64,
    pub m_bright: usize,
    pub cum_queries: u64,
    pub accepted: bool,
}

/// Chain output: one scalar row per iteration plus thinned parameter
/// snapshots.
pub struct ChainTrace {
    dim: usize,
    rows: Vec<TraceRow>,
    theta_iters: Vec<u64>,
    thetas: Vec<f64>,
}

impl ChainTrace {
    fn new(dim: usize, capacity: usize) -> Self {
        Self {
            dim,
            // Cap the reservation: a huge iteration budget should not
            // allocate everything up front.
            rows: Vec::with_capacity(capacity.min(1 << 20)),
            theta_iters: Vec::new(),
            thetas: Vec::new(),
        }
    }

    fn record(&mut self, row: TraceRow, theta: &Array1<f64>, thin: usize) {
        if row.iteration.is_multiple_of(thin as u64) {
            self.theta_iters.push(row.iteration);
            self.thetas.extend(theta.iter());
        }
        self.rows.push(row);
    }

    /// Number of iterations recorded.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    /// Number of stored parameter snapshots.
    pub fn theta_count(&self) -> usize {
        self.theta_iters.len()
    }

    pub fn theta_row(&self, k: usize) -> &[f64] {
        &self.thetas[k * self.dim..(k + 1) * self.dim]
    }

    pub fn theta_iteration(&self, k: usize) -> u64 {
        self.theta_iters[k]
    }

    /// Per-dimension series of snapshots from iteration `from` onward, the
    /// shape the moment and autocorrelation diagnostics consume.
    pub fn series_from(&self, from: u64) -> Vec<Vec<f64>> {
        let start = self.theta_iters.partition_point(|&i| i < from);
        let mut series = vec![Vec::with_capacity(self.theta_count() - start); self.dim];
        for k in start..self.theta_count() {
            for (j, v) in self.theta_row(k).iter().enumerate() {
                series[j].push(*v);
            }
        }
        series
    }

    /// Scalar rows as CSV: `iteration,log_joint,m_bright,cum_queries,accept`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "log_joint", "m_bright", "cum_queries", "accept"])?;
        for r in &self.rows {
            w.write_record(&[
                r.iteration.to_string(),
                r.log_joint.to_string(),
                r.m_bright.to_string(),
                r.cum_queries.to_string(),
                (r.accepted as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Stored parameter snapshots as CSV: `iteration,theta_0,...`.
    pub fn write_theta_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iteration".to_string()];
        header.extend((0..self.dim).map(|j| format!("theta_{j}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.dim + 1);
        for k in 0..self.theta_count() {
            record.clear();
            record.push(self.theta_iters[k].to_string());
            record.extend(self.theta_row(k).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The subsampling chain.
pub struct FlymcChain<'a> {
    target: FlymcTarget<'a>,
    cfg: FlymcChainConfig,
    rng: ChaCha8Rng,
    meter: QueryMeter,
    set: BrightnessSet,
    cache: BrightCache,
    kernel: KernelState,
    cur: CurrentPoint<BrightEvals>,
    base_value: f64,
    frozen_q: Option<f64>,
    iter: u64,
    trace: ChainTrace,
}

impl<'a> FlymcChain<'a> {
    /// Builds the chain and Gibbs-initializes the brightness of every datum
    /// at `theta0`, which costs one full pass (`N` queries), metered as its
    /// own accounting window.
    pub fn new(
        model: &'a Model,
        data: &'a Dataset,
        prior: &'a Prior,
        bound: &'a BoundSpec,
        collapsed: &'a CollapsedBound,
        cfg: FlymcChainConfig,
        theta0: Array1<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        let target = FlymcTarget::new(model, data, prior, bound, collapsed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut meter = QueryMeter::new();
        let n = data.n_points();
        let mut set = BrightnessSet::new_all_dark(n);
        let mut cache = BrightCache::new();
        // One full conditional sweep seeds the brightness state and cache.
        let th = full_slice(&theta0, target.dim())?;
        for idx in 0..n {
            let lb = eval_likbound(model, data, bound, idx, th, &mut meter)?;
            if rng.random_bool(lb.bright_prob()) {
                set.brighten(idx);
                cache.insert(idx, lb);
            }
        }
        let base_value = target.base_value(&theta0);
        let value = base_value + cached_bright_sum(&set, &cache);
        let kernel = KernelState::new(&cfg.kernel)?;
        let trace = ChainTrace::new(target.dim(), cfg.iterations);
        let mut chain = Self {
            target,
            rng,
            meter,
            set,
            cache,
            kernel,
            cur: CurrentPoint { theta: theta0, value, grad: None, aux: Vec::new() },
            base_value,
            frozen_q: None,
            iter: 0,
            trace,
            cfg,
        };
        chain.meter.end_iteration();
        if chain.cfg.burn_in == 0 {
            chain.freeze_q();
        }
        Ok(chain)
    }

    fn effective_q_dark_to_bright(&self) -> f64 {
        if let Some(q) = self.frozen_q {
            return q;
        }
        let n = self.set.n_points();
        if n == 0 {
            return 1.0;
        }
        let m = self.set.num_bright() as f64;
        (m / n as f64).max(10.0 / n as f64).min(1.0)
    }

    fn freeze_q(&mut self) {
        if let ResampleMode::Implicit { q_dark_to_bright: QDarkToBright::Auto, .. } =
            self.cfg.resample
        {
            if self.frozen_q.is_none() {
                self.frozen_q = Some(self.effective_q_dark_to_bright());
            }
        }
    }

    /// One iteration: brightness resampling, then a parameter kernel move.
    pub fn step(&mut self) -> Result<()> {
        let changed = match self.cfg.resample {
            ResampleMode::Explicit { fraction } => explicit_resample(
                self.target.model,
                self.target.data,
                self.target.bound,
                full_slice(&self.cur.theta, self.target.dim())?,
                &mut self.set,
                &mut self.cache,
                fraction,
                &mut self.rng,
                &mut self.meter,
            )?,
            ResampleMode::Implicit { q_bright_to_dark, .. } => {
                let q_db = self.effective_q_dark_to_bright();
                implicit_resample(
                    self.target.model,
                    self.target.data,
                    self.target.bound,
                    full_slice(&self.cur.theta, self.target.dim())?,
                    &mut self.set,
                    &mut self.cache,
                    q_db,
                    q_bright_to_dark,
                    &mut self.rng,
                    &mut self.meter,
                )?
            }
        };
        if changed {
            // Same theta, new brightness: the joint value is recoverable
            // from the cache without queries, but any gradient is stale.
            self.cur.value = self.base_value + cached_bright_sum(&self.set, &self.cache);
            self.cur.grad = None;
        }

        let adapt = self.cfg.kernel.adapt && (self.iter as usize) < self.cfg.burn_in;
        let accepted = kernel_step(
            &mut self.kernel,
            &FlymcView { target: &self.target, set: &self.set },
            &mut self.cur,
            &mut self.rng,
            &mut self.meter,
            adapt,
        )?;
        if accepted {
            self.base_value = self.target.base_value(&self.cur.theta);
            self.cache.clear();
            self.cache.extend(self.cur.aux.iter().copied());
            debug_assert_eq!(self.cache.len(), self.set.num_bright());
        }

        let row = TraceRow {
            iteration: self.iter,
            log_joint: self.cur.value,
            m_bright: self.set.num_bright(),
            cum_queries: self.meter.total(),
            accepted,
        };
        self.trace.record(row, &self.cur.theta, self.cfg.thin);
        self.meter.end_iteration();
        self.iter += 1;
        if self.iter as usize == self.cfg.burn_in {
            self.freeze_q();
        }
        #[cfg(debug_assertions)]
        if self.iter.is_multiple_of(1024) {
            self.spot_check()?;
        }
        Ok(())
    }

    /// Runs the remaining iterations up to the configured total.
    pub fn run(&mut self) -> Result<()> {
        while self.iter < self.cfg.iterations as u64 {
            self.step()?;
        }
        Ok(())
    }

    /// Recomputes the cached joint value from scratch (with a scratch meter,
    /// so accounting is unaffected) and checks it against the incremental
    /// one. Debug builds call this periodically.
    #[cfg(debug_assertions)]
    fn spot_check(&self) -> Result<()> {
        let mut scratch = QueryMeter::new();
        let (fresh, _) = self.target.log_joint(&self.cur.theta, &self.set, &mut scratch)?;
        let tol = 1e-8 * fresh.abs().max(1.0);
        assert!(
            (fresh - self.cur.value).abs() <= tol || (fresh == self.cur.value),
            "cached log joint {} drifted from fresh {} at iteration {}",
            self.cur.value,
            fresh,
            self.iter
        );
        Ok(())
    }

    pub fn trace(&self) -> &ChainTrace {
        &self.trace
    }

    pub fn into_trace(self) -> ChainTrace {
        self.trace
    }

    pub fn meter(&self) -> &QueryMeter {
        &self.meter
    }

    pub fn bright_set(&self) -> &BrightnessSet {
        &self.set
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.cur.theta
    }

    pub fn log_joint(&self) -> f64 {
        self.cur.value
    }

    /// Kernel step size (or slice width) after any adaptation so far.
    pub fn kernel_scale(&self) -> f64 {
        self.kernel.scale()
    }

    /// The frozen auto dark-to-bright rate, once burn-in has ended.
    pub fn frozen_q_dark_to_bright(&self) -> Option<f64> {
        self.frozen_q
    }

    pub fn config(&self) -> &FlymcChainConfig {
        &self.cfg
    }
}

fn cached_bright_sum(set: &BrightnessSet, cache: &BrightCache) -> f64 {
    // Iterate in set order, never HashMap order, so the sum is reproducible.
    set.bright_indices()
        .iter()
        .map(|n| ln_expm1(cache.get(n).expect("cache covers bright set").delta()))
        .sum()
}

fn full_slice(theta: &Array1<f64>, dim: usize) -> Result<&[f64]> {
    if theta.len() != dim {
        return Err(Error::InvalidConfig(format!(
            "theta has length {} but the model needs {dim}",
            theta.len()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "theta" });
    }
    Ok(theta.as_slice().expect("contiguous theta"))
}

/// Conventional MCMC over the full posterior; every density evaluation
/// costs `N` queries.
pub struct FullChain<'a> {
    target: FullTarget<'a>,
    cfg: FullChainConfig,
    rng: ChaCha8Rng,
    meter: QueryMeter,
    kernel: KernelState,
    cur: CurrentPoint<()>,
    n_points: usize,
    iter: u64,
    trace: ChainTrace,
}

impl<'a> FullChain<'a> {
    pub fn new(
        model: &'a Model,
        data: &'a Dataset,
        prior: &'a Prior,
        cfg: FullChainConfig,
        theta0: Array1<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        let target = FullTarget::new(model, data, prior, cfg.temper)?;
        let mut meter = QueryMeter::new();
        let (value, ()) = target.value(&theta0, &mut meter)?;
        let kernel = KernelState::new(&cfg.kernel)?;
        let trace = ChainTrace::new(target.dim(), cfg.iterations);
        let mut chain = Self {
            target,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            meter,
            kernel,
            cur: CurrentPoint { theta: theta0, value, grad: None, aux: () },
            n_points: data.n_points(),
            iter: 0,
            trace,
            cfg,
        };
        chain.meter.end_iteration();
        Ok(chain)
    }

    pub fn step(&mut self) -> Result<()> {
        let adapt = self.cfg.kernel.adapt && (self.iter as usize) < self.cfg.burn_in;
        let accepted = kernel_step(
            &mut self.kernel,
            &self.target,
            &mut self.cur,
            &mut self.rng,
            &mut self.meter,
            adapt,
        )?;
        let row = TraceRow {
            iteration: self.iter,
            log_joint: self.cur.value,
            m_bright: self.n_points,
            cum_queries: self.meter.total(),
            accepted,
        };
        self.trace.record(row, &self.cur.theta, self.cfg.thin);
        self.meter.end_iteration();
        self.iter += 1;
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        while self.iter < self.cfg.iterations as u64 {
            self.step()?;
        }
        Ok(())
    }

    pub fn trace(&self) -> &ChainTrace {
        &self.trace
    }

    pub fn into_trace(self) -> ChainTrace {
        self.trace
    }

    pub fn meter(&self) -> &QueryMeter {
        &self.meter
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.cur.theta
    }

    pub fn kernel_scale(&self) -> f64 {
        self.kernel.scale()
    }
}
