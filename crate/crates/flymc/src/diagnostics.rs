//! Cost metering and output-quality diagnostics.
//!
//! The exchange rate between algorithms is *likelihood queries per effective
//! sample*: how many per-datum likelihood evaluations buy one independent
//! draw. [`QueryMeter`] counts the queries; [`effective_sample_size`] counts
//! the draws; the report types combine them and compare moments across runs.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts likelihood queries. Every path that evaluates a per-datum
/// likelihood bumps a meter, so totals are exact by construction.
///
/// Call [`QueryMeter::end_iteration`] once per chain iteration to record the
/// per-iteration delta series alongside the running total.
#[derive(Clone, Debug, Default)]
pub struct QueryMeter {
    total: u64,
    deltas: Vec<u64>,
    last_mark: u64,
}

impl QueryMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bump(&mut self, queries: u64) {
        self.total += queries;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Closes the current iteration and returns its query count.
    pub fn end_iteration(&mut self) -> u64 {
        let delta = self.total - self.last_mark;
        self.deltas.push(delta);
        self.last_mark = self.total;
        delta
    }

    /// Per-iteration query counts, one entry per closed iteration.
    pub fn deltas(&self) -> &[u64] {
        &self.deltas
    }

    /// Mean queries per closed iteration; 0 if none were closed.
    pub fn avg_per_iteration(&self) -> f64 {
        if self.deltas.is_empty() {
            0.0
        } else {
            self.deltas.iter().sum::<u64>() as f64 / self.deltas.len() as f64
        }
    }
}

/// Effective sample size of a scalar series via the initial monotone
/// positive sequence estimator: autocorrelations are summed in lag pairs,
/// truncated at the first non-positive pair, and forced non-increasing.
/// The result is clamped to `(0, len]`; a series that mixes better than
/// independent (antithetic) reports `len`, not more.
///
/// Errors on constant series (undefined) and on series shorter than 100
/// (the estimator is meaningless there).
pub fn effective_sample_size(series: &[f64]) -> Result<f64> {
    let t = series.len();
    if t < 100 {
        return Err(Error::SeriesTooShort { len: t, min: 100 });
    }
    let tf = t as f64;
    let mean = series.iter().sum::<f64>() / tf;
    let autocov = |k: usize| -> f64 {
        series[..t - k]
            .iter()
            .zip(&series[k..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / tf
    };
    let gamma0 = autocov(0);
    if gamma0 == 0.0 {
        return Err(Error::ZeroVariance);
    }

    let mut pair_sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0usize;
    while 2 * m + 1 < t {
        let pair = (autocov(2 * m) + autocov(2 * m + 1)) / gamma0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        pair_sum += pair;
        prev = pair;
        m += 1;
    }

    // pair_sum includes rho_0 = 1, so tau = 2*pair_sum - 1.
    let tau = 2.0 * pair_sum - 1.0;
    if tau <= 1.0 {
        return Ok(tf);
    }
    Ok((tf / tau).min(tf))
}

/// Integrated autocorrelation time implied by [`effective_sample_size`].
pub fn integrated_autocorr_time(series: &[f64]) -> Result<f64> {
    Ok(series.len() as f64 / effective_sample_size(series)?)
}

/// Per-dimension ESS with conservative (min) and typical (median) pooling.
#[derive(Clone, Debug)]
pub struct EssReport {
    pub per_dim: Vec<f64>,
    pub min: f64,
    pub median: f64,
}

impl EssReport {
    pub fn from_series(dims: &[Vec<f64>]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidConfig("ESS report needs at least one dimension".into()));
        }
        let per_dim: Vec<f64> =
            dims.iter().map(|s| effective_sample_size(s)).collect::<Result<_>>()?;
        let min = per_dim.iter().copied().fold(f64::INFINITY, f64::min);
        let mut sorted = per_dim.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite ESS"));
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        Ok(Self { per_dim, min, median })
    }

    /// Conservative ESS per 1000 iterations of the measured series.
    pub fn per_1000(&self, iterations: usize) -> f64 {
        if iterations == 0 {
            0.0
        } else {
            1000.0 * self.min / iterations as f64
        }
    }
}

/// Likelihood queries spent per effective sample, using min-pooled ESS.
pub fn queries_per_effective_sample(total_queries: u64, ess: &EssReport) -> f64 {
    total_queries as f64 / ess.min
}

/// Cost ratio baseline/candidate in queries per effective sample. Above 1
/// means the candidate is cheaper per independent draw.
pub fn speedup(baseline_queries_per_es: f64, candidate_queries_per_es: f64) -> f64 {
    baseline_queries_per_es / candidate_queries_per_es
}

/// First two moments of each parameter dimension, with the ESS that backs
/// their standard errors. `ess: None` marks exact values (quadrature
/// oracles), which enter comparisons with zero standard error.
#[derive(Clone, Debug)]
pub struct MomentSummary {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub ess: Option<Vec<f64>>,
}

impl MomentSummary {
    pub fn exact(means: Vec<f64>, variances: Vec<f64>) -> Self {
        Self { means, variances, ess: None }
    }

    /// Sample moments plus per-dimension ESS from raw series.
    pub fn from_series(dims: &[Vec<f64>]) -> Result<Self> {
        let report = EssReport::from_series(dims)?;
        let mut means = Vec::with_capacity(dims.len());
        let mut variances = Vec::with_capacity(dims.len());
        for series in dims {
            let n = series.len() as f64;
            let mean = series.iter().sum::<f64>() / n;
            let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push(mean);
            variances.push(var);
        }
        Ok(Self { means, variances, ess: Some(report.per_dim) })
    }

    fn mean_se(&self, dim: usize) -> f64 {
        match &self.ess {
            None => 0.0,
            Some(ess) => (self.variances[dim] / ess[dim]).sqrt(),
        }
    }

    fn variance_se(&self, dim: usize) -> f64 {
        match &self.ess {
            None => 0.0,
            // Gaussian approximation: var(s^2) ~ 2 sigma^4 / n_eff.
            Some(ess) => self.variances[dim] * (2.0 / ess[dim]).sqrt(),
        }
    }
}

/// One compared moment: the discrepancy in combined standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentDiscrepancy {
    pub dim: usize,
    pub moment: String,
    pub a: f64,
    pub b: f64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub rows: Vec<MomentDiscrepancy>,
    pub any_flagged: bool,
}

/// Number of combined standard errors beyond which a moment discrepancy is
/// flagged as statistically implausible.
pub const MOMENT_FLAG_THRESHOLD: f64 = 4.0;

/// Compares first and second moments of two summaries dimension by
/// dimension. Discrepancies beyond [`MOMENT_FLAG_THRESHOLD`] combined
/// standard errors are flagged; agreement within noise never is.
pub fn moment_comparison(a: &MomentSummary, b: &MomentSummary) -> Result<MomentReport> {
    if a.means.len() != b.means.len() {
        return Err(Error::InvalidConfig(format!(
            "moment summaries have {} and {} dimensions",
            a.means.len(),
            b.means.len()
        )));
    }
    let mut rows = Vec::with_capacity(2 * a.means.len());
    for dim in 0..a.means.len() {
        for (moment, va, vb, se) in [
            ("mean", a.means[dim], b.means[dim], (a.mean_se(dim), b.mean_se(dim))),
            (
                "variance",
                a.variances[dim],
                b.variances[dim],
                (a.variance_se(dim), b.variance_se(dim)),
            ),
        ] {
            let combined = (se.0 * se.0 + se.1 * se.1).sqrt();
            let delta = (va - vb).abs();
            let z = if delta == 0.0 { 0.0 } else { delta / combined };
            rows.push(MomentDiscrepancy {
                dim,
                moment: moment.into(),
                a: va,
                b: vb,
                z,
                // A non-finite z — a real gap with zero combined error, or
                // NaN moments — counts as flagged, never as agreement.
                flagged: z > MOMENT_FLAG_THRESHOLD || z.is_nan(),
            });
        }
    }
    let any_flagged = rows.iter().any(|r| r.flagged);
    Ok(MomentReport { rows, any_flagged })
}

/// Per-algorithm summary serialized by the experiment driver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub avg_queries_per_iter: f64,
    pub ess_per_1000: f64,
    pub speedup: Option<f64>,
    pub moment_flags: Vec<String>,
}
