//! Grid-quadrature oracle for low-dimensional posteriors: evaluates the
//! full log posterior on a rectangular grid, normalizes by trapezoid
//! quadrature, and reports exact posterior moments for chains to be judged
//! against. Only feasible for one or two parameters, and errors beyond
//! that.

use std::path::Path;

use anyhow::{bail, Context};
use ndarray::Array1;

use crate::config::GridSpec;
use flymc::data::Dataset;
use flymc::diagnostics::{MomentSummary, QueryMeter};
use flymc::model::{full_log_posterior, Model, Prior};

/// Normalized posterior table over a rectangular grid.
#[derive(Debug)]
pub struct GridOracle {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub log_normalizer: f64,
    axes: Vec<Vec<f64>>,
    /// Normalized log density at each grid point, row-major over axes.
    log_density: Vec<f64>,
    /// Trapezoid weight per grid point, row-major; sums against the
    /// normalized density to one.
    weights: Vec<f64>,
}

fn axis(lo: f64, hi: f64, pts: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (pts - 1) as f64;
    let xs: Vec<f64> = (0..pts).map(|i| lo + h * i as f64).collect();
    let ws: Vec<f64> =
        (0..pts).map(|i| if i == 0 || i == pts - 1 { 0.5 * h } else { h }).collect();
    (xs, ws)
}

/// The grid used when the config does not pin one: generous bounds around
/// the origin, fine enough that quadrature error is negligible next to
/// Monte Carlo error.
pub fn default_grid(p: usize) -> GridSpec {
    GridSpec {
        lo: vec![-5.0; p],
        hi: vec![5.0; p],
        points_per_dim: if p == 1 { 401 } else { 201 },
    }
}

fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Builds the oracle. The parameter space must match the grid and have at
/// most two dimensions.
pub fn grid_posterior_oracle(
    data: &Dataset,
    model: &Model,
    prior: &Prior,
    grid: &GridSpec,
) -> anyhow::Result<GridOracle> {
    let p = model.param_dim(data.n_features());
    if p > 2 {
        bail!("grid oracle only supports 1 or 2 parameters, model has {p}");
    }
    if grid.lo.len() != p || grid.hi.len() != p {
        bail!("grid covers {} dimensions but the model has {p}", grid.lo.len());
    }
    if grid.points_per_dim < 2 {
        bail!("grid needs at least 2 points per dimension");
    }
    for (j, (lo, hi)) in grid.lo.iter().zip(&grid.hi).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            bail!("grid dim {j}: need finite lo < hi, got [{lo}, {hi}]");
        }
    }

    let pts = grid.points_per_dim;
    let mut axes = Vec::with_capacity(p);
    let mut axis_weights = Vec::with_capacity(p);
    for j in 0..p {
        let (xs, ws) = axis(grid.lo[j], grid.hi[j], pts);
        axes.push(xs);
        axis_weights.push(ws);
    }

    let total = pts.pow(p as u32);
    let mut log_post = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut scratch = QueryMeter::new();
    let mut theta = Array1::zeros(p);
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        // Row-major: the last axis varies fastest.
        for j in (0..p).rev() {
            let idx = rem % pts;
            rem /= pts;
            theta[j] = axes[j][idx];
            w *= axis_weights[j][idx];
        }
        let lp = full_log_posterior(&theta, data, model, prior, &mut scratch)
            .with_context(|| format!("posterior evaluation at {theta}"))?;
        log_post.push(lp);
        weights.push(w);
    }

    let weighted: Vec<f64> =
        log_post.iter().zip(&weights).map(|(lp, w)| lp + w.ln()).collect();
    let log_normalizer = logsumexp(&weighted);
    if !log_normalizer.is_finite() {
        bail!("posterior mass on the grid is zero or non-finite");
    }
    let log_density: Vec<f64> = log_post.iter().map(|lp| lp - log_normalizer).collect();

    let mut means = vec![0.0; p];
    let mut second = vec![0.0; p];
    for flat in 0..total {
        let dens = log_density[flat].exp() * weights[flat];
        let mut rem = flat;
        for j in (0..p).rev() {
            let idx = rem % pts;
            rem /= pts;
            means[j] += dens * axes[j][idx];
            second[j] += dens * axes[j][idx] * axes[j][idx];
        }
    }
    let variances: Vec<f64> =
        means.iter().zip(&second).map(|(m, s)| s - m * m).collect();

    Ok(GridOracle { means, variances, log_normalizer, axes, log_density, weights })
}

impl GridOracle {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Total probability mass of the normalized table; one up to
    /// quadrature rounding.
    pub fn total_mass(&self) -> f64 {
        self.log_density.iter().zip(&self.weights).map(|(ld, w)| ld.exp() * w).sum()
    }

    /// Exact-moment summary (zero standard error) for comparisons.
    pub fn moment_summary(&self) -> MomentSummary {
        MomentSummary::exact(self.means.clone(), self.variances.clone())
    }

    /// Writes the normalized density table: `theta_0[,theta_1],density`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())
            .with_context(|| format!("creating {}", path.as_ref().display()))?;
        let p = self.dim();
        let mut header: Vec<String> = (0..p).map(|j| format!("theta_{j}")).collect();
        header.push("density".into());
        w.write_record(&header)?;
        let pts = self.axes[0].len();
        for (flat, ld) in self.log_density.iter().enumerate() {
            let mut rem = flat;
            let mut record = vec![String::new(); p + 1];
            for j in (0..p).rev() {
                let idx = rem % pts;
                rem /= pts;
                record[j] = self.axes[j][idx].to_string();
            }
            record[p] = ld.exp().to_string();
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}
