//! Experiment configuration: one JSON document describes a complete run,
//! and the echoed copy in every artifact directory is enough to reproduce
//! it byte for byte.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use flymc::bounds::{BoundSpec, SgdConfig, Tightness};
use flymc::model::{Model, Prior};
use flymc::sampling::{KernelConfig, KernelKind, ResampleMode};

/// Model family selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySpec {
    Logistic,
    Softmax,
    RobustT,
}

/// Prior selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Gaussian,
    Laplace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { kind: PriorKind::Gaussian, scale: 2.0 }
    }
}

/// Parameter kernel selector, mirrored from the sampler configs in a
/// JSON-friendly shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    RandomWalkMh {
        step: f64,
        #[serde(default)]
        target_accept: Option<f64>,
    },
    Mala {
        step: f64,
        #[serde(default)]
        target_accept: Option<f64>,
    },
    Slice { width: f64, max_step_out: u32 },
}

impl KernelSpec {
    pub fn to_kernel_config(self) -> KernelConfig {
        match self {
            KernelSpec::RandomWalkMh { step, target_accept } => KernelConfig {
                kind: KernelKind::RandomWalkMh { step },
                target_accept,
                adapt: true,
            },
            KernelSpec::Mala { step, target_accept } => {
                KernelConfig { kind: KernelKind::Mala { step }, target_accept, adapt: true }
            }
            KernelSpec::Slice { width, max_step_out } => KernelConfig {
                kind: KernelKind::Slice { width, max_step_out },
                target_accept: None,
                adapt: true,
            },
        }
    }
}

/// Brightness resampling selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ResampleSpec {
    Explicit { fraction: f64 },
    /// `q_dark_to_bright: None` means the auto rate (tracked during
    /// burn-in, then frozen).
    Implicit {
        #[serde(default)]
        q_dark_to_bright: Option<f64>,
        q_bright_to_dark: f64,
    },
}

impl ResampleSpec {
    pub fn to_resample_mode(self) -> flymc::Result<ResampleMode> {
        match self {
            ResampleSpec::Explicit { fraction } => ResampleMode::explicit(fraction),
            ResampleSpec::Implicit { q_dark_to_bright: Some(q), q_bright_to_dark } => {
                ResampleMode::implicit_fixed(q, q_bright_to_dark)
            }
            ResampleSpec::Implicit { q_dark_to_bright: None, q_bright_to_dark } => {
                ResampleMode::implicit_auto(q_bright_to_dark)
            }
        }
    }
}

/// One chain in the comparison. Kernel, iteration counts, and seed come
/// from the surrounding config; this picks target and bound handling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum AlgorithmSpec {
    /// Conventional MCMC over the full posterior.
    FullMcmc,
    /// Full-data chain with a tempered likelihood: a deliberately wrong
    /// target used as a negative control for the moment diagnostics.
    TemperedFullMcmc { temper: f64 },
    /// Subsampling chain with the fixed, untuned bound.
    UntunedFlymc,
    /// Subsampling chain with the bound tightened at a MAP estimate.
    MapTunedFlymc,
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::FullMcmc => "full_mcmc",
            AlgorithmSpec::TemperedFullMcmc { .. } => "tempered_full_mcmc",
            AlgorithmSpec::UntunedFlymc => "untuned_flymc",
            AlgorithmSpec::MapTunedFlymc => "map_tuned_flymc",
        }
    }
}

/// Synthetic data generation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Scale of the true-parameter draw (isotropic Gaussian).
    pub param_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { param_scale: 1.0 }
    }
}

/// Rectangular grid request for the quadrature oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_dim: usize,
}

fn default_thin() -> usize {
    1
}

fn default_untuned_xi() -> f64 {
    1.5
}

fn default_algorithms() -> Vec<AlgorithmSpec> {
    vec![AlgorithmSpec::FullMcmc, AlgorithmSpec::UntunedFlymc, AlgorithmSpec::MapTunedFlymc]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("artifacts")
}

/// The complete experiment description. `seed` is mandatory: every random
/// choice in the run derives from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilySpec,
    pub n: usize,
    pub d: usize,
    /// Softmax class count; must be absent for other families.
    #[serde(default)]
    pub n_classes: Option<usize>,
    /// Robust-regression degrees of freedom; absent elsewhere.
    #[serde(default)]
    pub nu: Option<f64>,
    /// Robust-regression noise scale; absent elsewhere.
    #[serde(default)]
    pub noise_scale: Option<f64>,
    #[serde(default)]
    pub prior: PriorSpec,
    /// Tightness anchor of the untuned bound (margin for logistic,
    /// residual for robust regression; ignored by softmax, whose untuned
    /// bound expands around zero).
    #[serde(default = "default_untuned_xi")]
    pub untuned_xi: f64,
    pub kernel: KernelSpec,
    pub resample: ResampleSpec,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    pub seed: u64,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    /// Grid for the quadrature oracle; defaulted when the parameter space
    /// is low-dimensional, skipped otherwise.
    #[serde(default)]
    pub oracle_grid: Option<GridSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// The desk-scale default experiment for a family: big enough to show
    /// bright-fraction effects, small enough for minute-scale runs.
    pub fn desk_default(family: FamilySpec, seed: u64) -> Self {
        let (n, d, n_classes, nu, noise_scale) = match family {
            FamilySpec::Logistic => (2000, 5, None, None, None),
            FamilySpec::Softmax => (1500, 5, Some(3), None, None),
            FamilySpec::RobustT => (5000, 5, None, Some(4.0), Some(1.0)),
        };
        Self {
            family,
            n,
            d,
            n_classes,
            nu,
            noise_scale,
            prior: PriorSpec::default(),
            untuned_xi: default_untuned_xi(),
            kernel: KernelSpec::RandomWalkMh { step: 0.05, target_accept: None },
            resample: ResampleSpec::Implicit { q_dark_to_bright: None, q_bright_to_dark: 0.5 },
            iterations: 30_000,
            burn_in: 5_000,
            thin: 1,
            seed,
            algorithms: default_algorithms(),
            sgd: SgdConfig::default(),
            synthetic: SyntheticSpec::default(),
            oracle_grid: None,
            output_dir: default_output_dir(),
        }
    }

    /// Collects every semantic problem at once; an empty list means valid.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match self.family {
            FamilySpec::Softmax => match self.n_classes {
                None => problems.push("softmax needs n_classes".into()),
                Some(k) if k < 2 => {
                    problems.push(format!("n_classes must be at least 2, got {k}"))
                }
                _ => {}
            },
            _ => {
                if self.n_classes.is_some() {
                    problems.push(format!(
                        "n_classes only applies to softmax, not {:?}",
                        self.family
                    ));
                }
            }
        }
        match self.family {
            FamilySpec::RobustT => {
                match self.nu {
                    None => problems.push("robust_t needs nu".into()),
                    Some(v) if !(v.is_finite() && v > 0.0) => {
                        problems.push(format!("nu must be positive, got {v}"))
                    }
                    _ => {}
                }
                match self.noise_scale {
                    None => problems.push("robust_t needs noise_scale".into()),
                    Some(v) if !(v.is_finite() && v > 0.0) => {
                        problems.push(format!("noise_scale must be positive, got {v}"))
                    }
                    _ => {}
                }
            }
            _ => {
                if self.nu.is_some() || self.noise_scale.is_some() {
                    problems.push(format!(
                        "nu/noise_scale only apply to robust_t, not {:?}",
                        self.family
                    ));
                }
            }
        }
        if self.d == 0 {
            problems.push("d must be at least 1".into());
        }
        if !(self.prior.scale.is_finite() && self.prior.scale > 0.0) {
            problems.push(format!("prior scale must be positive, got {}", self.prior.scale));
        }
        if !(self.untuned_xi.is_finite() && self.untuned_xi > 0.0) {
            problems.push(format!("untuned_xi must be positive, got {}", self.untuned_xi));
        }
        if let Err(e) = self.kernel.to_kernel_config().validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.resample.to_resample_mode() {
            problems.push(e.to_string());
        }
        if self.iterations == 0 {
            problems.push("iterations must be positive".into());
        } else if self.burn_in >= self.iterations {
            problems.push(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 {
            problems.push("thin must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            problems.push("at least one algorithm is required".into());
        }
        for alg in &self.algorithms {
            if let AlgorithmSpec::TemperedFullMcmc { temper } = alg {
                if !(temper.is_finite() && *temper > 0.0) {
                    problems.push(format!("temper must be positive, got {temper}"));
                } else if *temper == 1.0 {
                    problems.push(
                        "temper = 1 is not a negative control; use full_mcmc instead".into(),
                    );
                }
            }
        }
        if !(self.synthetic.param_scale.is_finite() && self.synthetic.param_scale >= 0.0) {
            problems.push(format!(
                "param_scale must be non-negative, got {}",
                self.synthetic.param_scale
            ));
        }
        if let Some(grid) = &self.oracle_grid {
            if grid.lo.len() != grid.hi.len() {
                problems.push(format!(
                    "oracle grid has {} lower and {} upper bounds",
                    grid.lo.len(),
                    grid.hi.len()
                ));
            } else {
                for (j, (lo, hi)) in grid.lo.iter().zip(&grid.hi).enumerate() {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        problems.push(format!("oracle grid dim {j}: need lo < hi, got [{lo}, {hi}]"));
                    }
                }
            }
            if grid.points_per_dim < 2 {
                problems.push("oracle grid needs at least 2 points per dimension".into());
            }
        }
        problems
    }

    /// Validates, reporting every problem in one error.
    pub fn validate(&self) -> anyhow::Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            anyhow::bail!("invalid experiment config: {}", problems.join("; "))
        }
    }

    pub fn model(&self) -> flymc::Result<Model> {
        match self.family {
            FamilySpec::Logistic => Ok(Model::Logistic),
            FamilySpec::Softmax => Model::softmax(self.n_classes.unwrap_or(0)),
            FamilySpec::RobustT => {
                Model::robust_t(self.nu.unwrap_or(f64::NAN), self.noise_scale.unwrap_or(f64::NAN))
            }
        }
    }

    pub fn prior(&self) -> flymc::Result<Prior> {
        match self.prior.kind {
            PriorKind::Gaussian => Prior::gaussian(self.prior.scale),
            PriorKind::Laplace => Prior::laplace(self.prior.scale),
        }
    }

    /// The untuned bound for this family at the configured tightness.
    pub fn untuned_bound(&self) -> BoundSpec {
        match self.family {
            FamilySpec::Logistic => {
                BoundSpec::JaakkolaJordan { xi: Tightness::Shared(self.untuned_xi) }
            }
            FamilySpec::Softmax => {
                let k = self.n_classes.unwrap_or(2);
                BoundSpec::Bohning { reference: vec![0.0; k * self.d] }
            }
            FamilySpec::RobustT => BoundSpec::TTangent { xi: Tightness::Shared(self.untuned_xi) },
        }
    }

    /// Resolved output directory: the `FLYMC_OUTPUT_DIR` environment
    /// variable wins over the config field (the only environment override).
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os("FLYMC_OUTPUT_DIR") {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }
}
