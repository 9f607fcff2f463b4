//! Executes one configured experiment end to end: synthesize data, tune
//! bounds, run every requested chain, and write a deterministic artifact
//! directory (traces, summaries, comparisons, and the echoed config).
//!
//! Byte-for-byte reproducibility is a hard requirement: rerunning the same
//! config produces identical files. All iteration orders are fixed, and
//! nothing serialized passes through hash-ordered containers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ndarray::Array1;
use serde::Serialize;

use crate::config::{AlgorithmSpec, ExperimentConfig};
use crate::oracle::{default_grid, grid_posterior_oracle, GridOracle};
use crate::synthetic::{generate_synthetic, DatasetMeta};
use flymc::bounds::{collapse, map_tune, BoundSpec, CollapsedBound};
use flymc::brightness::BrightnessSet;
use flymc::data::Dataset;
use flymc::diagnostics::{
    moment_comparison, queries_per_effective_sample, speedup, AlgorithmSummary, EssReport,
    MomentReport, MomentSummary, QueryMeter,
};
use flymc::model::{Model, Prior};
use flymc::sampling::{ChainTrace, FlymcChain, FlymcChainConfig, FullChain, FullChainConfig};

/// What one finished experiment reports back to the caller.
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub summaries: Vec<AlgorithmSummary>,
    /// Which moment reference the flags were computed against:
    /// `"oracle"`, `"full_mcmc"`, or `"none"`.
    pub reference: String,
    pub any_flagged: bool,
}

struct TunedState {
    bound: BoundSpec,
    collapsed: CollapsedBound,
    anchor: Array1<f64>,
    queries: u64,
}

/// Shared read-only inputs for the per-algorithm workers.
struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a Model,
    prior: &'a Prior,
    data: &'a Dataset,
    untuned: Option<&'a (BoundSpec, CollapsedBound)>,
    tuned: Option<&'a TunedState>,
}

struct ChainOutput {
    name: String,
    trace: ChainTrace,
    /// Likelihood queries spent end to end, bound tuning included.
    total_queries: u64,
    avg_queries_per_iter: f64,
    bright: Option<BrightnessSet>,
}

/// Each chain gets its own seed stream, decorrelated from the data seed
/// and from the other chains by its position in the algorithm list.
fn chain_seed(base: u64, idx: usize) -> u64 {
    base.wrapping_add(1000 + 7919 * idx as u64)
}

/// File-stem names for the algorithm list; repeats get a numeric suffix so
/// artifacts never collide.
fn unique_names(specs: &[AlgorithmSpec]) -> Vec<String> {
    let mut names = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let base = spec.name();
        let prior_uses = specs[..i].iter().filter(|s| s.name() == base).count();
        if prior_uses == 0 {
            names.push(base.to_string());
        } else {
            names.push(format!("{base}_{}", prior_uses + 1));
        }
    }
    names
}

fn run_full(ctx: &Ctx<'_>, name: &str, seed: u64, temper: f64) -> anyhow::Result<ChainOutput> {
    let p = ctx.model.param_dim(ctx.data.n_features());
    let chain_cfg = FullChainConfig {
        kernel: ctx.cfg.kernel.to_kernel_config(),
        iterations: ctx.cfg.iterations,
        burn_in: ctx.cfg.burn_in,
        thin: ctx.cfg.thin,
        seed,
        temper,
    };
    let mut chain =
        FullChain::new(ctx.model, ctx.data, ctx.prior, chain_cfg, Array1::zeros(p))?;
    chain.run()?;
    let total_queries = chain.meter().total();
    let avg_queries_per_iter = chain.meter().avg_per_iteration();
    Ok(ChainOutput {
        name: name.to_string(),
        trace: chain.into_trace(),
        total_queries,
        avg_queries_per_iter,
        bright: None,
    })
}

fn run_flymc(
    ctx: &Ctx<'_>,
    name: &str,
    seed: u64,
    bound: &BoundSpec,
    collapsed: &CollapsedBound,
    tuning_queries: u64,
) -> anyhow::Result<ChainOutput> {
    let p = ctx.model.param_dim(ctx.data.n_features());
    let chain_cfg = FlymcChainConfig {
        kernel: ctx.cfg.kernel.to_kernel_config(),
        resample: ctx.cfg.resample.to_resample_mode()?,
        iterations: ctx.cfg.iterations,
        burn_in: ctx.cfg.burn_in,
        thin: ctx.cfg.thin,
        seed,
    };
    let mut chain = FlymcChain::new(
        ctx.model,
        ctx.data,
        ctx.prior,
        bound,
        collapsed,
        chain_cfg,
        Array1::zeros(p),
    )?;
    chain.run()?;
    // Tuning cost is charged to the algorithm that needed it, so its
    // per-effective-sample price is end to end, not just the chain loop.
    let total_queries = chain.meter().total() + tuning_queries;
    let avg_queries_per_iter = chain.meter().avg_per_iteration();
    let bright = Some(chain.bright_set().clone());
    Ok(ChainOutput {
        name: name.to_string(),
        trace: chain.into_trace(),
        total_queries,
        avg_queries_per_iter,
        bright,
    })
}

fn run_algorithm(
    ctx: &Ctx<'_>,
    spec: &AlgorithmSpec,
    name: &str,
    seed: u64,
) -> anyhow::Result<ChainOutput> {
    match spec {
        AlgorithmSpec::FullMcmc => run_full(ctx, name, seed, 1.0),
        AlgorithmSpec::TemperedFullMcmc { temper } => run_full(ctx, name, seed, *temper),
        AlgorithmSpec::UntunedFlymc => {
            let (bound, collapsed) =
                ctx.untuned.context("untuned bound was not prepared")?;
            run_flymc(ctx, name, seed, bound, collapsed, 0)
        }
        AlgorithmSpec::MapTunedFlymc => {
            let tuned = ctx.tuned.context("tuned bound was not prepared")?;
            run_flymc(ctx, name, seed, &tuned.bound, &tuned.collapsed, tuned.queries)
        }
    }
}

/// Runs the chains, one per algorithm, in the configured order. With the
/// `parallel` feature the chains run concurrently; outputs are collected
/// in list order either way, so artifacts do not depend on scheduling.
fn run_all(ctx: &Ctx<'_>, names: &[String]) -> anyhow::Result<Vec<ChainOutput>> {
    let jobs: Vec<(usize, &AlgorithmSpec, &String)> = ctx
        .cfg
        .algorithms
        .iter()
        .zip(names)
        .enumerate()
        .map(|(i, (s, n))| (i, s, n))
        .collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(i, spec, name)| run_algorithm(ctx, spec, name, chain_seed(ctx.cfg.seed, *i)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter()
            .map(|(i, spec, name)| run_algorithm(ctx, spec, name, chain_seed(ctx.cfg.seed, *i)))
            .collect()
    }
}

/// Serializes pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path.as_ref(), text)
        .with_context(|| format!("writing {}", path.as_ref().display()))?;
    Ok(())
}

/// The tuned bound as serialized to `tuned_bound.json`.
#[derive(Serialize, serde::Deserialize)]
pub struct TunedBoundRecord {
    pub bound: BoundSpec,
    pub anchor: Vec<f64>,
    pub tuning_queries: u64,
}

fn flag_strings(report: &MomentReport) -> Vec<String> {
    report
        .rows
        .iter()
        .filter(|r| r.flagged)
        .map(|r| {
            format!(
                "dim {} {}: {:.6} vs reference {:.6} (z = {:.2})",
                r.dim, r.moment, r.a, r.b, r.z
            )
        })
        .collect()
}

#[derive(Serialize)]
struct MomentsRecord {
    algorithm: String,
    means: Vec<f64>,
    variances: Vec<f64>,
    /// Per-dimension effective sample sizes; absent for exact references.
    ess: Option<Vec<f64>>,
}

struct AlgStats {
    moments: MomentSummary,
    qpes: f64,
    ess_per_1000: f64,
}

/// Runs the whole experiment and writes the artifact directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutcome> {
    cfg.validate()?;
    let out = cfg.resolved_output_dir();
    fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))?;

    let model = cfg.model()?;
    let prior = cfg.prior()?;
    let (data, theta_star) =
        generate_synthetic(&model, cfg.n, cfg.d, cfg.synthetic.param_scale, cfg.seed)?;
    data.to_csv(out.join("dataset.csv"))?;
    DatasetMeta {
        family: model.family_name().to_string(),
        n: cfg.n,
        d: cfg.d,
        n_classes: data.n_classes(),
        seed: cfg.seed,
        param_scale: cfg.synthetic.param_scale,
        theta_star: theta_star.to_vec(),
    }
    .write(out.join("dataset_meta.json"))?;

    let needs_untuned =
        cfg.algorithms.iter().any(|a| matches!(a, AlgorithmSpec::UntunedFlymc));
    let needs_tuned =
        cfg.algorithms.iter().any(|a| matches!(a, AlgorithmSpec::MapTunedFlymc));

    let untuned = if needs_untuned {
        let bound = cfg.untuned_bound();
        let collapsed = collapse(&bound, &model, &data)?;
        Some((bound, collapsed))
    } else {
        None
    };

    let tuned = if needs_tuned {
        let mut meter = QueryMeter::new();
        let (bound, anchor) = map_tune(&model, &data, &prior, &cfg.sgd, &mut meter)?;
        let collapsed = collapse(&bound, &model, &data)?;
        let state =
            TunedState { bound, collapsed, anchor, queries: meter.total() };
        write_json(
            out.join("tuned_bound.json"),
            &TunedBoundRecord {
                bound: state.bound.clone(),
                anchor: state.anchor.to_vec(),
                tuning_queries: state.queries,
            },
        )?;
        Some(state)
    } else {
        None
    };

    let p = model.param_dim(cfg.d);
    let oracle: Option<GridOracle> = if p <= 2 {
        let grid = cfg.oracle_grid.clone().unwrap_or_else(|| default_grid(p));
        let orc = grid_posterior_oracle(&data, &model, &prior, &grid)?;
        orc.write_csv(out.join("oracle.csv"))?;
        Some(orc)
    } else {
        None
    };

    let ctx = Ctx {
        cfg,
        model: &model,
        prior: &prior,
        data: &data,
        untuned: untuned.as_ref(),
        tuned: tuned.as_ref(),
    };
    let names = unique_names(&cfg.algorithms);
    let outputs = run_all(&ctx, &names)?;

    for o in &outputs {
        o.trace.write_csv(out.join(format!("{}_trace.csv", o.name)))?;
        o.trace.write_theta_csv(out.join(format!("{}_theta.csv", o.name)))?;
        if let Some(set) = &o.bright {
            set.write_snapshot(out.join(format!("{}_bright.json", o.name)))?;
        }
    }

    let measured_iters = cfg.iterations - cfg.burn_in;
    let stats: Vec<AlgStats> = outputs
        .iter()
        .map(|o| {
            let series = o.trace.series_from(cfg.burn_in as u64);
            let ess = EssReport::from_series(&series)
                .with_context(|| format!("ESS for {}", o.name))?;
            let moments = MomentSummary::from_series(&series)?;
            let qpes = queries_per_effective_sample(o.total_queries, &ess);
            let ess_per_1000 = ess.per_1000(measured_iters);
            Ok(AlgStats { moments, qpes, ess_per_1000 })
        })
        .collect::<anyhow::Result<_>>()?;

    let full_idx =
        cfg.algorithms.iter().position(|a| matches!(a, AlgorithmSpec::FullMcmc));
    let (reference_moments, reference_name): (Option<MomentSummary>, &str) = match &oracle {
        Some(orc) => (Some(orc.moment_summary()), "oracle"),
        None => match full_idx {
            Some(i) => (Some(stats[i].moments.clone()), "full_mcmc"),
            None => (None, "none"),
        },
    };

    let mut summaries = Vec::with_capacity(outputs.len());
    for (i, (o, st)) in outputs.iter().zip(&stats).enumerate() {
        let is_full_baseline = full_idx == Some(i);
        let speedup_vs_full = match full_idx {
            Some(fi) if !is_full_baseline => Some(speedup(stats[fi].qpes, st.qpes)),
            _ => None,
        };
        let moment_flags = match &reference_moments {
            // Comparing the fallback reference against itself is vacuous.
            Some(_) if reference_name == "full_mcmc" && is_full_baseline => Vec::new(),
            Some(reference) => flag_strings(&moment_comparison(&st.moments, reference)?),
            None => Vec::new(),
        };
        let summary = AlgorithmSummary {
            algorithm: o.name.clone(),
            avg_queries_per_iter: o.avg_queries_per_iter,
            ess_per_1000: st.ess_per_1000,
            speedup: speedup_vs_full,
            moment_flags,
        };
        write_json(out.join(format!("{}_summary.json", o.name)), &summary)?;
        summaries.push(summary);
    }

    let mut cmp = csv::Writer::from_path(out.join("comparison.csv"))?;
    cmp.write_record([
        "algorithm",
        "avg_queries_per_iter",
        "ess_per_1000",
        "queries_per_effective_sample",
        "speedup_vs_full",
    ])?;
    for (summary, st) in summaries.iter().zip(&stats) {
        cmp.write_record(&[
            summary.algorithm.clone(),
            summary.avg_queries_per_iter.to_string(),
            summary.ess_per_1000.to_string(),
            st.qpes.to_string(),
            summary.speedup.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    cmp.flush()?;
    drop(cmp);

    let mut moment_records: Vec<MomentsRecord> = outputs
        .iter()
        .zip(&stats)
        .map(|(o, st)| MomentsRecord {
            algorithm: o.name.clone(),
            means: st.moments.means.clone(),
            variances: st.moments.variances.clone(),
            ess: st.moments.ess.clone(),
        })
        .collect();
    if let Some(orc) = &oracle {
        moment_records.push(MomentsRecord {
            algorithm: "oracle".to_string(),
            means: orc.means.clone(),
            variances: orc.variances.clone(),
            ess: None,
        });
    }
    write_json(out.join("moments.json"), &moment_records)?;
    write_json(out.join("config.json"), cfg)?;

    let any_flagged = summaries.iter().any(|s| !s.moment_flags.is_empty());
    Ok(ExperimentOutcome {
        output_dir: out,
        summaries,
        reference: reference_name.to_string(),
        any_flagged,
    })
}
