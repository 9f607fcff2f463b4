//! Seed-deterministic synthetic datasets: a true parameter drawn from an
//! isotropic Gaussian, standard-normal features, and targets drawn from the
//! model's own likelihood. The true parameter goes into the dataset
//! metadata so downstream checks can see what generated the data.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use flymc::data::Dataset;
use flymc::model::Model;

/// Generation record for a synthetic dataset, written alongside the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub family: String,
    pub n: usize,
    pub d: usize,
    pub n_classes: Option<usize>,
    pub seed: u64,
    pub param_scale: f64,
    pub theta_star: Vec<f64>,
}

impl DatasetMeta {
    pub fn write(&self, path: impl AsRef<Path>) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Draws a dataset of `n` points with `d` features from `model`'s
/// likelihood at a true parameter `theta* ~ N(0, param_scale^2 I)`.
pub fn generate_synthetic(
    model: &Model,
    n: usize,
    d: usize,
    param_scale: f64,
    seed: u64,
) -> flymc::Result<(Dataset, Array1<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = model.param_dim(d);
    let theta_star =
        Array1::from_shape_fn(p, |_| param_scale * rng.sample::<f64, _>(StandardNormal));

    let mut feats = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let target = match model {
            Model::Logistic => {
                let m: f64 = (0..d).map(|j| theta_star[j] * x[j]).sum();
                let p_pos = 1.0 / (1.0 + (-m).exp());
                if rng.random_bool(p_pos) {
                    1.0
                } else {
                    -1.0
                }
            }
            Model::Softmax { n_classes } => {
                let k = *n_classes;
                let mut scores: Vec<f64> = (0..k)
                    .map(|c| (0..d).map(|j| theta_star[c * d + j] * x[j]).sum())
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let u: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut class = k;
                for (c, s) in scores.iter().enumerate() {
                    acc += s;
                    if u < acc {
                        class = c + 1; // classes are 1-based
                        break;
                    }
                }
                // Rounding can leave u barely above the final cumulative sum.
                if class > k {
                    class = k;
                }
                class as f64
            }
            Model::RobustT { nu, noise_scale } => {
                let m: f64 = (0..d).map(|j| theta_star[j] * x[j]).sum();
                let t: f64 = rng.sample(StudentT::new(*nu).expect("validated nu"));
                m + noise_scale * t
            }
        };
        feats.extend(x);
        targets.push(target);
    }

    let n_classes = match model {
        Model::Softmax { n_classes } => Some(*n_classes),
        _ => None,
    };
    let data = Dataset::new(
        Array2::from_shape_vec((n, d), feats).expect("row-major synthetic features"),
        Array1::from_vec(targets),
        n_classes,
    )?;
    Ok((data, theta_star))
}
