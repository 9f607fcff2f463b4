//! Parameter-update kernels, generic over any [`TargetDensity`].
//!
//! Three kernels are provided: random-walk Metropolis-Hastings, MALA, and
//! coordinate-wise slice sampling with capped stepping out. The two
//! Metropolis kernels adapt their step size by Robbins-Monro on the realized
//! acceptance indicator; the chain enables adaptation during burn-in only,
//! so the post-burn-in kernel is a fixed, valid Markov kernel.

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use super::joint::TargetDensity;
use crate::diagnostics::QueryMeter;
use crate::{Error, Result};

/// Shrinkage proposals per coordinate before the slice sampler gives up and
/// reports a numerically degenerate target.
pub const MAX_SLICE_SHRINK: usize = 1000;

const MIN_STEP: f64 = 1e-12;
const LN_STEP_MIN: f64 = -23.025850929940457; // ln(1e-10)
const LN_STEP_MAX: f64 = 23.025850929940457; // ln(1e10)

/// Which kernel to run, with its scale parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// Isotropic Gaussian random-walk proposals with the given step size.
    RandomWalkMh { step: f64 },
    /// Langevin proposals: drift half a squared step along the gradient.
    Mala { step: f64 },
    /// Coordinate-wise slice sampling: initial bracket `width`, stepping out
    /// capped at `max_step_out` expansions total per coordinate.
    Slice { width: f64, max_step_out: u32 },
}

/// Kernel choice plus adaptation policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Acceptance rate the step adaptation aims for. `None` picks the usual
    /// default for the kernel: 0.234 for random walk, 0.57 for MALA.
    pub target_accept: Option<f64>,
    /// Adapt the step during burn-in. Slice sampling ignores this: its
    /// stepping-out procedure already absorbs scale mismatch.
    pub adapt: bool,
}

impl From<KernelKind> for KernelConfig {
    fn from(kind: KernelKind) -> Self {
        Self { kind, target_accept: None, adapt: true }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::RandomWalkMh { step } | KernelKind::Mala { step } => {
                if !(step.is_finite() && step >= MIN_STEP) {
                    return Err(Error::InvalidConfig(format!(
                        "kernel step must be finite and at least {MIN_STEP}, got {step}"
                    )));
                }
            }
            KernelKind::Slice { width, max_step_out } => {
                if !(width.is_finite() && width > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "slice width must be positive and finite, got {width}"
                    )));
                }
                if max_step_out == 0 {
                    return Err(Error::InvalidConfig(
                        "slice max_step_out must be at least 1".into(),
                    ));
                }
            }
        }
        if let Some(t) = self.target_accept {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "target acceptance rate must lie in (0, 1), got {t}"
                )));
            }
        }
        Ok(())
    }

    fn resolved_target(&self) -> f64 {
        self.target_accept.unwrap_or(match self.kind {
            KernelKind::RandomWalkMh { .. } => 0.234,
            KernelKind::Mala { .. } => 0.57,
            KernelKind::Slice { .. } => 0.5, // unused
        })
    }
}

enum StepState {
    RandomWalk { ln_step: f64, target: f64 },
    Mala { ln_step: f64, target: f64 },
    Slice { width: f64, max_step_out: u32 },
}

/// Mutable kernel state: the (possibly adapted) step scale.
pub struct KernelState {
    state: StepState,
    adapt_count: u64,
}

impl KernelState {
    pub fn new(cfg: &KernelConfig) -> Result<Self> {
        cfg.validate()?;
        let target = cfg.resolved_target();
        let state = match cfg.kind {
            KernelKind::RandomWalkMh { step } => {
                StepState::RandomWalk { ln_step: step.ln(), target }
            }
            KernelKind::Mala { step } => StepState::Mala { ln_step: step.ln(), target },
            KernelKind::Slice { width, max_step_out } => StepState::Slice { width, max_step_out },
        };
        Ok(Self { state, adapt_count: 0 })
    }

    /// Current proposal scale: step size for the Metropolis kernels, bracket
    /// width for slice.
    pub fn scale(&self) -> f64 {
        match self.state {
            StepState::RandomWalk { ln_step, .. } | StepState::Mala { ln_step, .. } => {
                ln_step.exp()
            }
            StepState::Slice { width, .. } => width,
        }
    }

    fn adapt(&mut self, accepted: bool) {
        let (ln_step, target) = match &mut self.state {
            StepState::RandomWalk { ln_step, target } | StepState::Mala { ln_step, target } => {
                (ln_step, *target)
            }
            StepState::Slice { .. } => return,
        };
        self.adapt_count += 1;
        let gain = (self.adapt_count as f64).powf(-0.6);
        *ln_step += gain * (if accepted { 1.0 } else { 0.0 } - target);
        *ln_step = ln_step.clamp(LN_STEP_MIN, LN_STEP_MAX);
    }
}

/// Chain position: parameters, cached target value, optional cached gradient
/// (invalidated whenever the target itself changes under the point), and the
/// auxiliary payload from the evaluation that produced `value`.
pub struct CurrentPoint<A> {
    pub theta: Array1<f64>,
    pub value: f64,
    pub grad: Option<Array1<f64>>,
    pub aux: A,
}

fn all_finite(v: &Array1<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Advance `cur` by one kernel transition. Returns whether the proposal was
/// accepted (slice sweeps always report `true`). When `adapt` is set the
/// Metropolis kernels nudge their log step toward the target acceptance
/// rate after the transition.
pub fn kernel_step<T: TargetDensity, R: Rng + ?Sized>(
    state: &mut KernelState,
    target: &T,
    cur: &mut CurrentPoint<T::Aux>,
    rng: &mut R,
    meter: &mut QueryMeter,
    adapt: bool,
) -> Result<bool> {
    match state.state {
        StepState::RandomWalk { ln_step, .. } => {
            let step = ln_step.exp();
            let proposal = Array1::from_shape_fn(cur.theta.len(), |j| {
                cur.theta[j] + step * rng.sample::<f64, _>(StandardNormal)
            });
            let (v_new, aux_new) = target.value(&proposal, meter)?;
            let accepted = if v_new == f64::NEG_INFINITY {
                false
            } else {
                let ratio = v_new - cur.value;
                cur.value == f64::NEG_INFINITY || rng.random::<f64>().ln() < ratio
            };
            if accepted {
                cur.theta = proposal;
                cur.value = v_new;
                cur.grad = None;
                cur.aux = aux_new;
            }
            if adapt {
                state.adapt(accepted);
            }
            Ok(accepted)
        }
        StepState::Mala { ln_step, .. } => {
            let step = ln_step.exp();
            let half_sq = 0.5 * step * step;
            if cur.grad.is_none() {
                // Stale gradient (fresh chain, or the brightness state moved
                // under us). Re-evaluating costs the same queries as a value.
                let (v, g, aux) = target.value_grad(&cur.theta, meter)?;
                if v != f64::NEG_INFINITY && !all_finite(&g) {
                    return Err(Error::NonFinite { context: "gradient at current point" });
                }
                cur.value = v;
                cur.grad = Some(g);
                cur.aux = aux;
            }
            let g0 = cur.grad.as_ref().expect("gradient refreshed above");
            let mean0 = &cur.theta + &(half_sq * g0);
            let proposal = Array1::from_shape_fn(cur.theta.len(), |j| {
                mean0[j] + step * rng.sample::<f64, _>(StandardNormal)
            });
            let (v_new, g_new, aux_new) = target.value_grad(&proposal, meter)?;
            let accepted = if v_new == f64::NEG_INFINITY {
                false
            } else {
                if !all_finite(&g_new) {
                    return Err(Error::NonFinite { context: "gradient at proposal" });
                }
                let mean1 = &proposal + &(half_sq * &g_new);
                let two_var = 2.0 * step * step;
                let fwd: f64 =
                    proposal.iter().zip(mean0.iter()).map(|(x, m)| -(x - m).powi(2)).sum::<f64>()
                        / two_var;
                let rev: f64 = cur
                    .theta
                    .iter()
                    .zip(mean1.iter())
                    .map(|(x, m)| -(x - m).powi(2))
                    .sum::<f64>()
                    / two_var;
                let ratio = v_new - cur.value + rev - fwd;
                cur.value == f64::NEG_INFINITY || rng.random::<f64>().ln() < ratio
            };
            if accepted {
                cur.theta = proposal;
                cur.value = v_new;
                cur.grad = Some(g_new);
                cur.aux = aux_new;
            }
            if adapt {
                state.adapt(accepted);
            }
            Ok(accepted)
        }
        StepState::Slice { width, max_step_out } => {
            for j in 0..cur.theta.len() {
                // Fresh level evaluation per coordinate keeps the cached
                // value honest after the previous coordinate moved.
                let (v0, aux0) = target.value(&cur.theta, meter)?;
                if v0 == f64::NEG_INFINITY {
                    return Err(Error::NonFinite { context: "slice level at current point" });
                }
                cur.value = v0;
                cur.aux = aux0;
                let level = v0 - rng.sample::<f64, _>(Exp1);
                let x0 = cur.theta[j];
                let mut left = x0 - width * rng.random::<f64>();
                let mut right = left + width;

                // Capped stepping out: split the expansion budget randomly
                // between the two sides so the bracket stays reversible.
                let split = rng.random::<f64>();
                let mut budget_left = (max_step_out as f64 * split).floor() as u32;
                let mut budget_right = max_step_out - 1 - budget_left;
                while budget_left > 0 {
                    cur.theta[j] = left;
                    let (v, _) = target.value(&cur.theta, meter)?;
                    if v <= level {
                        break;
                    }
                    left -= width;
                    budget_left -= 1;
                }
                while budget_right > 0 {
                    cur.theta[j] = right;
                    let (v, _) = target.value(&cur.theta, meter)?;
                    if v <= level {
                        break;
                    }
                    right += width;
                    budget_right -= 1;
                }
                cur.theta[j] = x0;

                let mut shrinks = 0;
                loop {
                    if shrinks >= MAX_SLICE_SHRINK {
                        cur.theta[j] = x0;
                        return Err(Error::SliceShrinkageCollapse(MAX_SLICE_SHRINK));
                    }
                    let x1 = left + (right - left) * rng.random::<f64>();
                    cur.theta[j] = x1;
                    let (v1, aux1) = target.value(&cur.theta, meter)?;
                    shrinks += 1;
                    if v1 > level {
                        cur.value = v1;
                        cur.aux = aux1;
                        break;
                    }
                    if x1 < x0 {
                        left = x1;
                    } else {
                        right = x1;
                    }
                }
            }
            cur.grad = None;
            Ok(true)
        }
    }
}
