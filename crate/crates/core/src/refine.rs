//! The refinement loop: the displacement field is the only learnable
//! parameter, updated by Adam on the hybrid loss.
//!
//! Iteration 0 evaluates the initial field without updating it. Each
//! following iteration applies one Adam step and re-evaluates. An iteration
//! improves when its total is below `best - improvement_eps`; after
//! `patience` consecutive non-improving iterations the loop stops. The
//! returned field is the best-loss snapshot, never the last iterate.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::loss::{hybrid_loss_grad, LossBreakdown, LossOptions, LossWeights};
use crate::volume::{DisplacementField, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtrConfig {
    pub max_iters: usize,
    pub lr: f64,
    pub patience: usize,
    pub weights: LossWeights,
    pub ncc_window: usize,
    pub ssim_window: usize,
    pub improvement_eps: f64,
}

impl Default for TtrConfig {
    fn default() -> Self {
        TtrConfig {
            max_iters: 10,
            lr: 0.1,
            patience: 3,
            weights: LossWeights::default(),
            ncc_window: 9,
            ssim_window: 7,
            improvement_eps: 0.0,
        }
    }
}

impl TtrConfig {
    /// Learning rate 0.1, used for inter-subject abdominal CT.
    pub fn abdomen() -> Self {
        TtrConfig::default()
    }

    /// Learning rate 0.025, used for intra-subject cardiac MR.
    pub fn cardiac() -> Self {
        TtrConfig {
            lr: 0.025,
            ..TtrConfig::default()
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            ncc_window: self.ncc_window,
            ssim_window: self.ssim_window,
            ..LossOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be positive".into()));
        }
        // lr = 0 is accepted so the stopping rule can be exercised on a frozen field.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.improvement_eps >= 0.0 && self.improvement_eps.is_finite()) {
            return Err(Error::InvalidConfig("improvement_eps must be finite and >= 0".into()));
        }
        // Upper bounds depend on the image and are checked per evaluation.
        for (name, w) in [("ncc_window", self.ncc_window), ("ssim_window", self.ssim_window)] {
            if w < 3 || w.is_multiple_of(2) {
                return Err(Error::InvalidConfig(format!("{name} must be odd and >= 3, got {w}")));
            }
        }
        self.weights.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    EarlyStop,
}

#[derive(Clone, Debug)]
pub struct RefineResult {
    /// Best-loss snapshot.
    pub field: DisplacementField,
    /// One entry per evaluation, starting with the initial field.
    pub loss_trace: Vec<LossBreakdown>,
    pub stop_reason: StopReason,
    /// Adam updates applied.
    pub iters_run: usize,
    /// Trace index of the best snapshot.
    pub best_iter: usize,
    pub wall_time_s: f64,
}

impl RefineResult {
    pub fn best_loss(&self) -> &LossBreakdown {
        &self.loss_trace[self.best_iter]
    }
}

/// State handed to a [`refine_with`] observer after every evaluation.
pub struct Progress<'a> {
    pub iter: usize,
    pub field: &'a DisplacementField,
    pub loss: &'a LossBreakdown,
}

pub fn refine(
    fixed: &Volume,
    moving: &Volume,
    init: &DisplacementField,
    cfg: &TtrConfig,
) -> Result<RefineResult> {
    refine_with(fixed, moving, init, cfg, |_| {})
}

/// [`refine`] with a callback invoked after each evaluation, including
/// iteration 0.
pub fn refine_with(
    fixed: &Volume,
    moving: &Volume,
    init: &DisplacementField,
    cfg: &TtrConfig,
    mut observer: impl FnMut(Progress<'_>),
) -> Result<RefineResult> {
    cfg.validate()?;
    let dims = fixed.dims();
    dims.require_same(&moving.dims())?;
    dims.require_same(&init.dims())?;
    let opts = cfg.loss_options();
    let start = Instant::now();

    let mut field = init.clone();
    let mut state = AdamState::new(dims);
    let (first, mut grad) = hybrid_loss_grad(fixed, moving, &field, &cfg.weights, &opts)?;
    if !first.total.is_finite() || !grad.is_finite() {
        return Err(Error::NonFiniteLoss(0));
    }
    observer(Progress {
        iter: 0,
        field: &field,
        loss: &first,
    });

    let mut trace = vec![first];
    let mut best_total = first.total;
    let mut best_iter = 0;
    let mut best_field = field.clone();
    let mut stale = 0;
    let mut iters = 0;
    let mut stop_reason = StopReason::MaxIters;

    while iters < cfg.max_iters {
        state.step(&mut field, &grad, cfg.lr)?;
        iters += 1;
        let (loss, g) = hybrid_loss_grad(fixed, moving, &field, &cfg.weights, &opts)?;
        trace.push(loss);
        observer(Progress {
            iter: iters,
            field: &field,
            loss: &loss,
        });
        if !loss.total.is_finite() || !g.is_finite() {
            // Diverged; keep the best snapshot.
            stop_reason = StopReason::EarlyStop;
            break;
        }
        grad = g;
        if loss.total < best_total - cfg.improvement_eps {
            best_total = loss.total;
            best_iter = iters;
            best_field.data_mut().copy_from_slice(field.data());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }

    Ok(RefineResult {
        field: best_field,
        loss_trace: trace,
        stop_reason,
        iters_run: iters,
        best_iter,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Outcome of refining the same pair from an informed and from a zero start.
#[derive(Clone, Debug)]
pub struct WarmColdReport {
    pub warm: RefineResult,
    pub cold: RefineResult,
    /// Best total of the warm run; the level both runs are timed against.
    pub target_loss: f64,
    /// Iterations the warm run needed to reach `target_loss`.
    pub warm_iters: usize,
    /// Iterations the cold run needed, `None` if it never got there.
    pub cold_iters: Option<usize>,
}

impl WarmColdReport {
    /// True when the warm start needed no more iterations than the cold one.
    pub fn warm_not_slower(&self) -> bool {
        self.cold_iters.is_none_or(|c| self.warm_iters <= c)
    }
}

fn first_reaching(trace: &[LossBreakdown], target: f64) -> Option<usize> {
    trace.iter().position(|b| b.total <= target)
}

pub fn warm_vs_cold_report(
    fixed: &Volume,
    moving: &Volume,
    init: &DisplacementField,
    cfg: &TtrConfig,
) -> Result<WarmColdReport> {
    let warm = refine(fixed, moving, init, cfg)?;
    let zero = DisplacementField::zeros(init.dims(), init.spacing());
    let cold = refine(fixed, moving, &zero, cfg)?;
    let target_loss = warm.best_loss().total;
    let warm_iters = first_reaching(&warm.loss_trace, target_loss).unwrap_or(warm.best_iter);
    let cold_iters = first_reaching(&cold.loss_trace, target_loss);
    Ok(WarmColdReport {
        warm,
        cold,
        target_loss,
        warm_iters,
        cold_iters,
    })
}
