//! Single-loop subgradient driver with pluggable direction variants.
//!
//! Every algorithm here is one iteration scheme,
//! `x_{k+1} = x_k - eta_k dir_x`, `y_{k+1} = y_k - eta_k dir_y`, differing
//! only in which field element supplies the direction:
//!
//! * `alg1_basic` steps along `HatDh`;
//! * `alg2_modified` steps along `HatDs` (deterministic two-timescale
//!   update: the effective `y`-stepsize is `beta_hat * eta_k`);
//! * `alg3_inexact` steps along `HatDp` (the effective `y`-stepsize is
//!   `beta * eta_k`);
//! * `exact_dh_descent` steps along the exact element — a diagnostic
//!   algorithm for problems with third-order oracles, not a production
//!   method.
//!
//! Stepsizes `eta_k = eta0 (k+1)^{-a}` with `a in (1/2, 1]` are square
//! summable but not summable; inner tolerances `eps1_k -> 0` and
//! `sum eps2_k eta_k < inf` keep the inexactness-induced error summable.
//! Convergence theory guarantees limit-point stationarity and convergence
//! of the objective values but no stopping rule, so the driver stops when
//! feasibility and hypergradient residuals are small *and* the penalty
//! objective has stopped moving over a trailing window.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::field::{
    element_exact_dh, element_hat_dh, element_hat_dp, element_hat_ds, FieldElement, FieldError,
    Iterate,
};
use crate::linalg::norm_pair;
use crate::problem::{BilevelProblem, ProblemConstants};
use crate::scalar::{cast, Scalar};

/// Window length for the objective-oscillation stopping test.
const STOP_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Alg1Basic,
    Alg2Modified,
    Alg3Inexact,
    ExactDhDescent,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Alg1Basic => "alg1_basic",
            Algorithm::Alg2Modified => "alg2_modified",
            Algorithm::Alg3Inexact => "alg3_inexact",
            Algorithm::ExactDhDescent => "exact_dh_descent",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "alg1_basic" => Some(Algorithm::Alg1Basic),
            "alg2_modified" => Some(Algorithm::Alg2Modified),
            "alg3_inexact" => Some(Algorithm::Alg3Inexact),
            "exact_dh_descent" => Some(Algorithm::ExactDhDescent),
            _ => None,
        }
    }
}

/// Power-law schedule `value(k) = scale * (k+1)^{-exponent}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSchedule<T> {
    pub scale: T,
    pub exponent: T,
}

impl<T: Scalar> PowerSchedule<T> {
    pub fn value(&self, k: usize) -> T {
        self.scale * cast::<T>((k + 1) as f64).powf(-self.exponent)
    }
}

/// The three coupled schedules of one run: stepsizes `eta_k` and the two
/// inner-solve tolerance sequences `eps1_k` (Newton step) and `eps2_k`
/// (dual step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedules<T> {
    pub step: PowerSchedule<T>,
    pub tol_newton: PowerSchedule<T>,
    pub tol_dual: PowerSchedule<T>,
}

impl<T: Scalar> Schedules<T> {
    /// Mid-range defaults satisfying every summability hypothesis with
    /// margin: `eta_k = (1/l_g)(k+1)^{-3/4}`, `eps1_k = (k+1)^{-1/2}`,
    /// `eps2_k = (k+1)^{-3/5}`.
    pub fn defaults(l_g: T) -> Self {
        Schedules {
            step: PowerSchedule {
                scale: T::one() / l_g,
                exponent: cast(0.75),
            },
            tol_newton: PowerSchedule {
                scale: T::one(),
                exponent: cast(0.5),
            },
            tol_dual: PowerSchedule {
                scale: T::one(),
                exponent: cast(0.6),
            },
        }
    }

    /// Enforces the summability laws: `a in (1/2, 1]` makes the stepsizes
    /// square summable but not summable; `q1 > 0` sends `eps1_k -> 0`;
    /// `q2 + a > 1` makes `sum eps2_k eta_k` finite.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let half = cast::<T>(0.5);
        let a = self.step.exponent;
        if !(self.step.scale > T::zero()) {
            return Err(ConfigError::Schedule("eta0 must be > 0".into()));
        }
        if !(a > half && a <= T::one()) {
            return Err(ConfigError::Schedule(format!(
                "stepsize exponent violates a in (1/2, 1] (square summable, not summable): got a = {a}"
            )));
        }
        if self.tol_newton.scale < T::zero() || self.tol_dual.scale < T::zero() {
            return Err(ConfigError::Schedule("tolerance scales must be >= 0".into()));
        }
        if !(self.tol_newton.exponent > T::zero()) {
            return Err(ConfigError::Schedule(format!(
                "Newton-step tolerance exponent violates q1 > 0 (eps1_k must vanish): got q1 = {}",
                self.tol_newton.exponent
            )));
        }
        if !(self.tol_dual.exponent + a > T::one()) {
            return Err(ConfigError::Schedule(format!(
                "dual-step tolerance exponent violates q2 + a > 1 (sum eps2_k eta_k must be finite): \
                 got q2 = {}, a = {a}",
                self.tol_dual.exponent
            )));
        }
        Ok(())
    }
}

/// Stopping thresholds; all three must hold simultaneously.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule<T> {
    pub feas_tol: T,
    pub stat_tol: T,
    /// Max-min spread of the penalty objective over the trailing
    /// 100-iteration window.
    pub value_oscillation_tol: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<T> {
    pub algorithm: Algorithm,
    /// Penalty weight of the objective `h`.
    pub beta: T,
    /// Prefixed `y`-scale of `alg2_modified`; ignored by the others.
    pub beta_hat: T,
    pub schedules: Schedules<T>,
    pub max_iters: usize,
    pub stop: StopRule<T>,
    pub seed: u64,
    /// Skip the penalty-threshold validation. The run proceeds without the
    /// descent guarantees; off by default.
    #[serde(default)]
    pub force_thresholds: bool,
}

/// Penalty thresholds derived from the problem constants. Each algorithm's
/// descent inequality holds above its threshold.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Thresholds<T> {
    /// `alg1_basic` and the stationarity equivalence: `2 m_f q_g / mu^3`.
    pub beta_alg1: T,
    /// `alg2_modified`: `4 m_f q_g / mu^3`.
    pub beta_alg2: T,
    /// `alg2_modified`: `beta_hat >= beta * max(8 l_g^2/mu, 1/(4 mu), mu/4)`.
    pub beta_hat_factor: T,
    /// `alg3_inexact`: `max(8 m_f q_g / mu^3, 4 m_f q_g l_g / mu^3.5)`.
    pub beta_alg3: T,
    /// Lower boundedness of `h`: `m_f q_g / mu^3`.
    pub beta_bounded: T,
}

impl<T: Scalar> Thresholds<T> {
    pub fn from_constants(c: &ProblemConstants<T>) -> Self {
        let mu3 = c.mu.powi(3);
        let mq = c.m_f * c.q_g;
        let four = cast::<T>(4.0);
        let eight = cast::<T>(8.0);
        Thresholds {
            beta_alg1: cast::<T>(2.0) * mq / mu3,
            beta_alg2: four * mq / mu3,
            beta_hat_factor: (eight * c.l_g * c.l_g / c.mu)
                .max(T::one() / (four * c.mu))
                .max(c.mu / four),
            beta_alg3: (eight * mq / mu3).max(four * mq * c.l_g / c.mu.powf(cast(3.5))),
            beta_bounded: mq / mu3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Threshold(String),
    #[error("{0}")]
    Schedule(String),
}

impl<T: Scalar> SolverConfig<T> {
    /// Validates schedules and, unless `force_thresholds` is set, the
    /// algorithm's penalty threshold against the problem constants. The
    /// error message names the violated inequality.
    pub fn validate(&self, constants: &ProblemConstants<T>) -> Result<(), ConfigError> {
        self.schedules.validate()?;
        if !(self.beta > T::zero()) {
            return Err(ConfigError::Threshold(format!(
                "penalty weight must satisfy β > 0, got {}",
                self.beta
            )));
        }
        if self.force_thresholds {
            return Ok(());
        }
        let th = Thresholds::from_constants(constants);
        match self.algorithm {
            Algorithm::Alg1Basic => {
                if self.beta < th.beta_alg1 {
                    return Err(ConfigError::Threshold(format!(
                        "alg1_basic penalty weight violates β ≥ 2·M_f·Q_g/μ³: required ≥ {:.6e}, got {:.6e}",
                        th.beta_alg1, self.beta
                    )));
                }
            }
            Algorithm::Alg2Modified => {
                if self.beta < th.beta_alg2 {
                    return Err(ConfigError::Threshold(format!(
                        "alg2_modified penalty weight violates β ≥ 4·M_f·Q_g/μ³: required ≥ {:.6e}, got {:.6e}",
                        th.beta_alg2, self.beta
                    )));
                }
                let hat_min = self.beta * th.beta_hat_factor;
                if self.beta_hat < hat_min {
                    return Err(ConfigError::Threshold(format!(
                        "alg2_modified y-scale violates β̂ ≥ β·max(8·L_g²/μ, 1/(4μ), μ/4): \
                         required ≥ {:.6e}, got {:.6e}",
                        hat_min, self.beta_hat
                    )));
                }
            }
            Algorithm::Alg3Inexact => {
                if self.beta < th.beta_alg3 {
                    return Err(ConfigError::Threshold(format!(
                        "alg3_inexact penalty weight violates β ≥ max(8·M_f·Q_g/μ³, 4·M_f·Q_g·L_g/μ^3.5): \
                         required ≥ {:.6e}, got {:.6e}",
                        th.beta_alg3, self.beta
                    )));
                }
            }
            Algorithm::ExactDhDescent => {
                // Diagnostic algorithm; the stationarity equivalence needs
                // the same threshold as alg1.
                if self.beta < th.beta_alg1 {
                    return Err(ConfigError::Threshold(format!(
                        "exact_dh_descent penalty weight violates β ≥ 2·M_f·Q_g/μ³: required ≥ {:.6e}, got {:.6e}",
                        th.beta_alg1, self.beta
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Maps a config onto the deterministic two-timescale update (`HatDs`
/// directions). The named method's `y`-stepsize corresponds to
/// `beta_hat * eta_k`.
pub fn preset_ttsa<T: Scalar>(base: SolverConfig<T>) -> SolverConfig<T> {
    SolverConfig {
        algorithm: Algorithm::Alg2Modified,
        ..base
    }
}

/// Momentum-free deterministic reduction of the momentum-accelerated
/// two-timescale scheme; identical mapping to [`preset_ttsa`].
pub fn preset_sustain_no_momentum<T: Scalar>(base: SolverConfig<T>) -> SolverConfig<T> {
    SolverConfig {
        algorithm: Algorithm::Alg2Modified,
        ..base
    }
}

/// Maps a config onto the corrected single-timescale update (`HatDp`
/// directions). The named method's `y`-stepsize corresponds to
/// `beta * eta_k`.
pub fn preset_stable<T: Scalar>(base: SolverConfig<T>) -> SolverConfig<T> {
    SolverConfig {
        algorithm: Algorithm::Alg3Inexact,
        ..base
    }
}

/// One diagnostics row per iteration.
///
/// `h = f_at_a + (beta/2) feas^2` holds by construction. `cg_iters_w`
/// counts the Newton-step solve; `cg_iters_v` aggregates every other inner
/// solve of the iteration (dual step, and the `y`-correction for
/// `alg3_inexact`). `stat_x` is evaluated at the iteration's own inner
/// tolerance, not at diagnostics precision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord<T> {
    pub k: usize,
    pub eta_k: T,
    pub eps1_k: T,
    pub eps2_k: T,
    pub h: T,
    pub f_at_a: T,
    pub feas: T,
    pub stat_x: T,
    pub dir_norm: T,
    pub cg_iters_w: usize,
    pub cg_iters_v: usize,
    pub wall_nanos: u64,
}

/// Consumer of per-iteration trace records.
pub trait TraceSink<T> {
    fn record(&mut self, rec: &TraceRecord<T>);
}

impl<T: Clone> TraceSink<T> for Vec<TraceRecord<T>> {
    fn record(&mut self, rec: &TraceRecord<T>) {
        self.push(rec.clone());
    }
}

/// Discards all records.
pub struct NullSink;

impl<T> TraceSink<T> for NullSink {
    fn record(&mut self, _rec: &TraceRecord<T>) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Feasibility, hypergradient, and objective-oscillation thresholds all
    /// met.
    Converged,
    MaxIters,
    /// Iterate norm blew past `1e8 (1 + ||start||)`, violating the bounded-
    /// iterates hypothesis.
    Diverged,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult<T> {
    pub status: RunStatus,
    /// Iterations performed (= trace records emitted).
    pub iterations: usize,
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub final_h: T,
    pub final_f_at_a: T,
    pub final_feas: T,
    /// Hypergradient residual at the endpoint, from the diagnostics-grade
    /// measurement when the stopping test ran one (always on converged
    /// runs); otherwise the last trace value.
    pub final_stat_x: T,
    pub final_dir_norm: T,
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("start point contains non-finite components")]
    NonFiniteStart,
    #[error("non-finite direction component at iteration {iteration}: an oracle or the stepsize blew up")]
    NonFiniteDirection { iteration: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// One framework step `x' = x - eta dir_x`, `y' = y - eta dir_y`, with the
/// lower-level cache refreshed at the new point.
pub fn framework_step<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    iterate: &Iterate<T>,
    direction: &FieldElement<T>,
    eta: T,
) -> Result<Iterate<T>, SolverError> {
    assert!(eta > T::zero(), "stepsize must be positive");
    let finite = direction
        .dir_x
        .iter()
        .chain(&direction.dir_y)
        .all(|v| v.is_finite());
    if !finite {
        return Err(SolverError::NonFiniteDirection { iteration: 0 });
    }
    let x: Vec<T> = iterate
        .x
        .iter()
        .zip(&direction.dir_x)
        .map(|(&xi, &di)| xi - eta * di)
        .collect();
    let y: Vec<T> = iterate
        .y
        .iter()
        .zip(&direction.dir_y)
        .map(|(&yi, &di)| yi - eta * di)
        .collect();
    Ok(Iterate::new(prob, x, y))
}

/// Runs the configured algorithm from `(x0, y0)`, emitting one trace record
/// per iteration into `sink`. Deterministic given `(config, x0, y0)` apart
/// from `wall_nanos`.
pub fn run<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    config: &SolverConfig<T>,
    x0: &[T],
    y0: &[T],
    sink: &mut dyn TraceSink<T>,
) -> Result<RunResult<T>, SolverError> {
    config.validate(&prob.constants())?;
    if !x0.iter().chain(y0).all(|v| v.is_finite()) {
        return Err(SolverError::NonFiniteStart);
    }

    let start_scale = T::one() + norm_pair(x0, y0);
    let diverge_bound = cast::<T>(1e8) * start_scale;
    let half = cast::<T>(0.5);

    let mut iterate = Iterate::new(prob, x0.to_vec(), y0.to_vec());
    let mut window: VecDeque<T> = VecDeque::with_capacity(STOP_WINDOW);
    let mut status = RunStatus::MaxIters;
    let mut iterations = 0;
    let mut last = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    // The trace's stat_x is only as tight as the iteration's own inner
    // tolerance, so stopping is decided by a diagnostics-grade measurement,
    // re-run at most once per window while the cheap conditions hold.
    let mut next_tight_check = 0usize;
    let mut tight_stat: Option<T> = None;

    for k in 0..config.max_iters {
        let clock = Instant::now();
        let eta = config.schedules.step.value(k);
        let eps1 = config.schedules.tol_newton.value(k);
        let eps2 = config.schedules.tol_dual.value(k);

        let element = match config.algorithm {
            Algorithm::Alg1Basic => {
                element_hat_dh(prob, &iterate.x, &iterate.y, config.beta, eps1, eps2)?
            }
            Algorithm::Alg2Modified => {
                element_hat_ds(prob, &iterate.x, &iterate.y, config.beta_hat, eps1, eps2)?
            }
            Algorithm::Alg3Inexact => {
                element_hat_dp(prob, &iterate.x, &iterate.y, config.beta, eps1)?
            }
            Algorithm::ExactDhDescent => {
                element_exact_dh(prob, &iterate.x, &iterate.y, config.beta)?
            }
        };

        // The objective reuses the element's own probe point, keeping h and
        // the direction mutually consistent within the iteration; the
        // Newton-step estimate is cached on the iterate it belongs to.
        iterate.w = Some(crate::linalg::sub(&iterate.y, &element.probe_y));
        let f_at_a = prob.f_value(&iterate.x, &element.probe_y);
        let feas = iterate.feas;
        let h = f_at_a + half * config.beta * feas * feas;
        let dir_norm = element.dir_norm();

        let mut cg_w = 0;
        let mut cg_v = 0;
        for solve in &element.inner {
            if solve.label == "newton_step" {
                cg_w += solve.iterations;
            } else {
                cg_v += solve.iterations;
            }
        }

        let record = TraceRecord {
            k,
            eta_k: eta,
            eps1_k: eps1,
            eps2_k: eps2,
            h,
            f_at_a,
            feas,
            stat_x: element.stat_x,
            dir_norm,
            cg_iters_w: cg_w,
            cg_iters_v: cg_v,
            wall_nanos: clock.elapsed().as_nanos() as u64,
        };
        sink.record(&record);
        iterations = k + 1;
        last = (h, f_at_a, feas, element.stat_x, dir_norm);

        if window.len() == STOP_WINDOW {
            window.pop_front();
        }
        window.push_back(h);
        if window.len() == STOP_WINDOW && feas <= config.stop.feas_tol && k >= next_tight_check {
            let mut lo = T::infinity();
            let mut hi = T::neg_infinity();
            for &v in &window {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo <= config.stop.value_oscillation_tol {
                let measure =
                    crate::field::stationarity_measure(prob, &iterate.x, &iterate.y, cast(1e-10))?;
                tight_stat = Some(measure.stat_x);
                if measure.stat_x <= config.stop.stat_tol {
                    status = RunStatus::Converged;
                    break;
                }
                next_tight_check = k + STOP_WINDOW;
            }
        }

        iterate = match framework_step(prob, &iterate, &element, eta) {
            Ok(next) => next,
            Err(SolverError::NonFiniteDirection { .. }) => {
                return Err(SolverError::NonFiniteDirection { iteration: k });
            }
            Err(e) => return Err(e),
        };

        if norm_pair(&iterate.x, &iterate.y) > diverge_bound {
            status = RunStatus::Diverged;
            break;
        }
    }

    let (final_h, final_f_at_a, final_feas, trace_stat_x, final_dir_norm) = last;
    Ok(RunResult {
        status,
        iterations,
        x: iterate.x,
        y: iterate.y,
        final_h,
        final_f_at_a,
        final_feas,
        final_stat_x: tight_stat.unwrap_or(trace_stat_x),
        final_dir_norm,
    })
}
