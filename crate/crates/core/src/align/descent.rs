//! Gradient descent with Armijo backtracking on an infinity-norm-normalized
//! direction, so the step length is the largest per-parameter move.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossReport;

const ARMIJO_C1: f64 = 1e-4;
/// Consecutive accepted steps with a relative decrease below tolerance before
/// a stage stops.
const STALL_PATIENCE: usize = 3;

/// Step lengths in pixels of the level being optimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSchedule {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    pub grow: f64,
    pub shrink: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            initial: 0.5,
            min: 1e-3,
            max: 4.0,
            grow: 2.0,
            shrink: 0.5,
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min > 0.0
            && self.min <= self.initial
            && self.initial <= self.max
            && self.max.is_finite()
            && self.grow >= 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "step schedule needs 0 < min <= initial <= max, grow >= 1 and 0 < shrink < 1, got {self:?}"
            )))
        }
    }
}

pub(crate) struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub report: LossReport,
}

pub(crate) struct DescentOptions {
    pub max_iters: usize,
    pub steps: StepSchedule,
    pub tolerance: f64,
    /// Parameter units per level pixel.
    pub unit: f64,
    /// Reject any step that introduces or worsens folds.
    pub forbid_folds: bool,
}

pub(crate) struct DescentOutcome {
    pub x: Vec<f64>,
    pub end: Evaluation,
    pub start: LossReport,
    pub iterations: usize,
}

fn usable(e: &Evaluation) -> bool {
    e.value.is_finite() && e.grad.iter().all(|g| g.is_finite())
}

/// Errors that make a trial point inadmissible rather than ending the run.
fn is_rejection(e: &Error) -> bool {
    matches!(
        e,
        Error::NoOverlap(_) | Error::DegenerateWarp(_) | Error::SingularConfiguration(_)
    )
}

pub(crate) fn minimize<F>(x0: Vec<f64>, opts: &DescentOptions, mut f: F) -> Result<DescentOutcome>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    let mut cur = f(&x0)?;
    if !usable(&cur) {
        return Err(Error::OptimizationFailed {
            message: "objective is not finite at the starting point".into(),
            last_iterate: x0,
        });
    }
    let start = cur.report;
    let mut x = x0;
    let mut t = opts.steps.initial;
    let mut stall = 0;
    let mut iterations = 0;
    'outer: while iterations < opts.max_iters {
        let gmax = cur.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax == 0.0 {
            break;
        }
        let dir: Vec<f64> = cur.grad.iter().map(|g| -g / gmax).collect();
        let slope: f64 = cur.grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        loop {
            let len = t * opts.unit;
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + len * d).collect();
            let accepted = match f(&trial) {
                Ok(e) => {
                    let fold_ok = !opts.forbid_folds || e.report.fold == 0.0 || e.report.fold < cur.report.fold;
                    (usable(&e) && fold_ok && e.value <= cur.value + ARMIJO_C1 * len * slope).then_some(e)
                }
                Err(e) if is_rejection(&e) => None,
                Err(e) => return Err(e),
            };
            match accepted {
                Some(e) => {
                    let decrease = (cur.value - e.value) / cur.value.abs().max(1e-12);
                    x = trial;
                    cur = e;
                    iterations += 1;
                    t = (t * opts.steps.grow).min(opts.steps.max);
                    stall = if decrease < opts.tolerance { stall + 1 } else { 0 };
                    if stall >= STALL_PATIENCE {
                        break 'outer;
                    }
                    break;
                }
                None => {
                    t *= opts.steps.shrink;
                    if t < opts.steps.min {
                        break 'outer;
                    }
                }
            }
        }
    }
    if cur.value > start.total + 1e-12 * start.total.abs().max(1.0) {
        return Err(Error::OptimizationFailed {
            message: format!("loss rose from {} to {}", start.total, cur.value),
            last_iterate: x,
        });
    }
    Ok(DescentOutcome {
        x,
        end: cur,
        start,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> Result<Evaluation> {
        let value = (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2);
        Ok(Evaluation {
            value,
            grad: vec![2.0 * (x[0] - 3.0), 20.0 * (x[1] + 1.0)],
            report: LossReport {
                total: value,
                ..LossReport::default()
            },
        })
    }

    fn opts() -> DescentOptions {
        DescentOptions {
            max_iters: 500,
            steps: StepSchedule::default(),
            tolerance: 0.0,
            unit: 1.0,
            forbid_folds: false,
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let out = minimize(vec![0.0, 0.0], &opts(), quad).unwrap();
        assert!((out.x[0] - 3.0).abs() < 1e-2 && (out.x[1] + 1.0).abs() < 1e-2, "{:?}", out.x);
        assert!(out.end.value <= out.start.total);
    }

    #[test]
    fn stationary_start_takes_no_step() {
        let out = minimize(vec![3.0, -1.0], &opts(), quad).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![3.0, -1.0]);
    }

    #[test]
    fn rejected_region_is_avoided() {
        let out = minimize(vec![0.0, 0.0], &opts(), |x| {
            if x[0] > 2.0 {
                Err(Error::NoOverlap("outside".into()))
            } else {
                quad(x)
            }
        })
        .unwrap();
        assert!(out.x[0] <= 2.0 && out.x[0] > 1.9);
    }

    #[test]
    fn non_finite_start_fails() {
        let r = minimize(vec![0.0], &opts(), |_| {
            Ok(Evaluation {
                value: f64::NAN,
                grad: vec![0.0],
                report: LossReport::default(),
            })
        });
        assert!(matches!(r, Err(Error::OptimizationFailed { .. })));
    }
}
