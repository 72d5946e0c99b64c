//! Loss functions with analytic first and second derivatives.
//!
//! Scores for a dataset of `n` rows and `d` outputs are stored row-major as an
//! `n * d` slice. Gradients and Hessians are stored output-major so that each
//! output's column is contiguous and can be handed directly to a base learner.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};

/// Lower bound for Hessians in Newton mode.
pub const HESSIAN_FLOOR: f64 = 1e-10;

/// Clipping bounds for class frequencies in [`Loss::optimal_constant`].
const PROB_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `(y - F)^2 / 2`
    Squared,
    /// `log(1 + e^F) - y F` for `y` in {0, 1}
    Logistic,
    /// `log sum_k e^{F_k} - F_y`
    Softmax { classes: usize },
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax probabilities written into `out`.
pub(crate) fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

impl Loss {
    /// The loss used for a task: squared for regression, logistic for binary
    /// and softmax cross-entropy for multiclass.
    pub fn for_task(task: Task) -> Loss {
        match task {
            Task::Regression => Loss::Squared,
            Task::Binary => Loss::Logistic,
            Task::Multiclass { classes } => Loss::Softmax { classes },
        }
    }

    /// Number of score columns.
    pub fn outputs(&self) -> usize {
        match *self {
            Loss::Squared | Loss::Logistic => 1,
            Loss::Softmax { classes } => classes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Loss::Squared => "squared",
            Loss::Logistic => "logistic",
            Loss::Softmax { .. } => "softmax",
        }
    }

    pub fn value(&self, y: f64, scores: &[f64]) -> f64 {
        match *self {
            Loss::Squared => 0.5 * (y - scores[0]) * (y - scores[0]),
            Loss::Logistic => softplus(scores[0]) - y * scores[0],
            Loss::Softmax { .. } => log_sum_exp(scores) - scores[y as usize],
        }
    }

    /// Exact derivatives with respect to each score; the softmax Hessian is
    /// the diagonal `p_k (1 - p_k)`.
    pub fn derivatives(&self, y: f64, scores: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        match *self {
            Loss::Squared => {
                grad[0] = scores[0] - y;
                hess[0] = 1.0;
            }
            Loss::Logistic => {
                let p = sigmoid(scores[0]);
                grad[0] = p - y;
                hess[0] = p * (1.0 - p);
            }
            Loss::Softmax { .. } => {
                softmax_into(scores, grad);
                let label = y as usize;
                for k in 0..scores.len() {
                    let p = grad[k];
                    hess[k] = p * (1.0 - p);
                    if k == label {
                        grad[k] = p - 1.0;
                    }
                }
            }
        }
    }

    /// Gradients and Hessians at `scores` (row-major `n * d`). With
    /// `newton == false` the Hessians are all one; otherwise they are
    /// floored at [`HESSIAN_FLOOR`].
    pub fn gradient_hessian(&self, targets: &[f64], scores: &[f64], newton: bool) -> GradHess {
        let n = targets.len();
        let d = self.outputs();
        debug_assert_eq!(scores.len(), n * d);
        let mut gh = GradHess {
            n,
            d,
            grad: vec![0.0; n * d],
            hess: vec![1.0; n * d],
        };
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d];
        for (i, &y) in targets.iter().enumerate() {
            self.derivatives(y, &scores[i * d..(i + 1) * d], &mut g, &mut h);
            for k in 0..d {
                gh.grad[k * n + i] = g[k];
                if newton {
                    gh.hess[k * n + i] = h[k].max(HESSIAN_FLOOR);
                }
            }
        }
        gh
    }

    /// Constant score vector minimizing the empirical risk.
    pub fn optimal_constant(&self, targets: &[f64]) -> Result<Vec<f64>> {
        if targets.is_empty() {
            return Err(Error::invalid("cannot initialize on an empty dataset"));
        }
        let n = targets.len() as f64;
        Ok(match *self {
            Loss::Squared => vec![targets.iter().sum::<f64>() / n],
            Loss::Logistic => {
                let p = (targets.iter().sum::<f64>() / n).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                vec![(p / (1.0 - p)).ln()]
            }
            Loss::Softmax { classes } => {
                let mut counts = vec![0.0; classes];
                for &t in targets {
                    counts[t as usize] += 1.0;
                }
                let logs: Vec<f64> = counts
                    .iter()
                    .map(|c| (c / n).clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln())
                    .collect();
                let mean = logs.iter().sum::<f64>() / classes as f64;
                logs.into_iter().map(|l| l - mean).collect()
            }
        })
    }

    /// Loss matching the task of `data`; errors if `self` does not fit it.
    pub fn check_task(&self, task: Task) -> Result<()> {
        if Loss::for_task(task) != *self {
            return Err(Error::invalid(format!(
                "{} loss does not match a {} task",
                self.name(),
                task.name()
            )));
        }
        Ok(())
    }
}

/// Gradients and Hessians of every sample for every output.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    n: usize,
    d: usize,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl GradHess {
    /// Builds from explicit output-major columns.
    pub fn from_columns(n: usize, d: usize, grad: Vec<f64>, hess: Vec<f64>) -> Result<Self> {
        if grad.len() != n * d || hess.len() != n * d {
            return Err(Error::invalid("gradient/Hessian length mismatch"));
        }
        if grad.iter().chain(&hess).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient or Hessian".into()));
        }
        Ok(Self { n, d, grad, hess })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn outputs(&self) -> usize {
        self.d
    }

    /// Gradient column of output `k`.
    pub fn grad(&self, k: usize) -> &[f64] {
        &self.grad[k * self.n..(k + 1) * self.n]
    }

    /// Hessian column of output `k`.
    pub fn hess(&self, k: usize) -> &[f64] {
        &self.hess[k * self.n..(k + 1) * self.n]
    }

    pub fn is_finite(&self) -> bool {
        self.grad.iter().chain(&self.hess).all(|v| v.is_finite())
    }
}

/// Gradients and Hessians for a dataset at the given scores.
pub fn gradient_hessian(data: &Dataset, scores: &[f64], newton: bool) -> GradHess {
    Loss::for_task(data.task()).gradient_hessian(data.targets(), scores, newton)
}
