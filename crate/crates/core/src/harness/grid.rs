//! Exhaustive tuning over a parameter grid with the number of iterations
//! read off each run's validation trace.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{fit, BoostConfig, Ensemble, KernelParams, Learners, RhoSpec, Selection};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::trees::TreeParams;

use super::metrics::metric;

/// Neighbor counts tried before the `m - 1` cap.
pub const KNN_CANDIDATES: [usize; 4] = [5, 50, 500, 5000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nus: Vec<f64>,
    pub depths: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub rhos: Vec<RhoSpec>,
    pub max_iterations: usize,
    pub newton: bool,
    pub min_samples_leaf: usize,
    pub nystrom: Option<usize>,
    pub seed: u64,
    pub selection: Selection,
}

/// `{5, 50, 500, 5000}` below `m - 1`, then `m - 1` itself, then the slowly
/// decaying range. `m` is the number of rows the distances are taken over.
pub fn rho_candidates(m: usize) -> Vec<RhoSpec> {
    let mut out: Vec<RhoSpec> = KNN_CANDIDATES
        .iter()
        .filter(|&&k| k + 1 < m)
        .map(|&k| RhoSpec::Knn { k })
        .collect();
    if m >= 2 {
        out.push(RhoSpec::Knn { k: m - 1 });
    }
    out.push(RhoSpec::Slow);
    out
}

impl GridSpec {
    /// The full grid for `n_train` training rows.
    pub fn paper(n_train: usize, newton: bool, nystrom: Option<usize>) -> Self {
        let m = nystrom.map_or(n_train, |l| l.min(n_train));
        Self {
            nus: vec![1.0, 0.1, 0.01, 0.001],
            depths: vec![1, 5, 10],
            lambdas: vec![1.0, 10.0],
            rhos: rho_candidates(m),
            max_iterations: 1000,
            newton,
            min_samples_leaf: 1,
            nystrom,
            seed: 0,
            selection: Selection::Damped,
        }
    }

    /// Boosting configurations in canonical order: shrinkage, then depth,
    /// then lambda, then range. Parameters a method does not use are
    /// dropped from its enumeration.
    pub fn configurations(&self, learners: Learners) -> Vec<BoostConfig> {
        let depths: Vec<usize> = if learners.uses_trees() { self.depths.clone() } else { vec![1] };
        let kernels: Vec<(f64, RhoSpec)> = if learners.uses_kernels() {
            self.lambdas
                .iter()
                .flat_map(|&l| self.rhos.iter().map(move |&r| (l, r)))
                .collect()
        } else {
            vec![(1.0, RhoSpec::Slow)]
        };
        let mut out = Vec::new();
        for &nu in &self.nus {
            for &max_depth in &depths {
                for &(lambda, rho) in &kernels {
                    out.push(BoostConfig {
                        iterations: self.max_iterations,
                        nu,
                        newton: self.newton,
                        learners,
                        tree: TreeParams {
                            max_depth,
                            min_samples_leaf: self.min_samples_leaf,
                        },
                        kernel: KernelParams {
                            rho,
                            lambda,
                            nystrom: self.nystrom,
                            seed: self.seed,
                        },
                        selection: self.selection,
                        early_stopping_rounds: None,
                        standardize: true,
                    });
                }
            }
        }
        out
    }
}

/// Outcome of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEvaluation {
    pub config: BoostConfig,
    pub selected_iterations: Option<usize>,
    pub validation_risk: Option<f64>,
    pub validation_metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Winning configuration with `iterations` set to the selected count.
    pub best: BoostConfig,
    /// Winning model truncated to the selected count.
    pub model: Ensemble,
    pub validation_metric: f64,
    pub evaluations: Vec<GridEvaluation>,
}

struct Best {
    index: usize,
    metric: f64,
    model: Ensemble,
}

fn better(a: Option<Best>, b: Option<Best>) -> Option<Best> {
    match (a, b) {
        (None, b) => b,
        (a, None) => a,
        (Some(a), Some(b)) => {
            if (b.metric, b.index) < (a.metric, a.index) {
                Some(b)
            } else {
                Some(a)
            }
        }
    }
}

fn evaluate(train: &Dataset, validation: &Dataset, config: &BoostConfig) -> Result<(usize, f64, f64, Ensemble)> {
    let (model, report) = fit(train, config, Some(validation))?;
    let m = report.selected_iterations;
    let risk = report.validation_risk.as_ref().expect("validation trace")[m - 1];
    let model = model.truncated(m);
    let scores = model.predict(validation.features(), None)?;
    let metric = metric(validation.task(), validation.targets(), &scores)?;
    Ok((m, risk, metric, model))
}

/// Fits every configuration on `train`, picks each run's iteration count by
/// validation risk, and returns the configuration with the lowest
/// validation metric (earliest in enumeration order on ties). Failing
/// configurations are recorded and skipped.
pub fn grid_search_configs(train: &Dataset, validation: &Dataset, configs: &[BoostConfig]) -> Result<GridResult> {
    if configs.is_empty() {
        return Err(Error::invalid("empty tuning grid"));
    }
    let (evaluations, best) = configs
        .par_iter()
        .enumerate()
        .map(|(index, config)| match evaluate(train, validation, config) {
            Ok((m, risk, metric, model)) => (
                vec![(
                    index,
                    GridEvaluation {
                        config: *config,
                        selected_iterations: Some(m),
                        validation_risk: Some(risk),
                        validation_metric: Some(metric),
                        error: None,
                    },
                )],
                Some(Best { index, metric, model }),
            ),
            Err(e) => {
                log::warn!("grid configuration {index} failed: {e}");
                (
                    vec![(
                        index,
                        GridEvaluation {
                            config: *config,
                            selected_iterations: None,
                            validation_risk: None,
                            validation_metric: None,
                            error: Some(e.to_string()),
                        },
                    )],
                    None,
                )
            }
        })
        .reduce(
            || (Vec::new(), None),
            |(mut ea, ba), (eb, bb)| {
                ea.extend(eb);
                (ea, better(ba, bb))
            },
        );
    let mut evaluations = evaluations;
    evaluations.sort_by_key(|(i, _)| *i);
    let evaluations: Vec<GridEvaluation> = evaluations.into_iter().map(|(_, e)| e).collect();
    let Some(best) = best else {
        return Err(Error::invalid(format!(
            "all {} grid configurations failed; first error: {}",
            evaluations.len(),
            evaluations[0].error.as_deref().unwrap_or("unknown")
        )));
    };
    let mut config = configs[best.index];
    config.iterations = best.model.len();
    Ok(GridResult {
        best: config,
        model: best.model,
        validation_metric: best.metric,
        evaluations,
    })
}

pub fn grid_search(train: &Dataset, validation: &Dataset, grid: &GridSpec, learners: Learners) -> Result<GridResult> {
    grid_search_configs(train, validation, &grid.configurations(learners))
}
