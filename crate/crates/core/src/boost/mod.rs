//! The boosting engine.
//!
//! Starting from the risk-minimizing constant, every iteration computes
//! gradients and Hessians of the loss at the current scores, fits a tree
//! candidate and a kernel candidate to the resulting quadratic model of the
//! risk, and admits the candidate whose (shrunken) addition gives the lower
//! empirical risk on the training data. Ties go to the tree.

mod model;
mod persist;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix, Standardizer};
use crate::error::{Error, Result};
use crate::kernels::{
    mat_vec, nystrom_indices, select_rho, GradientKernel, KernelBasis, KernelConfig, RhoMode,
};
use crate::losses::{GradHess, Loss};
use crate::trees::{fit_tree_presorted, FeatureOrder, Tree, TreeParams};

pub use model::{BaseLearner, Ensemble, Iteration};
pub use persist::FORMAT_VERSION;

/// Which base learners the engine may admit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learners {
    /// Trees and kernels compete every iteration.
    Ktboost,
    /// Plain tree boosting.
    Tree,
    /// Plain kernel boosting.
    Kernel,
}

impl Learners {
    pub fn uses_trees(self) -> bool {
        matches!(self, Learners::Ktboost | Learners::Tree)
    }

    pub fn uses_kernels(self) -> bool {
        matches!(self, Learners::Ktboost | Learners::Kernel)
    }

    pub fn name(self) -> &'static str {
        match self {
            Learners::Ktboost => "ktboost",
            Learners::Tree => "tree",
            Learners::Kernel => "kernel",
        }
    }
}

impl std::str::FromStr for Learners {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ktboost" => Ok(Learners::Ktboost),
            "tree" => Ok(Learners::Tree),
            "kernel" => Ok(Learners::Kernel),
            other => Err(Error::invalid(format!("unknown learner set `{other}`"))),
        }
    }
}

impl std::fmt::Display for Learners {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether candidates are compared with or without the shrinkage factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Compare `R(F + nu f)`.
    Damped,
    /// Compare `R(F + f)`.
    Undamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum RhoSpec {
    Fixed { rho: f64 },
    /// Decays to 0.01 at the mean `k`-nearest-neighbor distance.
    Knn { k: usize },
    /// Mean distance to all other rows.
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub rho: RhoSpec,
    pub lambda: f64,
    pub nystrom: Option<usize>,
    pub seed: u64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            rho: RhoSpec::Fixed { rho: 1.0 },
            lambda: 1.0,
            nystrom: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub iterations: usize,
    pub nu: f64,
    /// Newton steps; gradient steps (unit Hessians) otherwise.
    pub newton: bool,
    pub learners: Learners,
    pub tree: TreeParams,
    pub kernel: KernelParams,
    pub selection: Selection,
    /// Stop once the validation risk has not improved for this many
    /// iterations. Only used when validation data is supplied.
    pub early_stopping_rounds: Option<usize>,
    /// Fit a standardizer on the training features and store it in the model.
    pub standardize: bool,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            nu: 0.1,
            newton: false,
            learners: Learners::Ktboost,
            tree: TreeParams::default(),
            kernel: KernelParams::default(),
            selection: Selection::Damped,
            early_stopping_rounds: None,
            standardize: true,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("need at least one boosting iteration"));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid(format!("shrinkage must be positive, got {}", self.nu)));
        }
        if self.learners.uses_kernels() {
            if !(self.kernel.lambda >= 0.0 && self.kernel.lambda.is_finite()) {
                return Err(Error::invalid("lambda must be nonnegative"));
            }
            match self.kernel.rho {
                RhoSpec::Fixed { rho } if !(rho > 0.0 && rho.is_finite()) => {
                    return Err(Error::invalid("kernel range must be positive"))
                }
                RhoSpec::Knn { k: 0 } => return Err(Error::invalid("neighbor count must be positive")),
                _ => {}
            }
            if self.kernel.nystrom == Some(0) {
                return Err(Error::invalid("nystrom sample count must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerTag {
    Tree,
    Kernel,
}

/// Per-iteration record of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Training risk of the initial constant.
    pub initial_risk: f64,
    /// Training risk after each iteration.
    pub train_risk: Vec<f64>,
    pub tags: Vec<LearnerTag>,
    /// Risk used to compare the tree candidate (damped or undamped).
    pub tree_risk: Vec<Option<f64>>,
    pub kernel_risk: Vec<Option<f64>>,
    pub validation_risk: Option<Vec<f64>>,
    /// Validation-risk argmin (earliest on ties), or all completed
    /// iterations without validation data.
    pub selected_iterations: usize,
    /// Kernel range actually used.
    pub rho: Option<f64>,
}

impl FitReport {
    pub fn completed_iterations(&self) -> usize {
        self.train_risk.len()
    }
}

/// Sum of per-sample losses. `scores` is row-major `n * d`.
pub fn empirical_risk(loss: &Loss, targets: &[f64], scores: &[f64]) -> f64 {
    let d = loss.outputs();
    targets
        .iter()
        .enumerate()
        .map(|(i, &y)| loss.value(y, &scores[i * d..(i + 1) * d]))
        .sum()
}

/// Risk of `scores + factor * preds` where `preds[k]` is output `k`'s column.
fn shifted_risk(loss: &Loss, targets: &[f64], scores: &[f64], preds: &[Vec<f64>], factor: f64) -> f64 {
    let d = loss.outputs();
    let mut row = vec![0.0; d];
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        for k in 0..d {
            row[k] = scores[i * d + k] + factor * preds[k][i];
        }
        total += loss.value(y, &row);
    }
    total
}

fn apply_update(scores: &mut [f64], preds: &[Vec<f64>], nu: f64) {
    let d = preds.len();
    for (k, col) in preds.iter().enumerate() {
        for (i, p) in col.iter().enumerate() {
            scores[i * d + k] += nu * p;
        }
    }
}

/// Kernel range for the configured spec, measured on `rows`.
pub fn resolve_rho(spec: RhoSpec, rows: &Matrix) -> Result<f64> {
    match spec {
        RhoSpec::Fixed { rho } => Ok(rho),
        RhoSpec::Knn { k } => select_rho(rows, k, RhoMode::Decay01),
        RhoSpec::Slow => select_rho(rows, 0, RhoMode::Slow),
    }
}

enum KernelSolver {
    Newton(KernelBasis),
    Gradient(GradientKernel),
}

impl KernelSolver {
    fn basis(&self) -> &KernelBasis {
        match self {
            KernelSolver::Newton(b) => b,
            KernelSolver::Gradient(g) => g.basis(),
        }
    }

    fn solve(&self, gh: &GradHess, k: usize) -> Result<Vec<f64>> {
        match self {
            KernelSolver::Newton(b) => b.solve_newton(gh.grad(k), gh.hess(k)),
            KernelSolver::Gradient(g) => g.solve(gh.grad(k)),
        }
    }
}

struct KernelState {
    solver: KernelSolver,
    validation_cross: Option<nalgebra::DMatrix<f64>>,
    rho: f64,
}

fn setup_kernel(
    x: &Arc<Matrix>,
    xv: Option<&Matrix>,
    config: &BoostConfig,
) -> Result<KernelState> {
    let params = &config.kernel;
    let n = x.rows();
    let rho = match params.nystrom {
        Some(l) => {
            let idx = nystrom_indices(n, l, params.seed)?;
            resolve_rho(params.rho, &x.select_rows(&idx))?
        }
        None => resolve_rho(params.rho, x)?,
    };
    let kcfg = KernelConfig {
        rho,
        lambda: params.lambda,
        nystrom_samples: params.nystrom,
        seed: params.seed,
    };
    kcfg.validate(n)?;
    let basis = match params.nystrom {
        None => KernelBasis::exact_shared(x.clone(), rho, params.lambda),
        Some(_) => KernelBasis::new(x, &kcfg)?,
    };
    let validation_cross = xv.map(|v| basis.cross_with(v));
    let solver = if config.newton {
        KernelSolver::Newton(basis)
    } else {
        KernelSolver::Gradient(GradientKernel::new(basis)?)
    };
    Ok(KernelState {
        solver,
        validation_cross,
        rho,
    })
}

struct TreeCandidate {
    trees: Vec<Tree>,
    preds: Vec<Vec<f64>>,
}

struct KernelCandidate {
    alphas: Vec<Vec<f64>>,
    preds: Vec<Vec<f64>>,
}

/// Runs the boosting loop.
///
/// With `validation` supplied the report carries the validation risk after
/// every iteration and `selected_iterations` is its argmin; the returned
/// ensemble always holds every completed iteration (see
/// [`Ensemble::truncated`]).
pub fn fit(
    train: &Dataset,
    config: &BoostConfig,
    validation: Option<&Dataset>,
) -> Result<(Ensemble, FitReport)> {
    config.validate()?;
    let n = train.n_rows();
    if n < 2 {
        return Err(Error::invalid("need at least two training rows"));
    }
    let loss = Loss::for_task(train.task());
    if let Some(v) = validation {
        if v.task() != train.task() {
            return Err(Error::invalid("validation task differs from training task"));
        }
        if v.n_features() != train.n_features() {
            return Err(Error::DimensionMismatch {
                expected: train.n_features(),
                found: v.n_features(),
            });
        }
    }

    let standardizer = if config.standardize {
        Standardizer::fit(train.features())
    } else {
        Standardizer::identity(train.n_features())
    };
    let x = Arc::new(standardizer.transform(train.features())?);
    let xv = validation
        .map(|v| standardizer.transform(v.features()))
        .transpose()?;
    let y = train.targets();
    let d = loss.outputs();

    let f0 = loss.optimal_constant(y)?;
    let mut scores: Vec<f64> = (0..n).flat_map(|_| f0.iter().copied()).collect();
    let mut val_scores: Option<Vec<f64>> = validation
        .map(|v| (0..v.n_rows()).flat_map(|_| f0.iter().copied()).collect());

    let kernel = if config.learners.uses_kernels() {
        Some(setup_kernel(&x, xv.as_ref(), config)?)
    } else {
        None
    };
    let order = config.learners.uses_trees().then(|| FeatureOrder::new(&x));

    let mut report = FitReport {
        initial_risk: empirical_risk(&loss, y, &scores),
        train_risk: Vec::with_capacity(config.iterations),
        tags: Vec::with_capacity(config.iterations),
        tree_risk: Vec::with_capacity(config.iterations),
        kernel_risk: Vec::with_capacity(config.iterations),
        validation_risk: validation.map(|_| Vec::with_capacity(config.iterations)),
        selected_iterations: 0,
        rho: kernel.as_ref().map(|k| k.rho),
    };
    let mut iterations = Vec::with_capacity(config.iterations);
    let compare_factor = match config.selection {
        Selection::Damped => config.nu,
        Selection::Undamped => 1.0,
    };
    let mut best_val = (f64::INFINITY, 0usize);

    for m in 1..=config.iterations {
        let gh = loss.gradient_hessian(y, &scores, config.newton);
        if !gh.is_finite() {
            return Err(Error::NonFinite(format!("gradients at iteration {m}")));
        }

        let fit_trees = || -> Result<Option<TreeCandidate>> {
            let Some(order) = order.as_ref() else {
                return Ok(None);
            };
            let trees = (0..d)
                .map(|k| fit_tree_presorted(&x, order, gh.grad(k), gh.hess(k), &config.tree))
                .collect::<Result<Vec<_>>>()?;
            let preds = trees.iter().map(|t| t.predict_matrix(&x)).collect();
            Ok(Some(TreeCandidate { trees, preds }))
        };
        let fit_kernels = || -> Result<Option<KernelCandidate>> {
            let Some(state) = kernel.as_ref() else {
                return Ok(None);
            };
            let alphas = (0..d)
                .map(|k| state.solver.solve(&gh, k))
                .collect::<Result<Vec<_>>>()?;
            let preds = alphas
                .iter()
                .map(|a| state.solver.basis().fitted_values(a))
                .collect();
            Ok(Some(KernelCandidate { alphas, preds }))
        };
        let (tree_cand, kernel_cand) = rayon::join(fit_trees, fit_kernels);
        let (tree_cand, kernel_cand) = (tree_cand?, kernel_cand?);

        let tree_risk = tree_cand
            .as_ref()
            .map(|c| shifted_risk(&loss, y, &scores, &c.preds, compare_factor));
        let kernel_risk = kernel_cand
            .as_ref()
            .map(|c| shifted_risk(&loss, y, &scores, &c.preds, compare_factor));
        let take_tree = match (tree_risk, kernel_risk) {
            (Some(t), Some(k)) => t <= k,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => unreachable!("no learner type enabled"),
        };

        let (tag, learners, preds) = if take_tree {
            let c = tree_cand.unwrap();
            let learners = c.trees.into_iter().map(BaseLearner::Tree).collect::<Vec<_>>();
            (LearnerTag::Tree, learners, c.preds)
        } else {
            let c = kernel_cand.unwrap();
            let basis = kernel.as_ref().unwrap().solver.basis();
            let learners = c
                .alphas
                .into_iter()
                .map(|a| basis.learner(a).map(BaseLearner::Kernel))
                .collect::<Result<Vec<_>>>()?;
            (LearnerTag::Kernel, learners, c.preds)
        };

        apply_update(&mut scores, &preds, config.nu);
        let risk = empirical_risk(&loss, y, &scores);
        if !risk.is_finite() {
            return Err(Error::NonFinite(format!("training risk at iteration {m}")));
        }

        if let (Some(vs), Some(v), Some(xv)) = (val_scores.as_mut(), validation, xv.as_ref()) {
            let vpreds: Vec<Vec<f64>> = learners
                .iter()
                .map(|l| match l {
                    BaseLearner::Tree(t) => t.predict_matrix(xv),
                    BaseLearner::Kernel(kl) => {
                        let cross = kernel.as_ref().unwrap().validation_cross.as_ref().unwrap();
                        mat_vec(cross, kl.alpha())
                    }
                })
                .collect();
            apply_update(vs, &vpreds, config.nu);
            let vr = empirical_risk(&loss, v.targets(), vs);
            if !vr.is_finite() {
                return Err(Error::NonFinite(format!("validation risk at iteration {m}")));
            }
            report.validation_risk.as_mut().unwrap().push(vr);
            if vr < best_val.0 {
                best_val = (vr, m);
            }
        }

        log::debug!("iteration {m}: {tag:?} admitted, training risk {risk}");
        report.train_risk.push(risk);
        report.tags.push(tag);
        report.tree_risk.push(tree_risk);
        report.kernel_risk.push(kernel_risk);
        iterations.push(Iteration::new(tag, learners));

        if let Some(rounds) = config.early_stopping_rounds {
            if validation.is_some() && m - best_val.1 >= rounds {
                break;
            }
        }
    }

    report.selected_iterations = if validation.is_some() {
        best_val.1.max(1)
    } else {
        iterations.len()
    };

    let label_map = match train.class_labels() {
        Some(l) => l.to_vec(),
        None if train.task().is_classification() => {
            (0..train.task().classes()).map(|k| k.to_string()).collect()
        }
        None => Vec::new(),
    };
    let ensemble = Ensemble::from_parts(
        train.task(),
        loss,
        config.nu,
        f0,
        standardizer,
        label_map,
        iterations,
    )?;
    Ok((ensemble, report))
}
