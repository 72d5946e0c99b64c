use std::sync::Arc;

use nalgebra::DMatrix;

use super::LearnerTag;
use crate::data::{Matrix, Standardizer, Task};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, mat_vec, KernelLearner};
use crate::losses::{sigmoid, softmax_into, Loss};
use crate::trees::Tree;

#[derive(Debug, Clone, PartialEq)]
pub enum BaseLearner {
    Tree(Tree),
    Kernel(KernelLearner),
}

impl BaseLearner {
    pub fn tag(&self) -> LearnerTag {
        match self {
            BaseLearner::Tree(_) => LearnerTag::Tree,
            BaseLearner::Kernel(_) => LearnerTag::Kernel,
        }
    }

    /// Prediction on already standardized rows.
    pub fn predict_matrix(&self, features: &Matrix) -> Vec<f64> {
        match self {
            BaseLearner::Tree(t) => t.predict_matrix(features),
            BaseLearner::Kernel(k) => k.predict_matrix(features),
        }
    }
}

/// One boosting iteration: a learner per model output, all of one type.
#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    tag: LearnerTag,
    per_class: Vec<BaseLearner>,
}

impl Iteration {
    pub(crate) fn new(tag: LearnerTag, per_class: Vec<BaseLearner>) -> Self {
        Self { tag, per_class }
    }

    pub fn tag(&self) -> LearnerTag {
        self.tag
    }

    pub fn per_class(&self) -> &[BaseLearner] {
        &self.per_class
    }
}

/// A fitted model `F(x) = f0 + nu * sum_m f_m(x)` on standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    task: Task,
    loss: Loss,
    nu: f64,
    f0: Vec<f64>,
    standardizer: Standardizer,
    label_map: Vec<String>,
    iterations: Vec<Iteration>,
}

/// Kernel learners that share anchors and range, merged by summing their
/// coefficients so the kernel is evaluated once per group.
struct KernelGroup {
    anchors: Arc<Matrix>,
    rho: f64,
    /// Summed shrunken coefficients per output.
    alpha: Vec<Option<Vec<f64>>>,
}

impl Ensemble {
    pub fn from_parts(
        task: Task,
        loss: Loss,
        nu: f64,
        f0: Vec<f64>,
        standardizer: Standardizer,
        label_map: Vec<String>,
        iterations: Vec<Iteration>,
    ) -> Result<Self> {
        let d = task.outputs();
        loss.check_task(task)?;
        if f0.len() != d {
            return Err(Error::invalid(format!("expected {d} initial constants, got {}", f0.len())));
        }
        if !(nu > 0.0 && nu.is_finite()) || f0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("shrinkage or initial constant".into()));
        }
        if standardizer.scales.len() != standardizer.means.len()
            || standardizer.scales.iter().any(|s| !(*s > 0.0))
        {
            return Err(Error::invalid("standardizer scales must be positive and match means"));
        }
        if task.is_classification() && label_map.len() != task.classes() {
            return Err(Error::invalid(format!(
                "expected {} class labels, got {}",
                task.classes(),
                label_map.len()
            )));
        }
        let p = standardizer.n_features();
        for (m, it) in iterations.iter().enumerate() {
            if it.per_class.len() != d {
                return Err(Error::invalid(format!("iteration {m} has {} learners, expected {d}", it.per_class.len())));
            }
            for l in &it.per_class {
                if l.tag() != it.tag {
                    return Err(Error::invalid(format!("iteration {m} mixes learner types")));
                }
                let fits = match l {
                    BaseLearner::Tree(t) => t.max_feature().map_or(true, |j| j < p),
                    BaseLearner::Kernel(k) => k.anchors().cols() == p,
                };
                if !fits {
                    return Err(Error::DimensionMismatch { expected: p, found: 0 });
                }
            }
        }
        Ok(Self {
            task,
            loss,
            nu,
            f0,
            standardizer,
            label_map,
            iterations,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Class names by class index; empty for regression.
    pub fn label_map(&self) -> &[String] {
        &self.label_map
    }

    pub fn iterations(&self) -> &[Iteration] {
        &self.iterations
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.standardizer.n_features()
    }

    pub fn outputs(&self) -> usize {
        self.f0.len()
    }

    pub fn tags(&self) -> Vec<LearnerTag> {
        self.iterations.iter().map(|it| it.tag).collect()
    }

    /// The model after its first `m` iterations.
    pub fn truncated(&self, m: usize) -> Ensemble {
        let mut out = self.clone();
        out.iterations.truncate(m);
        out
    }

    fn prepare(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: features.cols(),
            });
        }
        self.standardizer.transform(features)
    }

    fn kernel_groups(&self, upto: usize) -> Vec<KernelGroup> {
        let d = self.outputs();
        let mut groups: Vec<KernelGroup> = Vec::new();
        for it in &self.iterations[..upto] {
            for (k, l) in it.per_class.iter().enumerate() {
                let BaseLearner::Kernel(kl) = l else { continue };
                let pos = groups
                    .iter()
                    .position(|g| Arc::ptr_eq(&g.anchors, kl.anchors()) && g.rho.to_bits() == kl.rho().to_bits());
                let g = match pos {
                    Some(i) => &mut groups[i],
                    None => {
                        groups.push(KernelGroup {
                            anchors: kl.anchors().clone(),
                            rho: kl.rho(),
                            alpha: vec![None; d],
                        });
                        groups.last_mut().unwrap()
                    }
                };
                let acc = g.alpha[k].get_or_insert_with(|| vec![0.0; kl.alpha().len()]);
                for (a, b) in acc.iter_mut().zip(kl.alpha()) {
                    *a += self.nu * b;
                }
            }
        }
        groups
    }

    /// Raw scores `F(x)`, one row per input and one column per output.
    /// `truncate_at` limits the sum to the first `m` iterations.
    pub fn predict(&self, features: &Matrix, truncate_at: Option<usize>) -> Result<Matrix> {
        let x = self.prepare(features)?;
        let upto = truncate_at.unwrap_or(self.len()).min(self.len());
        let n = x.rows();
        let d = self.outputs();
        let mut scores = Matrix::new(n, d, (0..n).flat_map(|_| self.f0.iter().copied()).collect())?;
        for it in &self.iterations[..upto] {
            if it.tag != LearnerTag::Tree {
                continue;
            }
            for (k, l) in it.per_class.iter().enumerate() {
                if let BaseLearner::Tree(t) = l {
                    for i in 0..n {
                        let v = scores.get(i, k) + self.nu * t.predict(x.row(i));
                        scores.set(i, k, v);
                    }
                }
            }
        }
        for g in self.kernel_groups(upto) {
            let cross = kernel_matrix(&x, &g.anchors, g.rho);
            for (k, alpha) in g.alpha.iter().enumerate() {
                let Some(alpha) = alpha else { continue };
                for (i, v) in mat_vec(&cross, alpha).into_iter().enumerate() {
                    scores.set(i, k, scores.get(i, k) + v);
                }
            }
        }
        Ok(scores)
    }

    /// Calls `visit(m, scores)` with the row-major score matrix after each
    /// of the first `upto` iterations (`m` from 1). Scores are accumulated in
    /// iteration order, matching the running scores of the fit.
    pub fn for_each_stage(
        &self,
        features: &Matrix,
        upto: Option<usize>,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        let x = self.prepare(features)?;
        let upto = upto.unwrap_or(self.len()).min(self.len());
        let n = x.rows();
        let d = self.outputs();
        let mut scores: Vec<f64> = (0..n).flat_map(|_| self.f0.iter().copied()).collect();
        let mut crosses: Vec<(Arc<Matrix>, u64, DMatrix<f64>)> = Vec::new();
        for (m, it) in self.iterations[..upto].iter().enumerate() {
            for (k, l) in it.per_class.iter().enumerate() {
                let pred = match l {
                    BaseLearner::Tree(t) => t.predict_matrix(&x),
                    BaseLearner::Kernel(kl) => {
                        let bits = kl.rho().to_bits();
                        let pos = crosses
                            .iter()
                            .position(|(a, r, _)| Arc::ptr_eq(a, kl.anchors()) && *r == bits);
                        let idx = match pos {
                            Some(i) => i,
                            None => {
                                crosses.push((kl.anchors().clone(), bits, kernel_matrix(&x, kl.anchors(), kl.rho())));
                                crosses.len() - 1
                            }
                        };
                        mat_vec(&crosses[idx].2, kl.alpha())
                    }
                };
                for (i, p) in pred.iter().enumerate() {
                    scores[i * d + k] += self.nu * p;
                }
            }
            visit(m + 1, &scores);
        }
        Ok(())
    }

    /// Class probabilities, one column per class (two for binary tasks).
    pub fn predict_proba(&self, features: &Matrix, truncate_at: Option<usize>) -> Result<Matrix> {
        let scores = self.predict(features, truncate_at)?;
        Self::scores_to_proba(self.task, &scores)
    }

    pub fn scores_to_proba(task: Task, scores: &Matrix) -> Result<Matrix> {
        match task {
            Task::Regression => Err(Error::invalid("probabilities are undefined for regression")),
            Task::Binary => {
                let data = scores
                    .as_slice()
                    .iter()
                    .flat_map(|&f| {
                        let p = sigmoid(f);
                        [1.0 - p, p]
                    })
                    .collect();
                Matrix::new(scores.rows(), 2, data)
            }
            Task::Multiclass { classes } => {
                let mut out = Matrix::zeros(scores.rows(), classes);
                for i in 0..scores.rows() {
                    softmax_into(scores.row(i), out.row_mut(i));
                }
                Ok(out)
            }
        }
    }

    /// Hard class indices; ties go to the lowest class.
    pub fn predict_labels(&self, features: &Matrix, truncate_at: Option<usize>) -> Result<Vec<usize>> {
        let scores = self.predict(features, truncate_at)?;
        Self::scores_to_labels(self.task, &scores)
    }

    pub fn scores_to_labels(task: Task, scores: &Matrix) -> Result<Vec<usize>> {
        match task {
            Task::Regression => Err(Error::invalid("labels are undefined for regression")),
            Task::Binary => Ok(scores.as_slice().iter().map(|&f| usize::from(f > 0.0)).collect()),
            Task::Multiclass { .. } => Ok(scores.row_iter().map(argmax).collect()),
        }
    }
}

/// Index of the first maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
