use crate::boost::Ensemble;
use crate::data::{Matrix, Task};
use crate::error::{Error, Result};

use super::sim::SimFunction;

/// Mean (not summed) squared error.
pub fn mse(targets: &[f64], predictions: &[f64]) -> f64 {
    assert_eq!(targets.len(), predictions.len());
    let n = targets.len() as f64;
    targets
        .iter()
        .zip(predictions)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / n
}

/// Fraction of misclassified rows.
pub fn error_rate(targets: &[f64], labels: &[usize]) -> f64 {
    assert_eq!(targets.len(), labels.len());
    let wrong = targets
        .iter()
        .zip(labels)
        .filter(|(y, l)| **y != **l as f64)
        .count();
    wrong as f64 / targets.len() as f64
}

/// Test MSE for regression and misclassification rate of the hard labels
/// for classification. `scores` is the raw `n x d` score matrix.
pub fn metric(task: Task, targets: &[f64], scores: &Matrix) -> Result<f64> {
    if scores.rows() != targets.len() || scores.cols() != task.outputs() {
        return Err(Error::invalid("score matrix does not match targets"));
    }
    if targets.is_empty() {
        return Err(Error::invalid("no rows to evaluate"));
    }
    match task {
        Task::Regression => Ok(mse(targets, scores.as_slice())),
        _ => Ok(error_rate(targets, &Ensemble::scores_to_labels(task, scores)?)),
    }
}

/// Squared error against the noiseless function at every grid point,
/// averaged over replications. Each replication pairs its own random
/// function with the model fitted to data drawn from it.
pub fn pointwise_mse(runs: &[(SimFunction, Ensemble)], grid: &[f64]) -> Result<Vec<f64>> {
    if runs.is_empty() {
        return Err(Error::invalid("need at least one replication"));
    }
    let x = Matrix::column_vector(grid.to_vec());
    let mut acc = vec![0.0; grid.len()];
    for (f, model) in runs {
        let pred = model.predict(&x, None)?;
        for (a, (&xi, &p)) in acc.iter_mut().zip(grid.iter().zip(pred.as_slice())) {
            *a += (p - f.value(xi)).powi(2);
        }
    }
    let r = runs.len() as f64;
    Ok(acc.into_iter().map(|a| a / r).collect())
}

/// `points` equally spaced values covering `[0, 1]`.
pub fn unit_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

/// Mean of `values` over grid points in `[lo, hi]`.
pub fn interval_mean(grid: &[f64], values: &[f64], lo: f64, hi: f64) -> f64 {
    let sel: Vec<f64> = grid
        .iter()
        .zip(values)
        .filter(|(x, _)| **x >= lo && **x <= hi)
        .map(|(_, v)| *v)
        .collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Standardizer;
    use crate::losses::Loss;

    fn constant_model(c: f64) -> Ensemble {
        Ensemble::from_parts(Task::Regression, Loss::Squared, 0.1, vec![c], Standardizer::identity(1), vec![], vec![])
            .unwrap()
    }

    #[test]
    fn metric_examples() {
        let s = Matrix::column_vector(vec![1.0, 2.0]);
        assert_eq!(metric(Task::Regression, &[1.0, 2.0], &s).unwrap(), 0.0);
        let s = Matrix::column_vector(vec![1.0, 1.0]);
        assert_eq!(metric(Task::Regression, &[0.0, 2.0], &s).unwrap(), 1.0);
        // Scores whose signs give labels [1, 0, 1, 1].
        let s = Matrix::column_vector(vec![2.0, -1.0, 0.5, 3.0]);
        assert_eq!(metric(Task::Binary, &[1.0, 0.0, 0.0, 1.0], &s).unwrap(), 0.25);
    }

    #[test]
    fn pointwise_perfect_and_zero_models() {
        // Zero-size jumps leave the bare sine.
        let f = SimFunction {
            jump_locations: [0.01; 5],
            jump_sizes: [0.0; 5],
            noise_sd: 0.0,
            seed: 0,
        };
        let grid = unit_grid(101);
        let zero = pointwise_mse(&[(f.clone(), constant_model(0.0))], &grid).unwrap();
        for (x, v) in grid.iter().zip(&zero) {
            let s = (8.0 * std::f64::consts::PI * x).sin();
            assert!((v - s * s).abs() < 1e-12);
        }

        let flat = SimFunction {
            jump_locations: [0.1, 0.2, 0.3, 0.4, 0.45],
            jump_sizes: [1.0; 5],
            noise_sd: 0.0,
            seed: 0,
        };
        let at_one = flat.value(1.0);
        let errs = pointwise_mse(&[(flat, constant_model(at_one))], &[1.0]).unwrap();
        assert_eq!(errs, vec![0.0]);
    }

    #[test]
    fn interval_means() {
        let grid = unit_grid(11);
        let v: Vec<f64> = grid.iter().map(|x| if *x <= 0.5 { 1.0 } else { 3.0 }).collect();
        assert_eq!(interval_mean(&grid, &v, 0.0, 0.5), 1.0);
        assert_eq!(interval_mean(&grid, &v, 0.6, 1.0), 3.0);
    }
}
