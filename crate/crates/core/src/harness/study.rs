//! End-to-end comparison runs: the jump-plus-sine simulation and the
//! repeated-split benchmark over user-supplied datasets.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{fit, BoostConfig, KernelParams, Learners, RhoSpec, Selection};
use crate::data::{split, Dataset, Matrix, SplitSpec};
use crate::error::{Error, Result};
use crate::trees::TreeParams;

use super::grid::{grid_search, GridSpec};
use super::metrics::{metric, mse, unit_grid};
use super::sim::SimFunction;
use super::stats::{average_ranks, friedman_iman_davenport, holm, rank_rows, sign_test, wins_losses, Friedman};
use super::traces::{grid_rows, iteration_rows, TraceRow};

/// Independent stream `(base, a, b)` for per-replication seeds.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyConfig {
    pub replications: usize,
    /// Rows in each of the training, validation and test sets.
    pub n: usize,
    pub nu: f64,
    pub max_depth: usize,
    pub rho: f64,
    pub lambda: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub methods: Vec<Learners>,
    pub selection: Selection,
    /// Standardize the input before boosting; `rho` then refers to
    /// standardized units.
    pub standardize: bool,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        Self {
            replications: 100,
            n: 1000,
            nu: 0.1,
            max_depth: 1,
            rho: 0.1,
            lambda: 1.0,
            max_iterations: 1000,
            seed: 0,
            grid_points: 201,
            methods: vec![Learners::Ktboost, Learners::Tree, Learners::Kernel],
            selection: Selection::Damped,
            standardize: false,
        }
    }
}

impl SimStudyConfig {
    pub fn boost_config(&self, learners: Learners) -> BoostConfig {
        BoostConfig {
            iterations: self.max_iterations,
            nu: self.nu,
            newton: false,
            learners,
            tree: TreeParams {
                max_depth: self.max_depth,
                min_samples_leaf: 1,
            },
            kernel: KernelParams {
                rho: RhoSpec::Fixed { rho: self.rho },
                lambda: self.lambda,
                nystrom: None,
                seed: self.seed,
            },
            selection: self.selection,
            early_stopping_rounds: None,
            standardize: self.standardize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReplication {
    pub replication: usize,
    pub function: SimFunction,
    /// Per method, in the configured method order.
    pub selected_iterations: Vec<usize>,
    /// Test MSE against the noisy test targets.
    pub test_mse: Vec<f64>,
    /// Squared error against the noiseless function at each grid point.
    pub pointwise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyResult {
    pub methods: Vec<Learners>,
    pub grid: Vec<f64>,
    /// Per method, averaged over replications.
    pub pointwise_mse: Vec<Vec<f64>>,
    pub replications: Vec<SimReplication>,
}

impl SimStudyResult {
    /// Test MSEs of method `j` across replications.
    pub fn test_mse(&self, j: usize) -> Vec<f64> {
        self.replications.iter().map(|r| r.test_mse[j]).collect()
    }

    pub fn method_index(&self, learners: Learners) -> Option<usize> {
        self.methods.iter().position(|m| *m == learners)
    }

    pub fn pointwise_traces(&self) -> Vec<TraceRow> {
        self.methods
            .iter()
            .zip(&self.pointwise_mse)
            .flat_map(|(m, v)| grid_rows(&self.grid, v, m.name(), 0))
            .collect()
    }
}

/// One replication: a fresh random function with fresh training,
/// validation and test samples.
pub fn run_sim_replication(config: &SimStudyConfig, replication: usize, grid: &[f64]) -> Result<SimReplication> {
    let r = replication as u64;
    let function = SimFunction::new(derive_seed(config.seed, r, 0));
    let train = function.simulate(config.n, derive_seed(config.seed, r, 1))?;
    let valid = function.simulate(config.n, derive_seed(config.seed, r, 2))?;
    let test = function.simulate(config.n, derive_seed(config.seed, r, 3))?;
    let x_grid = Matrix::column_vector(grid.to_vec());
    let truth: Vec<f64> = grid.iter().map(|&x| function.value(x)).collect();

    let mut selected = Vec::new();
    let mut test_mse = Vec::new();
    let mut pointwise = Vec::new();
    for &method in &config.methods {
        let (model, report) = fit(&train, &config.boost_config(method), Some(&valid))?;
        let model = model.truncated(report.selected_iterations);
        let pred = model.predict(test.features(), None)?;
        test_mse.push(mse(test.targets(), pred.as_slice()));
        let g = model.predict(&x_grid, None)?;
        pointwise.push(g.as_slice().iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).collect());
        selected.push(report.selected_iterations);
    }
    log::info!("simulation replication {replication} done: test mse {test_mse:?}");
    Ok(SimReplication {
        replication,
        function,
        selected_iterations: selected,
        test_mse,
        pointwise,
    })
}

pub fn run_simulation_study(config: &SimStudyConfig) -> Result<SimStudyResult> {
    if config.replications == 0 || config.methods.is_empty() {
        return Err(Error::invalid("need at least one replication and one method"));
    }
    let grid = unit_grid(config.grid_points);
    let replications = (0..config.replications)
        .into_par_iter()
        .map(|r| run_sim_replication(config, r, &grid))
        .collect::<Result<Vec<_>>>()?;
    let reps = replications.len() as f64;
    let pointwise_mse = (0..config.methods.len())
        .map(|j| {
            (0..grid.len())
                .map(|i| replications.iter().map(|r| r.pointwise[j][i]).sum::<f64>() / reps)
                .collect()
        })
        .collect();
    Ok(SimStudyResult {
        methods: config.methods.clone(),
        grid,
        pointwise_mse,
        replications,
    })
}

#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub name: String,
    pub data: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub splits: usize,
    pub seed: u64,
    pub methods: Vec<Learners>,
    /// Newton steps; defaults to Newton for classification and gradient
    /// steps for regression.
    pub newton: Option<bool>,
    pub nystrom: Option<usize>,
    /// Replaces the shrinkage grid, e.g. to hold it fixed.
    pub nus: Option<Vec<f64>>,
    pub max_iterations: usize,
    pub fractions: [f64; 3],
    /// Also record per-iteration test metrics of each winning configuration.
    pub traces: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            splits: 10,
            seed: 0,
            methods: vec![Learners::Ktboost, Learners::Tree, Learners::Kernel],
            newton: None,
            nystrom: None,
            nus: None,
            max_iterations: 1000,
            fractions: [1.0 / 3.0; 3],
            traces: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn grid(&self, train: &Dataset, split_seed: u64) -> GridSpec {
        let newton = self.newton.unwrap_or(train.task().is_classification());
        let mut g = GridSpec::paper(train.n_rows(), newton, self.nystrom);
        if let Some(nus) = &self.nus {
            g.nus = nus.clone();
        }
        g.max_iterations = self.max_iterations;
        g.seed = split_seed;
        g
    }
}

/// One line of the results manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub dataset: String,
    pub method: String,
    pub split_seed: u64,
    pub config: BoostConfig,
    pub validation_metric: f64,
    pub test_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSignTest {
    pub method: String,
    pub other: String,
    pub wins: u64,
    pub losses: u64,
    /// Holm-adjusted over all method pairs; absent when every dataset tied.
    pub adjusted_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// Dataset by method mean of the test metric over splits.
    pub mean: Vec<Vec<f64>>,
    /// Dataset by method sample standard deviation over splits.
    pub sd: Vec<Vec<f64>>,
    pub ranks: Vec<Vec<f64>>,
    pub average_ranks: Vec<f64>,
    pub friedman: Option<Friedman>,
    pub sign_tests: Vec<PairwiseSignTest>,
}

impl ComparisonTable {
    /// Builds the table from per-split test metrics,
    /// `metrics[dataset][method][split]`.
    pub fn from_metrics(datasets: Vec<String>, methods: Vec<String>, metrics: &[Vec<Vec<f64>>]) -> Result<Self> {
        if metrics.len() != datasets.len() || metrics.iter().any(|d| d.len() != methods.len()) {
            return Err(Error::invalid("metric table does not match datasets and methods"));
        }
        let mean: Vec<Vec<f64>> = metrics
            .iter()
            .map(|d| d.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect())
            .collect();
        let sd = metrics
            .iter()
            .zip(&mean)
            .map(|(d, mu)| {
                d.iter()
                    .zip(mu)
                    .map(|(s, m)| {
                        if s.len() < 2 {
                            0.0
                        } else {
                            (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64).sqrt()
                        }
                    })
                    .collect()
            })
            .collect();
        let ranks = rank_rows(&mean);
        let avg = average_ranks(&ranks);
        let friedman = if datasets.len() >= 2 && methods.len() >= 2 {
            friedman_iman_davenport(&ranks).ok()
        } else {
            None
        };

        let k = methods.len();
        let mut pairs = Vec::new();
        for a in 0..k {
            for b in a + 1..k {
                let col = |j: usize| mean.iter().map(|row: &Vec<f64>| row[j]).collect::<Vec<_>>();
                let (w, l) = wins_losses(&col(a), &col(b));
                pairs.push((a, b, w, l));
            }
        }
        let raw: Vec<Option<f64>> = pairs.iter().map(|&(_, _, w, l)| sign_test(w, l).ok()).collect();
        let decided: Vec<f64> = raw.iter().flatten().copied().collect();
        let adjusted = holm(&decided, pairs.len())?;
        let mut adj_iter = adjusted.into_iter();
        let sign_tests = pairs
            .iter()
            .zip(&raw)
            .map(|(&(a, b, wins, losses), r)| PairwiseSignTest {
                method: methods[a].clone(),
                other: methods[b].clone(),
                wins,
                losses,
                adjusted_p: r.map(|_| adj_iter.next().expect("one adjusted value per decided pair")),
            })
            .collect();
        Ok(Self {
            datasets,
            methods,
            mean,
            sd,
            ranks,
            average_ranks: avg,
            friedman,
            sign_tests,
        })
    }

    /// `dataset,method,mean,sd,rank` rows followed by the average ranks.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["dataset", "method", "mean", "sd", "rank"]).map_err(io)?;
        for (i, d) in self.datasets.iter().enumerate() {
            for (j, m) in self.methods.iter().enumerate() {
                w.write_record([
                    d.clone(),
                    m.clone(),
                    self.mean[i][j].to_string(),
                    self.sd[i][j].to_string(),
                    self.ranks[i][j].to_string(),
                ])
                .map_err(io)?;
            }
        }
        for (j, m) in self.methods.iter().enumerate() {
            w.write_record(["average_rank".into(), m.clone(), String::new(), String::new(), self.average_ranks[j].to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub rows: Vec<ManifestRow>,
    pub table: ComparisonTable,
    /// Per-iteration test metric of each winning configuration, with the
    /// split number as the replication.
    pub traces: Vec<TraceRow>,
}

impl BenchmarkResult {
    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.rows).expect("finite manifest");
        s.push('\n');
        s
    }
}

struct SplitOutcome {
    rows: Vec<ManifestRow>,
    traces: Vec<TraceRow>,
}

fn run_split(dataset: &NamedDataset, config: &BenchmarkConfig, split_index: usize) -> Result<SplitOutcome> {
    let split_seed = derive_seed(config.seed, split_index as u64, 0);
    let spec = SplitSpec {
        fractions: config.fractions,
        seed: split_seed,
    };
    let (train, valid, test) = split(&dataset.data, &spec)?;
    let grid = config.grid(&train, split_seed);
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for &method in &config.methods {
        let result = grid_search(&train, &valid, &grid, method)?;
        let scores = result.model.predict(test.features(), None)?;
        let test_metric = metric(test.task(), test.targets(), &scores)?;
        log::info!(
            "{} split {split_index} {method}: validation {} test {test_metric}",
            dataset.name,
            result.validation_metric
        );
        if config.traces {
            let mut full = result.best;
            full.iterations = config.max_iterations;
            let (model, _) = fit(&train, &full, None)?;
            let mut values = Vec::with_capacity(model.len());
            let n = test.n_rows();
            let d = model.outputs();
            model.for_each_stage(test.features(), None, |_, s| {
                let m = Matrix::new(n, d, s.to_vec()).expect("stage scores shape");
                values.push(metric(test.task(), test.targets(), &m).expect("metric on matching rows"));
            })?;
            traces.extend(iteration_rows(&values, method.name(), split_index));
        }
        rows.push(ManifestRow {
            dataset: dataset.name.clone(),
            method: method.name().to_owned(),
            split_seed,
            config: result.best,
            validation_metric: result.validation_metric,
            test_metric,
        });
    }
    Ok(SplitOutcome { rows, traces })
}

/// Tunes and evaluates every method on `splits` random splits of every
/// dataset.
pub fn run_benchmark(datasets: &[NamedDataset], config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    if datasets.is_empty() || config.splits == 0 || config.methods.is_empty() {
        return Err(Error::invalid("need datasets, splits and methods"));
    }
    let jobs: Vec<(usize, usize)> = (0..datasets.len())
        .flat_map(|d| (0..config.splits).map(move |s| (d, s)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(d, s)| run_split(&datasets[d], config, s))
        .collect::<Result<Vec<_>>>()?;

    let k = config.methods.len();
    let mut metrics = vec![vec![Vec::with_capacity(config.splits); k]; datasets.len()];
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (&(d, _), out) in jobs.iter().zip(outcomes) {
        for (j, r) in out.rows.iter().enumerate() {
            metrics[d][j].push(r.test_metric);
        }
        rows.extend(out.rows);
        traces.extend(out.traces);
    }
    let table = ComparisonTable::from_metrics(
        datasets.iter().map(|d| d.name.clone()).collect(),
        config.methods.iter().map(|m| m.name().to_owned()).collect(),
        &metrics,
    )?;
    Ok(BenchmarkResult { rows, table, traces })
}
