use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use ktboost::data::{load_csv, load_feature_csv, save_csv, TargetColumn};
use ktboost::harness::metrics::{interval_mean, metric};
use ktboost::harness::study::derive_seed;
use ktboost::harness::traces::{iteration_rows, save_traces};
use ktboost::harness::{
    run_benchmark, run_simulation_study, BenchmarkConfig, ComparisonTable, NamedDataset, SimFunction, SimStudyConfig,
};
use ktboost::{empirical_risk, fit, Dataset, Ensemble, Error, LearnerTag, Learners, Matrix, Task};
use serde_json::json;

use crate::args::{BenchmarkArgs, EvaluateArgs, InputArgs, PredictArgs, SimulateArgs, TaskArg, TrainArgs};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

/// Errors while reading inputs are data errors whatever their kind.
fn data(e: impl ToString) -> Failure {
    Failure::Data(e.to_string())
}

fn computation(e: Error) -> Failure {
    if e.is_numerical() {
        Failure::Numerical(e.to_string())
    } else {
        Failure::Data(e.to_string())
    }
}

fn with_path(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn target_column(target: Option<&str>) -> TargetColumn {
    match target {
        None => TargetColumn::Last,
        Some(t) => t.parse().expect("target parsing is infallible"),
    }
}

fn resolve_task(input: &InputArgs) -> std::result::Result<TaskArg, Failure> {
    match input.loss {
        Some(loss) if loss.task() != input.task => Err(usage(format!(
            "--loss {:?} does not fit --task {:?}",
            loss, input.task
        ))),
        _ => Ok(input.task),
    }
}

fn open_output(path: Option<&Path>) -> std::result::Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| data(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Outcome {
    let mut out = open_output(path)?;
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(data)
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("finite JSON");
    s.push('\n');
    s
}

fn risk_at(initial: f64, trace: &[f64], m: usize) -> f64 {
    if m == 0 {
        initial
    } else {
        trace[m - 1]
    }
}

struct Loader {
    target: TargetColumn,
    task: TaskArg,
    header: bool,
}

impl Loader {
    fn new(input: &InputArgs, task: TaskArg) -> Self {
        Self {
            target: target_column(input.target.as_deref()),
            task,
            header: !input.no_header,
        }
    }

    fn load(&self, path: &Path) -> std::result::Result<Dataset, Failure> {
        load_csv(path, &self.target, self.task.into(), self.header).map_err(with_path(path))
    }

    /// Loads a second file with classes indexed as in `reference`.
    fn load_like(&self, path: &Path, reference: &Dataset) -> std::result::Result<Dataset, Failure> {
        let d = self.load(path)?;
        if d.n_features() != reference.n_features() {
            return Err(Failure::Data(format!(
                "{}: {} features, training data has {}",
                path.display(),
                d.n_features(),
                reference.n_features()
            )));
        }
        match reference.class_labels() {
            Some(labels) => d.align_labels(labels).map_err(with_path(path)),
            None => Ok(d),
        }
    }
}

pub fn train(a: &TrainArgs) -> Outcome {
    let task = resolve_task(&a.input)?;
    let config = a.boost.config(task);
    config.validate().map_err(usage)?;
    if config.early_stopping_rounds.is_some() && a.validation.is_none() {
        return Err(usage("--early-stopping needs --validation"));
    }

    let loader = Loader::new(&a.input, task);
    let train = loader.load(&a.data)?;
    let validation = a.validation.as_deref().map(|p| loader.load_like(p, &train)).transpose()?;
    let test = a.test.as_deref().map(|p| loader.load_like(p, &train)).transpose()?;

    let (full, report) = fit(&train, &config, validation.as_ref()).map_err(computation)?;
    let keep = if validation.is_some() {
        report.selected_iterations
    } else {
        full.len()
    };
    let model = full.truncated(keep);
    model.save(&a.out).map_err(with_path(&a.out))?;
    log::info!("saved {} of {} iterations to {}", keep, full.len(), a.out.display());

    let loss = model.loss();
    let method = config.learners.name();
    let mut trace = iteration_rows(&report.train_risk, &format!("{method}:train"), 0);
    if let Some(v) = &report.validation_risk {
        trace.extend(iteration_rows(v, &format!("{method}:validation"), 0));
    }

    let mut test_summary = serde_json::Value::Null;
    if let Some(t) = &test {
        let mut stages = Vec::with_capacity(full.len());
        full.for_each_stage(t.features(), None, |_, s| stages.push(empirical_risk(&loss, t.targets(), s)))
            .map_err(computation)?;
        trace.extend(iteration_rows(&stages, &format!("{method}:test"), 0));
        let scores = model.predict(t.features(), None).map_err(computation)?;
        test_summary = json!({
            "rows": t.n_rows(),
            "risk": empirical_risk(&loss, t.targets(), scores.as_slice()),
            "metric": metric(t.task(), t.targets(), &scores).map_err(computation)?,
        });
    }
    if let Some(path) = &a.trace {
        save_traces(&trace, path).map_err(with_path(path))?;
    }

    let tags = model.tags();
    let count = |tag: LearnerTag| tags.iter().filter(|t| **t == tag).count();
    let validation_summary = match (&validation, &report.validation_risk) {
        (Some(v), Some(trace)) => {
            let scores = model.predict(v.features(), None).map_err(computation)?;
            json!({
                "rows": v.n_rows(),
                "risk": risk_at(f64::NAN, trace, keep),
                "metric": metric(v.task(), v.targets(), &scores).map_err(computation)?,
            })
        }
        _ => serde_json::Value::Null,
    };
    let summary = json!({
        "task": model.task().name(),
        "classes": model.task().classes(),
        "loss": loss.name(),
        "rows": train.n_rows(),
        "features": train.n_features(),
        "config": config,
        "rho": report.rho,
        "completed_iterations": report.completed_iterations(),
        "iterations": keep,
        "tree_iterations": count(LearnerTag::Tree),
        "kernel_iterations": count(LearnerTag::Kernel),
        "initial_risk": report.initial_risk,
        "train_risk": risk_at(report.initial_risk, &report.train_risk, keep),
        "validation": validation_summary,
        "test": test_summary,
    });
    write_text(a.report.as_deref(), &pretty(&summary))
}

fn check_truncation(model: &Ensemble, m: Option<usize>) -> Outcome {
    match m {
        Some(m) if m > model.len() => Err(usage(format!("--iterations {m} exceeds the model's {}", model.len()))),
        _ => Ok(()),
    }
}

pub fn predict(a: &PredictArgs) -> Outcome {
    let model = Ensemble::load(&a.model).map_err(with_path(&a.model))?;
    check_truncation(&model, a.iterations)?;
    let header = !a.no_header;
    let features: Matrix = match a.target.as_deref() {
        None => load_feature_csv(&a.data, header).map_err(with_path(&a.data))?,
        Some(t) => load_csv(&a.data, &target_column(Some(t)), model.task().kind(), header)
            .map_err(with_path(&a.data))?
            .features()
            .clone(),
    };
    let scores = model.predict(&features, a.iterations).map_err(computation)?;

    let mut out = open_output(a.out.as_deref())?;
    let mut text = String::new();
    match model.task() {
        Task::Regression => {
            text.push_str("score\n");
            for v in scores.as_slice() {
                text.push_str(&format!("{v}\n"));
            }
        }
        task => {
            let proba = Ensemble::scores_to_proba(task, &scores).map_err(computation)?;
            let labels = Ensemble::scores_to_labels(task, &scores).map_err(computation)?;
            let names = model.label_map();
            let cols: Vec<String> = names.iter().map(|l| format!("p_{l}")).collect();
            text.push_str(&format!("{},label\n", cols.join(",")));
            for (i, row) in proba.row_iter().enumerate() {
                for p in row {
                    text.push_str(&format!("{p},"));
                }
                text.push_str(&names[labels[i]]);
                text.push('\n');
            }
        }
    }
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(data)
}

pub fn evaluate(a: &EvaluateArgs) -> Outcome {
    let model = Ensemble::load(&a.model).map_err(with_path(&a.model))?;
    check_truncation(&model, a.iterations)?;
    let task = model.task();
    let mut ds = load_csv(&a.data, &target_column(a.target.as_deref()), task.kind(), !a.no_header)
        .map_err(with_path(&a.data))?;
    if task.is_classification() {
        ds = ds.align_labels(model.label_map()).map_err(with_path(&a.data))?;
    }
    let scores = model.predict(ds.features(), a.iterations).map_err(computation)?;
    let risk = empirical_risk(&model.loss(), ds.targets(), scores.as_slice());
    let summary = json!({
        "task": task.name(),
        "rows": ds.n_rows(),
        "iterations": a.iterations.unwrap_or(model.len()),
        "metric_name": if task.is_classification() { "error_rate" } else { "mse" },
        "metric": metric(task, ds.targets(), &scores).map_err(computation)?,
        "risk": risk,
        "mean_risk": risk / ds.n_rows() as f64,
    });
    write_text(a.out.as_deref(), &pretty(&summary))
}

pub fn simulate(a: &SimulateArgs) -> Outcome {
    let mut f = SimFunction::new(a.seed);
    if let Some(sd) = a.noise_sd {
        f = f.with_noise_sd(sd).map_err(usage)?;
    }
    let ds = f
        .simulate(a.n as usize, derive_seed(a.seed, 0, a.sample + 1))
        .map_err(computation)?;
    save_csv(&ds, &a.out).map_err(with_path(&a.out))
}

fn parse_dataset_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            (name, path)
        }
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> Outcome {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_table(dir: &Path, table: &ComparisonTable) -> Outcome {
    let mut csv = Vec::new();
    table.write_csv(&mut csv).map_err(data)?;
    write_file(dir, "table.csv", std::str::from_utf8(&csv).expect("utf-8 table"))?;
    write_file(dir, "table.json", &pretty(&serde_json::to_value(table).expect("serializable table")))
}

pub fn benchmark(a: &BenchmarkArgs) -> Outcome {
    let methods: Vec<Learners> = a.methods.iter().map(|&m| m.into()).collect();
    if a.iterations == 0 {
        return Err(usage("--iterations must be positive"));
    }
    if let Some(bad) = a.nu.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(usage(format!("shrinkage must be positive, got {bad}")));
    }
    if a.simulation {
        return simulation_study(a, methods);
    }
    if a.datasets.is_empty() {
        return Err(usage("benchmark needs --dataset or --simulation"));
    }
    let task = resolve_task(&a.input)?;
    let loader = Loader::new(&a.input, task);
    let datasets = a
        .datasets
        .iter()
        .map(|arg| {
            let (name, path) = parse_dataset_arg(arg);
            Ok(NamedDataset {
                name,
                data: loader.load(&path)?,
            })
        })
        .collect::<std::result::Result<Vec<_>, Failure>>()?;
    let config = BenchmarkConfig {
        splits: a.splits as usize,
        seed: a.seed,
        methods,
        newton: if a.newton {
            Some(true)
        } else if a.gradient {
            Some(false)
        } else {
            None
        },
        nystrom: a.nystrom.map(|l| l as usize),
        nus: (!a.nu.is_empty()).then(|| a.nu.clone()),
        max_iterations: a.iterations,
        traces: a.traces,
        ..BenchmarkConfig::default()
    };
    let result = run_benchmark(&datasets, &config).map_err(computation)?;

    fs::create_dir_all(&a.out).map_err(|e| data(format!("{}: {e}", a.out.display())))?;
    write_file(&a.out, "manifest.json", &result.manifest_json())?;
    write_table(&a.out, &result.table)?;
    if a.traces {
        let path = a.out.join("traces.csv");
        save_traces(&result.traces, &path).map_err(with_path(&path))?;
    }
    Ok(())
}

fn simulation_study(a: &BenchmarkArgs, methods: Vec<Learners>) -> Outcome {
    let nu = match a.nu.as_slice() {
        [] => SimStudyConfig::default().nu,
        [nu] => *nu,
        _ => return Err(usage("the simulation takes a single --nu")),
    };
    let config = SimStudyConfig {
        replications: a.replications as usize,
        n: a.n as usize,
        nu,
        max_depth: a.max_depth,
        rho: a.rho,
        lambda: a.lambda,
        max_iterations: a.iterations,
        seed: a.seed,
        methods,
        selection: a.selection.into(),
        ..SimStudyConfig::default()
    };
    for &m in &config.methods {
        config.boost_config(m).validate().map_err(usage)?;
    }
    let result = run_simulation_study(&config).map_err(computation)?;

    let names: Vec<String> = result.methods.iter().map(|m| m.name().to_owned()).collect();
    let reps: Vec<String> = (0..result.replications.len()).map(|r| format!("replication-{r}")).collect();
    let metrics: Vec<Vec<Vec<f64>>> = result
        .replications
        .iter()
        .map(|r| r.test_mse.iter().map(|&v| vec![v]).collect())
        .collect();
    let table = ComparisonTable::from_metrics(reps, names.clone(), &metrics).map_err(computation)?;

    let summary: Vec<serde_json::Value> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mse = result.test_mse(j);
            json!({
                "method": name,
                "mean_test_mse": mse.iter().sum::<f64>() / mse.len() as f64,
                "pointwise_mse_0_0.5": interval_mean(&result.grid, &result.pointwise_mse[j], 0.0, 0.5),
                "pointwise_mse_0.6_1": interval_mean(&result.grid, &result.pointwise_mse[j], 0.6, 1.0),
            })
        })
        .collect();

    fs::create_dir_all(&a.out).map_err(|e| data(format!("{}: {e}", a.out.display())))?;
    write_file(
        &a.out,
        "study.json",
        &pretty(&json!({ "config": config, "summary": summary, "result": result })),
    )?;
    write_table(&a.out, &table)?;
    let path = a.out.join("pointwise.csv");
    save_traces(&result.pointwise_traces(), &path).map_err(with_path(&path))
}
