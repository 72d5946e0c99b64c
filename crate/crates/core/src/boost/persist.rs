//! Versioned JSON model files.
//!
//! Object keys are emitted in sorted order and floats with shortest
//! round-trip formatting, so saving one model twice gives identical bytes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::model::{BaseLearner, Ensemble, Iteration};
use super::LearnerTag;
use crate::data::{Matrix, Standardizer, Task};
use crate::error::{Error, Result};
use crate::kernels::{KernelLearner, KernelMode};
use crate::losses::Loss;
use crate::trees::{Node, Tree};

pub const FORMAT_VERSION: u64 = 1;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn mode_name(mode: KernelMode) -> &'static str {
    match mode {
        KernelMode::Exact => "exact",
        KernelMode::Nystrom => "nystrom",
    }
}

fn tag_name(tag: LearnerTag) -> &'static str {
    match tag {
        LearnerTag::Tree => "tree",
        LearnerTag::Kernel => "kernel",
    }
}

fn learner_value(l: &BaseLearner) -> Value {
    match l {
        BaseLearner::Tree(t) => {
            let nodes = t
                .nodes()
                .iter()
                .map(|n| match *n {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => json!({"feature": feature, "left": left, "right": right, "threshold": threshold}),
                    Node::Leaf { weight } => json!({ "weight": weight }),
                })
                .collect();
            Value::Array(nodes)
        }
        BaseLearner::Kernel(k) => {
            let anchors: Vec<Value> = k.anchors().row_iter().map(|r| json!(r)).collect();
            json!({
                "alpha": k.alpha(),
                "anchors": anchors,
                "lambda": k.lambda(),
                "mode": mode_name(k.mode()),
                "rho": k.rho(),
            })
        }
    }
}

impl Ensemble {
    pub fn to_json_value(&self) -> Value {
        let iterations: Vec<Value> = self
            .iterations()
            .iter()
            .map(|it| {
                let per_class: Vec<Value> = it.per_class().iter().map(learner_value).collect();
                json!({"per_class": per_class, "tag": tag_name(it.tag())})
            })
            .collect();
        let st = self.standardizer();
        json!({
            "f0": self.f0(),
            "format_version": FORMAT_VERSION,
            "iterations": iterations,
            "label_map": self.label_map(),
            "loss": self.loss().name(),
            "nu": self.nu(),
            "standardizer": {"means": st.means, "scales": st.scales},
            "task": self.task().name(),
        })
    }

    /// Canonical serialization.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string(&self.to_json_value()).expect("model values are finite");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Ensemble> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn from_json_str(s: &str) -> Result<Ensemble> {
        let v: Value = serde_json::from_str(s).map_err(|e| fmt_err(e.to_string()))?;
        Self::from_json_value(&v)
    }

    pub fn from_json_value(v: &Value) -> Result<Ensemble> {
        let obj = v.as_object().ok_or_else(|| fmt_err("top level is not an object"))?;
        let version = get(obj, "format_version")?
            .as_u64()
            .ok_or_else(|| fmt_err("format_version is not an unsigned integer"))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let f0 = floats(get(obj, "f0")?, "f0")?;
        let label_map: Vec<String> = get(obj, "label_map")?
            .as_array()
            .ok_or_else(|| fmt_err("label_map is not an array"))?
            .iter()
            .map(|l| l.as_str().map(str::to_owned).ok_or_else(|| fmt_err("label is not a string")))
            .collect::<Result<_>>()?;
        let task = match string(obj, "task")? {
            "regression" => Task::Regression,
            "binary" => Task::Binary,
            "multiclass" => Task::Multiclass { classes: f0.len() },
            other => return Err(fmt_err(format!("unknown task `{other}`"))),
        };
        let loss = match string(obj, "loss")? {
            "squared" => Loss::Squared,
            "logistic" => Loss::Logistic,
            "softmax" => Loss::Softmax { classes: f0.len() },
            other => return Err(fmt_err(format!("unknown loss `{other}`"))),
        };
        let nu = get(obj, "nu")?.as_f64().ok_or_else(|| fmt_err("nu is not a number"))?;
        let st = get(obj, "standardizer")?
            .as_object()
            .ok_or_else(|| fmt_err("standardizer is not an object"))?;
        let standardizer = Standardizer {
            means: floats(get(st, "means")?, "means")?,
            scales: floats(get(st, "scales")?, "scales")?,
        };
        let p = standardizer.n_features();

        let mut anchor_cache: HashMap<Vec<u64>, Arc<Matrix>> = HashMap::new();
        let iterations = get(obj, "iterations")?
            .as_array()
            .ok_or_else(|| fmt_err("iterations is not an array"))?
            .iter()
            .map(|it| parse_iteration(it, p, &mut anchor_cache))
            .collect::<Result<Vec<_>>>()?;

        Ensemble::from_parts(task, loss, nu, f0, standardizer, label_map, iterations).map_err(|e| match e {
            Error::InvalidInput(m) | Error::NonFinite(m) => fmt_err(m),
            other => fmt_err(other.to_string()),
        })
    }
}

fn get<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| fmt_err(format!("missing field `{key}`")))
}

fn string<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str> {
    get(obj, key)?
        .as_str()
        .ok_or_else(|| fmt_err(format!("`{key}` is not a string")))
}

fn floats(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| fmt_err(format!("`{what}` is not an array")))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| fmt_err(format!("`{what}` holds a non-number"))))
        .collect()
}

fn index(obj: &Map<String, Value>, key: &str) -> Result<usize> {
    get(obj, key)?
        .as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| fmt_err(format!("`{key}` is not an index")))
}

fn parse_iteration(
    v: &Value,
    p: usize,
    anchor_cache: &mut HashMap<Vec<u64>, Arc<Matrix>>,
) -> Result<Iteration> {
    let obj = v.as_object().ok_or_else(|| fmt_err("iteration is not an object"))?;
    let tag = match string(obj, "tag")? {
        "tree" => LearnerTag::Tree,
        "kernel" => LearnerTag::Kernel,
        other => return Err(fmt_err(format!("unknown learner tag `{other}`"))),
    };
    let per_class = get(obj, "per_class")?
        .as_array()
        .ok_or_else(|| fmt_err("per_class is not an array"))?
        .iter()
        .map(|l| match tag {
            LearnerTag::Tree => parse_tree(l, p).map(BaseLearner::Tree),
            LearnerTag::Kernel => parse_kernel(l, p, anchor_cache).map(BaseLearner::Kernel),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Iteration::new(tag, per_class))
}

fn parse_tree(v: &Value, p: usize) -> Result<Tree> {
    let nodes = v
        .as_array()
        .ok_or_else(|| fmt_err("tree is not a node array"))?
        .iter()
        .map(|n| {
            let o = n.as_object().ok_or_else(|| fmt_err("tree node is not an object"))?;
            if let Some(w) = o.get("weight") {
                let weight = w.as_f64().ok_or_else(|| fmt_err("leaf weight is not a number"))?;
                return Ok(Node::Leaf { weight });
            }
            Ok(Node::Split {
                feature: index(o, "feature")?,
                threshold: get(o, "threshold")?
                    .as_f64()
                    .ok_or_else(|| fmt_err("threshold is not a number"))?,
                left: index(o, "left")?,
                right: index(o, "right")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Tree::from_nodes(nodes, p).map_err(|e| fmt_err(e.to_string()))
}

fn parse_kernel(
    v: &Value,
    p: usize,
    anchor_cache: &mut HashMap<Vec<u64>, Arc<Matrix>>,
) -> Result<KernelLearner> {
    let o = v.as_object().ok_or_else(|| fmt_err("kernel learner is not an object"))?;
    let rows = get(o, "anchors")?
        .as_array()
        .ok_or_else(|| fmt_err("anchors is not an array"))?
        .iter()
        .map(|r| floats(r, "anchors"))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != p) {
        return Err(fmt_err(format!("anchors must be nonempty rows of {p} values")));
    }
    let matrix = Matrix::from_rows(&rows).map_err(|e| fmt_err(e.to_string()))?;
    let key: Vec<u64> = matrix.as_slice().iter().map(|x| x.to_bits()).collect();
    let anchors = anchor_cache
        .entry(key)
        .or_insert_with(|| Arc::new(matrix))
        .clone();
    let num = |key: &str| -> Result<f64> {
        get(o, key)?
            .as_f64()
            .ok_or_else(|| fmt_err(format!("`{key}` is not a number")))
    };
    let mode = match string(o, "mode")? {
        "exact" => KernelMode::Exact,
        "nystrom" => KernelMode::Nystrom,
        other => return Err(fmt_err(format!("unknown kernel mode `{other}`"))),
    };
    KernelLearner::new(anchors, floats(get(o, "alpha")?, "alpha")?, num("rho")?, num("lambda")?, mode)
        .map_err(|e| fmt_err(e.to_string()))
}
