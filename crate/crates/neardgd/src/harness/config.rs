//! Flat key/value experiment configuration.
//!
//! The format is one `key = value` pair per line with dotted section names
//! (`objective.*`, `graph.*`, `comm.*`, `grad.*`, `run.*`, `cost.*`,
//! `sweep.*`, `output.*`), `#` comments, and a whitespace-separated method
//! list. Presets are just version-controlled strings in this format.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::algorithms::{Init, Method, TSchedule, Variant};
use crate::error::{Error, Result};
use crate::operators::{CommOperator, GradOperator};
use crate::topology::GraphKind;

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    Quadratic { n: usize, p: usize, mu: f64, l: f64, identical: bool, seed: u64 },
    SyntheticLogistic { n: usize, m: usize, p: usize, seed: u64 },
    LogisticFile { n: usize, path: PathBuf, seed: u64 },
}

impl ObjectiveSpec {
    pub fn n(&self) -> usize {
        match *self {
            ObjectiveSpec::Quadratic { n, .. }
            | ObjectiveSpec::SyntheticLogistic { n, .. }
            | ObjectiveSpec::LogisticFile { n, .. } => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub method: Method,
    pub t_schedule: TSchedule,
    /// Stable identifier used in file names and report rows.
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub types: Vec<GraphKind>,
    pub sizes: Vec<usize>,
    pub ts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSpec,
    pub graph_kind: GraphKind,
    pub graph_seed: u64,
    pub methods: Vec<MethodSpec>,
    pub variant: Variant,
    pub comm: CommOperator,
    pub grad: GradOperator,
    pub alpha: f64,
    pub max_iters: usize,
    pub welford_eps: Option<f64>,
    pub seeds: u64,
    pub seed0: u64,
    pub tail: usize,
    pub init: Init,
    pub c_c: f64,
    pub c_g: f64,
    pub out_dir: PathBuf,
    pub sweep: Option<SweepGrid>,
    /// The raw text this config was parsed from (recorded in reports).
    pub source: String,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

struct Keys {
    map: BTreeMap<String, String>,
}

impl Keys {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| cfg_err(format!("missing key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| cfg_err(format!("key `{key}`: cannot parse value {raw:?}")))
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| cfg_err(format!("key `{key}`: cannot parse value {raw:?}"))),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "objective.kind",
    "objective.n",
    "objective.p",
    "objective.m",
    "objective.mu",
    "objective.l",
    "objective.identical",
    "objective.path",
    "objective.seed",
    "graph.kind",
    "graph.k",
    "graph.p_edge",
    "graph.seed",
    "methods",
    "variant",
    "comm.kind",
    "comm.delta",
    "comm.sigma_c",
    "grad.kind",
    "grad.sigma_g",
    "grad.batch",
    "run.alpha",
    "run.max_iters",
    "run.eps",
    "run.seeds",
    "run.seed0",
    "run.tail",
    "run.init",
    "cost.c_c",
    "cost.c_g",
    "output.dir",
    "sweep.types",
    "sweep.sizes",
    "sweep.ts",
];

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(cfg_err(format!("line {}: unknown key `{key}`", lineno + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(cfg_err(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    let keys = Keys { map };

    let n: usize = keys.parse("objective.n")?;
    if n < 2 {
        return Err(cfg_err("objective.n must be >= 2"));
    }
    let obj_seed: u64 = keys.parse_or("objective.seed", 1)?;
    let objective = match keys.require("objective.kind")? {
        "quadratic" => ObjectiveSpec::Quadratic {
            n,
            p: keys.parse("objective.p")?,
            mu: keys.parse("objective.mu")?,
            l: keys.parse("objective.l")?,
            identical: keys.parse_or("objective.identical", false)?,
            seed: obj_seed,
        },
        "synthetic_logistic" => ObjectiveSpec::SyntheticLogistic {
            n,
            m: keys.parse("objective.m")?,
            p: keys.parse("objective.p")?,
            seed: obj_seed,
        },
        "logistic" => ObjectiveSpec::LogisticFile {
            n,
            path: PathBuf::from(keys.require("objective.path")?),
            seed: obj_seed,
        },
        other => return Err(cfg_err(format!("unknown objective.kind `{other}`"))),
    };

    let graph_kind = parse_graph_kind(
        keys.require("graph.kind")?,
        keys.get("graph.k"),
        keys.get("graph.p_edge"),
    )?;
    let graph_seed: u64 = keys.parse_or("graph.seed", 1)?;

    let methods = keys
        .require("methods")?
        .split_whitespace()
        .map(parse_method)
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(cfg_err("methods list is empty"));
    }

    let variant = match keys.parse_or("variant", "q1".to_string())?.as_str() {
        "q1" => Variant::Q1,
        "q2" => Variant::Q2,
        "q3" => Variant::Q3,
        other => return Err(cfg_err(format!("unknown variant `{other}`"))),
    };

    let comm = match keys.parse_or("comm.kind", "exact".to_string())?.as_str() {
        "exact" => CommOperator::Exact,
        "quantizer" => CommOperator::Quantizer { delta: keys.parse("comm.delta")? },
        "gaussian" => CommOperator::Gaussian { sigma_c: keys.parse("comm.sigma_c")? },
        other => return Err(cfg_err(format!("unknown comm.kind `{other}`"))),
    };
    let grad = match keys.parse_or("grad.kind", "exact".to_string())?.as_str() {
        "exact" => GradOperator::Exact,
        "gaussian" => GradOperator::Gaussian { sigma_g: keys.parse("grad.sigma_g")? },
        "minibatch" => GradOperator::Minibatch { batch: keys.parse("grad.batch")? },
        other => return Err(cfg_err(format!("unknown grad.kind `{other}`"))),
    };

    let alpha: f64 = keys.parse("run.alpha")?;
    if alpha <= 0.0 {
        return Err(cfg_err("run.alpha must be positive"));
    }
    let welford_eps = match keys.get("run.eps") {
        None | Some("") | Some("none") => None,
        Some(raw) => Some(
            raw.parse::<f64>()
                .map_err(|_| cfg_err(format!("run.eps: cannot parse {raw:?}")))?,
        ),
    };
    let init = match keys.parse_or("run.init", "zero".to_string())?.as_str() {
        "zero" => Init::Zero,
        raw => match raw.strip_prefix("gaussian:") {
            Some(scale) => Init::Gaussian {
                scale: scale
                    .parse()
                    .map_err(|_| cfg_err(format!("run.init: bad gaussian scale {scale:?}")))?,
            },
            None => return Err(cfg_err(format!("unknown run.init `{raw}`"))),
        },
    };
    let seeds: u64 = keys.parse_or("run.seeds", 1)?;
    if seeds == 0 {
        return Err(cfg_err("run.seeds must be >= 1"));
    }

    let sweep = match (keys.get("sweep.types"), keys.get("sweep.sizes"), keys.get("sweep.ts")) {
        (None, None, None) => None,
        (Some(types), Some(sizes), Some(ts)) => Some(SweepGrid {
            types: types
                .split_whitespace()
                .map(|t| parse_graph_kind(t, keys.get("graph.k"), keys.get("graph.p_edge")))
                .collect::<Result<Vec<_>>>()?,
            sizes: sizes
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| cfg_err(format!("sweep.sizes: bad entry {s:?}"))))
                .collect::<Result<Vec<_>>>()?,
            ts: ts
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| cfg_err(format!("sweep.ts: bad entry {s:?}"))))
                .collect::<Result<Vec<_>>>()?,
        }),
        _ => return Err(cfg_err("sweep.types, sweep.sizes and sweep.ts must be given together")),
    };

    Ok(ExperimentConfig {
        objective,
        graph_kind,
        graph_seed,
        methods,
        variant,
        comm,
        grad,
        alpha,
        max_iters: keys.parse("run.max_iters")?,
        welford_eps,
        seeds,
        seed0: keys.parse_or("run.seed0", 1)?,
        tail: keys.parse_or("run.tail", 1)?,
        init,
        c_c: keys.parse_or("cost.c_c", 1.0)?,
        c_g: keys.parse_or("cost.c_g", 1.0)?,
        out_dir: PathBuf::from(keys.parse_or("output.dir", "out".to_string())?),
        sweep,
        source: text.to_string(),
    })
}

fn parse_graph_kind(kind: &str, k: Option<&str>, p_edge: Option<&str>) -> Result<GraphKind> {
    match kind {
        "complete" => Ok(GraphKind::Complete),
        "ring" => Ok(GraphKind::Ring),
        "path" => Ok(GraphKind::Path),
        "k_cyclic" => {
            let k = k.ok_or_else(|| cfg_err("graph.k required for k_cyclic"))?;
            Ok(GraphKind::KCyclic(
                k.parse().map_err(|_| cfg_err(format!("graph.k: bad value {k:?}")))?,
            ))
        }
        "erdos_renyi" => {
            let p = p_edge.ok_or_else(|| cfg_err("graph.p_edge required for erdos_renyi"))?;
            Ok(GraphKind::ErdosRenyi(
                p.parse().map_err(|_| cfg_err(format!("graph.p_edge: bad value {p:?}")))?,
            ))
        }
        other => Err(cfg_err(format!("unknown graph.kind `{other}`"))),
    }
}

fn parse_method(token: &str) -> Result<MethodSpec> {
    match token {
        "dgd" => Ok(MethodSpec { method: Method::Dgd, t_schedule: TSchedule::Constant(1), name: "dgd".into() }),
        "extra" => Ok(MethodSpec { method: Method::Extra, t_schedule: TSchedule::Constant(1), name: "extra".into() }),
        "diging" => Ok(MethodSpec { method: Method::Diging, t_schedule: TSchedule::Constant(1), name: "diging".into() }),
        "snear_dgd(plus)" => Ok(MethodSpec {
            method: Method::SNearDgd,
            t_schedule: TSchedule::Increasing,
            name: "snear_dgd_plus".into(),
        }),
        _ => {
            let inner = token
                .strip_prefix("snear_dgd(t=")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| cfg_err(format!("unknown method token `{token}`")))?;
            let t: usize = inner
                .parse()
                .map_err(|_| cfg_err(format!("method `{token}`: bad t value")))?;
            if t == 0 {
                return Err(cfg_err("snear_dgd needs t >= 1"));
            }
            Ok(MethodSpec {
                method: Method::SNearDgd,
                t_schedule: TSchedule::Constant(t),
                name: format!("snear_dgd_t{t}"),
            })
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
