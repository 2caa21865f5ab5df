//! Experiment orchestration: ground-truth caching, seeded replicate runs,
//! parallel sweeps, and report/plot-data emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use crate::algorithms::{run, AlgoConfig, Init, Method, RunOptions, TSchedule, Variant};
use crate::analysis::{
    auxiliary_bounds, bound_limit, compute_constants, cost, steady_state, BoundKind, RunTrace,
    TerminalStatus, TheoryConstants,
};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, MethodSpec, ObjectiveSpec};
use crate::objectives::{
    load_libsvm, make_logistic, make_quadratic, make_synthetic_logistic, solve_centralized,
    Conditioning, GroundTruth, Objective,
};
use crate::operators::{estimate_minibatch_sigma_sq, GradOperator};
use crate::rng::RngStream;
use crate::topology::{build_graph, metropolis_weights, ConsensusMatrix};

/// Environment variable controlling sweep/replicate worker-thread count.
pub const WORKERS_ENV: &str = "NEARDGD_WORKERS";

fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Run `f` over the items on a fixed-size worker pool. Output order matches
/// input order, so results are deterministic regardless of scheduling.
fn parallel_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let workers = worker_count().min(items.len().max(1));
    if workers <= 1 {
        return items.into_iter().map(f).collect();
    }
    let jobs: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..jobs.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let item = jobs[i].lock().unwrap().take().unwrap();
                *results[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    results.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

pub fn build_objective(spec: &ObjectiveSpec) -> Result<Objective> {
    match spec {
        ObjectiveSpec::Quadratic { n, p, mu, l, identical, seed } => make_quadratic(
            *n,
            *p,
            Conditioning { mu: *mu, l: *l, identical: *identical },
            *seed,
        ),
        ObjectiveSpec::SyntheticLogistic { n, m, p, seed } => {
            make_logistic(make_synthetic_logistic(*m, *p, *seed), *n, *seed)
        }
        ObjectiveSpec::LogisticFile { n, path, seed } => {
            make_logistic(load_libsvm(path)?, *n, *seed)
        }
    }
}

fn fmt_vector(v: &DVector<f64>) -> String {
    v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ")
}

fn parse_vector(line: &str, p: usize) -> Result<DVector<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Numeric(format!("bad cache number {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != p {
        return Err(Error::Numeric(format!(
            "cached vector has {} entries, expected {p}",
            vals.len()
        )));
    }
    Ok(DVector::from_vec(vals))
}

fn ground_truth_to_text(gt: &GroundTruth) -> String {
    let mut out = String::new();
    writeln!(out, "f_star {:.16e}", gt.f_star).unwrap();
    writeln!(out, "x_star {}", fmt_vector(&gt.x_star)).unwrap();
    for u in &gt.u_star {
        writeln!(out, "u_star {}", fmt_vector(u)).unwrap();
    }
    out
}

fn ground_truth_from_text(text: &str, n: usize, p: usize) -> Result<GroundTruth> {
    let mut f_star = None;
    let mut x_star = None;
    let mut u_star = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("f_star ") {
            f_star = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| Error::Numeric("bad cached f_star".into()))?,
            );
        } else if let Some(rest) = line.strip_prefix("x_star ") {
            x_star = Some(parse_vector(rest, p)?);
        } else if let Some(rest) = line.strip_prefix("u_star ") {
            u_star.push(parse_vector(rest, p)?);
        }
    }
    match (f_star, x_star) {
        (Some(f_star), Some(x_star)) if u_star.len() == n => {
            Ok(GroundTruth { x_star, f_star, u_star })
        }
        _ => Err(Error::Numeric("incomplete ground-truth cache entry".into())),
    }
}

/// Solve for ground truth, memoized on disk keyed by the objective's
/// construction descriptor. The 17-significant-digit text round-trips f64
/// exactly, so cached and fresh solutions produce identical traces.
pub fn ground_truth_cached(obj: &Objective, out_dir: &Path) -> Result<GroundTruth> {
    let digest = Sha256::digest(obj.descriptor.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").unwrap();
    }
    let cache_dir = out_dir.join("ground_truth");
    let cache_file = cache_dir.join(format!("{hex}.txt"));
    if let Ok(text) = std::fs::read_to_string(&cache_file) {
        if let Ok(gt) = ground_truth_from_text(&text, obj.n(), obj.p()) {
            return Ok(gt);
        }
    }
    let gt = solve_centralized(obj, 1e-12)?;
    std::fs::create_dir_all(&cache_dir).map_err(|e| Error::io(&cache_dir, e))?;
    std::fs::write(&cache_file, ground_truth_to_text(&gt)).map_err(|e| Error::io(&cache_file, e))?;
    // reload so the first run uses exactly what later runs will read back
    ground_truth_from_text(&ground_truth_to_text(&gt), obj.n(), obj.p())
}

/// σ_g² used in the theory table: declared for the gaussian oracle, zero for
/// exact, and estimated empirically at x₀ = 0 for the mini-batch oracle.
pub fn grad_sigma_sq(grad: &GradOperator, obj: &Objective, seed0: u64) -> Result<f64> {
    match *grad {
        GradOperator::Exact => Ok(0.0),
        GradOperator::Gaussian { sigma_g } => Ok(sigma_g * sigma_g),
        GradOperator::Minibatch { batch } => {
            let x0 = DVector::zeros(obj.p());
            estimate_minibatch_sigma_sq(obj, batch, &x0, &RngStream::new(seed0), 10_000)
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodReport {
    pub name: String,
    pub variant: Variant,
    pub statuses: Vec<TerminalStatus>,
    /// Steady-state ‖x̄ − x*‖² per seed (over the trailing window).
    pub steady_errors: Vec<f64>,
    /// Steady-state normalized function-value error per seed.
    pub steady_fval: Vec<f64>,
    pub term_iters: Vec<u64>,
    pub costs: Vec<f64>,
    pub traces: Vec<RunTrace>,
}

impl MethodReport {
    pub fn diverged_count(&self) -> usize {
        self.statuses.iter().filter(|s| **s == TerminalStatus::Diverged).count()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub variant: Variant,
    pub methods: Vec<MethodReport>,
    pub header: String,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Q1 => "q1",
        Variant::Q2 => "q2",
        Variant::Q3 => "q3",
    }
}

fn algo_config(cfg: &ExperimentConfig, spec: &MethodSpec, variant: Variant) -> AlgoConfig {
    AlgoConfig {
        method: spec.method,
        t_schedule: spec.t_schedule,
        variant,
        alpha: cfg.alpha,
        max_iters: cfg.max_iters,
        comm: cfg.comm,
        grad: cfg.grad,
        init: cfg.init,
    }
}

/// Execute every (method × seed) cell of one experiment under the given
/// consensus variant, writing per-run trace CSVs under `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    variant: Variant,
    write_traces: bool,
) -> Result<ExperimentReport> {
    let n = cfg.objective.n();
    let graph = build_graph(cfg.graph_kind, n, cfg.graph_seed)?;
    let w = metropolis_weights(&graph)?;
    let obj = build_objective(&cfg.objective)?;
    let gt = ground_truth_cached(&obj, &cfg.out_dir)?;
    run_experiment_prepared(cfg, variant, write_traces, &w, &obj, &gt)
}

pub fn run_experiment_prepared(
    cfg: &ExperimentConfig,
    variant: Variant,
    write_traces: bool,
    w: &ConsensusMatrix,
    obj: &Objective,
    gt: &GroundTruth,
) -> Result<ExperimentReport> {
    if write_traces {
        std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    }
    let opts = RunOptions { welford_eps: cfg.welford_eps };
    let mut header = String::new();
    writeln!(header, "# variant = {}", variant_name(variant)).unwrap();
    writeln!(header, "# seeds = {} (starting at {})", cfg.seeds, cfg.seed0).unwrap();
    for spec in &cfg.methods {
        let acfg = algo_config(cfg, spec, variant);
        if let Some(warn) = acfg.steplength_warning(obj) {
            writeln!(header, "# warning [{}]: {warn}", spec.name).unwrap();
        }
    }

    let cells: Vec<(usize, u64)> = (0..cfg.methods.len())
        .flat_map(|mi| (0..cfg.seeds).map(move |s| (mi, cfg.seed0 + s)))
        .collect();
    let outcomes = parallel_map(cells, |(mi, seed)| {
        let acfg = algo_config(cfg, &cfg.methods[mi], variant);
        run(&acfg, w, obj, gt, seed, &opts).map(|trace| (mi, seed, trace))
    });

    let mut methods: Vec<MethodReport> = cfg
        .methods
        .iter()
        .map(|spec| MethodReport {
            name: spec.name.clone(),
            variant,
            statuses: Vec::new(),
            steady_errors: Vec::new(),
            steady_fval: Vec::new(),
            term_iters: Vec::new(),
            costs: Vec::new(),
            traces: Vec::new(),
        })
        .collect();
    for outcome in outcomes {
        let (mi, seed, trace) = outcome?;
        if write_traces {
            let file = cfg.out_dir.join(format!(
                "trace_{}_{}_seed{}.csv",
                cfg.methods[mi].name,
                variant_name(variant),
                seed
            ));
            std::fs::write(&file, trace.to_csv()).map_err(|e| Error::io(&file, e))?;
        }
        let report = &mut methods[mi];
        let tail = cfg.tail.min(trace.rows.len()).max(1);
        report.statuses.push(trace.terminal);
        report.steady_errors.push(steady_state(&trace, tail, |r| r.err_sq));
        report.steady_fval.push(steady_state(&trace, tail, |r| r.fval_rel_err));
        let last = trace.last();
        report.term_iters.push(last.k);
        report.costs.push(cost(last.comm_count, last.comp_count, cfg.c_c, cfg.c_g));
        report.traces.push(trace);
    }
    Ok(ExperimentReport { variant, methods, header })
}

/// Multi-method comparison across all three consensus variants.
pub fn compare_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    let n = cfg.objective.n();
    let graph = build_graph(cfg.graph_kind, n, cfg.graph_seed)?;
    let w = metropolis_weights(&graph)?;
    let obj = build_objective(&cfg.objective)?;
    let gt = ground_truth_cached(&obj, &cfg.out_dir)?;
    [Variant::Q1, Variant::Q2, Variant::Q3]
        .into_iter()
        .map(|v| run_experiment_prepared(cfg, v, true, &w, &obj, &gt))
        .collect()
}

pub fn summary_text(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    for rep in reports {
        out.push_str(&rep.header);
        for m in &rep.methods {
            let div = m.diverged_count();
            let med = median(&m.steady_errors);
            writeln!(
                out,
                "{}/{}: median_steady_err_sq = {:.6e}, diverged = {div}/{}, median_cost = {:.6e}",
                m.name,
                variant_name(rep.variant),
                med,
                m.statuses.len(),
                median(&m.costs),
            )
            .unwrap();
        }
    }
    out
}

/// Per-figure CSV series in long format (one row per point).
pub fn emit_plot_data(reports: &[ExperimentReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() || reports.iter().all(|r| r.methods.is_empty()) {
        return Err(Error::Parameter("empty report".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    for rep in reports {
        let mut out = String::from("series,k,err_sq\n");
        for m in &rep.methods {
            // first-seed trace as the representative error-vs-k curve
            if let Some(trace) = m.traces.first() {
                for row in &trace.rows {
                    writeln!(out, "{},{},{:.16e}", m.name, row.k, row.err_sq).unwrap();
                }
            }
        }
        let file = out_dir.join(format!("plot_error_vs_k_{}.csv", variant_name(rep.variant)));
        std::fs::write(&file, out).map_err(|e| Error::io(&file, e))?;
        files.push(file);
    }
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub graph_kind: crate::topology::GraphKind,
    pub n: usize,
    pub t: usize,
    pub median_fval: f64,
    pub median_err: f64,
    pub median_term_iter: f64,
    pub median_cost: f64,
    pub median_cost_equal_prices: f64,
}

/// Cross the scaling grid (network type × size × consensus rounds), running
/// each cell's replicates, and write a summary CSV.
pub fn sweep_experiment(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    let grid = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep requires sweep.types/sizes/ts".into()))?;
    let mut cell_cfgs = Vec::new();
    for &kind in &grid.types {
        for &n in &grid.sizes {
            for &t in &grid.ts {
                let mut cell = cfg.clone();
                cell.graph_kind = kind;
                cell.objective = match cell.objective {
                    ObjectiveSpec::Quadratic { p, mu, l, identical, seed, .. } => {
                        ObjectiveSpec::Quadratic { n, p, mu, l, identical, seed }
                    }
                    ObjectiveSpec::SyntheticLogistic { m, p, seed, .. } => {
                        ObjectiveSpec::SyntheticLogistic { n, m, p, seed }
                    }
                    ObjectiveSpec::LogisticFile { path, seed, .. } => {
                        ObjectiveSpec::LogisticFile { n, path, seed }
                    }
                };
                cell.methods = vec![MethodSpec {
                    method: Method::SNearDgd,
                    t_schedule: TSchedule::Constant(t),
                    name: format!("snear_dgd_t{t}"),
                }];
                cell_cfgs.push((kind, n, t, cell));
            }
        }
    }
    // cells already parallelize over their own (method × seed) grid; run the
    // cells sequentially so worker count is bounded by the env setting
    let mut cells = Vec::with_capacity(cell_cfgs.len());
    for (kind, n, t, cell) in cell_cfgs {
        let rep = run_experiment(&cell, cell.variant, true)?;
        let m = &rep.methods[0];
        let equal_costs: Vec<f64> = m
            .traces
            .iter()
            .map(|tr| {
                let last = tr.last();
                cost(last.comm_count, last.comp_count, cell.c_g, cell.c_g)
            })
            .collect();
        cells.push(SweepCell {
            graph_kind: kind,
            n,
            t,
            median_fval: median(&m.steady_fval),
            median_err: median(&m.steady_errors),
            median_term_iter: median(
                &m.term_iters.iter().map(|&k| k as f64).collect::<Vec<_>>(),
            ),
            median_cost: median(&m.costs),
            median_cost_equal_prices: median(&equal_costs),
        });
    }
    let mut out =
        String::from("network_type,n,t,median_fval_rel_err,median_err_sq,median_term_iter,median_cost,median_cost_equal_prices\n");
    for c in &cells {
        writeln!(
            out,
            "{:?},{},{},{:.16e},{:.16e},{},{:.16e},{:.16e}",
            c.graph_kind,
            c.n,
            c.t,
            c.median_fval,
            c.median_err,
            c.median_term_iter,
            c.median_cost,
            c.median_cost_equal_prices
        )
        .unwrap();
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let file = cfg.out_dir.join("scaling_summary.csv");
    std::fs::write(&file, out).map_err(|e| Error::io(&file, e))?;
    Ok(cells)
}

/// The theory table: every constant plus each closed-form neighborhood
/// bound (with per-term breakdown) for the configured instance.
pub fn bounds_report(cfg: &ExperimentConfig) -> Result<String> {
    let n = cfg.objective.n();
    let graph = build_graph(cfg.graph_kind, n, cfg.graph_seed)?;
    let w = metropolis_weights(&graph)?;
    let obj = build_objective(&cfg.objective)?;
    let gt = ground_truth_cached(&obj, &cfg.out_dir)?;
    let sigma_c_sq = cfg.comm.sigma_c_sq_bound(obj.p());
    let sigma_g_sq = grad_sigma_sq(&cfg.grad, &obj, cfg.seed0)?;
    let y0: Vec<DVector<f64>> = match cfg.init {
        Init::Zero => (0..n).map(|_| DVector::zeros(obj.p())).collect(),
        Init::Gaussian { .. } => {
            // D's expectation is evaluated at the realized initializer of
            // the first seed
            let acfg = algo_config(cfg, &cfg.methods[0], cfg.variant);
            let engine = crate::algorithms::Engine::new(&acfg, &w, &obj, cfg.seed0)?;
            engine.state.y.clone()
        }
    };
    let mut out = String::new();
    let mut seen_ts: Vec<usize> = cfg
        .methods
        .iter()
        .filter_map(|m| match m.t_schedule {
            TSchedule::Constant(t) if m.method == Method::SNearDgd => Some(t),
            _ => None,
        })
        .collect();
    if seen_ts.is_empty() {
        seen_ts.push(1);
    }
    seen_ts.sort_unstable();
    seen_ts.dedup();
    for t in seen_ts {
        let c = compute_constants(&obj, &w, &gt, &y0, cfg.alpha, t, sigma_c_sq, sigma_g_sq);
        write_constants(&mut out, &c);
        for kind in [
            BoundKind::PlusQ1,
            BoundKind::TQ1,
            BoundKind::TQ2,
            BoundKind::PlusQ2 { k: cfg.max_iters as u64 },
        ] {
            let b = bound_limit(&c, kind);
            writeln!(out, "bound.{:?}.value = {:.6e}", b.kind, b.value).unwrap();
            if b.vacuous {
                writeln!(out, "bound.{:?}.vacuous = true", b.kind).unwrap();
            }
            for (name, v) in &b.terms {
                writeln!(out, "bound.{:?}.term.{name} = {v:.6e}", b.kind).unwrap();
            }
        }
        for (name, v) in auxiliary_bounds(&c) {
            writeln!(out, "aux.{name} = {v:.6e}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

fn write_constants(out: &mut String, c: &TheoryConstants) {
    writeln!(out, "t = {}", c.t).unwrap();
    for (name, v) in [
        ("n", c.n as f64),
        ("p", c.p as f64),
        ("alpha", c.alpha),
        ("beta", c.beta),
        ("mu", c.mu),
        ("L", c.l),
        ("mu_fbar", c.mu_fbar),
        ("L_fbar", c.l_fbar),
        ("kappa", c.kappa),
        ("gamma_fbar", c.gamma_fbar),
        ("nu", c.nu),
        ("rho", c.rho),
        ("D", c.d),
        ("C", c.c),
        ("eta", c.eta),
        ("theta", c.theta),
        ("sigma_c_sq", c.sigma_c_sq),
        ("sigma_g_sq", c.sigma_g_sq),
    ] {
        writeln!(out, "const.{name} = {v:.6e}").unwrap();
    }
    writeln!(out, "const.applicable = {}", c.applicable).unwrap();
    if let Some(warn) = &c.warning {
        writeln!(out, "const.warning = {warn}").unwrap();
    }
}
