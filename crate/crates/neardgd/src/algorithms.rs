//! The simulation engine: synchronous per-node state machines for the
//! nested-consensus methods and the DGD / EXTRA / DIGing baselines, with
//! pluggable quantized-consensus variants and cost accounting.
//!
//! Every neighbor exchange — including the auxiliary exchanges inside EXTRA
//! and DIGing — routes through [`consensus_round`], so the Q1/Q2/Q3 update
//! rules apply uniformly to all methods.

use nalgebra::{DMatrix, DVector};

use crate::analysis::{RunTrace, TerminalStatus, TraceRow, should_terminate, welford_update};
use crate::error::{Error, Result};
use crate::objectives::{GroundTruth, Objective};
use crate::operators::{apply_comm, apply_grad, CommOperator, GradOperator};
use crate::rng::{Purpose, RngStream};
use crate::topology::ConsensusMatrix;

/// A run is flagged diverged as soon as any coordinate exceeds this in
/// magnitude (or goes non-finite). Large enough that any converging method
/// never trips it, small enough that runaway trackers stop cleanly.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SNearDgd,
    Dgd,
    Extra,
    Diging,
}

/// Consensus rounds per iteration for the nested-consensus method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TSchedule {
    Constant(usize),
    /// t(k) = k: one more round every iteration.
    Increasing,
}

/// Quantized consensus update rule. With q_i = T_c[x_i]:
/// Q1 mixes quantized values and feeds one's own quantization residual back,
/// Q2 mixes quantized values only, Q3 keeps the exact self term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Q1,
    Q2,
    Q3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zero,
    Gaussian { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub method: Method,
    pub t_schedule: TSchedule,
    pub variant: Variant,
    pub alpha: f64,
    pub max_iters: usize,
    pub comm: CommOperator,
    pub grad: GradOperator,
    pub init: Init,
}

impl AlgoConfig {
    /// The theory requires α < min{2/(μ+L), 2/(μ_f̄+L_f̄)}; violating it is
    /// allowed for experiments but the bounds become inapplicable.
    pub fn steplength_warning(&self, obj: &Objective) -> Option<String> {
        let cap = steplength_cap(obj);
        (self.alpha >= cap).then(|| {
            format!(
                "steplength {} violates the theory condition alpha < {cap:.6e}; bounds inapplicable",
                self.alpha
            )
        })
    }
}

pub fn steplength_cap(obj: &Objective) -> f64 {
    let a = 2.0 / (obj.mu() + obj.l());
    let b = 2.0 / (obj.mu_fbar() + obj.l_fbar());
    a.min(b)
}

#[derive(Debug, Clone)]
pub struct AlgoState {
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    /// EXTRA: cached half-matrix consensus of the previous iterate.
    pub prev_consensus: Option<Vec<DVector<f64>>>,
    /// EXTRA / DIGing: gradient used at the previous iteration.
    pub prev_grad: Option<Vec<DVector<f64>>>,
    /// DIGing: gradient trackers s_i.
    pub tracker: Option<Vec<DVector<f64>>>,
    /// Consensus rounds executed (per node; all nodes move in lockstep).
    pub comm_count: u64,
    /// Gradient evaluations executed (per node).
    pub comp_count: u64,
    pub k: u64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub k: u64,
    pub x_bar: DVector<f64>,
    pub diverged: bool,
}

/// One inexact averaging round. With an exact channel all three variants
/// reduce to plain mixing and we take that branch outright, so they produce
/// bit-identical trajectories.
pub fn consensus_round(
    variant: Variant,
    wm: &DMatrix<f64>,
    xs: &[DVector<f64>],
    comm: &CommOperator,
    stream: &RngStream,
    k: u64,
    j: u64,
) -> Result<Vec<DVector<f64>>> {
    let n = xs.len();
    if comm.is_exact() {
        return Ok(mix(wm, xs));
    }
    let mut q = Vec::with_capacity(n);
    for (i, x) in xs.iter().enumerate() {
        let mut rng = stream.substream(Purpose::Comm, i as u64, k, j);
        q.push(apply_comm(comm, x, &mut rng)?);
    }
    let mixed_q = mix(wm, &q);
    let out = match variant {
        Variant::Q1 => (0..n)
            .map(|i| &mixed_q[i] + (&xs[i] - &q[i]))
            .collect(),
        Variant::Q2 => mixed_q,
        Variant::Q3 => (0..n)
            .map(|i| {
                let mut acc = &xs[i] * wm[(i, i)];
                for l in 0..n {
                    if l != i && wm[(i, l)] != 0.0 {
                        acc.axpy(wm[(i, l)], &q[l], 1.0);
                    }
                }
                acc
            })
            .collect(),
    };
    Ok(out)
}

fn mix(wm: &DMatrix<f64>, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            let mut acc = DVector::zeros(xs[0].len());
            for l in 0..n {
                let w = wm[(i, l)];
                if w != 0.0 {
                    acc.axpy(w, &xs[l], 1.0);
                }
            }
            acc
        })
        .collect()
}

fn any_out_of_range(vs: &[DVector<f64>]) -> bool {
    vs.iter()
        .any(|v| v.iter().any(|&c| !c.is_finite() || c.abs() > DIVERGENCE_THRESHOLD))
}

pub struct Engine<'a> {
    pub cfg: &'a AlgoConfig,
    w: &'a ConsensusMatrix,
    /// (I + W)/2, EXTRA's second mixing matrix.
    w_half: Option<DMatrix<f64>>,
    obj: &'a Objective,
    stream: RngStream,
    pub state: AlgoState,
}

impl<'a> Engine<'a> {
    pub fn new(
        cfg: &'a AlgoConfig,
        w: &'a ConsensusMatrix,
        obj: &'a Objective,
        seed: u64,
    ) -> Result<Self> {
        if cfg.alpha <= 0.0 {
            return Err(Error::Parameter("steplength must be positive".into()));
        }
        if w.n() != obj.n() {
            return Err(Error::Parameter(format!(
                "graph has {} nodes but objective has {}",
                w.n(),
                obj.n()
            )));
        }
        let n = obj.n();
        let p = obj.p();
        let stream = RngStream::new(seed);
        let y: Vec<DVector<f64>> = match cfg.init {
            Init::Zero => (0..n).map(|_| DVector::zeros(p)).collect(),
            Init::Gaussian { scale } => (0..n)
                .map(|i| {
                    let mut rng = stream.substream(Purpose::Init, i as u64, 0, 0);
                    DVector::from_fn(p, |_, _| {
                        use rand_distr::{Distribution, StandardNormal};
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                })
                .collect(),
        };
        let x = y.clone();
        let state = AlgoState {
            x,
            y,
            prev_consensus: None,
            prev_grad: None,
            tracker: None,
            comm_count: 0,
            comp_count: 0,
            k: 0,
            diverged: false,
        };
        let w_half = match cfg.method {
            Method::Extra => {
                let mut m = &w.w * 0.5;
                for i in 0..n {
                    m[(i, i)] += 0.5;
                }
                Some(m)
            }
            _ => None,
        };
        let mut engine = Engine { cfg, w, w_half, obj, stream, state };
        if cfg.method == Method::Diging {
            // tracker starts at the initial gradients
            let g0 = engine.gradients(&engine.state.x, 0)?;
            engine.state.tracker = Some(g0.clone());
            engine.state.prev_grad = Some(g0);
            engine.state.comp_count = 1;
        }
        Ok(engine)
    }

    fn gradients(&self, xs: &[DVector<f64>], grad_index: u64) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(xs.len());
        for (i, x) in xs.iter().enumerate() {
            let mut rng = self.stream.substream(Purpose::Grad, i as u64, grad_index, 0);
            out.push(apply_grad(&self.cfg.grad, self.obj, i, x, &mut rng)?);
        }
        Ok(out)
    }

    pub fn x_bar(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.obj.p());
        for x in &self.state.x {
            acc += x;
        }
        acc / self.state.x.len() as f64
    }

    fn report(&self) -> StepReport {
        StepReport { k: self.state.k, x_bar: self.x_bar(), diverged: self.state.diverged }
    }

    /// Advance one iteration. Once diverged the state is frozen.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.state.diverged {
            return Ok(self.report());
        }
        let k_next = self.state.k + 1;
        match self.cfg.method {
            Method::SNearDgd => self.step_snear(k_next)?,
            Method::Dgd => self.step_dgd(k_next)?,
            Method::Extra => self.step_extra(k_next)?,
            Method::Diging => self.step_diging(k_next)?,
        }
        self.state.k = k_next;
        if any_out_of_range(&self.state.x)
            || self.state.tracker.as_deref().is_some_and(any_out_of_range)
        {
            self.state.diverged = true;
        }
        Ok(self.report())
    }

    fn step_snear(&mut self, k_next: u64) -> Result<()> {
        let g = self.gradients(&self.state.x, self.state.k)?;
        self.state.comp_count += 1;
        for (y, (x, gi)) in self.state.y.iter_mut().zip(self.state.x.iter().zip(&g)) {
            *y = x - self.cfg.alpha * gi;
        }
        let t = match self.cfg.t_schedule {
            TSchedule::Constant(t) => t as u64,
            TSchedule::Increasing => k_next,
        };
        let mut xs = self.state.y.clone();
        for j in 1..=t {
            xs = consensus_round(
                self.cfg.variant,
                &self.w.w,
                &xs,
                &self.cfg.comm,
                &self.stream,
                k_next,
                j,
            )?;
            self.state.comm_count += 1;
            if any_out_of_range(&xs) {
                break;
            }
        }
        self.state.x = xs;
        Ok(())
    }

    fn step_dgd(&mut self, k_next: u64) -> Result<()> {
        let c = consensus_round(
            self.cfg.variant,
            &self.w.w,
            &self.state.x,
            &self.cfg.comm,
            &self.stream,
            k_next,
            1,
        )?;
        self.state.comm_count += 1;
        let g = self.gradients(&self.state.x, self.state.k)?;
        self.state.comp_count += 1;
        for i in 0..self.state.x.len() {
            self.state.x[i] = &c[i] - self.cfg.alpha * &g[i];
        }
        Ok(())
    }

    fn step_extra(&mut self, k_next: u64) -> Result<()> {
        let wh = self.w_half.as_ref().unwrap();
        let c = consensus_round(
            self.cfg.variant,
            wh,
            &self.state.x,
            &self.cfg.comm,
            &self.stream,
            k_next,
            1,
        )?;
        self.state.comm_count += 1;
        let g = self.gradients(&self.state.x, self.state.k)?;
        self.state.comp_count += 1;
        let n = self.state.x.len();
        let alpha = self.cfg.alpha;
        let new_x: Vec<DVector<f64>> = match (&self.state.prev_consensus, &self.state.prev_grad) {
            (Some(c_prev), Some(g_prev)) => (0..n)
                .map(|i| 2.0 * &c[i] - &c_prev[i] - alpha * (&g[i] - &g_prev[i]))
                .collect(),
            // First iteration: 2·(I+W)/2·x − x − αg = Wx − αg, the DGD step.
            _ => (0..n)
                .map(|i| 2.0 * &c[i] - &self.state.x[i] - alpha * &g[i])
                .collect(),
        };
        self.state.prev_consensus = Some(c);
        self.state.prev_grad = Some(g);
        self.state.x = new_x;
        Ok(())
    }

    fn step_diging(&mut self, k_next: u64) -> Result<()> {
        let alpha = self.cfg.alpha;
        let cx = consensus_round(
            self.cfg.variant,
            &self.w.w,
            &self.state.x,
            &self.cfg.comm,
            &self.stream,
            k_next,
            1,
        )?;
        self.state.comm_count += 1;
        let s = self.state.tracker.as_ref().unwrap();
        let new_x: Vec<DVector<f64>> = (0..self.state.x.len())
            .map(|i| &cx[i] - alpha * &s[i])
            .collect();
        let cs = consensus_round(
            self.cfg.variant,
            &self.w.w,
            s,
            &self.cfg.comm,
            &self.stream,
            k_next,
            2,
        )?;
        self.state.comm_count += 1;
        if any_out_of_range(&new_x) {
            // gradient at the runaway iterate may overflow; stop here
            self.state.x = new_x;
            self.state.diverged = true;
            return Ok(());
        }
        let g_new = self.gradients(&new_x, k_next)?;
        self.state.comp_count += 1;
        let g_prev = self.state.prev_grad.as_ref().unwrap();
        let new_s: Vec<DVector<f64>> = (0..new_x.len())
            .map(|i| &cs[i] + (&g_new[i] - &g_prev[i]))
            .collect();
        self.state.x = new_x;
        self.state.tracker = Some(new_s);
        self.state.prev_grad = Some(g_new);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Stop when the running mean of f(x̄) changes relatively less than this.
    pub welford_eps: Option<f64>,
}

/// Execute one configured run to completion, producing a metrics trace.
/// Fully deterministic in (config, matrix, objective, seed); divergence is a
/// terminal trace status, not an error.
pub fn run(
    cfg: &AlgoConfig,
    w: &ConsensusMatrix,
    obj: &Objective,
    gt: &GroundTruth,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let mut engine = Engine::new(cfg, w, obj, seed)?;
    let mut rows = Vec::with_capacity(cfg.max_iters + 1);
    let mut welford = f64::NAN;
    let mut terminal = TerminalStatus::MaxIters;
    for k in 0..=cfg.max_iters as u64 {
        let report = if k == 0 { engine.report() } else { engine.step()? };
        let x_bar = &report.x_bar;
        let f_bar = obj.global_value(x_bar);
        let prev_welford = welford;
        welford = if k == 0 { f_bar } else { welford_update(welford, k, f_bar) };
        let err_sq = (x_bar - &gt.x_star).norm_squared();
        let fval_rel_err = if gt.f_star.abs() > 0.0 {
            (f_bar - gt.f_star) / gt.f_star.abs()
        } else {
            f_bar - gt.f_star
        };
        let consensus_viol: f64 = engine
            .state
            .x
            .iter()
            .map(|x| (x - x_bar).norm_squared())
            .sum();
        rows.push(TraceRow {
            k,
            err_sq,
            fval_rel_err,
            consensus_viol,
            comm_count: engine.state.comm_count,
            comp_count: engine.state.comp_count,
            welford_mean: welford,
        });
        if report.diverged {
            terminal = TerminalStatus::Diverged;
            break;
        }
        if k >= 1 {
            if let Some(eps) = opts.welford_eps {
                if should_terminate(welford, prev_welford, eps) {
                    terminal = TerminalStatus::Converged;
                    break;
                }
            }
        }
    }
    Ok(RunTrace { rows, terminal })
}
