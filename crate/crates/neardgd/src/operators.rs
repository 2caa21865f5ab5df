//! Randomized inexactness operators: the communication channel applied to
//! every vector a node sends, and the gradient oracle each node queries.
//! Both produce zero-mean errors with bounded conditional second moment;
//! the bound each operator declares is what the theory module consumes.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::rng::{Purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CommOperator {
    Exact,
    /// Probabilistic rounding to the grid of multiples of 1/Δ.
    Quantizer { delta: u32 },
    /// v + ζ with ζ ~ N(0, (σ_c²/p)·I), total second moment σ_c².
    Gaussian { sigma_c: f64 },
}

impl CommOperator {
    /// Upper bound on E‖T_c[v] − v‖² for p-dimensional vectors.
    pub fn sigma_c_sq_bound(&self, p: usize) -> f64 {
        match *self {
            CommOperator::Exact => 0.0,
            CommOperator::Quantizer { delta } => p as f64 / (4.0 * (delta as f64).powi(2)),
            CommOperator::Gaussian { sigma_c } => sigma_c * sigma_c,
        }
    }

    pub fn is_exact(&self) -> bool {
        match *self {
            CommOperator::Exact => true,
            CommOperator::Gaussian { sigma_c } => sigma_c == 0.0,
            CommOperator::Quantizer { .. } => false,
        }
    }
}

/// Round x to a neighboring multiple of 1/Δ: down with probability
/// (⌈x⌉_grid − x)·Δ, up otherwise. The output is an exact grid multiple.
pub fn quantize_scalar(x: f64, delta: u32, rng: &mut ChaCha12Rng) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Numeric(format!("cannot quantize non-finite value {x}")));
    }
    let d = delta as f64;
    let scaled = x * d;
    let lo = scaled.floor();
    if lo == scaled {
        return Ok(lo / d);
    }
    // Probability of rounding down, clamped to absorb grid-edge rounding.
    let p_down = (lo + 1.0 - scaled).clamp(0.0, 1.0);
    let u: f64 = rng.random();
    Ok(if u < p_down { lo / d } else { (lo + 1.0) / d })
}

pub fn apply_comm(op: &CommOperator, v: &DVector<f64>, rng: &mut ChaCha12Rng) -> Result<DVector<f64>> {
    match *op {
        CommOperator::Exact => Ok(v.clone()),
        CommOperator::Quantizer { delta } => {
            let mut out = v.clone();
            for xi in out.iter_mut() {
                let q = quantize_scalar(*xi, delta, rng)?;
                debug_assert!((q - *xi).abs() < 1.0 / delta as f64);
                *xi = q;
            }
            Ok(out)
        }
        CommOperator::Gaussian { sigma_c } => {
            let p = v.len();
            let sd = sigma_c / (p as f64).sqrt();
            let mut out = v.clone();
            for xi in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *xi += sd * z;
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradOperator {
    Exact,
    /// ∇f_i(x) + noise with total variance σ_g².
    Gaussian { sigma_g: f64 },
    /// Mini-batch of the given size drawn with replacement from node i's shard.
    Minibatch { batch: usize },
}

impl GradOperator {
    pub fn is_exact(&self) -> bool {
        match *self {
            GradOperator::Exact => true,
            GradOperator::Gaussian { sigma_g } => sigma_g == 0.0,
            GradOperator::Minibatch { .. } => false,
        }
    }
}

pub fn apply_grad(
    op: &GradOperator,
    obj: &Objective,
    node: usize,
    x: &DVector<f64>,
    rng: &mut ChaCha12Rng,
) -> Result<DVector<f64>> {
    match *op {
        GradOperator::Exact => Ok(obj.grad(node, x)),
        GradOperator::Gaussian { sigma_g } => {
            let mut g = obj.grad(node, x);
            if sigma_g > 0.0 {
                let sd = sigma_g / (g.len() as f64).sqrt();
                for gi in g.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *gi += sd * z;
                }
            }
            Ok(g)
        }
        GradOperator::Minibatch { batch } => {
            if batch == 0 {
                return Err(Error::Parameter("minibatch size must be positive".into()));
            }
            obj.minibatch_grad(node, x, batch, rng)
        }
    }
}

/// Empirical σ_g² for the mini-batch oracle: sample second moment of the
/// gradient error at x₀ over `draws` batches, maximized over nodes. Used for
/// the theory constants, which need a numeric bound the oracle satisfies.
pub fn estimate_minibatch_sigma_sq(
    obj: &Objective,
    batch: usize,
    x0: &DVector<f64>,
    stream: &RngStream,
    draws: usize,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for node in 0..obj.n() {
        let exact = obj.grad(node, x0);
        let mut acc = 0.0;
        for d in 0..draws {
            let mut rng = stream.substream(Purpose::Grad, node as u64, d as u64, u64::MAX);
            let g = obj.minibatch_grad(node, x0, batch, &mut rng)?;
            acc += (g - &exact).norm_squared();
        }
        worst = worst.max(acc / draws as f64);
    }
    Ok(worst)
}
