//! Lipschitz constants of the convolution and pooling layers, and
//! randomized perturbation checks against them.
//!
//! Constants are spectral norms; perturbations and output changes are
//! measured in the Frobenius norm, for which the spectral norm is the
//! induced gain of a matrix product.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::Activation;
use crate::linalg::{spectral_norm, top_right_singular_vector};
use crate::model::{GraphContext, Model, StageKind};
use crate::spectral::WaveletBasis;

pub const RELATIVE_SLACK: f64 = 1e-9;

/// `ΨΘΨ⁺` for a basis and a filter sliced to the graph size.
pub fn gwc_operator(basis: &WaveletBasis, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = basis.psi.nrows();
    if theta.nrows() < n || theta.ncols() < n {
        return Err(Error::contract(format!("filter is {:?}, basis is {n}x{n}", theta.shape())));
    }
    let theta = theta.view((0, 0), (n, n));
    Ok(&basis.psi * theta * &basis.psi_pinv)
}

/// `K_1 = L_σ ‖Ψ Θ Ψ⁺‖₂`.
pub fn lipschitz_bound_gwc(basis: &WaveletBasis, theta: &DMatrix<f64>, activation: Activation) -> Result<f64> {
    Ok(activation.lipschitz() * spectral_norm(&gwc_operator(basis, theta)?)?)
}

/// `K_2 = ‖Sᵀ‖₂ ‖S‖₂ = σ_max(S)²`.
pub fn lipschitz_bound_pool(s: &DMatrix<f64>) -> Result<f64> {
    let sigma = spectral_norm(s)?;
    Ok(sigma * sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub bound: f64,
    pub trials: usize,
    pub violations: usize,
    /// Largest `‖F(X+δ) − F(X)‖ / (K‖δ‖)` seen.
    pub max_ratio: f64,
}

impl PerturbationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn merge(self, other: Self) -> Self {
        Self {
            bound: self.bound.max(other.bound),
            trials: self.trials + other.trials,
            violations: self.violations + other.violations,
            max_ratio: self.max_ratio.max(other.max_ratio),
        }
    }
}

fn ratio(change: f64, bound: f64, delta: f64) -> f64 {
    if delta == 0.0 || change == 0.0 {
        0.0
    } else if bound == 0.0 {
        f64::INFINITY
    } else {
        change / (bound * delta)
    }
}

/// Samples `trials` perturbations with Frobenius norm log-uniform in
/// `magnitude` and checks `‖F(X+δ) − F(X)‖ ≤ K‖δ‖(1 + 1e-9)`. The
/// `directions` are extra unit perturbations checked at norm 1.
pub fn perturbation_check<F>(
    layer: F,
    x: &DMatrix<f64>,
    bound: f64,
    trials: usize,
    magnitude: (f64, f64),
    seed: u64,
    directions: &[DMatrix<f64>],
) -> Result<PerturbationReport>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Sync,
{
    let (lo, hi) = magnitude;
    if trials == 0 || !(lo > 0.0 && hi >= lo) || !(bound >= 0.0) {
        return Err(Error::contract(format!(
            "perturbation check needs trials >= 1, 0 < lo <= hi and K >= 0, got {trials}, ({lo}, {hi}), {bound}"
        )));
    }
    let base = layer(x)?;
    let (r, c) = x.shape();
    let eval = |delta: &DMatrix<f64>| -> Result<f64> {
        let out = layer(&(x + delta))?;
        Ok(ratio((out - &base).norm(), bound, delta.norm()))
    };
    let mut ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let dir = DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..=1.0));
            let norm = dir.norm();
            if norm == 0.0 {
                return Ok(0.0);
            }
            let mag = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
            eval(&(dir * (mag / norm)))
        })
        .collect::<Result<_>>()?;
    for d in directions {
        if d.shape() != (r, c) {
            return Err(Error::contract(format!("direction is {:?}, input is {:?}", d.shape(), (r, c))));
        }
        let norm = d.norm();
        ratios.push(if norm == 0.0 { 0.0 } else { eval(&(d / norm))? });
    }
    Ok(PerturbationReport {
        bound,
        trials: ratios.len(),
        violations: ratios.iter().filter(|&&q| q > 1.0 + RELATIVE_SLACK).count(),
        max_ratio: ratios.iter().cloned().fold(0.0, f64::max),
    })
}

/// Single-scale convolution `σ(M H + ħ)`.
pub fn gwc_layer<'a>(
    op: &'a DMatrix<f64>,
    bias: &'a DMatrix<f64>,
    activation: Activation,
) -> impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Sync + 'a {
    move |h: &DMatrix<f64>| {
        if h.nrows() != op.ncols() || bias.shape() != (op.nrows(), h.ncols()) {
            return Err(Error::contract(format!(
                "GWC shapes: operator {:?}, input {:?}, bias {:?}",
                op.shape(),
                h.shape(),
                bias.shape()
            )));
        }
        Ok(activation.apply(op * h + bias))
    }
}

/// Pooling of a square input by congruence, `X ↦ S X Sᵀ`.
pub fn pool_layer(s: &DMatrix<f64>) -> impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Sync + '_ {
    move |a: &DMatrix<f64>| {
        if a.shape() != (s.ncols(), s.ncols()) {
            return Err(Error::contract(format!("pool input {:?} for S {:?}", a.shape(), s.shape())));
        }
        Ok(s * a * s.transpose())
    }
}

/// Input with the top right singular vector of `m` in its first column
/// and zeros elsewhere.
fn aligned_direction(m: &DMatrix<f64>, cols: usize) -> Result<DMatrix<f64>> {
    let (_, v) = top_right_singular_vector(m)?;
    let mut d = DMatrix::zeros(v.len(), cols);
    d.column_mut(0).copy_from(&v);
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub graph: String,
    /// Largest `K_1` over the wavelet scales.
    pub k_gwc: f64,
    pub k_pool: f64,
    /// Largest `‖Ψ_f‖₂` over the scales.
    pub k_psi: f64,
    pub trials: usize,
    pub violations: usize,
    pub max_ratio: f64,
    pub gwc: PerturbationReport,
    pub pool: PerturbationReport,
    /// Convolution followed by pooling with square input, against `K_1 K_2`.
    pub composed: PerturbationReport,
    pub frobenius_gwc: f64,
    pub frobenius_pool: f64,
    /// The assignment went through a row softmax; the check treats the
    /// realized matrix as fixed.
    pub softmax_assignment: bool,
    pub eigen_perturbation_term: String,
}

impl LipschitzReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks the first-stage layers of `model` on `graph`.
pub fn stability_report(model: &Model, graph: &Graph, ctx: &GraphContext, trials: usize, seed: u64) -> Result<LipschitzReport> {
    let config = &model.config;
    if !config.variant.uses_wavelets() {
        return Err(Error::Config(format!(
            "stability checks need a wavelet variant, `{}` has no GWC layer",
            config.variant
        )));
    }
    let n = graph.node_count();
    let l = graph.feature_dim();
    let magnitude = (1e-6, 10.0);
    let bias = model.params.get("gwc.bias")?.view((0, 0), (n, l)).into_owned();

    let mut gwc: Option<PerturbationReport> = None;
    let (mut k_gwc, mut k_psi, mut frob_gwc) = (0.0f64, 0.0f64, 0.0f64);
    let mut ops = Vec::new();
    for (k, basis) in ctx.bases.iter().enumerate() {
        let theta = model.params.get(&format!("gwc.theta.{k}"))?;
        let op = gwc_operator(basis, theta)?;
        let bound = config.activation.lipschitz() * spectral_norm(&op)?;
        k_gwc = k_gwc.max(bound);
        k_psi = k_psi.max(spectral_norm(&basis.psi)?);
        frob_gwc = frob_gwc.max(op.norm());
        let dir = aligned_direction(&op, l)?;
        let rep = perturbation_check(
            gwc_layer(&op, &bias, config.activation),
            graph.features(),
            bound,
            trials,
            magnitude,
            seed.wrapping_add(k as u64),
            &[dir],
        )?;
        gwc = Some(match gwc {
            Some(prev) => prev.merge(rep),
            None => rep,
        });
        ops.push((op, bound));
    }
    let gwc = gwc.ok_or_else(|| Error::contract("model has no wavelet scales"))?;

    let f = model.forward(graph, ctx)?;
    let stage = f.stages[0];
    let s = match (stage.kind, stage.assignment) {
        (StageKind::Pool, Some(s)) => f.tape.value(s).clone(),
        _ => DMatrix::identity(n, n),
    };
    let k_pool = lipschitz_bound_pool(&s)?;
    let (_, v) = top_right_singular_vector(&s)?;
    let adversarial = &v * v.transpose();
    let pool = perturbation_check(pool_layer(&s), graph.adjacency(), k_pool, trials, magnitude, seed ^ 0x5eed, &[adversarial])?;

    let (op0, k1) = &ops[0];
    let square_bias = DMatrix::from_fn(n, n, |i, j| bias[(i, j % l)]);
    let conv = gwc_layer(op0, &square_bias, config.activation);
    let pooled = pool_layer(&s);
    let composed_layer = |h: &DMatrix<f64>| pooled(&conv(h)?);
    let composed = perturbation_check(composed_layer, graph.adjacency(), k1 * k_pool, trials, magnitude, seed ^ 0xc0de, &[])?;

    let all = [gwc, pool, composed];
    Ok(LipschitzReport {
        graph: graph.id().to_owned(),
        k_gwc,
        k_pool,
        k_psi,
        trials: all.iter().map(|r| r.trials).sum(),
        violations: all.iter().map(|r| r.violations).sum(),
        max_ratio: all.iter().map(|r| r.max_ratio).fold(0.0, f64::max),
        gwc,
        pool,
        composed,
        frobenius_gwc: frob_gwc,
        frobenius_pool: s.norm_squared(),
        softmax_assignment: stage.kind == StageKind::Pool && (config.softmax_rows || !config.variant.spectral_pooling()),
        eigen_perturbation_term: "not directly checkable: no eigenvalue perturbation is given".into(),
    })
}
