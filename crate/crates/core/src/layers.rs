//! Forward computations of the individual layers on plain matrices.
//!
//! The training model in [`crate::model`] rebuilds the same computations on
//! the autodiff tape; these functions are the direct, tape-free versions
//! used for inference utilities, stability analysis and cross-checks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gcn_normalize, row_softmax};
use crate::error::{Error, Result};
use crate::spectral::{SpectralTransform, WaveletBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, m: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Relu => m.map(|v| v.max(0.0)),
            Activation::Identity => m,
        }
    }

    /// Lipschitz constant of the elementwise map.
    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

/// Graph wavelet convolution parameters, allocated at `N_max` and sliced
/// to each graph's size.
#[derive(Debug, Clone, PartialEq)]
pub struct GwcLayerParams {
    pub scales: Vec<f64>,
    /// One `N_max × N_max` filter per scale.
    pub theta: Vec<DMatrix<f64>>,
    /// `N_max × l`, shared by all scales.
    pub bias: DMatrix<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPoolParams {
    pub target_size: usize,
    /// `M_max × N_max` spectral filter.
    pub theta: DMatrix<f64>,
    pub softmax_rows: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams {
    pub weight: DMatrix<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// `(m_out · l) × c`.
    pub weight: DMatrix<f64>,
    /// `1 × c`.
    pub bias: DMatrix<f64>,
}

fn block(m: &DMatrix<f64>, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows > m.nrows() || cols > m.ncols() {
        return Err(Error::contract(format!(
            "{name} is {:?}, cannot slice {rows}x{cols}",
            m.shape()
        )));
    }
    Ok(m.view((0, 0), (rows, cols)).into_owned())
}

/// `(1/F) Σ_f σ(Ψ_f Θ_f Ψ_f⁺ H + ħ)`.
pub fn gwc_forward(h: &DMatrix<f64>, params: &GwcLayerParams, bases: &[WaveletBasis]) -> Result<DMatrix<f64>> {
    let (n, l) = h.shape();
    if params.scales.is_empty() || params.theta.len() != params.scales.len() {
        return Err(Error::contract(format!(
            "GWC needs one filter per scale, got {} scales and {} filters",
            params.scales.len(),
            params.theta.len()
        )));
    }
    if bases.len() != params.scales.len() {
        return Err(Error::contract(format!(
            "GWC has {} scales but {} wavelet bases",
            params.scales.len(),
            bases.len()
        )));
    }
    let bias = block(&params.bias, n, l, "GWC bias")?;
    let mut out = DMatrix::zeros(n, l);
    for (theta, basis) in params.theta.iter().zip(bases) {
        if basis.psi.nrows() != n {
            return Err(Error::contract(format!(
                "wavelet basis is {}x{}, features have {n} rows",
                basis.psi.nrows(),
                basis.psi.ncols()
            )));
        }
        let theta = block(theta, n, n, "GWC filter")?;
        let projected = &basis.psi_pinv * h;
        let filtered = &basis.psi * (theta * projected) + &bias;
        out += params.activation.apply(filtered);
    }
    Ok(out / params.scales.len() as f64)
}

/// `S = ξ_m θ ξ_nᵀ` with optional row softmax; `m × n`.
pub fn spectral_pool_assign(
    n: usize,
    params: &SpectralPoolParams,
    xi_n: &SpectralTransform,
    xi_m: &SpectralTransform,
) -> Result<DMatrix<f64>> {
    let m = params.target_size;
    if m >= n {
        return Err(Error::PoolingDegenerate { target: m, input: n });
    }
    if xi_n.size() != n || xi_m.size() != m {
        return Err(Error::contract(format!(
            "transform sizes ({}, {}) do not match pooling {n} -> {m}",
            xi_n.size(),
            xi_m.size()
        )));
    }
    let theta = block(&params.theta, m, n, "pooling filter")?;
    let raw = &xi_m.matrix * theta * xi_n.matrix.transpose();
    Ok(if params.softmax_rows { row_softmax(&raw) } else { raw })
}

/// `(S A Sᵀ, S X)`.
pub fn pool_apply(s: &DMatrix<f64>, a: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = s.ncols();
    if a.shape() != (n, n) || x.nrows() != n {
        return Err(Error::contract(format!(
            "pooling shapes: S {:?}, A {:?}, X {:?}",
            s.shape(),
            a.shape(),
            x.shape()
        )));
    }
    let pooled_a = (s * a) * s.transpose();
    Ok((pooled_a, s * x))
}

/// `σ(Â X W)` with `Â = D̃^{-1/2}(A + I)D̃^{-1/2}`.
pub fn gcn_forward(a: &DMatrix<f64>, x: &DMatrix<f64>, params: &GcnLayerParams) -> Result<DMatrix<f64>> {
    if a.nrows() != x.nrows() || x.ncols() != params.weight.nrows() {
        return Err(Error::contract(format!(
            "GCN shapes: A {:?}, X {:?}, W {:?}",
            a.shape(),
            x.shape(),
            params.weight.shape()
        )));
    }
    let (a_hat, _) = gcn_normalize(a)?;
    Ok(params.activation.apply(a_hat * x * &params.weight))
}

/// Row-stochastic `n × m` assignment `softmax(Â X W)` (DiffPool style);
/// `weight` is `l × m`.
pub fn diffpool_assign(a: &DMatrix<f64>, x: &DMatrix<f64>, weight: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let logits = gcn_forward(
        a,
        x,
        &GcnLayerParams {
            weight: weight.clone(),
            activation: Activation::Identity,
        },
    )?;
    Ok(row_softmax(&logits))
}

/// Logits and class probabilities from the final fixed-size features.
pub fn classify(x_final: &DMatrix<f64>, params: &ClassifierParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = x_final.len();
    if q != params.weight.nrows() || params.bias.shape() != (1, params.weight.ncols()) {
        return Err(Error::contract(format!(
            "classifier expects {} inputs, got {:?} features",
            params.weight.nrows(),
            x_final.shape()
        )));
    }
    let (r, c) = x_final.shape();
    let flat = DMatrix::from_fn(1, q, |_, k| x_final[(k / c, k % c)]);
    debug_assert_eq!(flat.len(), r * c);
    let logits = flat * &params.weight + &params.bias;
    let probs = row_softmax(&logits);
    Ok((logits, probs))
}
