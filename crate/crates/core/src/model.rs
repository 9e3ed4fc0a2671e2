//! Model assembly: named parameters, per-graph precomputation, the tape
//! forward pass for all four variants, and checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};
use crate::layers::Activation;
use crate::linalg::uniform_matrix;
use crate::spectral::{cosine_transform, normalized_laplacian, wavelet_basis, BasisMode, SpectralTransform, WaveletBasis};

pub const CHECKPOINT_SCHEMA: u32 = 1;
pub const CHECKPOINT_DATA: &str = "params.bin";
pub const CHECKPOINT_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gspect,
    GcnSpectralpool,
    GwcDiffpool,
    GcnDiffpool,
}

impl Variant {
    /// Ablation table row order.
    pub const ALL: [Variant; 4] = [
        Variant::GcnDiffpool,
        Variant::GcnSpectralpool,
        Variant::GwcDiffpool,
        Variant::Gspect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gspect => "gspect",
            Variant::GcnSpectralpool => "gcn_spectralpool",
            Variant::GwcDiffpool => "gwc_diffpool",
            Variant::GcnDiffpool => "gcn_diffpool",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Gspect => "GSpect",
            Variant::GcnSpectralpool => "GCN+Spectral-pooling",
            Variant::GwcDiffpool => "GWC+Diffpool",
            Variant::GcnDiffpool => "GCN+Diffpool",
        }
    }

    pub fn uses_wavelets(self) -> bool {
        matches!(self, Variant::Gspect | Variant::GwcDiffpool)
    }

    pub fn spectral_pooling(self) -> bool {
        matches!(self, Variant::Gspect | Variant::GcnSpectralpool)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of gspect, gcn_spectralpool, gwc_diffpool, gcn_diffpool)"
                ))
            })
    }
}

/// Which pooling stages contribute to the link-prediction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStages {
    #[default]
    All,
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub scales: Vec<f64>,
    pub order: usize,
    pub basis_mode: BasisMode,
    pub n_max: usize,
    pub m_out: usize,
    /// First pooling stage targets `max(ceil(n / pool_ratio), m_out)` nodes.
    pub pool_ratio: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub softmax_rows: bool,
    pub lp_stages: LpStages,
    pub feature_dim: usize,
    pub class_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gspect,
            scales: vec![0.5, 1.0, 2.0],
            order: 20,
            basis_mode: BasisMode::FittedKernel,
            n_max: 1000,
            m_out: 4,
            pool_ratio: 4,
            hidden: 32,
            activation: Activation::Relu,
            softmax_rows: true,
            lp_stages: LpStages::All,
            feature_dim: 0,
            class_count: 0,
        }
    }
}

impl ModelConfig {
    /// Defaults with input and output dimensions taken from `dataset`.
    pub fn for_dataset(dataset: &GraphDataset) -> Self {
        Self {
            feature_dim: dataset.feature_dim(),
            class_count: dataset.class_count(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scales.is_empty() {
            return bad("at least one wavelet scale is required".into());
        }
        if let Some(f) = self.scales.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return bad(format!("wavelet scales must be positive, got {f}"));
        }
        if self.order < 1 {
            return bad("Chebyshev order must be >= 1".into());
        }
        if self.m_out < 1 || self.n_max < self.m_out {
            return bad(format!("need 1 <= m_out <= n_max, got m_out {} and n_max {}", self.m_out, self.n_max));
        }
        if self.pool_ratio < 2 {
            return bad(format!("pool_ratio must be >= 2, got {}", self.pool_ratio));
        }
        if self.hidden < 1 || self.feature_dim < 1 || self.class_count < 1 {
            return bad(format!(
                "hidden, feature_dim and class_count must be positive, got {}, {}, {}",
                self.hidden, self.feature_dim, self.class_count
            ));
        }
        Ok(())
    }

    /// Node counts after the first and second pooling stage.
    pub fn stage_targets(&self, n: usize) -> [usize; 2] {
        [n.div_ceil(self.pool_ratio).max(self.m_out), self.m_out]
    }

    fn first_stage_max(&self) -> usize {
        self.stage_targets(self.n_max)[0]
    }

    /// Width of the features entering the first pooling stage.
    fn conv_width(&self) -> usize {
        if self.variant.uses_wavelets() {
            self.feature_dim
        } else {
            self.hidden
        }
    }

    fn classifier_inputs(&self) -> usize {
        self.m_out * self.hidden
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    IdentityPlusNoise,
    Glorot,
    Zero,
}

fn param_specs(config: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let n = config.n_max;
    let m1 = config.first_stage_max();
    let mut specs = Vec::new();
    if config.variant.uses_wavelets() {
        for k in 0..config.scales.len() {
            specs.push((format!("gwc.theta.{k}"), n, n, Init::IdentityPlusNoise));
        }
        specs.push(("gwc.bias".into(), n, config.feature_dim, Init::Zero));
    } else {
        specs.push(("conv.weight".into(), config.feature_dim, config.hidden, Init::Glorot));
    }
    if config.variant.spectral_pooling() {
        specs.push(("pool1.theta".into(), m1, n, Init::Glorot));
        specs.push(("pool2.theta".into(), config.m_out, m1, Init::Glorot));
    } else {
        specs.push(("pool1.assign".into(), config.conv_width(), m1, Init::Glorot));
        specs.push(("pool2.assign".into(), config.hidden, config.m_out, Init::Glorot));
    }
    specs.push(("gcn.weight".into(), config.conv_width(), config.hidden, Init::Glorot));
    specs.push((
        "classifier.weight".into(),
        config.classifier_inputs(),
        config.class_count,
        Init::Glorot,
    ));
    specs.push(("classifier.bias".into(), 1, config.class_count, Init::Zero));
    specs
}

/// All learnable tensors, addressed by stable names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, DMatrix<f64>>,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_specs(config)
            .into_iter()
            .map(|(name, r, c, init)| {
                let bound = (6.0 / (r + c) as f64).sqrt();
                let m = match init {
                    Init::Zero => DMatrix::zeros(r, c),
                    Init::Glorot => uniform_matrix(r, c, bound, &mut rng),
                    Init::IdentityPlusNoise => DMatrix::identity(r, c) + uniform_matrix(r, c, bound, &mut rng),
                };
                (name, m)
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn from_tensors(tensors: BTreeMap<String, DMatrix<f64>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("model has no parameter `{name}`")))
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: DMatrix<f64>) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("model has no parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::contract(format!(
                "parameter `{name}` is {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DMatrix<f64>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut DMatrix<f64>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, m)| (k.clone(), DMatrix::zeros(m.nrows(), m.ncols())))
                .collect(),
        }
    }
}

/// Process-wide memo of cosine transforms by size.
#[derive(Debug, Default)]
pub struct TransformCache {
    inner: Mutex<HashMap<usize, Arc<SpectralTransform>>>,
}

impl TransformCache {
    pub fn get(&self, n: usize) -> Result<Arc<SpectralTransform>> {
        let mut map = self.inner.lock().expect("transform cache poisoned");
        if let Some(t) = map.get(&n) {
            return Ok(Arc::clone(t));
        }
        let t = Arc::new(cosine_transform(n)?);
        map.insert(n, Arc::clone(&t));
        Ok(t)
    }
}

/// Graph-dependent constants: wavelet bases and the cosine transforms for
/// every size the graph passes through.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub node_count: usize,
    pub bases: Vec<WaveletBasis>,
    transforms: BTreeMap<usize, Arc<SpectralTransform>>,
}

impl GraphContext {
    pub fn build(config: &ModelConfig, graph: &Graph, cache: &TransformCache) -> Result<Self> {
        let n = graph.node_count();
        let bases = if config.variant.uses_wavelets() {
            let lap = normalized_laplacian(graph.adjacency())?;
            config
                .scales
                .iter()
                .map(|&f| wavelet_basis(&lap, f, config.order, config.basis_mode))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut transforms = BTreeMap::new();
        if config.variant.spectral_pooling() {
            let [t1, t2] = config.stage_targets(n);
            for size in [n, t1, t2] {
                transforms.insert(size, cache.get(size)?);
            }
        }
        Ok(Self {
            node_count: n,
            bases,
            transforms,
        })
    }

    pub fn transform(&self, n: usize) -> Result<&SpectralTransform> {
        self.transforms
            .get(&n)
            .map(Arc::as_ref)
            .ok_or_else(|| Error::contract(format!("no cosine transform of size {n} in graph context")))
    }
}

/// Contexts for many graphs, computed in parallel with a shared transform cache.
pub fn build_contexts(config: &ModelConfig, graphs: &[Graph]) -> Result<Vec<GraphContext>> {
    let cache = TransformCache::default();
    graphs
        .par_iter()
        .map(|g| GraphContext::build(config, g, &cache))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Pool,
    Identity,
    Pad,
}

/// One pooling stage as recorded on the tape.
#[derive(Debug, Clone, Copy)]
pub struct StageRecord {
    pub kind: StageKind,
    pub input_size: usize,
    pub output_size: usize,
    /// `m × n` assignment (DiffPool assignments are stored transposed).
    pub assignment: Option<Var>,
    pub adjacency_in: Var,
    pub adjacency_out: Var,
}

/// A recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub tape: Tape,
    pub logits: Var,
    pub stages: Vec<StageRecord>,
}

impl Forward {
    pub fn logits(&self) -> &DMatrix<f64> {
        self.tape.value(self.logits)
    }

    pub fn probabilities(&self) -> DMatrix<f64> {
        crate::autodiff::row_softmax(self.logits())
    }

    pub fn predicted(&self) -> usize {
        argmax(self.logits())
    }
}

pub(crate) fn argmax(row: &DMatrix<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn activate(tape: &mut Tape, v: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(v),
        Activation::Identity => v,
    }
}

struct Pass<'a> {
    config: &'a ModelConfig,
    params: &'a ModelParams,
    ctx: &'a GraphContext,
    tape: Tape,
}

impl Pass<'_> {
    fn param(&mut self, name: &str, rows: usize, cols: usize) -> Result<Var> {
        let full = self.params.get(name)?;
        self.tape.param(name, full, rows, cols)
    }

    fn gwc(&mut self, h: Var) -> Result<Var> {
        let (n, l) = self.tape.value(h).shape();
        let scales = self.config.scales.len();
        if self.ctx.bases.len() != scales {
            return Err(Error::contract(format!(
                "graph context has {} wavelet bases for {scales} scales",
                self.ctx.bases.len()
            )));
        }
        let bias = self.param("gwc.bias", n, l)?;
        let mut terms = Vec::with_capacity(scales);
        for (k, basis) in self.ctx.bases.iter().enumerate() {
            let pinv = self.tape.constant(basis.psi_pinv.clone());
            let projected = self.tape.matmul(pinv, h)?;
            let theta = self.param(&format!("gwc.theta.{k}"), n, n)?;
            let filtered = self.tape.matmul(theta, projected)?;
            let psi = self.tape.constant(basis.psi.clone());
            let back = self.tape.matmul(psi, filtered)?;
            let shifted = self.tape.add(back, bias)?;
            terms.push(activate(&mut self.tape, shifted, self.config.activation));
        }
        let total = self.tape.sum(&terms)?;
        Ok(self.tape.scale(total, 1.0 / scales as f64))
    }

    /// `σ(Â X W)` with `W` sliced to `(width of X) × cols`.
    fn gcn(&mut self, a: Var, x: Var, name: &str, cols: usize, act: Activation) -> Result<Var> {
        let a_hat = self.tape.gcn_normalize(a)?;
        let ax = self.tape.matmul(a_hat, x)?;
        let w = self.param(name, self.tape.value(x).ncols(), cols)?;
        let y = self.tape.matmul(ax, w)?;
        Ok(activate(&mut self.tape, y, act))
    }

    fn stage(&mut self, idx: usize, a: Var, x: Var, target: usize) -> Result<(Var, Var, StageRecord)> {
        let k = self.tape.value(a).nrows();
        let width = self.tape.value(x).ncols();
        let mut record = StageRecord {
            kind: StageKind::Identity,
            input_size: k,
            output_size: target,
            assignment: None,
            adjacency_in: a,
            adjacency_out: a,
        };
        if k == target {
            return Ok((a, x, record));
        }
        if k < target {
            let a_out = self.tape.pad(a, target, target)?;
            let x_out = self.tape.pad(x, target, width)?;
            record.kind = StageKind::Pad;
            record.adjacency_out = a_out;
            return Ok((a_out, x_out, record));
        }
        let s = if self.config.variant.spectral_pooling() {
            let theta = self.param(&format!("pool{idx}.theta"), target, k)?;
            let xi_m = self.tape.constant(self.ctx.transform(target)?.matrix.clone());
            let xi_n_t = self.tape.constant(self.ctx.transform(k)?.matrix.transpose());
            let left = self.tape.matmul(xi_m, theta)?;
            let raw = self.tape.matmul(left, xi_n_t)?;
            if self.config.softmax_rows {
                self.tape.row_softmax(raw)
            } else {
                raw
            }
        } else {
            let logits = self.gcn(a, x, &format!("pool{idx}.assign"), target, Activation::Identity)?;
            let assign = self.tape.row_softmax(logits);
            self.tape.transpose(assign)
        };
        let s_t = self.tape.transpose(s);
        let sa = self.tape.matmul(s, a)?;
        let a_out = self.tape.matmul(sa, s_t)?;
        let x_out = self.tape.matmul(s, x)?;
        record.kind = StageKind::Pool;
        record.assignment = Some(s);
        record.adjacency_out = a_out;
        Ok((a_out, x_out, record))
    }
}

/// Runs the full pipeline for one graph, recording every operation.
pub fn forward(config: &ModelConfig, params: &ModelParams, graph: &Graph, ctx: &GraphContext) -> Result<Forward> {
    let n = graph.node_count();
    if n > config.n_max {
        return Err(Error::contract(format!(
            "graph `{}` has {n} nodes, model supports at most n_max = {}",
            graph.id(),
            config.n_max
        )));
    }
    if graph.feature_dim() != config.feature_dim {
        return Err(Error::contract(format!(
            "graph `{}` has {} features, model expects {}",
            graph.id(),
            graph.feature_dim(),
            config.feature_dim
        )));
    }
    if ctx.node_count != n {
        return Err(Error::contract(format!(
            "graph context built for {} nodes, graph `{}` has {n}",
            ctx.node_count,
            graph.id()
        )));
    }
    let mut pass = Pass {
        config,
        params,
        ctx,
        tape: Tape::new(),
    };
    let a0 = pass.tape.constant(graph.adjacency().clone());
    let x0 = pass.tape.constant(graph.features().clone());
    let h = if config.variant.uses_wavelets() {
        pass.gwc(x0)?
    } else {
        pass.gcn(a0, x0, "conv.weight", config.hidden, config.activation)?
    };
    let [t1, t2] = config.stage_targets(n);
    let (a1, x1, r1) = pass.stage(1, a0, h, t1)?;
    let h1 = pass.gcn(a1, x1, "gcn.weight", config.hidden, config.activation)?;
    let (_, x2, r2) = pass.stage(2, a1, h1, t2)?;
    let flat = pass.tape.flatten(x2);
    let q = pass.tape.value(flat).ncols();
    if q != config.classifier_inputs() {
        return Err(Error::contract(format!(
            "readout has {q} entries, classifier expects {}",
            config.classifier_inputs()
        )));
    }
    let w = pass.param("classifier.weight", q, config.class_count)?;
    let b = pass.param("classifier.bias", 1, config.class_count)?;
    let z = pass.tape.matmul(flat, w)?;
    let logits = pass.tape.add(z, b)?;
    Ok(Forward {
        tape: pass.tape,
        logits,
        stages: vec![r1, r2],
    })
}

/// Configuration and parameters together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn context(&self, graph: &Graph) -> Result<GraphContext> {
        GraphContext::build(&self.config, graph, &TransformCache::default())
    }

    pub fn forward(&self, graph: &Graph, ctx: &GraphContext) -> Result<Forward> {
        forward(&self.config, &self.params, graph, ctx)
    }

    /// Predicted class and class probabilities.
    pub fn predict(&self, graph: &Graph, ctx: &GraphContext) -> Result<(usize, DMatrix<f64>)> {
        let f = self.forward(graph, ctx)?;
        Ok((f.predicted(), f.probabilities()))
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        save_checkpoint(dir, &self.config, &self.params, seed)
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointManifest)> {
        let (manifest, params) = load_checkpoint(dir)?;
        let model = Self {
            config: manifest.architecture.clone(),
            params,
        };
        Ok((model, manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub architecture: ModelConfig,
    pub scales: Vec<f64>,
    pub n_max: usize,
    pub m_out: usize,
    pub seed: u64,
    pub data_file: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `params.bin` (row-major little-endian f64 tensors, concatenated)
/// and `manifest.json` into `dir`.
pub fn save_checkpoint(dir: &Path, config: &ModelConfig, params: &ModelParams, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data_path = dir.join(CHECKPOINT_DATA);
    let file = File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let mut w = BufWriter::new(file);
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, m) in params.iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            rows: m.nrows(),
            cols: m.ncols(),
            offset_bytes: offset,
        });
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_all(&m[(i, j)].to_le_bytes()).map_err(|e| Error::io(&data_path, e))?;
            }
        }
        offset += 8 * m.len() as u64;
    }
    w.flush().map_err(|e| Error::io(&data_path, e))?;
    let manifest = CheckpointManifest {
        schema_version: CHECKPOINT_SCHEMA,
        architecture: config.clone(),
        scales: config.scales.clone(),
        n_max: config.n_max,
        m_out: config.m_out,
        seed,
        data_file: CHECKPOINT_DATA.into(),
        tensors,
    };
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, ModelParams)> {
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::MissingFile(manifest_path.display().to_string()));
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.schema_version != CHECKPOINT_SCHEMA {
        return Err(Error::Config(format!(
            "checkpoint schema {} is not supported (expected {CHECKPOINT_SCHEMA})",
            manifest.schema_version
        )));
    }
    let data_path = dir.join(&manifest.data_file);
    if !data_path.is_file() {
        return Err(Error::MissingFile(data_path.display().to_string()));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(&data_path).map_err(|e| Error::io(&data_path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&data_path, e))?;
    let mut tensors = BTreeMap::new();
    for t in &manifest.tensors {
        let start = t.offset_bytes as usize;
        let end = start + 8 * t.rows * t.cols;
        let chunk = bytes.get(start..end).ok_or_else(|| Error::Format {
            file: manifest.data_file.clone(),
            line: 0,
            message: format!("tensor `{}` extends past the end of the file", t.name),
        })?;
        let vals: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.insert(t.name.clone(), DMatrix::from_row_slice(t.rows, t.cols, &vals));
    }
    let expected = ModelParams::init(&manifest.architecture, 0)?;
    for (name, m) in expected.iter() {
        let got = tensors.get(name).ok_or_else(|| Error::Format {
            file: CHECKPOINT_MANIFEST.into(),
            line: 0,
            message: format!("missing tensor `{name}`"),
        })?;
        if got.shape() != m.shape() {
            return Err(Error::Format {
                file: CHECKPOINT_MANIFEST.into(),
                line: 0,
                message: format!("tensor `{name}` is {:?}, architecture needs {:?}", got.shape(), m.shape()),
            });
        }
    }
    Ok((manifest, ModelParams::from_tensors(tensors)))
}
