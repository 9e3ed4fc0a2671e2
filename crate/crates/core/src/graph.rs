//! Graph and dataset data model plus deterministic stratified splitting.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap for degree one-hot fallback features.
pub const DEFAULT_MAX_DEGREE: usize = 64;

/// An undirected simple graph with node features and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    id: String,
    adjacency: DMatrix<f64>,
    features: DMatrix<f64>,
    label: usize,
}

impl Graph {
    /// Builds a graph, checking that the adjacency is a symmetric 0/1
    /// matrix with a zero diagonal and that features cover every node.
    pub fn new(
        id: impl Into<String>,
        adjacency: DMatrix<f64>,
        features: DMatrix<f64>,
        label: usize,
    ) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 || adjacency.ncols() != n {
            return Err(Error::contract(format!(
                "adjacency must be square and nonempty, got {}x{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        if features.nrows() != n || features.ncols() == 0 {
            return Err(Error::contract(format!(
                "features must be {n}xl with l >= 1, got {}x{}",
                features.nrows(),
                features.ncols()
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::contract(format!("nonzero diagonal at node {i}")));
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if a != 0.0 && a != 1.0 {
                    return Err(Error::contract(format!("adjacency entry ({i},{j}) = {a} is not 0/1")));
                }
                if a != adjacency[(j, i)] {
                    return Err(Error::contract(format!("adjacency asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self {
            id: id.into(),
            adjacency,
            features,
            label,
        })
    }

    /// Builds a graph from an undirected edge list. Self-loops and
    /// duplicate edges are ignored.
    pub fn from_edges(
        id: impl Into<String>,
        n: usize,
        edges: &[(usize, usize)],
        features: DMatrix<f64>,
        label: usize,
    ) -> Result<Self> {
        let mut adjacency = DMatrix::zeros(n, n);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::contract(format!("edge ({u},{v}) out of range for n = {n}")));
            }
            if u != v {
                adjacency[(u, v)] = 1.0;
                adjacency[(v, u)] = 1.0;
            }
        }
        Self::new(id, adjacency, features, label)
    }

    /// Same as [`Graph::from_edges`] with degree one-hot features.
    pub fn from_edges_degree_features(
        id: impl Into<String>,
        n: usize,
        edges: &[(usize, usize)],
        label: usize,
        max_degree: usize,
    ) -> Result<Self> {
        let placeholder = DMatrix::zeros(n, 1);
        let mut g = Self::from_edges(id, n, edges, placeholder, label)?;
        g.features = degree_features(&g.adjacency, max_degree);
        Ok(g)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency
            .row_iter()
            .map(|row| row.iter().filter(|&&a| a != 0.0).count())
            .collect()
    }

    /// Undirected edges as `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Neighbour lists, ascending.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        self.adjacency
            .row_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &a)| a != 0.0)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect()
    }
}

/// One-hot degree encoding with `max_degree + 1` columns; degrees at or
/// above `max_degree` share the last (overflow) bucket.
pub fn degree_features(adjacency: &DMatrix<f64>, max_degree: usize) -> DMatrix<f64> {
    let n = adjacency.nrows();
    let mut x = DMatrix::zeros(n, max_degree + 1);
    for (i, row) in adjacency.row_iter().enumerate() {
        let d = row.iter().filter(|&&a| a != 0.0).count();
        x[(i, d.min(max_degree))] = 1.0;
    }
    x
}

/// An ordered collection of graphs sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    name: String,
    graphs: Vec<Graph>,
    class_count: usize,
    feature_dim: usize,
}

impl GraphDataset {
    /// Validates uniform feature width, label range and that every class
    /// has at least one graph.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, class_count: usize) -> Result<Self> {
        let ds = Self::unchecked_classes(name, graphs, class_count)?;
        let mut seen = vec![false; class_count];
        for g in &ds.graphs {
            seen[g.label] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::contract(format!("class {c} has no graphs")));
        }
        Ok(ds)
    }

    /// Like [`GraphDataset::new`] but tolerates classes with no members,
    /// as happens for subsets produced by splitting.
    pub fn unchecked_classes(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        class_count: usize,
    ) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::contract("dataset has no graphs"));
        }
        if class_count == 0 {
            return Err(Error::contract("class count must be positive"));
        }
        let feature_dim = graphs[0].feature_dim();
        for g in &graphs {
            if g.feature_dim() != feature_dim {
                return Err(Error::contract(format!(
                    "graph {} has feature dim {}, expected {feature_dim}",
                    g.id,
                    g.feature_dim()
                )));
            }
            if g.label >= class_count {
                return Err(Error::contract(format!(
                    "graph {} label {} outside [0, {class_count})",
                    g.id, g.label
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            class_count,
            feature_dim,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::node_count).max().unwrap_or(0)
    }

    pub fn min_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::node_count).min().unwrap_or(0)
    }

    /// Ratio of the largest to the smallest graph size.
    pub fn cross_scale_ratio(&self) -> f64 {
        self.max_nodes() as f64 / self.min_nodes() as f64
    }

    /// Graph count per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for g in &self.graphs {
            h[g.label] += 1;
        }
        h
    }

    /// Selects graphs by index, keeping the class count.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Self> {
        let graphs = indices.iter().map(|&i| self.graphs[i].clone()).collect();
        Self::unchecked_classes(name, graphs, self.class_count)
    }

    pub fn into_graphs(self) -> Vec<Graph> {
        self.graphs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Split(format!("fractions must be positive, got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions must sum to 1, got {f:?}")));
        }
        Ok(())
    }
}

/// Index lists of a train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partition sizes for `k` items: validation and test get the rounded
/// fraction but at least one item each, training takes the remainder.
fn partition_counts(k: usize, spec: &SplitSpec) -> (usize, usize, usize) {
    let val = ((spec.val_fraction * k as f64).round() as usize).max(1);
    let test = ((spec.test_fraction * k as f64).round() as usize).max(1);
    let train = k.saturating_sub(val + test);
    (train, val, test)
}

/// Computes a deterministic partition of `dataset` by index.
pub fn split_indices(dataset: &GraphDataset, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class = vec![Vec::new(); dataset.class_count()];
        for (i, g) in dataset.graphs().iter().enumerate() {
            by_class[g.label()].push(i);
        }
        for (c, members) in by_class.iter().enumerate() {
            if members.len() < 3 {
                return Err(Error::Split(format!(
                    "class {c} has {} graph(s); stratified splitting needs at least 3 \
                     (use non-stratified mode)",
                    members.len()
                )));
            }
        }
        by_class
    } else {
        vec![(0..dataset.len()).collect()]
    };
    for mut members in groups {
        members.shuffle(&mut rng);
        let (train, val, _) = partition_counts(members.len(), spec);
        out.train.extend_from_slice(&members[..train]);
        out.val.extend_from_slice(&members[train..train + val]);
        out.test.extend_from_slice(&members[train + val..]);
    }
    if out.train.is_empty() || out.val.is_empty() || out.test.is_empty() {
        return Err(Error::Split(format!(
            "dataset of {} graphs is too small for a nonempty three-way split",
            dataset.len()
        )));
    }
    Ok(out)
}

/// Splits a dataset into (train, validation, test).
pub fn split_dataset(
    dataset: &GraphDataset,
    spec: &SplitSpec,
) -> Result<(GraphDataset, GraphDataset, GraphDataset)> {
    let idx = split_indices(dataset, spec)?;
    Ok((
        dataset.subset(format!("{}-train", dataset.name()), &idx.train)?,
        dataset.subset(format!("{}-val", dataset.name()), &idx.val)?,
        dataset.subset(format!("{}-test", dataset.name()), &idx.test)?,
    ))
}
