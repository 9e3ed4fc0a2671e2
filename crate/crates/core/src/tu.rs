//! Reader and writer for the TU benchmark text format.
//!
//! A dataset `DS` lives in one directory as
//! `DS_A.txt` (1-indexed `row, col` edge pairs), `DS_graph_indicator.txt`
//! (graph id per node), `DS_graph_labels.txt`, and optionally
//! `DS_node_labels.txt` / `DS_node_attributes.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{degree_features, Graph, GraphDataset, DEFAULT_MAX_DEGREE};

#[derive(Debug, Clone, Copy)]
pub struct TuOptions {
    /// Degree cap for the one-hot fallback used when no node labels or
    /// attributes ship with the dataset.
    pub max_degree: usize,
}

impl Default for TuOptions {
    fn default() -> Self {
        Self {
            max_degree: DEFAULT_MAX_DEGREE,
        }
    }
}

pub fn load_tu_dataset(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    load_tu_dataset_with(dir, TuOptions::default())
}

/// Finds the dataset prefix from the `*_A.txt` file in `dir`.
fn dataset_prefix(dir: &Path) -> Result<String> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut prefixes: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|name| name.strip_suffix("_A.txt").map(str::to_owned))
        .collect();
    prefixes.sort();
    prefixes
        .into_iter()
        .next()
        .ok_or_else(|| Error::MissingFile(format!("{}/<DS>_A.txt", dir.display())))
}

struct TextFile {
    name: String,
    body: String,
}

impl TextFile {
    fn read(dir: &Path, name: String) -> Result<Option<Self>> {
        let path = dir.join(&name);
        if !path.exists() {
            return Ok(None);
        }
        let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(Self { name, body }))
    }

    fn require(dir: &Path, name: String) -> Result<Self> {
        Self::read(dir, name.clone())?.ok_or(Error::MissingFile(name))
    }

    /// Nonblank lines with their 1-based line numbers.
    fn lines(&self) -> impl Iterator<Item = (usize, &str)> {
        self.body
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Format {
            file: self.name.clone(),
            line,
            message: message.into(),
        }
    }

    fn integers(&self) -> Result<Vec<i64>> {
        self.lines()
            .map(|(ln, l)| {
                l.parse::<i64>()
                    .map_err(|_| self.err(ln, format!("expected an integer, found `{l}`")))
            })
            .collect()
    }
}

pub fn load_tu_dataset_with(dir: impl AsRef<Path>, opts: TuOptions) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.display().to_string()));
    }
    let ds = dataset_prefix(dir)?;
    let a_file = TextFile::require(dir, format!("{ds}_A.txt"))?;
    let ind_file = TextFile::require(dir, format!("{ds}_graph_indicator.txt"))?;
    let lab_file = TextFile::require(dir, format!("{ds}_graph_labels.txt"))?;
    let node_lab_file = TextFile::read(dir, format!("{ds}_node_labels.txt"))?;
    let attr_file = TextFile::read(dir, format!("{ds}_node_attributes.txt"))?;

    let raw_labels = lab_file.integers()?;
    let graph_count = raw_labels.len();
    if graph_count == 0 {
        return Err(lab_file.err(1, "no graph labels"));
    }

    // node -> graph (0-based), with local index inside its graph
    let mut node_graph = Vec::new();
    let mut node_local = Vec::new();
    let mut sizes = vec![0usize; graph_count];
    for (ln, l) in ind_file.lines() {
        let gid: i64 = l
            .parse()
            .map_err(|_| ind_file.err(ln, format!("expected a graph id, found `{l}`")))?;
        if gid < 1 || gid as usize > graph_count {
            return Err(ind_file.err(
                ln,
                format!("node references nonexistent graph id {gid} (have {graph_count} graphs)"),
            ));
        }
        let g = gid as usize - 1;
        node_graph.push(g);
        node_local.push(sizes[g]);
        sizes[g] += 1;
    }
    let node_total = node_graph.len();
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(ind_file.err(0, format!("graph id {} has no nodes", g + 1)));
    }

    let mut adjacency: Vec<DMatrix<f64>> = sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
    let mut self_loops = 0usize;
    for (ln, l) in a_file.lines() {
        let mut parts = l.split(',').map(str::trim);
        let parse = |p: Option<&str>| -> Result<usize> {
            let p = p.ok_or_else(|| a_file.err(ln, "expected `row, col`"))?;
            let v: usize = p
                .parse()
                .map_err(|_| a_file.err(ln, format!("expected a node index, found `{p}`")))?;
            if v == 0 || v > node_total {
                return Err(a_file.err(ln, format!("node {v} out of range 1..={node_total}")));
            }
            Ok(v - 1)
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        if node_graph[u] != node_graph[v] {
            return Err(a_file.err(ln, format!("edge ({}, {}) crosses graphs", u + 1, v + 1)));
        }
        if u == v {
            self_loops += 1;
            continue;
        }
        let m = &mut adjacency[node_graph[u]];
        let (a, b) = (node_local[u], node_local[v]);
        m[(a, b)] = 1.0;
        m[(b, a)] = 1.0;
    }
    if self_loops > 0 {
        log::warn!("{ds}: dropped {self_loops} self-loop entries");
    }

    // Node features: one-hot node labels, then continuous attributes.
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    if let Some(f) = &node_lab_file {
        let raw = f.integers()?;
        if raw.len() != node_total {
            return Err(f.err(raw.len(), format!("expected {node_total} node labels")));
        }
        let map = contiguous(&raw);
        let mut x = DMatrix::zeros(node_total, map.len());
        for (i, v) in raw.iter().enumerate() {
            x[(i, map[v])] = 1.0;
        }
        blocks.push(x);
    }
    if let Some(f) = &attr_file {
        let rows: Vec<Vec<f64>> = f
            .lines()
            .map(|(ln, l)| {
                l.split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| f.err(ln, format!("expected a real attribute, found `{t}`")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        if rows.len() != node_total {
            return Err(f.err(rows.len(), format!("expected {node_total} attribute rows")));
        }
        let width = rows[0].len();
        if let Some(r) = rows.iter().position(|r| r.len() != width) {
            return Err(f.err(r + 1, format!("expected {width} attributes")));
        }
        blocks.push(DMatrix::from_fn(node_total, width, |i, j| rows[i][j]));
    }

    let label_map = contiguous(&raw_labels);
    let class_count = label_map.len();
    let mut node_start = vec![0usize; graph_count];
    for g in 1..graph_count {
        node_start[g] = node_start[g - 1] + sizes[g - 1];
    }
    // the indicator must list each graph's nodes contiguously for the block slicing below
    for (v, &g) in node_graph.iter().enumerate() {
        if v != node_start[g] + node_local[v] {
            return Err(ind_file.err(v + 1, "nodes of a graph must be listed contiguously"));
        }
    }

    let mut graphs = Vec::with_capacity(graph_count);
    for (g, adj) in adjacency.into_iter().enumerate() {
        let n = sizes[g];
        let features = if blocks.is_empty() {
            degree_features(&adj, opts.max_degree)
        } else {
            let width: usize = blocks.iter().map(|b| b.ncols()).sum();
            let mut x = DMatrix::zeros(n, width);
            let mut col = 0;
            for b in &blocks {
                x.view_mut((0, col), (n, b.ncols()))
                    .copy_from(&b.view((node_start[g], 0), (n, b.ncols())));
                col += b.ncols();
            }
            x
        };
        graphs.push(Graph::new(
            format!("{ds}-{}", g + 1),
            adj,
            features,
            label_map[&raw_labels[g]],
        )?);
    }
    GraphDataset::new(ds, graphs, class_count)
}

/// Sorted unique values mapped to `0..k`.
fn contiguous(values: &[i64]) -> BTreeMap<i64, usize> {
    let mut map: BTreeMap<i64, usize> = values.iter().map(|&v| (v, 0)).collect();
    for (i, slot) in map.values_mut().enumerate() {
        *slot = i;
    }
    map
}

/// Writes `dataset` in TU format under `dir` with prefix `name`.
///
/// Node attributes are written only when the features differ from the
/// degree one-hot fallback that the reader would rebuild on its own.
pub fn export_tu_dataset(
    dataset: &GraphDataset,
    dir: impl AsRef<Path>,
    name: &str,
    opts: TuOptions,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut a = String::new();
    let mut ind = String::new();
    let mut labels = String::new();
    let mut attrs = String::new();
    let degree_fallback = dataset
        .graphs()
        .iter()
        .all(|g| *g.features() == degree_features(g.adjacency(), opts.max_degree));
    let mut offset = 0usize;
    for (gi, g) in dataset.graphs().iter().enumerate() {
        let n = g.node_count();
        for i in 0..n {
            for j in 0..n {
                if g.adjacency()[(i, j)] != 0.0 {
                    let _ = writeln!(a, "{}, {}", offset + i + 1, offset + j + 1);
                }
            }
            let _ = writeln!(ind, "{}", gi + 1);
            if !degree_fallback {
                let row: Vec<String> = g.features().row(i).iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(attrs, "{}", row.join(", "));
            }
        }
        let _ = writeln!(labels, "{}", g.label());
        offset += n;
    }
    let write = |suffix: &str, body: &str| -> Result<()> {
        let path = dir.join(format!("{name}_{suffix}"));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    write("A.txt", &a)?;
    write("graph_indicator.txt", &ind)?;
    write("graph_labels.txt", &labels)?;
    if !degree_fallback {
        write("node_attributes.txt", &attrs)?;
    }
    Ok(())
}
