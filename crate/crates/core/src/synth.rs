//! Random graph generators and the multi-scale benchmark builder.

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset, DEFAULT_MAX_DEGREE};
use crate::tu::{load_tu_dataset_with, TuOptions};

pub const MSG_SCHEMA: u32 = 1;
pub const MIN_GRAPH_SIZE: usize = 4;
pub const MAX_GRAPH_SIZE: usize = 1000;

fn graph_from(n: usize, edges: &[(usize, usize)], max_degree: usize) -> Result<Graph> {
    Graph::from_edges_degree_features("synthetic", n, edges, 0, max_degree)
}

/// Erdős–Rényi `G(n, p)`.
pub fn gen_er<R: Rng>(n: usize, p: f64, rng: &mut R) -> Result<Graph> {
    er_edges(n, p, rng).and_then(|e| graph_from(n, &e, DEFAULT_MAX_DEGREE))
}

fn er_edges<R: Rng>(n: usize, p: f64, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if n == 0 || !(0.0..=1.0).contains(&p) {
        return Err(Error::contract(format!("ER needs n >= 1 and p in [0, 1], got n = {n}, p = {p}")));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(edges)
}

/// Watts–Strogatz: ring lattice with `k` nearest neighbours, each lattice
/// edge rewired with probability `p_rewire`. The edge count stays `n·k/2`.
pub fn gen_ws<R: Rng>(n: usize, k: usize, p_rewire: f64, rng: &mut R) -> Result<Graph> {
    ws_edges(n, k, p_rewire, rng).and_then(|e| graph_from(n, &e, DEFAULT_MAX_DEGREE))
}

fn ws_edges<R: Rng>(n: usize, k: usize, p_rewire: f64, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if k % 2 != 0 || k >= n || !(0.0..=1.0).contains(&p_rewire) {
        return Err(Error::contract(format!(
            "WS needs even k < n and p in [0, 1], got n = {n}, k = {k}, p = {p_rewire}"
        )));
    }
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut present: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut lattice = Vec::with_capacity(n * k / 2);
    for j in 1..=k / 2 {
        for i in 0..n {
            let e = key(i, (i + j) % n);
            present.insert(e);
            lattice.push((i, (i + j) % n));
        }
    }
    let mut degree = vec![k; n];
    for (u, v) in lattice {
        if rng.gen::<f64>() >= p_rewire || degree[u] >= n - 1 {
            continue;
        }
        let w = loop {
            let w = rng.gen_range(0..n);
            if w != u && !present.contains(&key(u, w)) {
                break w;
            }
        };
        present.remove(&key(u, v));
        present.insert(key(u, w));
        degree[v] -= 1;
        degree[w] += 1;
    }
    Ok(present.into_iter().collect())
}

/// Barabási–Albert: complete seed on `m + 1` nodes, then each new node
/// attaches to `m` distinct existing nodes chosen proportionally to degree.
pub fn gen_ba<R: Rng>(n: usize, m: usize, rng: &mut R) -> Result<Graph> {
    ba_edges(n, m, rng).and_then(|e| graph_from(n, &e, DEFAULT_MAX_DEGREE))
}

fn ba_edges<R: Rng>(n: usize, m: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if m < 1 || n <= m {
        return Err(Error::contract(format!("BA needs n > m >= 1, got n = {n}, m = {m}")));
    }
    let mut edges = Vec::with_capacity(m * (m + 1) / 2 + (n - m - 1) * m);
    // every endpoint once per incident edge: uniform sampling is degree-proportional
    let mut endpoints = Vec::with_capacity(2 * edges.capacity());
    for i in 0..=m {
        for j in (i + 1)..=m {
            edges.push((i, j));
            endpoints.extend([i, j]);
        }
    }
    let mut chosen = Vec::with_capacity(m);
    for v in (m + 1)..n {
        chosen.clear();
        while chosen.len() < m {
            let t = endpoints[rng.gen_range(0..endpoints.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for &t in &chosen {
            edges.push((t, v));
            endpoints.extend([t, v]);
        }
    }
    Ok(edges)
}

/// Where the graphs of one class come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSource {
    Er {
        p: f64,
    },
    Ws {
        k: usize,
        p_rewire: f64,
    },
    Ba {
        m: usize,
    },
    /// Graphs drawn from a TU dataset directory; without a path the class
    /// is left out of the build.
    Empirical {
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub source: ClassSource,
    pub min_size: usize,
    pub max_size: usize,
    /// Overrides the config-wide `per_class`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsgConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub per_class: usize,
    pub max_degree: usize,
    pub classes: Vec<ClassSpec>,
}

impl Default for MsgConfig {
    fn default() -> Self {
        let class = |i: usize, source, min_size, max_size| ClassSpec {
            name: format!("class-{i}"),
            source,
            min_size,
            max_size,
            count: None,
        };
        Self {
            schema_version: MSG_SCHEMA,
            name: "MSG".into(),
            seed: 0,
            per_class: 35,
            max_degree: DEFAULT_MAX_DEGREE,
            classes: vec![
                class(1, ClassSource::Empirical { path: None }, 5, 150),
                class(2, ClassSource::Empirical { path: None }, 4, 100),
                class(3, ClassSource::Er { p: 0.35 }, 4, 1000),
                class(4, ClassSource::Ws { k: 4, p_rewire: 0.1 }, 10, 1000),
                class(5, ClassSource::Empirical { path: None }, 12, 65),
                class(6, ClassSource::Ba { m: 1 }, 49, 1000),
            ],
        }
    }
}

impl MsgConfig {
    /// ER / WS / BA classes only, all with sizes uniform in `[min_size, max_size]`.
    pub fn model_networks(per_class: usize, min_size: usize, max_size: usize, seed: u64) -> Self {
        let class = |name: &str, source| ClassSpec {
            name: name.into(),
            source,
            min_size,
            max_size,
            count: None,
        };
        Self {
            name: "model-networks".into(),
            seed,
            per_class,
            classes: vec![
                class("er", ClassSource::Er { p: 0.35 }),
                class("ws", ClassSource::Ws { k: 4, p_rewire: 0.1 }),
                class("ba", ClassSource::Ba { m: 1 }),
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != MSG_SCHEMA {
            return bad(format!(
                "unsupported schema_version {} (expected {MSG_SCHEMA})",
                self.schema_version
            ));
        }
        if self.classes.is_empty() {
            return bad("at least one class is required".into());
        }
        if self.max_degree < 1 {
            return bad("max_degree must be >= 1".into());
        }
        for c in &self.classes {
            let count = c.count.unwrap_or(self.per_class);
            if count < 1 {
                return bad(format!("class `{}` has count 0", c.name));
            }
            if c.min_size < MIN_GRAPH_SIZE || c.max_size > MAX_GRAPH_SIZE || c.min_size > c.max_size {
                return bad(format!(
                    "class `{}` size range [{}, {}] must lie within [{MIN_GRAPH_SIZE}, {MAX_GRAPH_SIZE}]",
                    c.name, c.min_size, c.max_size
                ));
            }
            match c.source {
                ClassSource::Er { p } if !(0.0..=1.0).contains(&p) => {
                    return bad(format!("class `{}`: ER p must lie in [0, 1]", c.name))
                }
                ClassSource::Ws { k, p_rewire } if k % 2 != 0 || k >= c.min_size || !(0.0..=1.0).contains(&p_rewire) => {
                    return bad(format!(
                        "class `{}`: WS needs even k below the minimum size and p_rewire in [0, 1]",
                        c.name
                    ))
                }
                ClassSource::Ba { m } if m < 1 || m >= c.min_size => {
                    return bad(format!("class `{}`: BA needs 1 <= m < minimum size", c.name))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MsgBuild {
    pub dataset: GraphDataset,
    /// Names of classes left out because no empirical source was given.
    pub excluded: Vec<String>,
}

impl MsgBuild {
    pub fn is_lite(&self) -> bool {
        !self.excluded.is_empty()
    }
}

fn stream_rng(seed: u64, class: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 32) | index as u64);
    rng
}

fn model_graph(spec: &ClassSpec, rng: &mut ChaCha8Rng, max_degree: usize) -> Result<Graph> {
    let n = rng.gen_range(spec.min_size..=spec.max_size);
    let edges = match spec.source {
        ClassSource::Er { p } => er_edges(n, p, rng)?,
        ClassSource::Ws { k, p_rewire } => ws_edges(n, k, p_rewire, rng)?,
        ClassSource::Ba { m } => ba_edges(n, m, rng)?,
        ClassSource::Empirical { .. } => unreachable!("empirical classes are sampled, not generated"),
    };
    graph_from(n, &edges, max_degree)
}

fn empirical_graphs(spec: &ClassSpec, path: &PathBuf, count: usize, rng: &mut ChaCha8Rng, max_degree: usize) -> Result<Vec<Graph>> {
    if !path.is_dir() {
        return Err(Error::Config(format!(
            "class `{}`: empirical source {} does not exist",
            spec.name,
            path.display()
        )));
    }
    let source = load_tu_dataset_with(path, TuOptions { max_degree }).map_err(|e| {
        Error::Config(format!("class `{}`: cannot load {}: {e}", spec.name, path.display()))
    })?;
    let pool: Vec<&Graph> = source
        .graphs()
        .iter()
        .filter(|g| (spec.min_size..=spec.max_size).contains(&g.node_count()))
        .collect();
    if pool.is_empty() {
        return Err(Error::Config(format!(
            "class `{}`: no graph in {} has between {} and {} nodes",
            spec.name,
            path.display(),
            spec.min_size,
            spec.max_size
        )));
    }
    let picks: Vec<&Graph> = if pool.len() >= count {
        pool.choose_multiple(rng, count).copied().collect()
    } else {
        (0..count).map(|_| *pool.choose(rng).expect("nonempty pool")).collect()
    };
    // features are rebuilt from degrees so every class shares one feature space
    picks
        .into_iter()
        .map(|g| Graph::from_edges_degree_features(g.id(), g.node_count(), &g.edges(), 0, max_degree))
        .collect()
}

/// Builds the labelled benchmark. Classes are labelled in config order,
/// skipping excluded ones.
pub fn build_msg(config: &MsgConfig) -> Result<MsgBuild> {
    config.validate()?;
    let mut graphs = Vec::new();
    let mut excluded = Vec::new();
    let mut label = 0;
    for (ci, spec) in config.classes.iter().enumerate() {
        let count = spec.count.unwrap_or(config.per_class);
        let class_graphs: Vec<Graph> = match &spec.source {
            ClassSource::Empirical { path: None } => {
                log::warn!("class `{}` has no empirical source and is excluded", spec.name);
                excluded.push(spec.name.clone());
                continue;
            }
            ClassSource::Empirical { path: Some(p) } => {
                let mut rng = stream_rng(config.seed, ci, 0);
                empirical_graphs(spec, p, count, &mut rng, config.max_degree)?
            }
            _ => (0..count)
                .into_par_iter()
                .map(|j| model_graph(spec, &mut stream_rng(config.seed, ci, j), config.max_degree))
                .collect::<Result<_>>()?,
        };
        for (j, g) in class_graphs.into_iter().enumerate() {
            let g = Graph::new(
                format!("{}-{}", spec.name, j + 1),
                g.adjacency().clone(),
                g.features().clone(),
                label,
            )?;
            graphs.push(g);
        }
        label += 1;
    }
    if label == 0 {
        return Err(Error::Config("every class was excluded; provide empirical sources".into()));
    }
    let name = if excluded.is_empty() {
        config.name.clone()
    } else {
        log::warn!("building {}-lite without {}", config.name, excluded.join(", "));
        format!("{}-lite", config.name)
    };
    Ok(MsgBuild {
        dataset: GraphDataset::new(name, graphs, label)?,
        excluded,
    })
}

/// Sizes histogram with `bins` equal-width bins over `[lo, hi]`:
/// `(bin_start, bin_end, count)`.
pub fn size_histogram(dataset: &GraphDataset, lo: usize, hi: usize, bins: usize) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let width = (hi.max(lo + 1) - lo) as f64 / bins as f64;
    let mut counts = vec![0usize; bins];
    for g in dataset.graphs() {
        let k = ((g.node_count().saturating_sub(lo)) as f64 / width) as usize;
        counts[k.min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo as f64 + k as f64 * width, lo as f64 + (k + 1) as f64 * width, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::dataset_statistics;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn is_simple(g: &Graph) -> bool {
        let a = g.adjacency();
        (0..a.nrows()).all(|i| a[(i, i)] == 0.0) && a.iter().all(|&v| v == 0.0 || v == 1.0) && *a == a.transpose()
    }

    #[test]
    fn er_extremes() {
        assert_eq!(gen_er(12, 0.0, &mut rng(1)).unwrap().edge_count(), 0);
        assert_eq!(gen_er(12, 1.0, &mut rng(1)).unwrap().edge_count(), 66);
        assert!(gen_er(5, 1.5, &mut rng(1)).is_err());
    }

    #[test]
    fn er_edge_count_is_binomial() {
        let mut r = rng(2);
        let samples = 1000;
        let total: usize = (0..samples).map(|_| er_edges(100, 0.2, &mut r).unwrap().len()).sum();
        let mean = total as f64 / samples as f64;
        // standard error of the mean of 1000 binomial draws
        let se = (4950.0f64 * 0.2 * 0.8).sqrt() / (samples as f64).sqrt();
        assert!((mean - 990.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn ws_counts_and_lattice() {
        for p in [0.0, 0.3, 1.0] {
            let g = gen_ws(10, 4, p, &mut rng(3)).unwrap();
            assert_eq!(g.edge_count(), 20);
            assert!(is_simple(&g));
        }
        let g = gen_ws(10, 4, 0.0, &mut rng(3)).unwrap();
        assert!(g.degrees().iter().all(|&d| d == 4));
        assert!(g.adjacency()[(0, 2)] == 1.0 && g.adjacency()[(0, 8)] == 1.0 && g.adjacency()[(0, 3)] == 0.0);
        assert!(gen_ws(10, 3, 0.1, &mut rng(3)).is_err());
        assert!(gen_ws(4, 4, 0.1, &mut rng(3)).is_err());
    }

    #[test]
    fn ba_tree_and_counts() {
        let g = gen_ba(10, 1, &mut rng(4)).unwrap();
        assert_eq!(g.edge_count(), 9);
        assert_eq!(crate::stats::diameter(&g) < 10, true);
        for (n, m) in [(30, 2), (50, 3), (7, 6)] {
            let g = gen_ba(n, m, &mut rng(5)).unwrap();
            assert_eq!(g.edge_count(), m * (m + 1) / 2 + (n - m - 1) * m);
            assert!(is_simple(&g));
            assert!(connected(&g));
        }
        assert!(gen_ba(3, 3, &mut rng(1)).is_err());
        assert!(gen_ba(3, 0, &mut rng(1)).is_err());
    }

    fn connected(g: &Graph) -> bool {
        let nb = g.neighbours();
        let mut seen = vec![false; nb.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &nb[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    #[test]
    fn model_class_statistics() {
        let cfg = MsgConfig::model_networks(40, 5, 300, 11);
        let ds = build_msg(&cfg).unwrap().dataset;
        assert_eq!(ds.len(), 120);
        assert!(ds.graphs().iter().all(is_simple));
        let stats = dataset_statistics(&ds);
        assert_eq!(stats.per_class[1].avg_degree, 4.0);
        let ba = stats.per_class[2].avg_degree;
        assert!((1.9..=2.0).contains(&ba), "{ba}");
        // ER: mean degree ≈ p·(n̄ − 1)
        let er = &stats.per_class[0];
        let expect = 0.35 * (er.avg_size - 1.0);
        assert!((er.avg_degree - expect).abs() < 0.1 * expect, "{} vs {expect}", er.avg_degree);
    }

    #[test]
    fn default_config_is_lite_without_sources() {
        let mut cfg = MsgConfig::default();
        cfg.per_class = 2;
        for c in &mut cfg.classes {
            c.max_size = c.max_size.min(60);
        }
        let build = build_msg(&cfg).unwrap();
        assert!(build.is_lite());
        assert_eq!(build.excluded, ["class-1", "class-2", "class-5"]);
        assert_eq!(build.dataset.class_count(), 3);
        assert_eq!(build.dataset.name(), "MSG-lite");
    }

    #[test]
    fn missing_empirical_source_names_the_class() {
        let mut cfg = MsgConfig::model_networks(2, 10, 20, 0);
        cfg.classes[0].source = ClassSource::Empirical {
            path: Some("/definitely/not/here".into()),
        };
        let err = build_msg(&cfg).unwrap_err();
        assert!(err.to_string().contains("class `er`"), "{err}");
    }

    #[test]
    fn empirical_class_from_tu_files() {
        let dir = tempfile::tempdir().unwrap();
        let donors = build_msg(&MsgConfig::model_networks(3, 8, 12, 1)).unwrap().dataset;
        crate::tu::export_tu_dataset(&donors, dir.path(), "DONOR", TuOptions::default()).unwrap();
        let mut cfg = MsgConfig::model_networks(5, 10, 30, 0);
        cfg.classes[2].source = ClassSource::Empirical {
            path: Some(dir.path().to_path_buf()),
        };
        cfg.classes[2].min_size = 8;
        cfg.classes[2].max_size = 12;
        let ds = build_msg(&cfg).unwrap().dataset;
        assert_eq!(ds.class_histogram(), [5, 5, 5]);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = MsgConfig::model_networks(0, 10, 20, 0);
        assert!(matches!(build_msg(&cfg), Err(Error::Config(_))));
        cfg.per_class = 3;
        cfg.classes[0].max_size = 1001;
        assert!(build_msg(&cfg).is_err());
        cfg.classes.clear();
        assert!(build_msg(&cfg).is_err());
        let json = r#"{"schema_version": 1, "classes": [], "bogus": 1}"#;
        assert!(serde_json::from_str::<MsgConfig>(json).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = MsgConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains(r#""kind":"empirical""#));
        assert_eq!(serde_json::from_str::<MsgConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn builds_are_reproducible() {
        let cfg = MsgConfig::model_networks(4, 10, 80, 21);
        let a = build_msg(&cfg).unwrap().dataset;
        let b = build_msg(&cfg).unwrap().dataset;
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        crate::tu::export_tu_dataset(&a, dir.path().join("a"), "M", TuOptions::default()).unwrap();
        crate::tu::export_tu_dataset(&b, dir.path().join("b"), "M", TuOptions::default()).unwrap();
        for f in ["M_A.txt", "M_graph_indicator.txt", "M_graph_labels.txt"] {
            let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(x, y);
        }
        let back = crate::tu::load_tu_dataset(dir.path().join("a")).unwrap();
        for (g, h) in a.graphs().iter().zip(back.graphs()) {
            assert_eq!(g.adjacency(), h.adjacency());
            assert_eq!(g.features(), h.features());
            assert_eq!(g.label(), h.label());
        }
    }

    #[test]
    fn histogram_bins() {
        let ds = build_msg(&MsgConfig::model_networks(5, 10, 100, 3)).unwrap().dataset;
        let h = size_histogram(&ds, 0, 1000, 10);
        assert_eq!(h.len(), 10);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 15);
        assert_eq!(h[9].2, 0);
    }
}
