//! Dataset summary statistics in the layout of the usual benchmark tables.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub name: String,
    pub graph_count: usize,
    pub avg_size: f64,
    /// Mean over graphs of each graph's average degree `2|E|/n`.
    pub avg_degree: f64,
    pub avg_edges: f64,
    pub min_size: usize,
    pub max_size: usize,
    /// Population standard deviation of node counts.
    pub size_std: f64,
    pub avg_diameter: f64,
    pub cross_scale_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub overall: StatsRecord,
    pub per_class: Vec<StatsRecord>,
}

/// Longest shortest path, maximised over connected components.
pub fn diameter(graph: &Graph) -> usize {
    let adj = graph.neighbours();
    let n = adj.len();
    let mut best = 0;
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    best = best.max(dist[v]);
                    queue.push_back(v);
                }
            }
        }
    }
    best
}

fn summarize<'a>(name: String, graphs: impl Iterator<Item = &'a Graph>) -> StatsRecord {
    let mut sizes = Vec::new();
    let mut edges = Vec::new();
    let mut degrees = Vec::new();
    let mut diameters = Vec::new();
    for g in graphs {
        let n = g.node_count();
        let e = g.edge_count();
        sizes.push(n as f64);
        edges.push(e as f64);
        degrees.push(2.0 * e as f64 / n as f64);
        diameters.push(diameter(g) as f64);
    }
    let count = sizes.len();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let avg_size = mean(&sizes);
    let var = if count == 0 {
        0.0
    } else {
        sizes.iter().map(|s| (s - avg_size).powi(2)).sum::<f64>() / count as f64
    };
    let min_size = sizes.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_size = sizes.iter().cloned().fold(0.0, f64::max);
    let (min_size, max_size) = if count == 0 { (0, 0) } else { (min_size as usize, max_size as usize) };
    StatsRecord {
        name,
        graph_count: count,
        avg_size,
        avg_degree: mean(&degrees),
        avg_edges: mean(&edges),
        min_size,
        max_size,
        size_std: var.sqrt(),
        avg_diameter: mean(&diameters),
        cross_scale_ratio: if min_size == 0 { 0.0 } else { max_size as f64 / min_size as f64 },
    }
}

pub fn dataset_statistics(dataset: &GraphDataset) -> DatasetStats {
    let overall = summarize(dataset.name().to_owned(), dataset.graphs().iter());
    let per_class = (0..dataset.class_count())
        .map(|c| {
            summarize(
                format!("{} class-{}", dataset.name(), c + 1),
                dataset.graphs().iter().filter(|g| g.label() == c),
            )
        })
        .collect();
    DatasetStats { overall, per_class }
}
