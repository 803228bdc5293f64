//! Multilayer graph data model: one node set shared across layers, one
//! undirected unweighted edge set per layer, per-layer feature matrices.
//! Everything is immutable after construction and safe to share across
//! concurrent readers.

use crate::error::{MlcsError, Result};
use crate::nn::DenseMatrix;
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Symmetric sparse matrix in CSR form. Column indices within a row are
/// strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &(i, j, v) in &triplets {
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    /// Sparse times dense: self (n×n) times x (n×f). Output rows are
    /// independent, so the row-parallel product is deterministic.
    pub fn mul_dense(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(MlcsError::Dimension(format!(
                "sparse {}x{} times dense {}x{}",
                self.n,
                self.n,
                x.rows(),
                x.cols()
            )));
        }
        let f = x.cols();
        let mut out = DenseMatrix::zeros(self.n, f);
        let per_row = |i: usize, out_row: &mut [f64]| {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals.iter()) {
                let src = x.row(j);
                for (o, &s) in out_row.iter_mut().zip(src.iter()) {
                    *o += v * s;
                }
            }
        };
        // Layer-level parallelism upstream covers the common case; only a
        // product with real volume pays for its own dispatch.
        if self.nnz() * f < 2_000_000 {
            for (i, out_row) in out.data_mut().chunks_mut(f).enumerate() {
                per_row(i, out_row);
            }
        } else {
            crate::par::for_each_row(out.data_mut(), f, per_row);
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals.iter()) {
                out.set(i, j, v);
            }
        }
        out
    }
}

/// One layer: a deduplicated undirected edge set (stored with u < v) and its
/// binary adjacency.
#[derive(Debug, Clone)]
pub struct LayerGraph {
    edges: Vec<(usize, usize)>,
    adjacency: SparseMatrix,
}

impl LayerGraph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(MlcsError::Config(format!("self-loop on node {a}")));
            }
            if a >= n || b >= n {
                return Err(MlcsError::NodeOutOfRange { id: a.max(b), n });
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in &edges {
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        Ok(LayerGraph {
            edges,
            adjacency: SparseMatrix::from_triplets(n, triplets),
        })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency.row(v).0.len()
    }
}

/// The multilayer graph: `n` nodes, `r_max` layers, per-layer features of a
/// common shape n×f.
#[derive(Debug, Clone)]
pub struct MultilayerGraph {
    n: usize,
    layers: Vec<LayerGraph>,
    features: Vec<DenseMatrix>,
}

impl MultilayerGraph {
    pub fn new(n: usize, layers: Vec<LayerGraph>, features: Vec<DenseMatrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(MlcsError::Config("a multilayer graph needs at least one layer".into()));
        }
        if features.len() != layers.len() {
            return Err(MlcsError::Config(format!(
                "{} feature matrices for {} layers",
                features.len(),
                layers.len()
            )));
        }
        let f = features[0].cols();
        for x in &features {
            if x.shape() != (n, f) {
                return Err(MlcsError::Dimension(format!(
                    "feature matrix {}x{} does not match {}x{}",
                    x.rows(),
                    x.cols(),
                    n,
                    f
                )));
            }
            if !x.is_finite() {
                return Err(MlcsError::Numeric("non-finite feature input".into()));
            }
        }
        for layer in &layers {
            if layer.adjacency.n() != n {
                return Err(MlcsError::Dimension(format!(
                    "layer over {} nodes in a {}-node graph",
                    layer.adjacency.n(),
                    n
                )));
            }
        }
        Ok(MultilayerGraph { n, layers, features })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn r_max(&self) -> usize {
        self.layers.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.features[0].cols()
    }

    pub fn layers(&self) -> &[LayerGraph] {
        &self.layers
    }

    pub fn layer(&self, r: usize) -> &LayerGraph {
        &self.layers[r]
    }

    pub fn features(&self) -> &[DenseMatrix] {
        &self.features
    }

    pub fn feature(&self, r: usize) -> &DenseMatrix {
        &self.features[r]
    }
}

/// A query: a non-empty set of node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    nodes: Vec<usize>,
}

impl Query {
    pub fn new(nodes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = nodes.into_iter().collect();
        if set.is_empty() {
            return Err(MlcsError::Config("empty query".into()));
        }
        Ok(Query {
            nodes: set.into_iter().collect(),
        })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for &v in &self.nodes {
            if v >= n {
                return Err(MlcsError::NodeOutOfRange { id: v, n });
            }
        }
        Ok(())
    }
}

/// Â = ω_loop·I + A. `ω_loop = 0` returns A unchanged.
pub fn augment_adjacency(a: &SparseMatrix, omega_loop: f64) -> Result<SparseMatrix> {
    if omega_loop < 0.0 {
        return Err(MlcsError::Config(format!(
            "self-loop weight must be non-negative, got {omega_loop}"
        )));
    }
    if omega_loop == 0.0 {
        return Ok(a.clone());
    }
    let n = a.n();
    let mut triplets = Vec::with_capacity(a.nnz() + n);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals.iter()) {
            triplets.push((i, j, v));
        }
        triplets.push((i, i, omega_loop));
    }
    Ok(SparseMatrix::from_triplets(n, triplets))
}

/// Per layer, one-hot encode each node's log-scaled degree bucket:
/// bucket = min(floor(log2(deg+1)), num_buckets−1).
pub fn fallback_features(g_layers: &[LayerGraph], n: usize, num_buckets: usize) -> Result<Vec<DenseMatrix>> {
    if num_buckets < 1 {
        return Err(MlcsError::Config("num_buckets must be at least 1".into()));
    }
    Ok(g_layers
        .iter()
        .map(|layer| {
            DenseMatrix::from_fn(n, num_buckets, |v, b| {
                if b == degree_bucket(layer.degree(v), num_buckets) {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect())
}

pub fn degree_bucket(deg: usize, num_buckets: usize) -> usize {
    let bucket = ((deg + 1) as f64).log2().floor() as usize;
    bucket.min(num_buckets - 1)
}

struct ParsedLayer {
    edges: Vec<(usize, usize)>,
    declared_n: Option<usize>,
    max_id: Option<usize>,
}

fn parse_edge_file(path: &Path) -> Result<ParsedLayer> {
    let file = std::fs::File::open(path).map_err(|e| MlcsError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut edges = Vec::new();
    let mut declared_n = None;
    let mut max_id: Option<usize> = None;
    let display = path.display().to_string();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| MlcsError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(count) = rest.trim().strip_prefix("n=") {
                declared_n = Some(count.trim().parse::<usize>().map_err(|_| MlcsError::Parse {
                    path: display.clone(),
                    line: line_no,
                    message: format!("invalid node count '{count}'"),
                })?);
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(MlcsError::Parse {
                path: display,
                line: line_no,
                message: format!(
                    "expected two node ids, got {} fields (weighted or malformed input is rejected)",
                    fields.len()
                ),
            });
        }
        let parse_id = |s: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| MlcsError::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("invalid node id '{s}'"),
            })
        };
        let u = parse_id(fields[0])?;
        let v = parse_id(fields[1])?;
        if u == v {
            return Err(MlcsError::Parse {
                path: display,
                line: line_no,
                message: format!("self-loop on node {u}"),
            });
        }
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u.max(v))));
        edges.push((u, v));
    }
    Ok(ParsedLayer {
        edges,
        declared_n,
        max_id,
    })
}

fn parse_feature_file(path: &Path) -> Result<DenseMatrix> {
    let file = std::fs::File::open(path).map_err(|e| MlcsError::io(path, e))?;
    let reader = BufReader::new(file);
    let display = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| MlcsError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>().map_err(|_| MlcsError::Parse {
                    path: display.clone(),
                    line: line_no,
                    message: format!("invalid real '{s}'"),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(MlcsError::Parse {
                    path: display,
                    line: line_no,
                    message: format!("row has {} values, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MlcsError::Parse {
            path: display,
            line: 0,
            message: "feature file is empty".into(),
        });
    }
    let cols = rows[0].len();
    DenseMatrix::from_vec(rows.len(), cols, rows.into_iter().flatten().collect())
}

/// Load and validate a multilayer graph from per-layer edge files.
///
/// `n` is inferred as 1 + the max id across all layers unless some file
/// declares `#n=<count>`; isolated nodes must therefore be declared. With no
/// feature path, log-degree fallback features are generated (`num_buckets`
/// wide); a single feature file is replicated across layers, or one file per
/// layer may be given.
pub fn load_multilayer_graph(
    layer_paths: &[impl AsRef<Path>],
    feature_paths: &[impl AsRef<Path>],
    num_buckets: usize,
) -> Result<MultilayerGraph> {
    if layer_paths.is_empty() {
        return Err(MlcsError::Config("no layer files given".into()));
    }
    let parsed: Vec<ParsedLayer> = layer_paths
        .iter()
        .map(|p| parse_edge_file(p.as_ref()))
        .collect::<Result<_>>()?;

    let declared = parsed.iter().filter_map(|p| p.declared_n).max();
    let observed = parsed.iter().filter_map(|p| p.max_id).map(|m| m + 1).max();
    let n = match (declared, observed) {
        (Some(d), Some(o)) => {
            if o > d {
                return Err(MlcsError::NodeOutOfRange { id: o - 1, n: d });
            }
            d
        }
        (Some(d), None) => d,
        (None, Some(o)) => o,
        (None, None) => return Err(MlcsError::Config("no edges and no declared node count".into())),
    };

    let layers: Vec<LayerGraph> = parsed
        .into_iter()
        .map(|p| LayerGraph::from_edges(n, p.edges))
        .collect::<Result<_>>()?;

    let features = match feature_paths.len() {
        0 => fallback_features(&layers, n, num_buckets)?,
        1 => {
            let x = parse_feature_file(feature_paths[0].as_ref())?;
            vec![x; layers.len()]
        }
        k if k == layers.len() => feature_paths
            .iter()
            .map(|p| parse_feature_file(p.as_ref()))
            .collect::<Result<_>>()?,
        k => {
            return Err(MlcsError::Config(format!(
                "{} feature files for {} layers (give 0, 1, or one per layer)",
                k,
                layers.len()
            )))
        }
    };
    for x in &features {
        if x.rows() != n {
            return Err(MlcsError::Dimension(format!(
                "feature file has {} rows for {} nodes",
                x.rows(),
                n
            )));
        }
    }

    MultilayerGraph::new(n, layers, features)
}

/// Write one layer back in the edge-file format (sorted, u < v per line).
pub fn write_layer(layer: &LayerGraph, n: usize, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "#n={n}")?;
    for &(u, v) in layer.edges() {
        writeln!(w, "{u} {v}")?;
    }
    Ok(())
}

/// Communities file: one community per line, whitespace-separated node ids.
pub fn load_communities(path: &Path) -> Result<Vec<Vec<usize>>> {
    let out = load_id_lines(path)?;
    if out.is_empty() {
        return Err(MlcsError::Config(format!(
            "no communities in {}",
            path.display()
        )));
    }
    Ok(out)
}

/// Queries file: one query per line, 1+ whitespace-separated node ids.
pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    load_id_lines(path)?
        .into_iter()
        .map(Query::new)
        .collect()
}

fn load_id_lines(path: &Path) -> Result<Vec<Vec<usize>>> {
    let file = std::fs::File::open(path).map_err(|e| MlcsError::io(path, e))?;
    let reader = BufReader::new(file);
    let display = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MlcsError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let ids: Vec<usize> = trimmed
            .split_whitespace()
            .map(|s| {
                s.parse::<usize>().map_err(|_| MlcsError::Parse {
                    path: display.clone(),
                    line: idx + 1,
                    message: format!("invalid node id '{s}'"),
                })
            })
            .collect::<Result<_>>()?;
        out.push(ids);
    }
    Ok(out)
}

/// Optional mapping from dense 0-based ids to arbitrary external labels: one
/// label per line, line number = id.
#[derive(Debug, Clone)]
pub struct IdMap {
    labels: Vec<String>,
}

impl IdMap {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| MlcsError::io(path, e))?;
        let labels = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| MlcsError::io(path, e))?;
        Ok(IdMap { labels })
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
