//! Neighborhood-similarity edge features computed from a simple undirected
//! graph. These serve as pathfinder inputs and drive the attention
//! interpretability experiment.

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, DenseMatrix, SupportPattern};
use std::io::Write;
use std::sync::Arc;

/// Tie-strength metrics, each a pure function of the two endpoint
/// neighborhoods and degrees. "Minimal overlap" is the hub-promoted index
/// and "maximal overlap" the hub-depressed one, following the standard
/// naming convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMetric {
    CommonNeighbors,
    Jaccard,
    SaltonCosine,
    Sorensen,
    HubPromoted,
    HubDepressed,
    AssociationStrength,
    DegreeProduct,
    AdamicAdar,
    ResourceAllocation,
}

impl SimilarityMetric {
    pub const ALL: [SimilarityMetric; 10] = [
        SimilarityMetric::CommonNeighbors,
        SimilarityMetric::Jaccard,
        SimilarityMetric::SaltonCosine,
        SimilarityMetric::Sorensen,
        SimilarityMetric::HubPromoted,
        SimilarityMetric::HubDepressed,
        SimilarityMetric::AssociationStrength,
        SimilarityMetric::DegreeProduct,
        SimilarityMetric::AdamicAdar,
        SimilarityMetric::ResourceAllocation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityMetric::CommonNeighbors => "common_neighbors",
            SimilarityMetric::Jaccard => "jaccard",
            SimilarityMetric::SaltonCosine => "salton_cosine",
            SimilarityMetric::Sorensen => "sorensen",
            SimilarityMetric::HubPromoted => "hub_promoted",
            SimilarityMetric::HubDepressed => "hub_depressed",
            SimilarityMetric::AssociationStrength => "association_strength",
            SimilarityMetric::DegreeProduct => "degree_product",
            SimilarityMetric::AdamicAdar => "adamic_adar",
            SimilarityMetric::ResourceAllocation => "resource_allocation",
        }
    }
}

/// Checks the structural preconditions shared by this module: square,
/// symmetric, binary, no self loops.
pub fn validate_simple_undirected(graph: &CsrMatrix) -> Result<()> {
    if graph.n_rows() != graph.n_cols() {
        return Err(Error::InvalidGraph("adjacency must be square".into()));
    }
    for i in 0..graph.n_rows() {
        let (cols, vals) = graph.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if i == j {
                return Err(Error::InvalidGraph(format!("self loop at node {i}")));
            }
            if v != 1.0 {
                return Err(Error::InvalidGraph(format!(
                    "non-binary weight {v} at ({i}, {j}); simple graph required"
                )));
            }
            if graph.get(j, i) != Some(v) {
                return Err(Error::InvalidGraph(format!(
                    "missing reverse edge for ({i}, {j}); undirected graph required"
                )));
            }
        }
    }
    Ok(())
}

/// Sorted common neighbors of `u` and `v`.
fn common_neighbors(graph: &CsrMatrix, u: usize, v: usize) -> Vec<usize> {
    let (nu, _) = graph.row(u);
    let (nv, _) = graph.row(v);
    let mut out = Vec::new();
    let (mut a, mut b) = (0, 0);
    while a < nu.len() && b < nv.len() {
        match nu[a].cmp(&nv[b]) {
            std::cmp::Ordering::Less => a += 1,
            std::cmp::Ordering::Greater => b += 1,
            std::cmp::Ordering::Equal => {
                out.push(nu[a]);
                a += 1;
                b += 1;
            }
        }
    }
    out
}

fn metric_value(metric: SimilarityMetric, graph: &CsrMatrix, u: usize, v: usize) -> f64 {
    let du = graph.row(u).0.len() as f64;
    let dv = graph.row(v).0.len() as f64;
    let shared = common_neighbors(graph, u, v);
    let cn = shared.len() as f64;
    // zero denominators return the neutral no-overlap signal 0
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    match metric {
        SimilarityMetric::CommonNeighbors => cn,
        SimilarityMetric::Jaccard => ratio(cn, du + dv - cn),
        SimilarityMetric::SaltonCosine => ratio(cn, (du * dv).sqrt()),
        SimilarityMetric::Sorensen => ratio(2.0 * cn, du + dv),
        SimilarityMetric::HubPromoted => ratio(cn, du.min(dv)),
        SimilarityMetric::HubDepressed => ratio(cn, du.max(dv)),
        SimilarityMetric::AssociationStrength => ratio(cn, du * dv),
        SimilarityMetric::DegreeProduct => du * dv,
        // a shared neighbor of two adjacent nodes always has degree >= 2,
        // so ln(d_w) >= ln 2 > 0 and both sums stay finite
        SimilarityMetric::AdamicAdar => shared
            .iter()
            .map(|&w| 1.0 / (graph.row(w).0.len() as f64).ln())
            .sum(),
        SimilarityMetric::ResourceAllocation => shared
            .iter()
            .map(|&w| 1.0 / graph.row(w).0.len() as f64)
            .sum(),
    }
}

/// Similarity of the endpoints of an existing edge of a simple undirected
/// graph.
pub fn similarity(
    metric: SimilarityMetric,
    graph: &CsrMatrix,
    u: usize,
    v: usize,
) -> Result<f64> {
    if u == v {
        return Err(Error::InvalidArgument(format!(
            "similarity of node {u} with itself"
        )));
    }
    if u >= graph.n_rows() || v >= graph.n_rows() {
        return Err(Error::IndexOutOfRange {
            row: u.max(v),
            col: u.min(v),
            rows: graph.n_rows(),
            cols: graph.n_cols(),
        });
    }
    if graph.get(u, v).is_none() {
        return Err(Error::InvalidArgument(format!(
            "({u}, {v}) is not an edge"
        )));
    }
    Ok(metric_value(metric, graph, u, v))
}

/// All ten metrics for every stored edge, row-aligned with the support
/// pattern. Undirected edges carry identical rows in both stored
/// directions.
#[derive(Debug, Clone)]
pub struct EdgeFeatureMatrix {
    pub pattern: Arc<SupportPattern>,
    /// nnz x 10, in pattern storage order
    pub values: DenseMatrix,
    pub standardized: bool,
}

impl EdgeFeatureMatrix {
    pub fn metric_names() -> Vec<&'static str> {
        SimilarityMetric::ALL.iter().map(|m| m.name()).collect()
    }

    /// CSV with one row per undirected edge `(u, v)` with `u < v`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "u,v,{}", Self::metric_names().join(","))?;
        for (u, v, k) in self.pattern.entries() {
            if u < v {
                let row: Vec<String> = self.values.row(k).iter().map(|x| x.to_string()).collect();
                writeln!(w, "{u},{v},{}", row.join(","))?;
            }
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        Ok(())
    }
}

/// Computes the full 10-column feature matrix for a simple undirected
/// graph. With `standardize`, each column is shifted and scaled to mean 0
/// and unit variance over the stored edges (constant columns are only
/// centered); recommended for pathfinder input since raw scales are mixed.
pub fn feature_matrix(graph: &CsrMatrix, standardize: bool) -> Result<EdgeFeatureMatrix> {
    validate_simple_undirected(graph)?;
    let pattern = Arc::new(SupportPattern::from_csr(graph));
    let n_metrics = SimilarityMetric::ALL.len();
    let mut values = DenseMatrix::zeros(pattern.nnz(), n_metrics);
    for (u, v, k) in pattern.entries() {
        for (c, &m) in SimilarityMetric::ALL.iter().enumerate() {
            values.set(k, c, metric_value(m, graph, u, v));
        }
    }
    if standardize && pattern.nnz() > 0 {
        let n = pattern.nnz() as f64;
        for c in 0..n_metrics {
            let mean = (0..pattern.nnz()).map(|k| values.get(k, c)).sum::<f64>() / n;
            let var = (0..pattern.nnz())
                .map(|k| {
                    let d = values.get(k, c) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
            for k in 0..pattern.nnz() {
                values.set(k, c, (values.get(k, c) - mean) * scale);
            }
        }
    }
    Ok(EdgeFeatureMatrix {
        pattern,
        values,
        standardized: standardize,
    })
}
