//! Synthetic multiplex benchmark generator: correlated node features,
//! quantile-binned labels, stochastic-block edges with intra/inter classes,
//! and per-edge Gaussian features. Also hosts the Watts-Strogatz generator
//! used by the runtime study.
//!
//! Generation is a pure function of the config (seed included): the same
//! config yields a bitwise identical dataset.

use crate::dataset::{EdgeClass, SyntheticDataset};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};
use crate::sparse::{CsrMatrix, DenseMatrix};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Generator configuration. Defaults: 3 classes of 500 nodes, edge
/// probabilities P=0.01 / Q=0.005, 32 node and edge features, label-noise
/// std 5.0 and inter-class edge-feature std 2.0.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub nodes_per_class: usize,
    pub p_intra: f64,
    pub q_inter: f64,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub sigma_label: f64,
    pub sigma_inter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 3,
            nodes_per_class: 500,
            p_intra: 0.01,
            q_inter: 0.005,
            node_dim: 32,
            edge_dim: 32,
            sigma_label: 5.0,
            sigma_inter: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need >= 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.nodes_per_class == 0 {
            return Err(Error::InvalidArgument("need >= 1 node per class".into()));
        }
        for (name, p) in [("P", self.p_intra), ("Q", self.q_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name}={p} outside [0, 1]"
                )));
            }
        }
        if self.node_dim == 0 || self.edge_dim == 0 {
            return Err(Error::InvalidArgument("feature dims must be >= 1".into()));
        }
        if self.sigma_label < 0.0 || self.sigma_inter < 0.0 {
            return Err(Error::InvalidArgument("negative std".into()));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_classes * self.nodes_per_class
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random correlation matrix: half-normal eigenvalues rescaled to sum `F`,
/// conjugated by a random orthonormal basis, then diagonal-renormalized to
/// exact unit diagonal. The half-normal draw guarantees positive
/// eigenvalues; the congruence keeps the matrix positive definite.
pub fn random_correlation_matrix(dim: usize, rng: &mut Rng) -> Result<DenseMatrix> {
    if dim == 0 {
        return Err(Error::InvalidArgument("zero-dimensional correlation".into()));
    }
    if dim == 1 {
        return DenseMatrix::new(1, 1, vec![1.0]);
    }
    let mut eigen: Vec<f64>;
    loop {
        eigen = (0..dim).map(|_| normal(rng).abs()).collect();
        let sum: f64 = eigen.iter().sum();
        if sum > 0.0 {
            for e in &mut eigen {
                *e *= dim as f64 / sum;
            }
            break;
        }
        // all-zero draw: resample
    }
    let q = random_orthonormal(dim, rng);
    // sigma = Q diag(eigen) Q^T
    let mut scaled = q.clone();
    for i in 0..dim {
        for j in 0..dim {
            scaled.set(i, j, q.get(i, j) * eigen[j]);
        }
    }
    let mut sigma = scaled.matmul(&q.transpose())?;
    // exact symmetry against accumulation order differences
    for i in 0..dim {
        for j in (i + 1)..dim {
            let v = 0.5 * (sigma.get(i, j) + sigma.get(j, i));
            sigma.set(i, j, v);
            sigma.set(j, i, v);
        }
    }
    // renormalize to a true correlation matrix
    let inv_sqrt: Vec<f64> = (0..dim).map(|i| 1.0 / sigma.get(i, i).sqrt()).collect();
    for i in 0..dim {
        for j in 0..dim {
            if i == j {
                sigma.set(i, j, 1.0);
            } else {
                sigma.set(i, j, sigma.get(i, j) * inv_sqrt[i] * inv_sqrt[j]);
            }
        }
    }
    Ok(sigma)
}

/// Orthonormal basis from modified Gram-Schmidt on a Gaussian matrix.
fn random_orthonormal(dim: usize, rng: &mut Rng) -> DenseMatrix {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..dim).map(|_| normal(rng)).collect())
            .collect();
        let mut ok = true;
        for c in 0..dim {
            for prev in 0..c {
                let dot: f64 = cols[c].iter().zip(&cols[prev]).map(|(a, b)| a * b).sum();
                let prev_col = cols[prev].clone();
                for (x, p) in cols[c].iter_mut().zip(prev_col) {
                    *x -= dot * p;
                }
            }
            let norm: f64 = cols[c].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-10 {
                ok = false;
                break;
            }
            for x in &mut cols[c] {
                *x /= norm;
            }
        }
        if ok {
            let mut q = DenseMatrix::zeros(dim, dim);
            for (j, col) in cols.iter().enumerate() {
                for (i, &v) in col.iter().enumerate() {
                    q.set(i, j, v);
                }
            }
            return q;
        }
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
fn cholesky(mat: &DenseMatrix) -> Result<DenseMatrix> {
    let n = mat.n_rows();
    if n != mat.n_cols() {
        return Err(Error::NotSquare {
            rows: n,
            cols: mat.n_cols(),
        });
    }
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = mat.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "correlation matrix is not positive definite".into(),
                    ));
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// i.i.d. rows from N(0, corr) via the Cholesky factor of `corr`.
pub fn sample_correlated_features(
    n_total: usize,
    corr: &DenseMatrix,
    rng: &mut Rng,
) -> Result<DenseMatrix> {
    let dim = corr.n_rows();
    let l = cholesky(corr)?;
    let mut out = DenseMatrix::zeros(n_total, dim);
    let mut z = vec![0.0; dim];
    for i in 0..n_total {
        for zj in z.iter_mut() {
            *zj = normal(rng);
        }
        let row = out.row_mut(i);
        for (c, rv) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..=c {
                acc += l.get(c, k) * z[k];
            }
            *rv = acc;
        }
    }
    Ok(out)
}

/// Noisy linear target `y = Xw + eps` quantile-binned into `n_classes`
/// balanced labels; ties broken by stable sort order. Returns the labels
/// and the continuous target.
pub fn make_labels(
    x: &DenseMatrix,
    w: &[f64],
    sigma_label: f64,
    n_classes: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument("need >= 2 classes".into()));
    }
    if w.len() != x.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector length {} vs {} features",
            w.len(),
            x.n_cols()
        )));
    }
    let n = x.n_rows();
    let mut target = vec![0.0; n];
    for i in 0..n {
        let dot: f64 = x.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
        target[i] = dot + sigma_label * normal(rng);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| target[a].partial_cmp(&target[b]).unwrap());
    let mut labels = vec![0usize; n];
    for (rank, &idx) in order.iter().enumerate() {
        // class boundaries at floor(c * n / C): sizes differ by at most one
        labels[idx] = rank * n_classes / n.max(1);
    }
    Ok((labels, target))
}

/// Stochastic-block edges: each unordered pair sampled once, intra-class
/// pairs with probability `p`, inter-class with probability `q`. Returns
/// the symmetric adjacency, the undirected edge list (u < v, sorted) and
/// the per-edge class flags aligned with it.
pub fn sample_sbm_edges(
    labels: &[usize],
    p: f64,
    q: f64,
    rng: &mut Rng,
) -> Result<(CsrMatrix, Vec<(usize, usize)>, Vec<EdgeClass>)> {
    let n = labels.len();
    let mut edges = Vec::new();
    let mut classes = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let intra = labels[u] == labels[v];
            let prob = if intra { p } else { q };
            // one draw per pair keeps the structure independent of p and q
            let draw = rng.gen::<f64>();
            if draw < prob {
                edges.push((u, v));
                classes.push(if intra { EdgeClass::Intra } else { EdgeClass::Inter });
            }
        }
    }
    let weighted: Vec<(usize, usize, f64)> = edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
    let graph = CsrMatrix::from_undirected_edges(n, &weighted)?;
    Ok((graph, edges, classes))
}

/// Uncorrelated Gaussian features per undirected edge: intra-class edges
/// are standard normal, inter-class ones are scaled by `sigma_inter`. Both
/// stored directions share the one feature row.
pub fn sample_edge_features(
    n_edges: usize,
    classes: &[EdgeClass],
    edge_dim: usize,
    sigma_inter: f64,
    rng: &mut Rng,
) -> Result<DenseMatrix> {
    if classes.len() != n_edges {
        return Err(Error::DimensionMismatch(format!(
            "{} class flags for {} edges",
            classes.len(),
            n_edges
        )));
    }
    let mut out = DenseMatrix::zeros(n_edges, edge_dim);
    for (e, &class) in classes.iter().enumerate() {
        // the base draw never depends on sigma, so changing sigma rescales
        // inter rows and nothing else
        let scale = match class {
            EdgeClass::Intra => 1.0,
            EdgeClass::Inter => sigma_inter,
        };
        for v in out.row_mut(e) {
            *v = scale * normal(rng);
        }
    }
    Ok(out)
}

/// Runs the four generation steps off one seeded stream.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let n = config.n_nodes();

    // step 1: correlated node features
    let corr = random_correlation_matrix(config.node_dim, &mut rng)?;
    let node_features = sample_correlated_features(n, &corr, &mut rng)?;

    // step 2: noisy linear target, quantile-binned labels
    let w: Vec<f64> = (0..config.node_dim).map(|_| normal(&mut rng)).collect();
    let (labels, _) = make_labels(
        &node_features,
        &w,
        config.sigma_label,
        config.n_classes,
        &mut rng,
    )?;

    // step 3: stochastic-block edges
    let (graph, edges, edge_classes) =
        sample_sbm_edges(&labels, config.p_intra, config.q_inter, &mut rng)?;

    // step 4: per-edge Gaussian features
    let edge_features = sample_edge_features(
        edges.len(),
        &edge_classes,
        config.edge_dim,
        config.sigma_inter,
        &mut rng,
    )?;

    Ok(SyntheticDataset {
        graph,
        node_features,
        edge_features,
        labels,
        n_classes: config.n_classes,
        edges,
        edge_classes,
    })
}

/// Watts-Strogatz small-world graph: a ring lattice with `k/2` neighbors on
/// each side, each right-hand edge rewired with probability `p_rewire` to a
/// uniform non-duplicate, non-self target. The edge count stays `n * k / 2`.
pub fn watts_strogatz(n: usize, k: usize, p_rewire: f64, rng: &mut Rng) -> Result<CsrMatrix> {
    if k % 2 != 0 {
        return Err(Error::InvalidArgument(format!("degree {k} must be even")));
    }
    if k >= n {
        return Err(Error::InvalidArgument(format!(
            "degree {k} must be below node count {n}"
        )));
    }
    let mut adjacency: Vec<std::collections::BTreeSet<usize>> =
        vec![std::collections::BTreeSet::new(); n];
    for u in 0..n {
        for d in 1..=(k / 2) {
            let v = (u + d) % n;
            adjacency[u].insert(v);
            adjacency[v].insert(u);
        }
    }
    for u in 0..n {
        for d in 1..=(k / 2) {
            let v = (u + d) % n;
            if rng.gen::<f64>() >= p_rewire {
                continue;
            }
            if !adjacency[u].contains(&v) {
                continue; // already rewired away by the other endpoint
            }
            // full neighborhood leaves no legal target
            if adjacency[u].len() >= n - 1 {
                continue;
            }
            let w = loop {
                let cand = rng.gen_range(0..n);
                if cand != u && !adjacency[u].contains(&cand) {
                    break cand;
                }
            };
            adjacency[u].remove(&v);
            adjacency[v].remove(&u);
            adjacency[u].insert(w);
            adjacency[w].insert(u);
        }
    }
    let mut edges = Vec::with_capacity(n * k / 2);
    for (u, nbrs) in adjacency.iter().enumerate() {
        for &v in nbrs.range((u + 1)..) {
            edges.push((u, v, 1.0));
        }
    }
    CsrMatrix::from_undirected_edges(n, &edges)
}
