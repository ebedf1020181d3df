//! Dataset container and its self-describing text file format.
//!
//! File schema (version 1), one section per line group:
//!
//! ```text
//! pdn-dataset 1
//! nodes <N>
//! classes <C>
//! node_dim <F>
//! edge_dim <D>
//! edge_count <E>
//! labels
//! <N space-separated class indices>
//! edges
//! <E lines: u v intra|inter>      (undirected, u < v, sorted)
//! node_features
//! <N lines of F floats>
//! edge_features
//! <E lines of D floats>           (row e belongs to edge e, both directions)
//! end
//! ```
//!
//! Floats are written in Rust's shortest round-trip decimal form, so saving
//! and reloading reproduces every value bit for bit and regenerating with
//! the same seed reproduces the file byte for byte.

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, DenseMatrix, SupportPattern};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeClass {
    Intra,
    Inter,
}

impl EdgeClass {
    pub fn name(self) -> &'static str {
        match self {
            EdgeClass::Intra => "intra",
            EdgeClass::Inter => "inter",
        }
    }
}

/// A generated (or loaded) node-classification dataset over one graph with
/// per-edge features.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    /// symmetric adjacency with both stored directions
    pub graph: CsrMatrix,
    /// one row per node
    pub node_features: DenseMatrix,
    /// one row per undirected edge, aligned with `edges`
    pub edge_features: DenseMatrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// undirected edge list, u < v, sorted
    pub edges: Vec<(usize, usize)>,
    /// intra/inter flag aligned with `edges`
    pub edge_classes: Vec<EdgeClass>,
}

impl SyntheticDataset {
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn intra_edge_count(&self) -> usize {
        self.edge_classes
            .iter()
            .filter(|&&c| c == EdgeClass::Intra)
            .count()
    }

    pub fn inter_edge_count(&self) -> usize {
        self.n_edges() - self.intra_edge_count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "pdn-dataset 1").unwrap();
        writeln!(out, "nodes {}", self.n_nodes()).unwrap();
        writeln!(out, "classes {}", self.n_classes).unwrap();
        writeln!(out, "node_dim {}", self.node_features.n_cols()).unwrap();
        writeln!(out, "edge_dim {}", self.edge_features.n_cols()).unwrap();
        writeln!(out, "edge_count {}", self.n_edges()).unwrap();
        writeln!(out, "labels").unwrap();
        let labels: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        writeln!(out, "{}", labels.join(" ")).unwrap();
        writeln!(out, "edges").unwrap();
        for (&(u, v), &class) in self.edges.iter().zip(&self.edge_classes) {
            writeln!(out, "{u} {v} {}", class.name()).unwrap();
        }
        writeln!(out, "node_features").unwrap();
        for i in 0..self.node_features.n_rows() {
            write_float_row(&mut out, self.node_features.row(i));
        }
        writeln!(out, "edge_features").unwrap();
        for e in 0..self.edge_features.n_rows() {
            write_float_row(&mut out, self.edge_features.row(e));
        }
        writeln!(out, "end").unwrap();
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SyntheticDataset> {
        let file = BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines().enumerate();
        let mut next = |expect: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(line))) => Ok((i + 1, line)),
                Some((i, Err(e))) => Err(Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                }),
                None => Err(Error::Parse {
                    line: 0,
                    msg: format!("unexpected end of file, wanted {expect}"),
                }),
            }
        };
        let (line_no, header) = next("header")?;
        if header.trim() != "pdn-dataset 1" {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("unknown header '{header}'"),
            });
        }
        let mut field = |name: &str| -> Result<usize> {
            let (line_no, line) = next(name)?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(key), Some(value)) if key == name => {
                    value.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("bad {name} value '{value}'"),
                    })
                }
                _ => Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected '{name} <count>', got '{line}'"),
                }),
            }
        };
        let n_nodes = field("nodes")?;
        let n_classes = field("classes")?;
        let node_dim = field("node_dim")?;
        let edge_dim = field("edge_dim")?;
        let edge_count = field("edge_count")?;

        let expect_section = |got: (usize, String), name: &str| -> Result<()> {
            if got.1.trim() == name {
                Ok(())
            } else {
                Err(Error::Parse {
                    line: got.0,
                    msg: format!("expected section '{name}', got '{}'", got.1),
                })
            }
        };
        expect_section(next("labels")?, "labels")?;
        let (line_no, label_line) = next("label values")?;
        let labels: Vec<usize> = label_line
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad label '{t}'"),
                })
            })
            .collect::<Result<_>>()?;
        if labels.len() != n_nodes {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("{} labels for {} nodes", labels.len(), n_nodes),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: n_classes,
            });
        }

        expect_section(next("edges")?, "edges")?;
        let mut edges = Vec::with_capacity(edge_count);
        let mut edge_classes = Vec::with_capacity(edge_count);
        for _ in 0..edge_count {
            let (line_no, line) = next("edge")?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 'u v class', got '{line}'"),
                });
            }
            let u: usize = parts[0].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad node '{}'", parts[0]),
            })?;
            let v: usize = parts[1].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad node '{}'", parts[1]),
            })?;
            let class = match parts[2] {
                "intra" => EdgeClass::Intra,
                "inter" => EdgeClass::Inter,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("bad edge class '{other}'"),
                    })
                }
            };
            if u >= v || v >= n_nodes {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("bad edge ({u}, {v})"),
                });
            }
            edges.push((u, v));
            edge_classes.push(class);
        }

        let mut read_matrix = |name: &str, rows: usize, cols: usize| -> Result<DenseMatrix> {
            expect_section(next(name)?, name)?;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (line_no, line) = next("feature row")?;
                let mut count = 0;
                for tok in line.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("bad float '{tok}'"),
                    })?;
                    values.push(v);
                    count += 1;
                }
                if count != cols {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("{count} values in a row of width {cols}"),
                    });
                }
            }
            DenseMatrix::new(rows, cols, values)
        };
        let node_features = read_matrix("node_features", n_nodes, node_dim)?;
        let edge_features = read_matrix("edge_features", edge_count, edge_dim)?;
        expect_section(next("end")?, "end")?;

        let weighted: Vec<(usize, usize, f64)> =
            edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
        let graph = CsrMatrix::from_undirected_edges(n_nodes, &weighted)?;
        Ok(SyntheticDataset {
            graph,
            node_features,
            edge_features,
            labels,
            n_classes,
            edges,
            edge_classes,
        })
    }
}

fn write_float_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

/// Model-facing view of a dataset: the support pattern of the graph and
/// edge features expanded to pattern storage order, with both stored
/// directions of an undirected edge carrying the same feature row.
#[derive(Debug, Clone)]
pub struct GraphTask {
    pub graph: Arc<CsrMatrix>,
    pub pattern: Arc<SupportPattern>,
    pub node_features: DenseMatrix,
    /// nnz x D, aligned with `pattern`
    pub edge_features: DenseMatrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl GraphTask {
    pub fn from_dataset(ds: &SyntheticDataset) -> Result<GraphTask> {
        let pattern = Arc::new(SupportPattern::from_csr(&ds.graph));
        let edge_features =
            expand_undirected_features(&pattern, &ds.edges, &ds.edge_features)?;
        Ok(GraphTask {
            graph: Arc::new(ds.graph.clone()),
            pattern,
            node_features: ds.node_features.clone(),
            edge_features,
            labels: ds.labels.clone(),
            n_classes: ds.n_classes,
        })
    }

    /// Same task with the per-edge features replaced (already aligned with
    /// the pattern), e.g. by neighborhood-similarity features.
    pub fn with_pattern_features(mut self, features: DenseMatrix) -> Result<GraphTask> {
        if features.n_rows() != self.pattern.nnz() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {} stored edges",
                features.n_rows(),
                self.pattern.nnz()
            )));
        }
        self.edge_features = features;
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.n_cols()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.n_cols()
    }
}

/// Copies one feature row per undirected edge into every stored direction.
pub fn expand_undirected_features(
    pattern: &SupportPattern,
    edges: &[(usize, usize)],
    features: &DenseMatrix,
) -> Result<DenseMatrix> {
    if features.n_rows() != edges.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} edges",
            features.n_rows(),
            edges.len()
        )));
    }
    let dim = features.n_cols();
    let mut out = DenseMatrix::zeros(pattern.nnz(), dim);
    for (i, j, k) in pattern.entries() {
        let key = (i.min(j), i.max(j));
        let e = edges.binary_search(&key).map_err(|_| {
            Error::InvalidGraph(format!("stored entry ({i}, {j}) missing from edge list"))
        })?;
        out.row_mut(k).copy_from_slice(features.row(e));
    }
    Ok(out)
}
