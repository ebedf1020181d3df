//! Versioned model checkpoints: architecture config plus flat parameter
//! arrays in a self-describing text file.
//!
//! Schema (version 1):
//!
//! ```text
//! pdn-checkpoint 1
//! model <gcn|pdn|pdn_linear|pdn_edgeconv|pdn_multiscale>
//! field <key> <value>          (zero or more: dropout, self_loops,
//!                               hidden, out_act, embed_dim, hops)
//! param <name> <rows> <cols>
//! <rows lines of cols floats>
//! ...
//! end
//! ```
//!
//! Floats use the shortest round-trip decimal form; save -> load -> save
//! reproduces the file byte for byte.

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::model::{PdnModel, PdnVariant};
use crate::sparse::DenseMatrix;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointParam {
    pub name: String,
    pub data: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub fields: Vec<(String, String)>,
    pub params: Vec<CheckpointParam>,
}

impl Checkpoint {
    pub fn from_model(tape: &Tape, model: &PdnModel) -> Checkpoint {
        let mut fields = vec![
            ("dropout".to_string(), model.head.dropout.to_string()),
            ("self_loops".to_string(), model.self_loops.to_string()),
        ];
        match &model.variant {
            PdnVariant::FixedGcn | PdnVariant::LinearAttention => {}
            PdnVariant::DeepEdgeMlp { hidden, out_act } => {
                let h: Vec<String> = hidden.iter().map(|v| v.to_string()).collect();
                fields.push(("hidden".to_string(), h.join(",")));
                fields.push(("out_act".to_string(), out_act.name().to_string()));
            }
            PdnVariant::EdgeConv { embed_dim } => {
                fields.push(("embed_dim".to_string(), embed_dim.to_string()));
            }
            PdnVariant::MultiScale { hops } => {
                fields.push(("hops".to_string(), hops.to_string()));
            }
        }
        let params = model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(name, p)| CheckpointParam {
                name,
                data: tape.data(p).clone(),
            })
            .collect();
        Checkpoint {
            model: model.variant.name().to_string(),
            fields,
            params,
        }
    }

    fn field(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Reconstructs the architecture this checkpoint describes.
    pub fn variant(&self) -> Result<PdnVariant> {
        match self.model.as_str() {
            "gcn" => Ok(PdnVariant::FixedGcn),
            "pdn_linear" => Ok(PdnVariant::LinearAttention),
            "pdn" => {
                let hidden = self
                    .field("hidden")
                    .unwrap_or("16")
                    .split(',')
                    .filter(|t| !t.is_empty())
                    .map(|t| {
                        t.parse().map_err(|_| Error::Parse {
                            line: 0,
                            msg: format!("bad hidden width '{t}'"),
                        })
                    })
                    .collect::<Result<Vec<usize>>>()?;
                let out_act = Activation::from_str(self.field("out_act").unwrap_or("sigmoid"))?;
                Ok(PdnVariant::DeepEdgeMlp { hidden, out_act })
            }
            "pdn_edgeconv" => Ok(PdnVariant::EdgeConv {
                embed_dim: self
                    .field("embed_dim")
                    .unwrap_or("16")
                    .parse()
                    .map_err(|_| Error::Parse {
                        line: 0,
                        msg: "bad embed_dim".into(),
                    })?,
            }),
            "pdn_multiscale" => Ok(PdnVariant::MultiScale {
                hops: self.field("hops").unwrap_or("2").parse().map_err(|_| {
                    Error::Parse {
                        line: 0,
                        msg: "bad hops".into(),
                    }
                })?,
            }),
            other => Err(Error::InvalidArgument(format!(
                "unknown checkpoint model '{other}'"
            ))),
        }
    }

    /// Writes the stored parameters back into a model of the same
    /// architecture.
    pub fn apply_to(&self, tape: &mut Tape, model: &PdnModel) -> Result<()> {
        let names = model.param_names();
        let values = model.params();
        if names.len() != self.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                names.len()
            )));
        }
        for ((name, value), stored) in names.iter().zip(values).zip(&self.params) {
            if *name != stored.name {
                return Err(Error::InvalidArgument(format!(
                    "parameter order mismatch: model {name} vs checkpoint {}",
                    stored.name
                )));
            }
            if tape.data(value).shape() != stored.data.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "parameter {name}: checkpoint shape {:?} vs model {:?}",
                    stored.data.shape(),
                    tape.data(value).shape()
                )));
            }
            tape.data_mut(value)
                .values_mut()
                .copy_from_slice(stored.data.values());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "pdn-checkpoint 1").unwrap();
        writeln!(out, "model {}", self.model).unwrap();
        for (k, v) in &self.fields {
            writeln!(out, "field {k} {v}").unwrap();
        }
        for p in &self.params {
            let (rows, cols) = p.data.shape();
            writeln!(out, "param {} {rows} {cols}", p.name).unwrap();
            for i in 0..rows {
                for (j, v) in p.data.row(i).iter().enumerate() {
                    if j > 0 {
                        out.push(' ');
                    }
                    write!(out, "{v}").unwrap();
                }
                out.push('\n');
            }
        }
        writeln!(out, "end").unwrap();
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines().enumerate().map(|(i, l)| {
            l.map(|line| (i + 1, line)).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        });
        let mut next = |expect: &str| -> Result<(usize, String)> {
            lines.next().unwrap_or(Err(Error::Parse {
                line: 0,
                msg: format!("unexpected end of file, wanted {expect}"),
            }))
        };
        let (line_no, header) = next("header")?;
        if header.trim() != "pdn-checkpoint 1" {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("unknown header '{header}'"),
            });
        }
        let (line_no, model_line) = next("model")?;
        let model = match model_line.split_whitespace().collect::<Vec<_>>()[..] {
            ["model", name] => name.to_string(),
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 'model <name>', got '{model_line}'"),
                })
            }
        };
        let mut fields = Vec::new();
        let mut params = Vec::new();
        loop {
            let (line_no, line) = next("field, param or end")?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.as_slice() {
                ["end"] => break,
                ["field", key, value] => {
                    fields.push((key.to_string(), value.to_string()));
                }
                ["param", name, rows, cols] => {
                    let rows: usize = rows.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("bad row count '{rows}'"),
                    })?;
                    let cols: usize = cols.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("bad column count '{cols}'"),
                    })?;
                    let mut values = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (line_no, row) = next("parameter row")?;
                        let mut count = 0;
                        for tok in row.split_whitespace() {
                            values.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                                line: line_no,
                                msg: format!("bad float '{tok}'"),
                            })?);
                            count += 1;
                        }
                        if count != cols {
                            return Err(Error::Parse {
                                line: line_no,
                                msg: format!("{count} values in a width-{cols} row"),
                            });
                        }
                    }
                    params.push(CheckpointParam {
                        name: name.to_string(),
                        data: DenseMatrix::new(rows, cols, values)?,
                    });
                }
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unrecognized line '{line}'"),
                    })
                }
            }
        }
        Ok(Checkpoint {
            model,
            fields,
            params,
        })
    }
}
