//! Self-describing plain-text checkpoints holding both networks, their
//! architectures, the training iteration and the numeric precision.
//!
//! Values are written with 17 significant digits, which round-trips f64
//! (and a fortiori f32) exactly.

use crate::activation::{Activation, ActivationKind};
use crate::error::{Error, Result};
use crate::icnn::{IcnnConfig, IcnnParams};
use crate::tensor::Tensor;
use crate::train::Precision;
use std::io::{BufRead, Write};

const MAGIC: &str = "w2ot-checkpoint-v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub precision: Precision,
    pub iteration: usize,
    pub f_cfg: IcnnConfig,
    pub f: IcnnParams<f64>,
    pub g_cfg: IcnnConfig,
    pub g: IcnnParams<f64>,
}

fn activation_name(kind: ActivationKind) -> &'static str {
    match kind {
        ActivationKind::SquaredLeakyRelu => "squared-leaky-relu",
        ActivationKind::LeakyRelu => "leaky-relu",
        ActivationKind::Identity => "identity",
    }
}

fn parse_activation(name: &str, beta: f64, line: usize) -> Result<Activation> {
    let kind = match name {
        "squared-leaky-relu" => ActivationKind::SquaredLeakyRelu,
        "leaky-relu" => ActivationKind::LeakyRelu,
        "identity" => ActivationKind::Identity,
        other => {
            return Err(Error::CheckpointParse {
                line,
                details: format!("unknown activation {other:?}"),
            })
        }
    };
    Ok(Activation { kind, beta })
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor<f64>) -> Result<()> {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    writeln!(w, "tensor {name} {}", dims.join(" "))?;
    let cols = if t.shape().len() == 2 {
        t.cols()
    } else {
        t.len()
    };
    for chunk in t.data().chunks(cols.max(1)) {
        let row: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", row.join("\t"))?;
    }
    Ok(())
}

fn write_network(
    w: &mut impl Write,
    name: &str,
    cfg: &IcnnConfig,
    params: &IcnnParams<f64>,
) -> Result<()> {
    writeln!(w, "network {name}")?;
    writeln!(w, "input_dim {}", cfg.input_dim)?;
    writeln!(w, "hidden_width {}", cfg.hidden_width)?;
    writeln!(w, "num_layers {}", cfg.num_layers)?;
    writeln!(
        w,
        "first_activation {} {:.16e}",
        activation_name(cfg.first_activation.kind),
        cfg.first_activation.beta
    )?;
    writeln!(
        w,
        "hidden_activation {} {:.16e}",
        activation_name(cfg.hidden_activation.kind),
        cfg.hidden_activation.beta
    )?;
    for (l, t) in params.w.iter().enumerate() {
        write_tensor(w, &format!("w{}", l + 1), t)?;
    }
    for (l, t) in params.a.iter().enumerate() {
        write_tensor(w, &format!("a{l}"), t)?;
    }
    for (l, t) in params.b.iter().enumerate() {
        write_tensor(w, &format!("b{l}"), t)?;
    }
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, ck: &Checkpoint) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(
        w,
        "precision {}",
        match ck.precision {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    )?;
    writeln!(w, "iteration {}", ck.iteration)?;
    write_network(w, "f", &ck.f_cfg, &ck.f)?;
    write_network(w, "g", &ck.g_cfg, &ck.g)?;
    writeln!(w, "end")?;
    Ok(())
}

struct Lines<R: BufRead> {
    reader: R,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        let mut s = String::new();
        loop {
            s.clear();
            self.line_no += 1;
            let n = self.reader.read_line(&mut s)?;
            if n == 0 {
                return Err(Error::CheckpointParse {
                    line: self.line_no,
                    details: "unexpected end of file".into(),
                });
            }
            let trimmed = s.trim_end();
            if !trimmed.is_empty() {
                return Ok(trimmed.to_string());
            }
        }
    }

    fn err(&self, details: impl Into<String>) -> Error {
        Error::CheckpointParse {
            line: self.line_no,
            details: details.into(),
        }
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let line = self.next()?;
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(self.err(format!("expected `{key} <n>`, got {line:?}")));
        }
        it.next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err(format!("bad integer in {line:?}")))
    }

    fn keyed_activation(&mut self, key: &str) -> Result<Activation> {
        let line = self.next()?;
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(self.err(format!("expected `{key} <name> <beta>`, got {line:?}")));
        }
        let name = it
            .next()
            .ok_or_else(|| self.err("missing activation name"))?;
        let beta: f64 = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err("missing or bad beta"))?;
        parse_activation(name, beta, self.line_no)
    }

    fn tensor(&mut self, expected_name: &str) -> Result<Tensor<f64>> {
        let line = self.next()?;
        let mut it = line.split_whitespace();
        if it.next() != Some("tensor") {
            return Err(self.err(format!("expected a tensor header, got {line:?}")));
        }
        let name = it.next().ok_or_else(|| self.err("missing tensor name"))?;
        if name != expected_name {
            return Err(self.err(format!("expected tensor {expected_name:?}, found {name:?}")));
        }
        let shape: Vec<usize> = it
            .map(|v| {
                v.parse()
                    .map_err(|_| self.err(format!("bad dimension {v:?}")))
            })
            .collect::<Result<_>>()?;
        if shape.is_empty() || shape.len() > 2 {
            return Err(self.err(format!("unsupported tensor rank {}", shape.len())));
        }
        let (rows, cols) = if shape.len() == 2 {
            (shape[0], shape[1])
        } else {
            (1, shape[0])
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next()?;
            let row: Vec<f64> = line
                .split('\t')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| self.err(format!("bad value {v:?}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(self.err(format!(
                    "tensor {name:?}: expected {cols} values per row, got {}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Tensor::new(shape, data).map_err(|e| self.err(e.to_string()))
    }

    fn network(&mut self, name: &str) -> Result<(IcnnConfig, IcnnParams<f64>)> {
        let line = self.next()?;
        if line != format!("network {name}") {
            return Err(self.err(format!("expected `network {name}`, got {line:?}")));
        }
        let input_dim = self.keyed_usize("input_dim")?;
        let hidden_width = self.keyed_usize("hidden_width")?;
        let num_layers = self.keyed_usize("num_layers")?;
        let first_activation = self.keyed_activation("first_activation")?;
        let hidden_activation = self.keyed_activation("hidden_activation")?;
        let cfg = IcnnConfig {
            input_dim,
            hidden_width,
            num_layers,
            first_activation,
            hidden_activation,
        };
        cfg.validate().map_err(|e| self.err(e.to_string()))?;
        let mut params = IcnnParams::<f64>::zeros(&cfg);
        for l in 1..num_layers {
            params.w[l - 1] = self.tensor(&format!("w{l}"))?;
        }
        for l in 0..num_layers {
            params.a[l] = self.tensor(&format!("a{l}"))?;
        }
        for l in 0..num_layers {
            params.b[l] = self.tensor(&format!("b{l}"))?;
        }
        params.validate(&cfg).map_err(|e| self.err(e.to_string()))?;
        Ok((cfg, params))
    }
}

pub fn read_checkpoint(reader: impl BufRead) -> Result<Checkpoint> {
    let mut lines = Lines { reader, line_no: 0 };
    let magic = lines.next()?;
    if magic != MAGIC {
        return Err(lines.err(format!("not a checkpoint file (header {magic:?})")));
    }
    let prec_line = lines.next()?;
    let precision = match prec_line.as_str() {
        "precision f64" => Precision::F64,
        "precision f32" => Precision::F32,
        other => return Err(lines.err(format!("bad precision line {other:?}"))),
    };
    let iteration = lines.keyed_usize("iteration")?;
    let (f_cfg, f) = lines.network("f")?;
    let (g_cfg, g) = lines.network("g")?;
    let end = lines.next()?;
    if end != "end" {
        return Err(lines.err(format!("expected `end`, got {end:?}")));
    }
    Ok(Checkpoint {
        precision,
        iteration,
        f_cfg,
        f,
        g_cfg,
        g,
    })
}

pub fn save_checkpoint(path: &std::path::Path, ck: &Checkpoint) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut file, ck)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(file)
}
