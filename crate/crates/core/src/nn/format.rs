//! Text model file.
//!
//! ```text
//! # optional comment lines
//! affrank-model
//! format_version 1
//! activation relu
//! layer_dims 4 8 1
//! layer 0 weights 8 4
//! <one row per line, IEEE-754 bit patterns as 16 hex digits>
//! layer 0 biases 8
//! <one line>
//! ...
//! end
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Network};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "affrank-model";

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub fn write_model<W: Write>(net: &Network, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "format_version {FORMAT_VERSION}")?;
    writeln!(out, "activation {}", net.activation())?;
    let dims: Vec<String> = net.layer_dims().iter().map(|d| d.to_string()).collect();
    writeln!(out, "layer_dims {}", dims.join(" "))?;
    for (l, layer) in net.layers().iter().enumerate() {
        writeln!(out, "layer {l} weights {} {}", layer.outputs(), layer.inputs())?;
        for row in layer.weights().chunks_exact(layer.inputs()) {
            let row: Vec<String> = row.iter().map(|&v| hex(v)).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        writeln!(out, "layer {l} biases {}", layer.outputs())?;
        let b: Vec<String> = layer.biases().iter().map(|&v| hex(v)).collect();
        writeln!(out, "{}", b.join(" "))?;
    }
    writeln!(out, "end")?;
    out.flush()
}

pub fn save_model(net: &Network, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(net, BufWriter::new(file), comment).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file), &path.display().to_string())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: u64,
    source: String,
}

impl<R: BufRead> Lines<R> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.source.clone(),
            line: self.line_no,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<String> {
        loop {
            self.line_no += 1;
            match self.inner.next() {
                None => return Err(self.err("unexpected end of file")),
                Some(Err(e)) => return Err(self.err(e.to_string())),
                Some(Ok(l)) if l.starts_with('#') || l.trim().is_empty() => continue,
                Some(Ok(l)) => return Ok(l.trim_end().to_string()),
            }
        }
    }

    fn expect_keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected '{key} ...', found '{line}'")));
        }
        Ok(parts.map(str::to_string).collect())
    }

    fn usize_field(&self, s: &str) -> Result<usize> {
        s.parse()
            .map_err(|_| self.err(format!("'{s}' is not a non-negative integer")))
    }

    fn hex_row(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|tok| {
                if tok.len() != 16 {
                    return Err(self.err(format!("'{tok}' is not a 16-digit hex value")));
                }
                u64::from_str_radix(tok, 16)
                    .map(f64::from_bits)
                    .map_err(|_| self.err(format!("'{tok}' is not a 16-digit hex value")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", vals.len())));
        }
        Ok(vals)
    }
}

pub fn read_model<R: Read>(input: R, source: &str) -> Result<Network> {
    let mut lines = Lines {
        inner: BufReader::new(input).lines(),
        line_no: 0,
        source: source.to_string(),
    };
    let magic = lines.next_line()?;
    if magic != MAGIC {
        return Err(lines.err(format!("not a model file (expected '{MAGIC}')")));
    }
    let version = lines.expect_keyed("format_version")?;
    if version.len() != 1 || version[0] != FORMAT_VERSION.to_string() {
        return Err(lines.err(format!("unsupported format_version {version:?}")));
    }
    let act = lines.expect_keyed("activation")?;
    let activation: Activation = match act.as_slice() {
        [a] => a.parse().map_err(|e: Error| lines.err(e.to_string()))?,
        _ => return Err(lines.err("activation takes one value")),
    };
    let dims = lines
        .expect_keyed("layer_dims")?
        .iter()
        .map(|s| lines.usize_field(s))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 {
        return Err(lines.err("layer_dims needs at least two entries"));
    }

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..dims.len() - 1 {
        let (inputs, outputs) = (dims[l], dims[l + 1]);
        let header = lines.expect_keyed("layer")?;
        if header != [l.to_string(), "weights".into(), outputs.to_string(), inputs.to_string()] {
            return Err(lines.err(format!("expected 'layer {l} weights {outputs} {inputs}'")));
        }
        let mut w = Vec::with_capacity(inputs * outputs);
        for _ in 0..outputs {
            w.extend(lines.hex_row(inputs)?);
        }
        let header = lines.expect_keyed("layer")?;
        if header != [l.to_string(), "biases".into(), outputs.to_string()] {
            return Err(lines.err(format!("expected 'layer {l} biases {outputs}'")));
        }
        biases.push(lines.hex_row(outputs)?);
        weights.push(w);
    }
    if lines.next_line()? != "end" {
        return Err(lines.err("expected 'end'"));
    }
    Network::from_parts(&dims, activation, weights, biases)
}
