//! `id,group,score,f0,...,f{d-1}` CSV files. Lines starting with `#` are
//! comments.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, ScoredSample};
use crate::error::{Error, Result};

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string())
}

pub fn read_csv<R: Read>(input: R, source: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input);
    let err = |line: u64, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(err(1, "empty file".into())),
        Some(r) => r.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?,
    };
    let header_line = header.position().map_or(1, |p| p.line());
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields.len() < 4 || fields[..3] != ["id", "group", "score"] {
        return Err(err(
            header_line,
            "header must start with id,group,score and name at least one feature".into(),
        ));
    }
    let dim = fields.len() - 3;
    for (k, name) in fields[3..].iter().enumerate() {
        if *name != format!("f{k}") {
            return Err(err(
                header_line,
                format!("expected feature column 'f{k}', found '{name}'"),
            ));
        }
    }

    let mut samples = Vec::new();
    let mut id_lines: HashMap<u64, u64> = HashMap::new();
    for rec in records {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim + 3 {
            return Err(err(line, format!("expected {} fields, found {}", dim + 3, rec.len())));
        }
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| err(line, format!("id '{}' is not a non-negative integer", &rec[0])))?;
        if let Some(prev) = id_lines.insert(id, line) {
            return Err(err(line, format!("duplicate id {id} (first seen on line {prev})")));
        }
        let group = rec[1].trim().to_string();
        if group.is_empty() {
            return Err(err(line, "empty group".into()));
        }
        let number = |k: usize, what: &str| -> Result<f64> {
            let v: f64 = rec[k]
                .trim()
                .parse()
                .map_err(|_| err(line, format!("{what} '{}' is not a number", &rec[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(line, format!("{what} '{}' is not finite", &rec[k])))
            }
        };
        let score = number(2, "score")?;
        let features = (0..dim)
            .map(|k| number(k + 3, &format!("feature f{k}")))
            .collect::<Result<Vec<_>>>()?;
        samples.push(ScoredSample {
            id,
            group,
            score,
            features,
        });
    }
    if samples.is_empty() {
        return Err(err(header_line, "no data rows".into()));
    }
    Dataset::new(samples)
}

/// Write the dataset; floats use the shortest representation that parses
/// back to the same bits.
pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W, comment: Option<&str>) -> Result<()> {
    let io = |e: std::io::Error| Error::Input(e.to_string());
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}").map_err(io)?;
        }
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["id".to_string(), "group".into(), "score".into()];
    header.extend((0..dataset.feature_dim()).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(|e| Error::Input(e.to_string()))?;
    for s in dataset.samples() {
        let mut row = Vec::with_capacity(dataset.feature_dim() + 3);
        row.push(s.id.to_string());
        row.push(s.group.clone());
        row.push(s.score.to_string());
        row.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush().map_err(io)
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, BufWriter::new(file), comment).map_err(|e| match e {
        Error::Input(msg) => Error::io(path, std::io::Error::other(msg)),
        other => other,
    })
}
