//! CSV traces: `#`-prefixed `key: value` metadata lines, a header row, then
//! one row per recorded step. Floats carry 17 significant digits so a trace
//! parses back to the exact values written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{CliError, CliResult};

pub const COLUMNS: [&str; 7] = ["t", "L_hat", "Jc_hat", "mu", "err_X", "rho_cl", "x_norm"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    pub l_hat: f64,
    pub jc_hat: f64,
    pub mu: f64,
    /// `||X_t - X*||_F`, when a reference is available.
    pub err_x: Option<f64>,
    pub rho_cl: f64,
    pub x_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    /// Ordered metadata pairs.
    pub meta: Vec<(String, String)>,
    pub rows: Vec<TraceRecord>,
}

impl Trace {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace(path: &Path, trace: &Trace) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    let io = |e| CliError::io(format!("writing {}", path.display()), e);
    for (k, v) in &trace.meta {
        writeln!(out, "# {k}: {v}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::io(format!("writing {}", path.display()), e.into());
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in &trace.rows {
        w.write_record([
            r.t.to_string(),
            format_float(r.l_hat),
            format_float(r.jc_hat),
            format_float(r.mu),
            r.err_x.map(format_float).unwrap_or_default(),
            format_float(r.rho_cl),
            format_float(r.x_norm),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> CliResult<Trace> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let file = File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    let mut meta = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        match line.strip_prefix('#') {
            Some(rest) => {
                let (k, v) = rest
                    .split_once(':')
                    .ok_or_else(|| bad(format!("malformed metadata line {line:?}")))?;
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            None => break,
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(COLUMNS) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let float = |i: usize| -> CliResult<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", COLUMNS[i])))
        };
        rows.push(TraceRecord {
            t: rec[0].parse().map_err(|e| bad(format!("column t: {e}")))?,
            l_hat: float(1)?,
            jc_hat: float(2)?,
            mu: float(3)?,
            err_x: if rec[4].is_empty() { None } else { Some(float(4)?) },
            rho_cl: float(5)?,
            x_norm: float(6)?,
        });
    }
    Ok(Trace { meta, rows })
}
