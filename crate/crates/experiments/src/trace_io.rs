//! Trace CSV files: one row per iteration, empty fields for diagnostics that
//! were not computed, floats in shortest round-trip form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nlfactor::solver::TraceRow;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str =
    "iter,loss,data_term,balance_term,tikhonov_term,delta_fro,phi_h_err,E_t,D_t,V_t,regret_avg,wall_ms";

/// `{:?}` on `f64` is the shortest string that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn format_row(r: &TraceRow) -> String {
    [
        r.iter.to_string(),
        fmt_f64(r.loss),
        fmt_f64(r.data_term),
        fmt_f64(r.balance_term),
        fmt_f64(r.tikhonov_term),
        fmt_opt(r.delta_fro),
        fmt_opt(r.phi_h_err),
        fmt_opt(r.e_t),
        fmt_opt(r.d_t),
        fmt_opt(r.v_t),
        fmt_opt(r.regret_avg),
        fmt_opt(r.wall_ms),
    ]
    .join(",")
}

pub fn write_trace_to(rows: &[TraceRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", format_row(r))?;
    }
    Ok(())
}

pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_trace_to(rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = k as u64 + 1;
        if k == 0 {
            if line != TRACE_HEADER {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: "unexpected trace header".into(),
                });
            }
            continue;
        }
        rows.push(parse_row(&line).map_err(|msg| Error::Parse {
            path: path.into(),
            line: lineno,
            msg,
        })?);
    }
    Ok(rows)
}

fn parse_row(line: &str) -> std::result::Result<TraceRow, String> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 12 {
        return Err(format!("expected 12 fields, found {}", f.len()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number `{s}`"));
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    Ok(TraceRow {
        iter: f[0].parse().map_err(|_| format!("bad iteration `{}`", f[0]))?,
        loss: num(f[1])?,
        data_term: num(f[2])?,
        balance_term: num(f[3])?,
        tikhonov_term: num(f[4])?,
        delta_fro: opt(f[5])?,
        phi_h_err: opt(f[6])?,
        e_t: opt(f[7])?,
        d_t: opt(f[8])?,
        v_t: opt(f[9])?,
        regret_avg: opt(f[10])?,
        wall_ms: opt(f[11])?,
    })
}
