//! Per-step training records and their CSV form.
//!
//! Row `t` describes the state entering optimizer step `t`: losses, penalty
//! and distance are evaluated at `theta_{t-1}`, `grad_norm` is the norm of the
//! batch gradient fed to step `t`, and `lambda`/`eta` are the values step `t`
//! uses. Reals are written with 17 significant digits.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "step,lambda,target_loss,penalty_value,composite_loss,dist_to_pretrained,grad_norm,eta";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub lambda: f64,
    pub target_loss: f64,
    pub penalty_value: f64,
    pub composite_loss: f64,
    pub dist_to_pretrained: f64,
    pub grad_norm: f64,
    pub eta: f64,
}

impl TraceRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.step,
            self.lambda,
            self.target_loss,
            self.penalty_value,
            self.composite_loss,
            self.dist_to_pretrained,
            self.grad_norm,
            self.eta
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(Error::invalid(format!("trace row has {} fields, expected 8", f.len())));
        }
        let real = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| Error::invalid(format!("bad number '{}' in trace", f[i])))
        };
        Ok(TraceRow {
            step: f[0].parse().map_err(|_| Error::invalid(format!("bad step '{}' in trace", f[0])))?,
            lambda: real(1)?,
            target_loss: real(2)?,
            penalty_value: real(3)?,
            composite_loss: real(4)?,
            dist_to_pretrained: real(5)?,
            grad_norm: real(6)?,
            eta: real(7)?,
        })
    }
}

pub trait TraceSink {
    fn record(&mut self, row: &TraceRow) -> Result<()>;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn target_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 + self.rows.len() * 200);
        s.push_str(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_csv_line());
            s.push('\n');
        }
        s
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == TRACE_HEADER => {}
            _ => return Err(Error::invalid(format!("{}: missing trace header", path.display()))),
        }
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                rows.push(TraceRow::parse_csv_line(&line)?);
            }
        }
        Ok(TrainingTrace { rows })
    }
}

impl TraceSink for TrainingTrace {
    fn record(&mut self, row: &TraceRow) -> Result<()> {
        self.rows.push(*row);
        Ok(())
    }
}

/// Appends and flushes one line per row, so an aborted run leaves a usable prefix.
pub struct CsvTraceWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{TRACE_HEADER}")?;
        out.flush()?;
        Ok(CsvTraceWriter { out })
    }
}

impl CsvTraceWriter<fs::File> {
    pub fn create(path: &Path) -> Result<Self> {
        CsvTraceWriter::new(fs::File::create(path)?)
    }
}

impl<W: Write> TraceSink for CsvTraceWriter<W> {
    fn record(&mut self, row: &TraceRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv_line())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Discards rows.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _row: &TraceRow) -> Result<()> {
        Ok(())
    }
}
