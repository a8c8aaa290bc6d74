//! Trace and summary persistence.
//!
//! The CSV schema is fixed: `k,eta_k,eps1_k,eps2_k,h,f_at_A,feas,stat_x,
//! dir_norm,cg_iters_w,cg_iters_v,wall_nanos`. Floats are serialized as
//! shortest round-trip decimals, so two runs of the same config produce
//! bit-identical traces except for the `wall_nanos` column.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dissolve::solver::{TraceRecord, TraceSink};

pub const TRACE_HEADER: &str =
    "k,eta_k,eps1_k,eps2_k,h,f_at_A,feas,stat_x,dir_norm,cg_iters_w,cg_iters_v,wall_nanos";

/// Streams every `stride`-th record to a CSV file.
pub struct CsvSink {
    writer: BufWriter<File>,
    stride: usize,
    pub records_written: usize,
}

impl CsvSink {
    pub fn create(path: &str, stride: usize) -> std::io::Result<Self> {
        if let Some(parent) = Path::new(path).parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut writer = BufWriter::new(File::create(path)?);
        writeln!(writer, "{TRACE_HEADER}")?;
        Ok(CsvSink {
            writer,
            stride,
            records_written: 0,
        })
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.writer.flush()
    }
}

impl TraceSink<f64> for CsvSink {
    fn record(&mut self, rec: &TraceRecord<f64>) {
        if !rec.k.is_multiple_of(self.stride) {
            return;
        }
        // `{}` on f64 prints the shortest decimal that round-trips.
        writeln!(
            self.writer,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            rec.k,
            rec.eta_k,
            rec.eps1_k,
            rec.eps2_k,
            rec.h,
            rec.f_at_a,
            rec.feas,
            rec.stat_x,
            rec.dir_norm,
            rec.cg_iters_w,
            rec.cg_iters_v,
            rec.wall_nanos
        )
        .expect("trace write failed");
        self.records_written += 1;
    }
}

/// Trace sink that also records the first iteration reaching a feasibility
/// threshold, for the comparison table.
pub struct FeasWatch<'a> {
    pub inner: &'a mut dyn TraceSink<f64>,
    pub feas_tol: f64,
    pub first_feasible: Option<usize>,
}

impl<'a> TraceSink<f64> for FeasWatch<'a> {
    fn record(&mut self, rec: &TraceRecord<f64>) {
        if self.first_feasible.is_none() && rec.feas <= self.feas_tol {
            self.first_feasible = Some(rec.k);
        }
        self.inner.record(rec);
    }
}

pub fn write_json(path: &str, value: &serde_json::Value) -> std::io::Result<()> {
    if let Some(parent) = Path::new(path).parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writeln!(writer)?;
    writer.flush()
}
