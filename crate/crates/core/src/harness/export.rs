//! CSV persistence. Floats are written in shortest round-trip form, so
//! reading a file back yields bit-identical values.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::summary::summarize;
use super::{surface_path, ExperimentPlan, ExperimentRecord, RunFailure};
use crate::acquisition::AcquisitionKind;
use crate::benchmarks::{self, FidelityReport, TruthSurface};
use crate::error::{Error, Result};
use crate::optimizer::Objective;

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn record_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "acquisition", "rs", "ms", "repeat_index", "seed"].map(String::from).to_vec();
    h.extend((1..=dim).map(|i| format!("x{i}_hat")));
    h.extend(
        [
            "y_hat",
            "x_err",
            "y_err",
            "evals_used",
            "iters",
            "terminated_early",
            "termination_reason",
            "rmse_mean",
            "rmse_sd",
            "nlpd",
            "wall_ms",
        ]
        .map(String::from),
    );
    h
}

fn record_row(r: &ExperimentRecord) -> Vec<String> {
    let mut row = vec![
        r.run_id.clone(),
        r.acquisition.to_string(),
        r.rs.to_string(),
        r.ms.to_string(),
        r.repeat_index.to_string(),
        r.seed.to_string(),
    ];
    row.extend(r.x_hat.iter().map(|v| fmt_f64(*v)));
    row.extend([
        fmt_f64(r.y_hat),
        fmt_f64(r.x_err),
        fmt_f64(r.y_err),
        r.evals_used.to_string(),
        r.iters.to_string(),
        r.terminated_early.to_string(),
        r.termination_reason.clone(),
        fmt_f64(r.fidelity.rmse_mean),
        fmt_f64(r.fidelity.rmse_sd),
        fmt_f64(r.fidelity.nlpd),
        fmt_f64(r.wall_ms),
    ]);
    row
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(path, format!("{other:?}")),
    }
}

fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends records one at a time, flushing after each so completed runs
/// survive an interruption.
pub struct RecordWriter {
    path: std::path::PathBuf,
    file: File,
    dim: usize,
}

impl RecordWriter {
    /// Opens `path` for appending, writing the header if the file is empty.
    pub fn append(path: &Path, dim: usize) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        if empty {
            file.write_all(&line(&record_header(dim))?).map_err(|e| Error::io(path, e))?;
        }
        Ok(RecordWriter { path: path.to_path_buf(), file, dim })
    }

    pub fn write(&mut self, record: &ExperimentRecord) -> Result<()> {
        if record.x_hat.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: record.x_hat.len() });
        }
        self.file.write_all(&line(&record_row(record))?).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn line(fields: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields).map_err(|e| Error::data("<memory>", format!("{e}")))?;
    w.into_inner().map_err(|e| Error::data("<memory>", format!("{e}")))
}

/// Writes `records` (all of dimension `dim`) to `path`, replacing it.
pub fn write_records(path: &Path, records: &[ExperimentRecord], dim: usize) -> Result<()> {
    if let Some(r) = records.iter().find(|r| r.x_hat.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: r.x_hat.len() });
    }
    write_rows(path, &record_header(dim), records.iter().map(record_row))
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, field: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::data(path, format!("row {row}: bad {field} '{s}'")))
}

/// Reads a records file. A final line without a terminating newline is the
/// remnant of an interrupted write and is ignored.
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
    }
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let dim = header.iter().filter(|h| h.starts_with('x') && h.ends_with("_hat")).count();
    let expected = record_header(dim);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::data(path, "unexpected records header"));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let n = i + 1;
        let f = |k: usize| row.get(k).unwrap_or("");
        let x_hat = (0..dim).map(|k| parse(path, n, "x_hat", f(6 + k))).collect::<Result<Vec<f64>>>()?;
        let o = 6 + dim;
        out.push(ExperimentRecord {
            run_id: f(0).to_string(),
            acquisition: f(1).parse::<AcquisitionKind>().map_err(|_| Error::data(path, format!("row {n}: bad acquisition")))?,
            rs: parse(path, n, "rs", f(2))?,
            ms: parse(path, n, "ms", f(3))?,
            repeat_index: parse(path, n, "repeat_index", f(4))?,
            seed: parse(path, n, "seed", f(5))?,
            x_hat,
            y_hat: parse(path, n, "y_hat", f(o))?,
            x_err: parse(path, n, "x_err", f(o + 1))?,
            y_err: parse(path, n, "y_err", f(o + 2))?,
            evals_used: parse(path, n, "evals_used", f(o + 3))?,
            iters: parse(path, n, "iters", f(o + 4))?,
            terminated_early: parse(path, n, "terminated_early", f(o + 5))?,
            termination_reason: f(o + 6).to_string(),
            fidelity: FidelityReport {
                rmse_mean: parse(path, n, "rmse_mean", f(o + 7))?,
                rmse_sd: parse(path, n, "rmse_sd", f(o + 8))?,
                nlpd: parse(path, n, "nlpd", f(o + 9))?,
            },
            wall_ms: parse(path, n, "wall_ms", f(o + 10))?,
        });
    }
    Ok(out)
}

const FAILURE_HEADER: [&str; 7] = ["run_id", "acquisition", "rs", "ms", "repeat_index", "seed", "error"];

pub fn write_failures(path: &Path, failures: &[RunFailure]) -> Result<()> {
    write_rows(
        path,
        &FAILURE_HEADER.map(String::from),
        failures.iter().map(|f| {
            vec![
                f.run_id.clone(),
                f.acquisition.to_string(),
                f.rs.to_string(),
                f.ms.to_string(),
                f.repeat_index.to_string(),
                f.seed.to_string(),
                f.error.clone(),
            ]
        }),
    )
}

pub fn read_failures(path: &Path) -> Result<Vec<RunFailure>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let n = i + 1;
        let f = |k: usize| row.get(k).unwrap_or("");
        out.push(RunFailure {
            run_id: f(0).to_string(),
            acquisition: f(1).parse::<AcquisitionKind>().map_err(|_| Error::data(path, format!("row {n}: bad acquisition")))?,
            rs: parse(path, n, "rs", f(2))?,
            ms: parse(path, n, "ms", f(3))?,
            repeat_index: parse(path, n, "repeat_index", f(4))?,
            seed: parse(path, n, "seed", f(5))?,
            error: f(6).to_string(),
        });
    }
    Ok(out)
}

fn write_summary(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let header = [
        "acquisition",
        "rs",
        "ms",
        "runs",
        "x_err_mean",
        "x_err_sd",
        "y_err_mean",
        "y_err_sd",
        "rmse_mean_mean",
        "rmse_mean_sd",
        "nlpd_mean",
        "nlpd_sd",
        "early_termination_rate",
        "evals_used_mean",
        "iters_mean",
        "x_err_sd_ratio_vs_ss",
    ]
    .map(String::from);
    write_rows(
        path,
        &header,
        summarize(records).into_iter().map(|c| {
            vec![
                c.acquisition.to_string(),
                c.rs.to_string(),
                c.ms.to_string(),
                c.runs.to_string(),
                fmt_f64(c.x_err_mean),
                fmt_opt(c.x_err_sd),
                fmt_f64(c.y_err_mean),
                fmt_opt(c.y_err_sd),
                fmt_f64(c.rmse_mean_mean),
                fmt_opt(c.rmse_mean_sd),
                fmt_f64(c.nlpd_mean),
                fmt_opt(c.nlpd_sd),
                fmt_f64(c.early_termination_rate),
                fmt_f64(c.evals_used_mean),
                fmt_f64(c.iters_mean),
                fmt_opt(c.x_err_sd_ratio_vs_ss),
            ]
        }),
    )
}

fn cell_prefix(r: &ExperimentRecord) -> Vec<String> {
    vec![r.acquisition.to_string(), r.rs.to_string(), r.ms.to_string(), r.repeat_index.to_string()]
}

fn read_surface(path: &Path) -> Result<TruthSurface> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e))
}

/// Writes `summary.csv` and `plotdata/` under `dir` from `records`. The
/// surface plot uses `dir/truth.json` and any stored run surfaces.
pub fn export(dir: &Path, plan: &ExperimentPlan, records: &[ExperimentRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidInput("nothing to export".into()));
    }
    let objective = benchmarks::by_name(&plan.objective)?;
    let bounds = objective.bounds();
    let dim = bounds.dim();
    write_summary(&dir.join("summary.csv"), records)?;
    let plot = dir.join("plotdata");
    fs::create_dir_all(&plot).map_err(|e| Error::io(&plot, e))?;

    let mut header: Vec<String> = ["acquisition", "rs", "ms", "repeat_index"].map(String::from).to_vec();
    header.extend((1..=dim).map(|i| format!("x{i}_hat")));
    header.push("y_hat".into());
    write_rows(
        &plot.join("fig3_scatter.csv"),
        &header,
        records.iter().map(|r| {
            let mut row = cell_prefix(r);
            row.extend(r.x_hat.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(r.y_hat));
            row
        }),
    )?;

    let header = ["acquisition", "rs", "ms", "repeat_index", "iters", "evals_used"].map(String::from);
    write_rows(
        &plot.join("fig4_counts.csv"),
        &header,
        records.iter().map(|r| {
            let mut row = cell_prefix(r);
            row.push(r.iters.to_string());
            row.push(r.evals_used.to_string());
            row
        }),
    )?;

    let mut sources: Vec<(String, TruthSurface)> = Vec::new();
    let truth_path = dir.join("truth.json");
    if truth_path.exists() {
        sources.push(("truth".into(), benchmarks::load_surface(&truth_path)?));
    }
    for r in records {
        let p = surface_path(dir, &r.run_id);
        if p.exists() {
            sources.push((r.run_id.clone(), read_surface(&p)?));
        }
    }
    let mut header: Vec<String> = vec!["source".into()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.push("mean".into());
    header.push("sd".into());
    let rows = sources.iter().flat_map(|(name, s)| {
        s.grid.iter().zip(&s.means).zip(&s.sds).map(move |((u, m), sd)| {
            let mut row = vec![name.clone()];
            row.extend(bounds.map_unit(u.coords()).coords().iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(*m));
            row.push(fmt_f64(*sd));
            row
        })
    });
    write_rows(&plot.join("fig5_surfaces.csv"), &header, rows)
}
