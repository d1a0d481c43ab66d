use serde::Serialize;

use super::stats::{mean, sample_sd};
use super::ExperimentRecord;
use crate::acquisition::AcquisitionKind;

/// Aggregates of one (acquisition, rs, ms) cell. Dispersion fields are
/// `None` for cells with fewer than two records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub acquisition: AcquisitionKind,
    pub rs: usize,
    pub ms: usize,
    pub runs: usize,
    pub x_err_mean: f64,
    pub x_err_sd: Option<f64>,
    pub y_err_mean: f64,
    pub y_err_sd: Option<f64>,
    pub rmse_mean_mean: f64,
    pub rmse_mean_sd: Option<f64>,
    pub nlpd_mean: f64,
    pub nlpd_sd: Option<f64>,
    pub early_termination_rate: f64,
    pub evals_used_mean: f64,
    pub iters_mean: f64,
    /// sd(x_err) of this cell over sd(x_err) of the SS cell of the same
    /// acquisition.
    pub x_err_sd_ratio_vs_ss: Option<f64>,
}

fn acquisition_code(kind: AcquisitionKind) -> usize {
    AcquisitionKind::ALL.iter().position(|k| *k == kind).unwrap_or(usize::MAX)
}

/// Per-cell summaries ordered by acquisition, rs, ms. Independent of the
/// order of `records`.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<CellSummary> {
    let mut cells: Vec<(AcquisitionKind, usize, usize)> =
        records.iter().map(|r| (r.acquisition, r.rs, r.ms)).collect();
    cells.sort_by_key(|&(a, rs, ms)| (acquisition_code(a), rs, ms));
    cells.dedup();

    let mut out: Vec<CellSummary> = cells
        .iter()
        .map(|&(acquisition, rs, ms)| {
            let cell: Vec<&ExperimentRecord> =
                records.iter().filter(|r| (r.acquisition, r.rs, r.ms) == (acquisition, rs, ms)).collect();
            let col = |f: fn(&ExperimentRecord) -> f64| cell.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let x_err = col(|r| r.x_err);
            let y_err = col(|r| r.y_err);
            let rmse = col(|r| r.fidelity.rmse_mean);
            let nlpd = col(|r| r.fidelity.nlpd);
            CellSummary {
                acquisition,
                rs,
                ms,
                runs: cell.len(),
                x_err_mean: mean(&x_err),
                x_err_sd: sample_sd(&x_err),
                y_err_mean: mean(&y_err),
                y_err_sd: sample_sd(&y_err),
                rmse_mean_mean: mean(&rmse),
                rmse_mean_sd: sample_sd(&rmse),
                nlpd_mean: mean(&nlpd),
                nlpd_sd: sample_sd(&nlpd),
                early_termination_rate: cell.iter().filter(|r| r.terminated_early).count() as f64 / cell.len() as f64,
                evals_used_mean: mean(&col(|r| r.evals_used as f64)),
                iters_mean: mean(&col(|r| r.iters as f64)),
                x_err_sd_ratio_vs_ss: None,
            }
        })
        .collect();

    let ss_sd: Vec<(AcquisitionKind, Option<f64>)> =
        out.iter().filter(|c| c.rs == 1 && c.ms == 1).map(|c| (c.acquisition, c.x_err_sd)).collect();
    for c in &mut out {
        let base = ss_sd.iter().find(|(a, _)| *a == c.acquisition).and_then(|(_, sd)| *sd);
        c.x_err_sd_ratio_vs_ss = match (c.x_err_sd, base) {
            (Some(_), Some(_)) if c.rs == 1 && c.ms == 1 => Some(1.0),
            (Some(sd), Some(b)) if b > 0.0 => Some(sd / b),
            _ => None,
        };
    }
    out
}
