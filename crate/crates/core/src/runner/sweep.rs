//! Run a matrix of configurations and verify each run offline.
//!
//! With the `parallel` feature (on by default) cells run on a rayon pool;
//! `run_cells_seq` is the sequential fallback and produces the same results
//! in the same order, since every cell is independently seeded.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{run_with_workload, RunConfig, RunError, RunOutcome};
use crate::oracle::{verify_run, VerificationReport};
use crate::workloads::Workload;

#[derive(Debug)]
pub struct CellResult {
    pub cfg: RunConfig,
    pub outcome: Result<RunOutcome, RunError>,
    /// Offline verification of the finished run; `None` when the run itself
    /// errored out.
    pub report: Option<VerificationReport>,
}

impl CellResult {
    pub fn oracle_ok(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.passed())
    }

    pub fn csv_row(&self) -> String {
        let workload = self.cfg.workload.short_name();
        let protocol = self.cfg.protocol.name();
        let policy = self.cfg.policy.name();
        let eta = self.cfg.policy.eta().map_or(String::new(), |e| e.to_string());
        let seed = self.cfg.seed;
        match &self.outcome {
            Err(e) => format!(
                "{workload},{protocol},{policy},{eta},,{seed},error,,,,,,,,,\"{}\"",
                format!("{e}").replace('"', "'").replace(',', ";")
            ),
            Ok(o) => {
                let h = &o.history;
                let oracle = match &self.report {
                    None => "unverified".to_string(),
                    Some(r) if r.passed() => "ok".to_string(),
                    Some(r) => format!("FAIL:{}", r.failures().join("+")),
                };
                format!(
                    "{workload},{protocol},{policy},{eta},{},{seed},{},{},{},{},{},{},{},{},{},{oracle}",
                    h.n,
                    h.completed,
                    h.epochs.len(),
                    o.updates_to_detect,
                    o.updates_total,
                    h.events.len(),
                    h.reduction_count,
                    h.control_msgs,
                    h.control_bytes,
                    o.final_residual.map_or(String::new(), |r| format!("{r:e}")),
                )
            }
        }
    }
}

pub fn sweep_csv_header() -> &'static str {
    "workload,protocol,policy,eta,n,seed,completed,epochs,updates_to_detect,updates_total,\
     events,reductions,control_msgs,control_bytes,final_residual,oracle"
}

/// Run one cell: build the workload, run it, verify the history.
pub fn run_cell(cfg: &RunConfig) -> CellResult {
    let workload = match Workload::build(&cfg.workload) {
        Ok(w) => w,
        Err(e) => return CellResult { cfg: cfg.clone(), outcome: Err(e.into()), report: None },
    };
    match run_with_workload(cfg, &workload) {
        Err(e) => CellResult { cfg: cfg.clone(), outcome: Err(e), report: None },
        Ok(outcome) => {
            let report = verify_run(&outcome.history, &workload).ok();
            CellResult { cfg: cfg.clone(), outcome: Ok(outcome), report }
        }
    }
}

/// Run all cells, in parallel when the `parallel` feature is enabled.
/// Results come back in input order either way.
pub fn run_cells(cfgs: &[RunConfig]) -> Vec<CellResult> {
    #[cfg(feature = "parallel")]
    {
        cfgs.par_iter().map(run_cell).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_cells_seq(cfgs)
    }
}

/// Sequential driver, kept unconditionally for comparison benchmarks.
pub fn run_cells_seq(cfgs: &[RunConfig]) -> Vec<CellResult> {
    cfgs.iter().map(run_cell).collect()
}

/// Aggregate line for one group of cells sharing a configuration shape.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub key: String,
    pub runs: usize,
    pub completed: usize,
    pub oracle_ok: usize,
    pub mean_epochs: f64,
    pub mean_updates_to_detect: f64,
    pub min_residual: f64,
    pub max_residual: f64,
    pub mean_residual: f64,
}

impl CellSummary {
    pub fn line(&self) -> String {
        format!(
            "{}: runs={} completed={} oracle_ok={} epochs(mean)={:.2} updates(mean)={:.1} \
             residual[min={:e} mean={:e} max={:e}]",
            self.key,
            self.runs,
            self.completed,
            self.oracle_ok,
            self.mean_epochs,
            self.mean_updates_to_detect,
            self.min_residual,
            self.mean_residual,
            self.max_residual,
        )
    }
}

/// Group results by workload, protocol, policy, and staleness budget, in
/// first-seen order, and summarize each group.
pub fn summarize(cells: &[CellResult]) -> Vec<CellSummary> {
    let mut keys: Vec<String> = Vec::new();
    let mut groups: std::collections::BTreeMap<String, Vec<&CellResult>> =
        std::collections::BTreeMap::new();
    for c in cells {
        let eta = c.cfg.policy.eta().map_or(String::new(), |e| format!("/eta{e}"));
        let key = format!(
            "{}/{}/{}{eta}",
            c.cfg.workload.short_name(),
            c.cfg.protocol.name(),
            c.cfg.policy.name()
        );
        if !groups.contains_key(&key) {
            keys.push(key.clone());
        }
        groups.entry(key).or_default().push(c);
    }
    keys.into_iter()
        .map(|key| {
            let cells = &groups[&key];
            let runs = cells.len();
            let completed =
                cells.iter().filter(|c| c.outcome.as_ref().is_ok_and(|o| o.completed())).count();
            let oracle_ok = cells.iter().filter(|c| c.oracle_ok()).count();
            let epochs: Vec<f64> = cells
                .iter()
                .filter_map(|c| c.outcome.as_ref().ok())
                .map(|o| o.history.epochs.len() as f64)
                .collect();
            let updates: Vec<f64> = cells
                .iter()
                .filter_map(|c| c.outcome.as_ref().ok())
                .map(|o| o.updates_to_detect as f64)
                .collect();
            let residuals: Vec<f64> = cells
                .iter()
                .filter_map(|c| c.outcome.as_ref().ok())
                .filter_map(|o| o.final_residual)
                .collect();
            let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
            CellSummary {
                key,
                runs,
                completed,
                oracle_ok,
                mean_epochs: mean(&epochs),
                mean_updates_to_detect: mean(&updates),
                min_residual: residuals.iter().copied().fold(f64::INFINITY, f64::min),
                max_residual: residuals.iter().copied().fold(0.0, f64::max),
                mean_residual: mean(&residuals),
            }
        })
        .collect()
}
