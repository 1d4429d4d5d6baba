//! Offline verifier for finished runs.
//!
//! Every guarantee the protocols advertise is re-derived here from the
//! recorded [`RunHistory`] and the workload, through an arithmetic path that
//! shares nothing with the live decision code: maps are densified and applied
//! row by row, norms and sensitivity coefficients are recomputed from
//! scratch, and transport ordering is replayed from the raw event log. A
//! report is a pure function of its inputs, so it can be regenerated at any
//! time and compared bitwise.

mod checks;
mod history;

pub use history::{
    extract_delays, DelayRow, DelayTable, EpochRecord, RunHistory, StepRecord, UpdateRecord,
};

use crate::math::MathError;
use crate::workloads::Workload;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// The claim behind the check does not apply to this protocol, policy,
    /// or norm; the detail says why.
    Skipped,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skipped => "SKIP",
        }
    }
}

/// Outcome of one check. `measured` and `bound` carry the decisive quantity
/// where one exists (a worst-case gap, a violation count); `margin` is
/// `bound - measured` when both are present.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub verdict: Verdict,
    pub measured: Option<f64>,
    pub bound: Option<f64>,
    pub margin: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn skipped(name: &'static str, why: &str) -> Self {
        CheckResult {
            name,
            verdict: Verdict::Skipped,
            measured: None,
            bound: None,
            margin: None,
            detail: why.to_string(),
        }
    }

    /// Counting check: passes iff `violations == 0`.
    fn counted(name: &'static str, violations: u64, detail: String) -> Self {
        CheckResult {
            name,
            verdict: if violations == 0 { Verdict::Pass } else { Verdict::Fail },
            measured: Some(violations as f64),
            bound: Some(0.0),
            margin: None,
            detail,
        }
    }

    /// Bounded check: passes iff `measured` stayed within `bound` (the caller
    /// decides strictness and passes the verdict in).
    fn bounded(name: &'static str, ok: bool, measured: f64, bound: f64, detail: String) -> Self {
        CheckResult {
            name,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            measured: Some(measured),
            bound: Some(bound),
            margin: Some(bound - measured),
            detail,
        }
    }

    pub fn line(&self) -> String {
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:e}"));
        let mut s = format!(
            "{} {} measured={} bound={} margin={}",
            self.name,
            self.verdict.as_str(),
            num(self.measured),
            num(self.bound),
            num(self.margin),
        );
        if !self.detail.is_empty() {
            s.push_str("  ");
            s.push_str(&self.detail);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| c.verdict == Verdict::Fail)
            .map(|c| c.name)
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One check per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&c.line());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:e}"));
        let mut out = String::from("check,verdict,measured,bound,margin,detail\n");
        for c in &self.checks {
            let detail = c.detail.replace(',', ";");
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.name,
                c.verdict.as_str(),
                num(c.measured),
                num(c.bound),
                num(c.margin),
                detail
            ));
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    /// The history is structurally inconsistent with the workload; no check
    /// can be interpreted.
    #[error("history does not fit the workload: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Math(#[from] MathError),
}

/// Run every check against a finished run.
///
/// `workload` must be the workload the run executed (same configuration,
/// hence bitwise-identical maps); the step starting points recorded in the
/// history reproduce the per-step maps.
pub fn verify_run(h: &RunHistory, workload: &Workload) -> Result<VerificationReport, OracleError> {
    let ctx = checks::RunContext::build(h, workload)?;
    let checks = vec![
        checks::snapshot_equality(h),
        checks::residual_gap(h, &ctx),
        checks::evaluation_agreement(h, &ctx),
        checks::threshold_guarantee(h, &ctx),
        checks::delivery_order(h),
        checks::delay_causality(h),
        checks::cut_consistency(h),
        checks::steady_counter(h),
        checks::control_traffic(h),
        checks::single_reduction(h),
    ];
    Ok(VerificationReport { checks })
}
