//! Text round trip for runs.
//!
//! A log file is a header (magic line, the full configuration as one JSON
//! line, and a hash of that line), the event log verbatim, and a one-line
//! footer. Replaying re-executes the embedded configuration and diffs the
//! regenerated events line by line, so any divergence, truncation, or edit
//! is pinned to a specific line instead of surfacing as a vague mismatch.

use serde::{Deserialize, Serialize};

use super::{run, RunConfig, RunError, RunOutcome};

const MAGIC: &str = "#aisnap-log v1";

/// FNV-1a, enough to catch edits and configuration drift; this is an
/// integrity stamp, not a security boundary.
fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn config_json(cfg: &RunConfig) -> String {
    serde_json::to_string(cfg).expect("run configuration serializes")
}

/// Serialize a finished run: header, events, footer.
pub fn render_log(cfg: &RunConfig, outcome: &RunOutcome) -> String {
    let json = config_json(cfg);
    let h = &outcome.history;
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str("#config ");
    out.push_str(&json);
    out.push('\n');
    out.push_str(&format!("#hash {:016x}\n", fnv64(json.as_bytes())));
    for line in h.events.to_lines() {
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str(&format!(
        "#final events={} reductions={} epochs={} completed={}\n",
        h.events.len(),
        h.reduction_count,
        h.epochs.len(),
        h.completed
    ));
    out
}

/// First line where the stored log and the replayed run part ways.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayDivergence {
    /// 1-based line number in the log file.
    pub line: usize,
    pub logged: String,
    pub replayed: String,
}

#[derive(Debug)]
pub struct ReplayReport {
    pub outcome: RunOutcome,
    pub config: RunConfig,
    pub divergence: Option<ReplayDivergence>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.divergence.is_none()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("not a run log: {0}")]
    BadHeader(String),
    #[error("embedded configuration does not parse: {0}")]
    BadConfig(String),
    #[error(
        "configuration hash mismatch: log records {logged}, candidate hashes to {computed}; \
         refusing to replay under a different configuration"
    )]
    HashMismatch { logged: String, computed: String },
    #[error(transparent)]
    Run(#[from] RunError),
}

struct ParsedLog<'a> {
    config_line: &'a str,
    hash_line: &'a str,
    /// Event lines plus the footer, with their 1-based file line numbers.
    body: Vec<(usize, &'a str)>,
}

fn parse(text: &str) -> Result<ParsedLog<'_>, ReplayError> {
    let mut lines = text.lines().enumerate();
    let magic = lines.next().map(|(_, l)| l).unwrap_or("");
    if magic != MAGIC {
        return Err(ReplayError::BadHeader(format!("expected `{MAGIC}`, found `{magic}`")));
    }
    let config_line = match lines.next() {
        Some((_, l)) if l.starts_with("#config ") => &l["#config ".len()..],
        _ => return Err(ReplayError::BadHeader("missing #config line".into())),
    };
    let hash_line = match lines.next() {
        Some((_, l)) if l.starts_with("#hash ") => &l["#hash ".len()..],
        _ => return Err(ReplayError::BadHeader("missing #hash line".into())),
    };
    let body = lines.map(|(i, l)| (i + 1, l)).collect();
    Ok(ParsedLog { config_line, hash_line, body })
}

/// Replay the configuration embedded in the log and diff the events.
pub fn replay_log(text: &str) -> Result<ReplayReport, ReplayError> {
    let parsed = parse(text)?;
    let computed = format!("{:016x}", fnv64(parsed.config_line.as_bytes()));
    if computed != parsed.hash_line {
        return Err(ReplayError::HashMismatch {
            logged: parsed.hash_line.to_string(),
            computed,
        });
    }
    let cfg: RunConfig =
        serde_json::from_str(parsed.config_line).map_err(|e| ReplayError::BadConfig(e.to_string()))?;
    replay_parsed(parsed, cfg)
}

/// Replay under a caller-supplied configuration. Refused unless it hashes to
/// exactly what the log was produced with, so a log cannot silently be
/// "replayed" with, say, a different staleness budget.
pub fn replay_log_with(text: &str, cfg: &RunConfig) -> Result<ReplayReport, ReplayError> {
    let parsed = parse(text)?;
    let computed = format!("{:016x}", fnv64(config_json(cfg).as_bytes()));
    if computed != parsed.hash_line {
        return Err(ReplayError::HashMismatch {
            logged: parsed.hash_line.to_string(),
            computed,
        });
    }
    replay_parsed(parsed, cfg.clone())
}

fn replay_parsed(parsed: ParsedLog<'_>, cfg: RunConfig) -> Result<ReplayReport, ReplayError> {
    let outcome = run(&cfg)?;
    let h = &outcome.history;
    let mut replayed: Vec<String> = h.events.to_lines();
    replayed.push(format!(
        "#final events={} reductions={} epochs={} completed={}",
        h.events.len(),
        h.reduction_count,
        h.epochs.len(),
        h.completed
    ));
    let mut divergence = None;
    let end = "<end of log>";
    for k in 0..parsed.body.len().max(replayed.len()) {
        let logged = parsed.body.get(k).map(|&(_, l)| l);
        let fresh = replayed.get(k).map(String::as_str);
        if logged != fresh {
            let line = parsed.body.get(k).map(|&(ln, _)| ln).unwrap_or_else(|| {
                parsed.body.last().map(|&(ln, _)| ln + 1).unwrap_or(4)
            });
            divergence = Some(ReplayDivergence {
                line,
                logged: logged.unwrap_or(end).to_string(),
                replayed: fresh.unwrap_or(end).to_string(),
            });
            break;
        }
    }
    Ok(ReplayReport { outcome, config: cfg, divergence })
}
