//! Experiment file format and the small string grammars used inside it.
//!
//! An experiment is a TOML file with four sections: `[workload]` picks the
//! fixed-point system, `[matrix]` spans protocols x policies x seeds, `[run]`
//! holds everything a single cell needs, and `[output]` says where results
//! land. `cells()` expands the cross product into concrete run
//! configurations, rejecting protocol/transport pairs whose correctness
//! argument does not cover the requested channel behavior.

use serde::Deserialize;

use aisnap::engine::{IntervalDist, Schedule, ScheduleKind};
use aisnap::runner::{NormConfig, RunConfig, ThresholdPolicy};
use aisnap::simnet::{ChannelPolicy, LatencyDist};
use aisnap::workloads::{
    ConvDiffConfig, ConvectionScheme, SyntheticConfig, SparsityPattern, WorkloadConfig,
};
use aisnap::ProtocolKind;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub workload: WorkloadSection,
    pub matrix: MatrixSection,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WorkloadSection {
    /// Random affine contraction with exactly known contraction factor.
    Synthetic {
        n: usize,
        #[serde(default = "one")]
        block_dim: usize,
        alpha: f64,
        /// `dense` (default) or `ring:WIDTH`.
        #[serde(default)]
        pattern: Option<String>,
        seed: u64,
        #[serde(default = "one_f")]
        offset_scale: f64,
    },
    /// Backward-Euler convection-diffusion time stepper.
    Convdiff {
        dims: usize,
        grid_n: usize,
        blocks: usize,
        #[serde(default)]
        time_steps: Option<usize>,
        #[serde(default)]
        nu: Option<f64>,
        #[serde(default)]
        dt: Option<f64>,
        #[serde(default)]
        velocity: Option<[f64; 3]>,
        /// `upwind` (default) or `centered`.
        #[serde(default)]
        scheme: Option<String>,
    },
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    /// Protocol names: `cls`, `ais1`, `ais2`, `nfais1` .. `nfais5`.
    pub protocols: Vec<String>,
    /// Policy strings, see `parse_policy`.
    pub policies: Vec<String>,
    /// Explicit seed list; may be empty for a dry run.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Alternative to `seeds`: use `seed_base .. seed_base + seed_count`.
    #[serde(default)]
    pub seed_count: Option<u64>,
    #[serde(default)]
    pub seed_base: u64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ThresholdField {
    Named(String),
    Value(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Requested accuracy of the accepted point.
    pub eps_prime: f64,
    /// `l1`, `l2`, `lp:P`, `max`, or `max:W1,W2,...`.
    pub norm: String,
    /// `"auto"` (default) or a number used verbatim.
    #[serde(default)]
    pub threshold: Option<ThresholdField>,
    /// `round-robin`, `random:PROB`, `random:PROB:MAXSKIP`, or `scripted`.
    #[serde(default = "default_schedule")]
    pub schedule: String,
    /// Per-process activation times, required iff `schedule = "scripted"`.
    #[serde(default)]
    pub scripted_times: Option<Vec<Vec<u64>>>,
    /// Ticks between a process's consecutive slots: `T` or `LO..HI`.
    #[serde(default = "default_interval")]
    pub interval: String,
    /// Message latency in ticks: `T` or `LO..HI`.
    #[serde(default = "default_latency")]
    pub latency: String,
    #[serde(default)]
    pub control_priority: bool,
    #[serde(default)]
    pub max_updates: Option<u64>,
    #[serde(default)]
    pub max_events: Option<usize>,
    #[serde(default)]
    pub record_values: bool,
    #[serde(default)]
    pub cls_initiators: Option<Vec<usize>>,
    /// Run pairs outside the documented compatibility matrix anyway.
    #[serde(default)]
    pub allow_incompatible: bool,
}

fn default_schedule() -> String {
    "random:0.8".into()
}

fn default_interval() -> String {
    "1..3".into()
}

fn default_latency() -> String {
    "1..4".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Created if missing. Default `out`.
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_summary")]
    pub summary: String,
    /// Which cells get an event log and a report file: `failures` (default),
    /// `all`, or `none`.
    #[serde(default = "default_logs")]
    pub logs: String,
}

fn default_dir() -> String {
    "out".into()
}

fn default_csv() -> String {
    "results.csv".into()
}

fn default_summary() -> String {
    "summary.txt".into()
}

fn default_logs() -> String {
    "failures".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            csv: default_csv(),
            summary: default_summary(),
            logs: default_logs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogPolicy {
    All,
    Failures,
    None,
}

impl OutputSection {
    pub fn log_policy(&self) -> Result<LogPolicy, String> {
        match self.logs.as_str() {
            "all" => Ok(LogPolicy::All),
            "failures" => Ok(LogPolicy::Failures),
            "none" => Ok(LogPolicy::None),
            other => Err(format!("logs must be all, failures, or none, got `{other}`")),
        }
    }
}

pub fn parse_protocol(s: &str) -> Result<ProtocolKind, String> {
    ProtocolKind::parse(s).ok_or_else(|| {
        format!("unknown protocol `{s}`; expected cls, ais1, ais2, or nfais1 .. nfais5")
    })
}

/// `fifo` | `arbitrary[:HOLD]` | `bounded-cross:ETA[:HOLD]` | `typed-fifo[:HOLD]`.
pub fn parse_policy(s: &str) -> Result<ChannelPolicy, String> {
    let mut parts = s.split(':');
    let head = parts.next().unwrap_or("");
    let args: Vec<&str> = parts.collect();
    let num = |v: &str, what: &str| -> Result<u32, String> {
        v.parse::<u32>().map_err(|_| format!("bad {what} `{v}` in policy `{s}`"))
    };
    let policy = match (head, args.as_slice()) {
        ("fifo", []) => ChannelPolicy::Fifo,
        ("arbitrary", []) => ChannelPolicy::arbitrary(),
        ("arbitrary", [hold]) => ChannelPolicy::Arbitrary { max_hold: num(hold, "hold window")? },
        ("bounded-cross", [eta]) => ChannelPolicy::bounded_cross(num(eta, "crossing bound")?),
        ("bounded-cross", [eta, hold]) => ChannelPolicy::BoundedCross {
            eta: num(eta, "crossing bound")?,
            max_hold: num(hold, "hold window")?,
        },
        ("typed-fifo", []) => ChannelPolicy::typed_fifo(),
        ("typed-fifo", [hold]) => ChannelPolicy::TypedFifo { max_hold: num(hold, "hold window")? },
        _ => {
            return Err(format!(
                "unknown policy `{s}`; expected fifo, arbitrary[:HOLD], \
                 bounded-cross:ETA[:HOLD], or typed-fifo[:HOLD]"
            ))
        }
    };
    Ok(policy)
}

/// `l1` | `l2` | `lp:P` | `max` | `max:W1,W2,...`.
pub fn parse_norm(s: &str) -> Result<NormConfig, String> {
    match s {
        "l1" => return Ok(NormConfig::Lp { p: 1.0 }),
        "l2" => return Ok(NormConfig::Lp { p: 2.0 }),
        "max" => return Ok(NormConfig::Max),
        _ => {}
    }
    if let Some(p) = s.strip_prefix("lp:") {
        let p: f64 = p.parse().map_err(|_| format!("bad exponent in norm `{s}`"))?;
        return Ok(NormConfig::Lp { p });
    }
    if let Some(ws) = s.strip_prefix("max:") {
        let weights = ws
            .split(',')
            .map(|w| w.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|_| format!("bad weight list in norm `{s}`"))?;
        return Ok(NormConfig::Weighted { weights });
    }
    Err(format!("unknown norm `{s}`; expected l1, l2, lp:P, max, or max:W1,W2,..."))
}

/// `T` | `LO..HI`, both ends at least 1, inclusive.
fn parse_span(s: &str, what: &str) -> Result<(u64, u64), String> {
    let bad = || format!("bad {what} `{s}`; expected T or LO..HI");
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.parse().map_err(|_| bad())?;
        let hi: u64 = hi.parse().map_err(|_| bad())?;
        Ok((lo, hi))
    } else {
        let t: u64 = s.parse().map_err(|_| bad())?;
        Ok((t, t))
    }
}

pub fn parse_interval(s: &str) -> Result<IntervalDist, String> {
    let (lo, hi) = parse_span(s, "interval")?;
    Ok(if lo == hi { IntervalDist::Fixed(lo) } else { IntervalDist::Uniform { lo, hi } })
}

pub fn parse_latency(s: &str) -> Result<LatencyDist, String> {
    let (lo, hi) = parse_span(s, "latency")?;
    Ok(if lo == hi { LatencyDist::Fixed(lo) } else { LatencyDist::Uniform { lo, hi } })
}

pub fn parse_schedule(
    s: &str,
    scripted_times: Option<&Vec<Vec<u64>>>,
    interval: IntervalDist,
) -> Result<Schedule, String> {
    let kind = if s == "round-robin" {
        ScheduleKind::RoundRobin
    } else if s == "scripted" {
        let times = scripted_times
            .ok_or("schedule `scripted` needs a scripted_times table".to_string())?;
        ScheduleKind::Scripted { times: times.clone() }
    } else if let Some(rest) = s.strip_prefix("random:") {
        let (prob, max_skip) = match rest.split_once(':') {
            Some((p, k)) => (
                p.parse::<f64>().map_err(|_| format!("bad probability in schedule `{s}`"))?,
                k.parse::<u32>().map_err(|_| format!("bad skip cap in schedule `{s}`"))?,
            ),
            None => (
                rest.parse::<f64>().map_err(|_| format!("bad probability in schedule `{s}`"))?,
                4,
            ),
        };
        ScheduleKind::RandomSubset { prob, max_skip }
    } else {
        return Err(format!(
            "unknown schedule `{s}`; expected round-robin, random:PROB[:MAXSKIP], or scripted"
        ));
    };
    Ok(Schedule { kind, interval })
}

fn parse_pattern(s: Option<&String>) -> Result<SparsityPattern, String> {
    match s.map(String::as_str) {
        None | Some("dense") => Ok(SparsityPattern::Dense),
        Some(other) => {
            if let Some(w) = other.strip_prefix("ring:") {
                let width =
                    w.parse::<usize>().map_err(|_| format!("bad ring width in `{other}`"))?;
                Ok(SparsityPattern::Ring { width })
            } else {
                Err(format!("unknown pattern `{other}`; expected dense or ring:WIDTH"))
            }
        }
    }
}

fn parse_scheme(s: Option<&String>) -> Result<ConvectionScheme, String> {
    match s.map(String::as_str) {
        None | Some("upwind") => Ok(ConvectionScheme::Upwind),
        Some("centered") => Ok(ConvectionScheme::Centered),
        Some(other) => Err(format!("unknown convection scheme `{other}`")),
    }
}

impl WorkloadSection {
    pub fn to_workload_config(&self) -> Result<WorkloadConfig, String> {
        match self {
            WorkloadSection::Synthetic { n, block_dim, alpha, pattern, seed, offset_scale } => {
                Ok(WorkloadConfig::Synthetic(SyntheticConfig {
                    n: *n,
                    block_dim: *block_dim,
                    alpha: *alpha,
                    pattern: parse_pattern(pattern.as_ref())?,
                    seed: *seed,
                    offset_scale: *offset_scale,
                }))
            }
            WorkloadSection::Convdiff {
                dims,
                grid_n,
                blocks,
                time_steps,
                nu,
                dt,
                velocity,
                scheme,
            } => {
                let mut cfg = ConvDiffConfig::standard(*dims, *grid_n, *blocks);
                if let Some(t) = time_steps {
                    cfg.time_steps = *t;
                }
                if let Some(v) = nu {
                    cfg.nu = *v;
                }
                if let Some(v) = dt {
                    cfg.dt = *v;
                }
                if let Some(v) = velocity {
                    cfg.velocity = *v;
                }
                cfg.convection = parse_scheme(scheme.as_ref())?;
                Ok(WorkloadConfig::ConvDiff(cfg))
            }
        }
    }
}

impl MatrixSection {
    pub fn seed_list(&self) -> Result<Vec<u64>, String> {
        match (&self.seeds, self.seed_count) {
            (Some(_), Some(_)) => Err("give either seeds or seed_count, not both".into()),
            (Some(list), None) => Ok(list.clone()),
            (None, Some(count)) => Ok((self.seed_base..self.seed_base + count).collect()),
            (None, None) => Err("matrix needs a seeds list or a seed_count".into()),
        }
    }
}

impl ExperimentConfig {
    /// Expand the matrix into one run configuration per cell, in
    /// protocol-major, policy-minor, seed-last order.
    pub fn cells(&self) -> Result<Vec<RunConfig>, String> {
        let workload = self.workload.to_workload_config()?;
        let protocols = self
            .matrix
            .protocols
            .iter()
            .map(|s| parse_protocol(s))
            .collect::<Result<Vec<_>, _>>()?;
        let policies = self
            .matrix
            .policies
            .iter()
            .map(|s| parse_policy(s))
            .collect::<Result<Vec<_>, _>>()?;
        let seeds = self.matrix.seed_list()?;
        let norm = parse_norm(&self.run.norm)?;
        let interval = parse_interval(&self.run.interval)?;
        let latency = parse_latency(&self.run.latency)?;
        let schedule =
            parse_schedule(&self.run.schedule, self.run.scripted_times.as_ref(), interval)?;
        let threshold = match &self.run.threshold {
            None => ThresholdPolicy::Auto,
            Some(ThresholdField::Named(s)) if s == "auto" => ThresholdPolicy::Auto,
            Some(ThresholdField::Named(s)) => {
                return Err(format!("threshold must be `auto` or a number, got `{s}`"))
            }
            Some(ThresholdField::Value(v)) => ThresholdPolicy::Fixed { value: *v },
        };

        if !self.run.allow_incompatible {
            for &protocol in &protocols {
                for &policy in &policies {
                    protocol.check_compatibility(&policy, self.run.control_priority).map_err(
                        |why| {
                            format!(
                                "{} under {} violates its correctness argument: {why} \
                                 (set allow_incompatible to force the pair)",
                                protocol.name(),
                                policy.name()
                            )
                        },
                    )?;
                }
            }
        }

        let mut cells = Vec::with_capacity(protocols.len() * policies.len() * seeds.len());
        for &protocol in &protocols {
            for &policy in &policies {
                for &seed in &seeds {
                    cells.push(RunConfig {
                        workload: workload.clone(),
                        protocol,
                        policy,
                        control_priority: self.run.control_priority,
                        schedule: schedule.clone(),
                        latency: latency.clone(),
                        eps_prime: self.run.eps_prime,
                        norm: norm.clone(),
                        threshold,
                        seed,
                        max_updates_per_process: self.run.max_updates.unwrap_or(50_000),
                        max_events: self.run.max_events.unwrap_or(5_000_000),
                        record_values: self.run.record_values,
                        cls_initiators: self.run.cls_initiators.clone().unwrap_or_default(),
                        allow_incompatible: self.run.allow_incompatible,
                    });
                }
            }
        }
        Ok(cells)
    }
}

/// Seed override grammar for the command line: `N` (count from 0),
/// `LO..HI` (half-open), or a comma list.
pub fn parse_seed_override(s: &str) -> Result<Vec<u64>, String> {
    let bad = || format!("bad seed spec `{s}`; expected COUNT, LO..HI, or A,B,C");
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.parse().map_err(|_| bad())?;
        let hi: u64 = hi.parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..hi).collect());
    }
    if s.contains(',') {
        return s.split(',').map(|v| v.trim().parse::<u64>().map_err(|_| bad())).collect();
    }
    let count: u64 = s.parse().map_err(|_| bad())?;
    Ok((0..count).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(matrix_extra: &str, run_extra: &str) -> String {
        format!(
            r#"
[workload]
kind = "synthetic"
n = 4
alpha = 0.5
seed = 1

[matrix]
protocols = ["nfais2"]
policies = ["fifo"]
{matrix_extra}

[run]
eps_prime = 1e-6
norm = "l2"
{run_extra}
"#
        )
    }

    #[test]
    fn policy_grammar_round_trips() {
        assert_eq!(parse_policy("fifo").unwrap(), ChannelPolicy::Fifo);
        assert_eq!(parse_policy("arbitrary").unwrap(), ChannelPolicy::arbitrary());
        assert_eq!(
            parse_policy("arbitrary:16").unwrap(),
            ChannelPolicy::Arbitrary { max_hold: 16 }
        );
        assert_eq!(parse_policy("bounded-cross:2").unwrap(), ChannelPolicy::bounded_cross(2));
        assert_eq!(
            parse_policy("bounded-cross:2:8").unwrap(),
            ChannelPolicy::BoundedCross { eta: 2, max_hold: 8 }
        );
        assert_eq!(parse_policy("typed-fifo").unwrap(), ChannelPolicy::typed_fifo());
        assert!(parse_policy("bounded-cross").unwrap_err().contains("unknown policy"));
        assert!(parse_policy("fifo:1").unwrap_err().contains("unknown policy"));
    }

    #[test]
    fn norm_grammar_round_trips() {
        assert_eq!(parse_norm("l1").unwrap(), NormConfig::Lp { p: 1.0 });
        assert_eq!(parse_norm("l2").unwrap(), NormConfig::Lp { p: 2.0 });
        assert_eq!(parse_norm("lp:3.5").unwrap(), NormConfig::Lp { p: 3.5 });
        assert_eq!(parse_norm("max").unwrap(), NormConfig::Max);
        assert_eq!(
            parse_norm("max:1,2,0.5").unwrap(),
            NormConfig::Weighted { weights: vec![1.0, 2.0, 0.5] }
        );
        assert!(parse_norm("l3").is_err());
    }

    #[test]
    fn schedule_and_span_grammar() {
        assert_eq!(parse_interval("2").unwrap(), IntervalDist::Fixed(2));
        assert_eq!(parse_interval("1..3").unwrap(), IntervalDist::Uniform { lo: 1, hi: 3 });
        assert_eq!(parse_latency("4").unwrap(), LatencyDist::Fixed(4));
        let s = parse_schedule("random:0.7:6", None, IntervalDist::Fixed(1)).unwrap();
        assert_eq!(s.kind, ScheduleKind::RandomSubset { prob: 0.7, max_skip: 6 });
        let s = parse_schedule("random:0.7", None, IntervalDist::Fixed(1)).unwrap();
        assert_eq!(s.kind, ScheduleKind::RandomSubset { prob: 0.7, max_skip: 4 });
        assert!(parse_schedule("scripted", None, IntervalDist::Fixed(1)).is_err());
        let times = vec![vec![1, 2], vec![3]];
        let s = parse_schedule("scripted", Some(&times), IntervalDist::Fixed(1)).unwrap();
        assert_eq!(s.kind, ScheduleKind::Scripted { times });
    }

    #[test]
    fn matrix_expansion_is_protocol_major() {
        let text = minimal("seeds = [7, 8]", "");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let cells = cfg.cells().unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].seed, 7);
        assert_eq!(cells[1].seed, 8);
        assert_eq!(cells[0].protocol, ProtocolKind::Nfais2);
        assert_eq!(cells[0].threshold, ThresholdPolicy::Auto);
    }

    #[test]
    fn seed_count_and_empty_lists() {
        let text = minimal("seed_count = 3\nseed_base = 10", "");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let seeds: Vec<u64> = cfg.cells().unwrap().iter().map(|c| c.seed).collect();
        assert_eq!(seeds, vec![10, 11, 12]);

        let text = minimal("seeds = []", "");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.cells().unwrap().is_empty());

        let text = minimal("", "");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.cells().unwrap_err().contains("seeds"));
    }

    #[test]
    fn incompatible_pairs_are_named() {
        let text = minimal("seeds = [1]", "").replace("\"nfais2\"", "\"ais1\"").replace(
            "policies = [\"fifo\"]",
            "policies = [\"arbitrary\"]",
        );
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let err = cfg.cells().unwrap_err();
        assert!(err.contains("ais1 under arbitrary"), "{err}");
        assert!(err.contains("allow_incompatible"), "{err}");

        let text = text.replace("[run]", "[run]\nallow_incompatible = true");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.cells().unwrap().len(), 1);
    }

    #[test]
    fn threshold_field_accepts_auto_or_number() {
        let text = minimal("seeds = [1]", "threshold = \"auto\"");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.cells().unwrap()[0].threshold, ThresholdPolicy::Auto);

        let text = minimal("seeds = [1]", "threshold = 3e-7");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.cells().unwrap()[0].threshold, ThresholdPolicy::Fixed { value: 3e-7 });

        let text = minimal("seeds = [1]", "threshold = \"tight\"");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.cells().unwrap_err().contains("threshold"));
    }

    #[test]
    fn seed_override_grammar() {
        assert_eq!(parse_seed_override("3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seed_override("5..8").unwrap(), vec![5, 6, 7]);
        assert_eq!(parse_seed_override("4,9,2").unwrap(), vec![4, 9, 2]);
        assert!(parse_seed_override("x").is_err());
    }
}
