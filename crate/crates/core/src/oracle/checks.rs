//! The individual verification passes.
//!
//! Everything here is recomputed from first principles: per-step maps are
//! densified and applied row by row with the stored zeros included, norms and
//! sensitivity coefficients come from local loops, and transport ordering is
//! replayed from the raw event log. None of it calls into the code that made
//! the live decisions, so agreement between the two paths is evidence, not
//! tautology.

use std::collections::BTreeMap;

use super::history::{EpochRecord, RunHistory};
use super::{CheckResult, OracleError, Verdict};
use crate::math::{BlockStructure, LinearMap, NormSpec};
use crate::protocols::Decision;
use crate::simnet::{ChannelPolicy, EventType, KindTag};
use crate::workloads::Workload;

/// Relative slack for comparisons that only guard against formula mixups,
/// not rounding: a genuine violation overshoots by orders of magnitude.
const CONFIG_SLACK: f64 = 1e-12;

/// Agreement tolerance between the dense recomputation and the recorded
/// reduced residual, as a fraction of the iterate scale. Both paths sum a
/// handful of products, so honest disagreement sits near machine epsilon.
const AGREEMENT_TOL: f64 = 1e-12;

/// Densified snapshot of one outer step's map.
pub(super) struct StepCtx {
    rows: Vec<Vec<f64>>,
    offset: Vec<f64>,
    /// Blockwise aggregate sensitivity, recounted from the dense rows.
    delta_f: f64,
}

impl StepCtx {
    fn build(map: &LinearMap, st: &BlockStructure) -> StepCtx {
        let dim = st.total_dim();
        let mut rows = vec![vec![0.0f64; dim]; dim];
        for (r, c, v) in map.matrix().to_triplets() {
            rows[r][c] += v;
        }
        let offset = map.offset().flatten();
        let delta_f = sensitivity(&rows, st);
        StepCtx { rows, offset, delta_f }
    }

    /// `f(x)`, every row a full-length dot product.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.offset)
            .map(|(row, c)| row.iter().zip(x).map(|(a, xv)| a * xv).sum::<f64>() + c)
            .collect()
    }

    /// Rows of block `i` only.
    fn apply_block(&self, i: usize, x: &[f64], st: &BlockStructure) -> Vec<f64> {
        let off = st.offset(i);
        (off..off + st.dim(i))
            .map(|r| self.rows[r].iter().zip(x).map(|(a, xv)| a * xv).sum::<f64>() + self.offset[r])
            .collect()
    }
}

/// `max_i sum_j max_{r in block i} sum_{c in block j} |a[r][c]|`, the same
/// quantity the library exposes as the aggregate sensitivity, recounted from
/// dense rows.
fn sensitivity(rows: &[Vec<f64>], st: &BlockStructure) -> f64 {
    let n = st.num_blocks();
    let mut worst = 0.0f64;
    for i in 0..n {
        let ro = st.offset(i);
        let mut total = 0.0f64;
        for j in 0..n {
            let co = st.offset(j);
            let mut peak = 0.0f64;
            for r in 0..st.dim(i) {
                let s: f64 = rows[ro + r][co..co + st.dim(j)].iter().map(|v| v.abs()).sum();
                peak = peak.max(s);
            }
            total += peak;
        }
        worst = worst.max(total);
    }
    worst
}

/// Per-block max-abs peaks of a flat vector.
fn block_peaks(v: &[f64], st: &BlockStructure) -> Vec<f64> {
    (0..st.num_blocks())
        .map(|i| {
            let off = st.offset(i);
            v[off..off + st.dim(i)].iter().fold(0.0f64, |m, &x| m.max(x.abs()))
        })
        .collect()
}

/// Combine per-block peaks under the run's norm.
fn combine(peaks: &[f64], spec: &NormSpec) -> f64 {
    match spec {
        NormSpec::Lp(p) => peaks.iter().map(|c| c.powf(*p)).sum::<f64>().powf(1.0 / *p),
        NormSpec::MaxWeighted(w) => {
            peaks.iter().zip(w).fold(0.0f64, |m, (c, wi)| m.max(c / wi))
        }
    }
}

pub(super) struct RunContext {
    st: BlockStructure,
    steps: Vec<StepCtx>,
}

impl RunContext {
    pub(super) fn build(h: &RunHistory, workload: &Workload) -> Result<RunContext, OracleError> {
        let st = workload.structure().clone();
        if st.num_blocks() != h.n {
            return Err(OracleError::Mismatch(format!(
                "workload has {} blocks, history claims {}",
                st.num_blocks(),
                h.n
            )));
        }
        h.norm.validate(h.n)?;
        if h.steps.is_empty() {
            return Err(OracleError::Mismatch("history records no steps".into()));
        }
        for (k, s) in h.steps.iter().enumerate() {
            if s.step != k {
                return Err(OracleError::Mismatch(format!(
                    "step records out of order: position {k} holds step {}",
                    s.step
                )));
            }
            if !s.start.matches(&st) {
                return Err(OracleError::Mismatch(format!(
                    "step {k} starting point does not match the workload structure"
                )));
            }
        }
        if let Some(ep) = h.epochs.iter().find(|ep| ep.step >= h.steps.len()) {
            return Err(OracleError::Mismatch(format!(
                "epoch {} ran under unrecorded step {}",
                ep.epoch, ep.step
            )));
        }
        let steps = h
            .steps
            .iter()
            .map(|s| StepCtx::build(&workload.map_for_step(&s.start), &st))
            .collect();
        Ok(RunContext { st, steps })
    }
}

/// Flatten an epoch into the test point and the per-process recorded views.
/// Unrecorded blocks are zero-filled; a sound protocol records every block
/// its owner's map row actually reads, so a zero leaking into the residual
/// recomputation shows up as a disagreement, which is what we want.
fn assemble(ep: &EpochRecord, st: &BlockStructure, n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>), String> {
    if ep.results.len() != n {
        return Err(format!("epoch {}: {} results for {n} processes", ep.epoch, ep.results.len()));
    }
    let dim = st.total_dim();
    let mut xbar = vec![0.0f64; dim];
    for i in 0..n {
        let own = ep.results[i]
            .entries
            .get(i)
            .and_then(|e| e.as_ref())
            .ok_or_else(|| format!("epoch {}: process {i} result lacks its own block", ep.epoch))?;
        if own.len() != st.dim(i) {
            return Err(format!("epoch {}: process {i} own block has dimension {}", ep.epoch, own.len()));
        }
        xbar[st.offset(i)..st.offset(i) + st.dim(i)].copy_from_slice(own);
    }
    let mut views = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = vec![0.0f64; dim];
        for (j, e) in ep.results[i].entries.iter().enumerate() {
            if let Some(val) = e {
                if val.len() != st.dim(j) {
                    return Err(format!(
                        "epoch {}: process {i} recorded block {j} with dimension {}",
                        ep.epoch,
                        val.len()
                    ));
                }
                v[st.offset(j)..st.offset(j) + st.dim(j)].copy_from_slice(val);
            }
        }
        views.push(v);
    }
    Ok((xbar, views))
}

fn structural_fail(name: &'static str, why: String) -> CheckResult {
    CheckResult {
        name,
        verdict: Verdict::Fail,
        measured: None,
        bound: None,
        margin: None,
        detail: why,
    }
}

/// Where the protocol promises that recorded entries are copies of the
/// owner's recorded block, compare them bit for bit.
pub(super) fn snapshot_equality(h: &RunHistory) -> CheckResult {
    const NAME: &str = "snapshot-equality";
    if !h.protocol.expects_bitwise_entries(&h.policy) {
        return CheckResult::skipped(NAME, "entries are receiver-side views under this protocol and policy");
    }
    if h.epochs.is_empty() {
        return CheckResult::skipped(NAME, "no completed epochs");
    }
    let mut compared = 0u64;
    let mut mismatches = 0u64;
    let mut first = String::new();
    for ep in &h.epochs {
        for (i, res) in ep.results.iter().enumerate() {
            for (j, entry) in res.entries.iter().enumerate() {
                if i == j {
                    continue;
                }
                let Some(copy) = entry else { continue };
                let owner = ep.results.get(j).and_then(|r| r.entries.get(j)).and_then(|e| e.as_ref());
                let equal = owner.is_some_and(|own| {
                    own.len() == copy.len()
                        && own.iter().zip(copy).all(|(a, b)| a.to_bits() == b.to_bits())
                });
                compared += 1;
                if !equal {
                    mismatches += 1;
                    if first.is_empty() {
                        first = format!("epoch {}: process {i} holds a stale copy of block {j}", ep.epoch);
                    }
                }
            }
        }
    }
    let detail = if first.is_empty() { format!("{compared} copies compared") } else { first };
    CheckResult::counted(NAME, mismatches, detail)
}

/// For overtaking protocols under a p-norm: the exact residual of the test
/// point may exceed the reduced residual of the recorded views by at most
/// `n^(1/p) * eta * delta_f * eps`. With `eta = 0` the two coincide bitwise,
/// so the gap must be zero to the last ulp.
pub(super) fn residual_gap(h: &RunHistory, ctx: &RunContext) -> CheckResult {
    const NAME: &str = "residual-gap";
    if !h.protocol.uses_gap_bound() {
        return CheckResult::skipped(NAME, "protocol promises bitwise copies; see snapshot-equality");
    }
    let NormSpec::Lp(p) = h.norm else {
        return CheckResult::skipped(NAME, "staleness bound is stated for the p-norm family");
    };
    if h.epochs.is_empty() {
        return CheckResult::skipped(NAME, "no completed epochs");
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_epoch = 0u32;
    let mut delta_f = 0.0f64;
    for ep in &h.epochs {
        let step = &ctx.steps[ep.step];
        delta_f = delta_f.max(step.delta_f);
        let (xbar, views) = match assemble(ep, &ctx.st, h.n) {
            Ok(v) => v,
            Err(why) => return structural_fail(NAME, why),
        };
        let fx = step.apply(&xbar);
        let exact_peaks: Vec<f64> = {
            let diff: Vec<f64> = fx.iter().zip(&xbar).map(|(a, b)| a - b).collect();
            block_peaks(&diff, &ctx.st)
        };
        let mut recorded_peaks = Vec::with_capacity(h.n);
        for i in 0..h.n {
            let gi = step.apply_block(i, &views[i], &ctx.st);
            let off = ctx.st.offset(i);
            let peak = gi
                .iter()
                .zip(&xbar[off..off + ctx.st.dim(i)])
                .fold(0.0f64, |m, (g, x)| m.max((g - x).abs()));
            recorded_peaks.push(peak);
        }
        let exact = combine(&exact_peaks, &h.norm);
        let recorded = combine(&recorded_peaks, &h.norm);
        let gap = if h.eta == 0 { (exact - recorded).abs() } else { exact - recorded };
        if gap > worst {
            worst = gap;
            worst_epoch = ep.epoch;
        }
    }
    let bound = if h.eta == 0 {
        // bitwise-equal inputs leave no room beyond one ulp of zero
        f64::from_bits(1)
    } else {
        (h.n as f64).powf(1.0 / p) * f64::from(h.eta) * delta_f * h.eps_local
    };
    let ok = if h.eta == 0 { worst <= bound } else { worst < bound };
    let detail = format!(
        "worst gap at epoch {worst_epoch} over {} epochs, eta={}, sensitivity={delta_f:e}",
        h.epochs.len(),
        h.eta
    );
    CheckResult::bounded(NAME, ok, worst, bound, detail)
}

/// The reduced residual each decision used must agree with a dense
/// recomputation from the recorded views, and the decision must follow from
/// the strict comparison against the configured threshold.
pub(super) fn evaluation_agreement(h: &RunHistory, ctx: &RunContext) -> CheckResult {
    const NAME: &str = "evaluation-agreement";
    if h.epochs.is_empty() {
        return CheckResult::skipped(NAME, "no completed epochs");
    }
    let mut worst = 0.0f64;
    let mut violations = 0u64;
    let mut first = String::new();
    for (k, ep) in h.epochs.iter().enumerate() {
        let mut note = |why: String, first: &mut String| {
            violations += 1;
            if first.is_empty() {
                *first = why;
            }
        };
        if ep.epoch != k as u32 {
            note(format!("position {k} holds epoch {}", ep.epoch), &mut first);
            continue;
        }
        if ep.evaluation.threshold.to_bits() != h.threshold.to_bits() {
            note(format!("epoch {}: decision used threshold {:e}", ep.epoch, ep.evaluation.threshold), &mut first);
        }
        let converged = ep.evaluation.reduced < ep.evaluation.threshold;
        if converged != (ep.evaluation.decision == Decision::Converged) {
            note(format!("epoch {}: decision contradicts the comparison", ep.epoch), &mut first);
        }
        let (xbar, views) = match assemble(ep, &ctx.st, h.n) {
            Ok(v) => v,
            Err(why) => return structural_fail(NAME, why),
        };
        let step = &ctx.steps[ep.step];
        let mut peaks = Vec::with_capacity(h.n);
        for i in 0..h.n {
            let gi = step.apply_block(i, &views[i], &ctx.st);
            let off = ctx.st.offset(i);
            let peak = gi
                .iter()
                .zip(&xbar[off..off + ctx.st.dim(i)])
                .fold(0.0f64, |m, (g, x)| m.max((g - x).abs()));
            peaks.push(peak);
        }
        let recomputed = combine(&peaks, &h.norm);
        let scale = block_peaks(&xbar, &ctx.st).iter().fold(1.0f64, |m, &v| m.max(v));
        let diff = (recomputed - ep.evaluation.reduced).abs() / scale;
        worst = worst.max(diff);
        if diff > AGREEMENT_TOL {
            note(
                format!(
                    "epoch {}: recorded residual {:e}, dense recomputation {recomputed:e}",
                    ep.epoch, ep.evaluation.reduced
                ),
                &mut first,
            );
        }
    }
    let ok = violations == 0;
    let detail = if first.is_empty() { format!("{} epochs audited", h.epochs.len()) } else { first };
    CheckResult {
        name: NAME,
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        measured: Some(worst),
        bound: Some(AGREEMENT_TOL),
        margin: Some(AGREEMENT_TOL - worst),
        detail,
    }
}

/// Where a termination guarantee exists, every converged decision must be
/// backed by an exact residual below the requested accuracy, and the
/// configured thresholds must actually imply that guarantee.
pub(super) fn threshold_guarantee(h: &RunHistory, ctx: &RunContext) -> CheckResult {
    const NAME: &str = "threshold-guarantee";
    let mut config_issue = String::new();
    if h.protocol.expects_bitwise_entries(&h.policy) {
        if h.threshold > h.eps_prime * (1.0 + CONFIG_SLACK) {
            config_issue = format!(
                "decision threshold {:e} exceeds the requested accuracy {:e}",
                h.threshold, h.eps_prime
            );
        }
    } else if h.protocol.uses_gap_bound() {
        match &h.norm {
            NormSpec::MaxWeighted(w) => {
                // recorded entries may lag their owners by eta steady
                // updates, each bounded by eps_local; the weighted-max norm
                // transfers that slack with a factor of min_i w_i
                let min_w = w.iter().copied().fold(f64::INFINITY, f64::min);
                let implied = h.threshold + f64::from(h.eta) * h.eps_local * min_w;
                if implied > h.eps_prime * (1.0 + CONFIG_SLACK) {
                    config_issue = format!(
                        "threshold {:e} plus staleness slack {:e} overshoots the requested accuracy {:e}",
                        h.threshold,
                        f64::from(h.eta) * h.eps_local * min_w,
                        h.eps_prime
                    );
                }
            }
            NormSpec::Lp(_) => {
                return CheckResult::skipped(
                    NAME,
                    "no termination guarantee under a p-norm with overtaking; see residual-gap",
                )
            }
        }
    } else {
        return CheckResult::skipped(NAME, "recorded views carry no accuracy guarantee");
    }
    let mut worst = 0.0f64;
    let mut premature = 0u64;
    let mut audited = 0u64;
    let mut first = String::new();
    for ep in h.epochs.iter().filter(|ep| ep.evaluation.decision == Decision::Converged) {
        let (xbar, _) = match assemble(ep, &ctx.st, h.n) {
            Ok(v) => v,
            Err(why) => return structural_fail(NAME, why),
        };
        let step = &ctx.steps[ep.step];
        let fx = step.apply(&xbar);
        let diff: Vec<f64> = fx.iter().zip(&xbar).map(|(a, b)| a - b).collect();
        let exact = combine(&block_peaks(&diff, &ctx.st), &h.norm);
        audited += 1;
        worst = worst.max(exact);
        if exact >= h.eps_prime {
            premature += 1;
            if first.is_empty() {
                first = format!("epoch {}: accepted point has exact residual {exact:e}", ep.epoch);
            }
        }
    }
    let ok = premature == 0 && config_issue.is_empty();
    let detail = if !config_issue.is_empty() {
        config_issue
    } else if !first.is_empty() {
        first
    } else {
        format!("{audited} converged decisions audited")
    };
    CheckResult::bounded(NAME, ok, worst, h.eps_prime, detail)
}

struct ChannelTrace {
    /// seq -> (log index, kind), in send order.
    sends: BTreeMap<u64, (usize, KindTag)>,
    /// (log index, seq, kind), in delivery order.
    delivers: Vec<(usize, u64, KindTag)>,
}

fn channel_traces(h: &RunHistory) -> BTreeMap<(usize, usize), ChannelTrace> {
    let mut chans: BTreeMap<(usize, usize), ChannelTrace> = BTreeMap::new();
    for (idx, r) in h.events.records().iter().enumerate() {
        let (Some(src), Some(dst)) = (r.src, r.dst) else { continue };
        let entry = || ChannelTrace { sends: BTreeMap::new(), delivers: Vec::new() };
        match r.etype {
            EventType::Send => {
                chans.entry((src, dst)).or_insert_with(entry).sends.insert(r.seq, (idx, r.kind));
            }
            EventType::Deliver => {
                chans.entry((src, dst)).or_insert_with(entry).delivers.push((idx, r.seq, r.kind));
            }
            _ => {}
        }
    }
    chans
}

/// Count, for every message, how many later sends on the same channel were
/// delivered before it. Returns the worst count and the first offender above
/// `allowed`.
fn max_overtakes(trace: &ChannelTrace, allowed: u64) -> (u64, Option<u64>) {
    // Fenwick tree over seq ranks (seq + 1, since seqs start at 0) marking
    // delivered messages; `delivered_total - prefix(rank)` counts the later
    // sends already delivered when a given seq lands.
    let top = trace.sends.keys().max().map_or(0, |&s| s as usize + 1);
    let mut tree = vec![0u64; top + 1];
    let add = |tree: &mut [u64], mut i: usize| {
        while i <= top {
            tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    };
    let prefix = |tree: &[u64], rank: usize| {
        let mut i = rank.min(top);
        let mut s = 0u64;
        while i > 0 {
            s += tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    };
    let mut delivered_total = 0u64;
    let mut worst = 0u64;
    let mut offender = None;
    let mut seen = std::collections::BTreeSet::new();
    for &(_, seq, _) in &trace.delivers {
        let rank = seq as usize + 1;
        let passed = delivered_total - prefix(&tree, rank);
        if passed > worst {
            worst = passed;
        }
        if passed > allowed && offender.is_none() {
            offender = Some(seq);
        }
        if rank <= top {
            add(&mut tree, rank);
        }
        delivered_total += 1;
        seen.insert(seq);
    }
    for &seq in trace.sends.keys() {
        if seen.contains(&seq) {
            continue;
        }
        // still in flight at the end of the log; everything delivered past it
        // has overtaken it for good
        let passed = delivered_total - prefix(&tree, seq as usize + 1);
        if passed > worst {
            worst = passed;
        }
        if passed > allowed && offender.is_none() {
            offender = Some(seq);
        }
    }
    (worst, offender)
}

/// Replay the event log per channel and hold the transport to the ordering
/// contract of the configured policy.
pub(super) fn delivery_order(h: &RunHistory) -> CheckResult {
    const NAME: &str = "delivery-order";
    let chans = channel_traces(h);
    let mut violations = 0u64;
    let mut first = String::new();
    let mut note = |why: String, first: &mut String| {
        violations += 1;
        if first.is_empty() {
            *first = why;
        }
    };
    let mut send_events = 0u64;
    let mut deliver_events = 0u64;
    for (&(src, dst), trace) in &chans {
        send_events += trace.sends.len() as u64;
        deliver_events += trace.delivers.len() as u64;
        let mut delivered = std::collections::BTreeSet::new();
        for &(_, seq, kind) in &trace.delivers {
            match trace.sends.get(&seq) {
                None => note(format!("channel {src}->{dst}: delivery of seq {seq} without a send"), &mut first),
                Some(&(_, sent_kind)) if sent_kind != kind => {
                    note(format!("channel {src}->{dst}: seq {seq} changed kind in flight"), &mut first)
                }
                _ => {}
            }
            if !delivered.insert(seq) {
                note(format!("channel {src}->{dst}: seq {seq} delivered twice"), &mut first);
            }
        }
        match h.policy {
            ChannelPolicy::Fifo => {
                let mut last: Option<u64> = None;
                for &(_, seq, _) in &trace.delivers {
                    if let Some(l) = last {
                        if seq <= l {
                            note(format!("channel {src}->{dst}: seq {seq} delivered after seq {l}"), &mut first);
                        }
                    }
                    last = Some(last.map_or(seq, |l| l.max(seq)));
                }
            }
            ChannelPolicy::TypedFifo { .. } => {
                let mut last: BTreeMap<KindTag, u64> = BTreeMap::new();
                for &(_, seq, kind) in &trace.delivers {
                    if let Some(&l) = last.get(&kind) {
                        if seq <= l {
                            note(
                                format!("channel {src}->{dst}: {} seq {seq} delivered after seq {l}", kind.as_str()),
                                &mut first,
                            );
                        }
                    }
                    let l = last.entry(kind).or_insert(seq);
                    *l = (*l).max(seq);
                }
            }
            ChannelPolicy::BoundedCross { eta, .. } => {
                let (worst, offender) = max_overtakes(trace, u64::from(eta));
                if let Some(seq) = offender {
                    note(
                        format!("channel {src}->{dst}: seq {seq} overtaken {worst} times, budget {eta}"),
                        &mut first,
                    );
                }
            }
            ChannelPolicy::Arbitrary { max_hold } => {
                let (worst, offender) = max_overtakes(trace, u64::from(max_hold));
                if let Some(seq) = offender {
                    note(
                        format!("channel {src}->{dst}: seq {seq} held past {worst} deliveries, window {max_hold}"),
                        &mut first,
                    );
                }
            }
        }
    }
    if send_events != h.sent {
        note(format!("log shows {send_events} sends, counter says {}", h.sent), &mut first);
    }
    if deliver_events != h.delivered {
        note(format!("log shows {deliver_events} deliveries, counter says {}", h.delivered), &mut first);
    }
    let detail = if first.is_empty() {
        format!("{} channels, {send_events} sends replayed", chans.len())
    } else {
        first
    };
    CheckResult::counted(NAME, violations, detail)
}

/// The realized delays must be causal: an update can only consume values its
/// senders have already produced, the own stamp advances by one per update,
/// and consumed versions never regress (the newest-wins receive rule holds
/// on every transport, including the reordering ones).
pub(super) fn delay_causality(h: &RunHistory) -> CheckResult {
    const NAME: &str = "delay-causality";
    let mut cur_iter = vec![0u64; h.n];
    let mut last_versions: Vec<Option<Vec<u64>>> = vec![None; h.n];
    let mut violations = 0u64;
    let mut first = String::new();
    let mut note = |why: String, first: &mut String| {
        violations += 1;
        if first.is_empty() {
            *first = why;
        }
    };
    for u in &h.updates {
        if u.pid >= h.n || u.view_versions.len() != h.n {
            note(format!("malformed update record for process {}", u.pid), &mut first);
            continue;
        }
        if u.local_iter != cur_iter[u.pid] + 1 {
            note(
                format!("process {}: update counter jumped from {} to {}", u.pid, cur_iter[u.pid], u.local_iter),
                &mut first,
            );
        }
        cur_iter[u.pid] = u.local_iter;
        if u.view_versions[u.pid] != u.local_iter {
            note(format!("process {}: own stamp {} at update {}", u.pid, u.view_versions[u.pid], u.local_iter), &mut first);
        }
        for j in 0..h.n {
            if j == u.pid {
                continue;
            }
            if u.view_versions[j] > cur_iter[j] {
                note(
                    format!(
                        "process {} consumed iteration {} of process {j}, which had only produced {}",
                        u.pid, u.view_versions[j], cur_iter[j]
                    ),
                    &mut first,
                );
            }
            if let Some(prev) = &last_versions[u.pid] {
                if u.view_versions[j] < prev[j] {
                    note(
                        format!("process {}: view of block {j} went back from {} to {}", u.pid, prev[j], u.view_versions[j]),
                        &mut first,
                    );
                }
            }
        }
        last_versions[u.pid] = Some(u.view_versions.clone());
    }
    let detail = if first.is_empty() { format!("{} updates replayed", h.updates.len()) } else { first };
    CheckResult::counted(NAME, violations, detail)
}

/// For channel-recording protocols: per epoch and channel, the recorded
/// channel contents must equal the messages that were in flight across the
/// cut, i.e. sent before the sender's record and not delivered before the
/// receiver's record.
pub(super) fn cut_consistency(h: &RunHistory) -> CheckResult {
    const NAME: &str = "cut-consistency";
    if !h.protocol.records_channels() {
        return CheckResult::skipped(NAME, "protocol does not record channel contents");
    }
    if h.epochs.is_empty() {
        return CheckResult::skipped(NAME, "no completed epochs");
    }
    let chans = channel_traces(h);
    // per channel: comp sends in seq order, marker sends in seq order, and
    // the delivery log position of every seq
    let mut deliver_idx: BTreeMap<(usize, usize, u64), usize> = BTreeMap::new();
    let mut comps: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    let mut markers: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    for (&(src, dst), trace) in &chans {
        for (&seq, &(_, kind)) in &trace.sends {
            match kind {
                KindTag::Comp => comps.entry((src, dst)).or_default().push(seq),
                KindTag::Marker => markers.entry((src, dst)).or_default().push(seq),
                _ => {}
            }
        }
        for &(idx, seq, _) in &trace.delivers {
            deliver_idx.insert((src, dst, seq), idx);
        }
    }
    let mut violations = 0u64;
    let mut audited = 0u64;
    let mut first = String::new();
    let mut note = |why: String, first: &mut String| {
        violations += 1;
        if first.is_empty() {
            *first = why;
        }
    };
    for (e_idx, ep) in h.epochs.iter().enumerate() {
        for (i, res) in ep.results.iter().enumerate() {
            let Some(records) = &res.channel_records else {
                note(format!("epoch {}: process {i} recorded no channels", ep.epoch), &mut first);
                continue;
            };
            let Some(Some(r_i)) = res.recorded_at.get(i).copied() else {
                note(format!("epoch {}: process {i} has no own record stamp", ep.epoch), &mut first);
                continue;
            };
            let r_i = r_i as usize;
            for (j, slot) in records.iter().enumerate() {
                let Some(recorded) = slot else { continue };
                audited += 1;
                // the marker that closed this channel's window: one marker
                // per channel per epoch, in epoch order
                let Some(&m_seq) = markers.get(&(j, i)).and_then(|v| v.get(e_idx)) else {
                    note(format!("epoch {}: no marker on channel {j}->{i}", ep.epoch), &mut first);
                    continue;
                };
                let mut expected: Vec<u64> = Vec::new();
                for &seq in comps.get(&(j, i)).into_iter().flatten() {
                    if seq > m_seq {
                        continue;
                    }
                    let landed_before_record =
                        deliver_idx.get(&(j, i, seq)).is_some_and(|&idx| idx <= r_i);
                    if !landed_before_record {
                        expected.push(seq);
                    }
                }
                let mut got: Vec<u64> = recorded.iter().map(|(seq, _)| *seq).collect();
                got.sort_unstable();
                if expected != got {
                    note(
                        format!(
                            "epoch {}: channel {j}->{i} record holds seqs {:?}, cut demands {:?}",
                            ep.epoch, got, expected
                        ),
                        &mut first,
                    );
                }
            }
        }
    }
    let detail = if first.is_empty() { format!("{audited} channel records audited") } else { first };
    CheckResult::counted(NAME, violations, detail)
}

/// Steadiness counters must follow from the recorded deltas and the local
/// threshold: consecutive sub-threshold updates count up, anything else
/// resets, and a new outer step starts from zero.
pub(super) fn steady_counter(h: &RunHistory) -> CheckResult {
    const NAME: &str = "steady-counter";
    let mut prev: Vec<(usize, u64)> = vec![(0, 0); h.n]; // (step, steady)
    let mut violations = 0u64;
    let mut first = String::new();
    for u in &h.updates {
        if u.pid >= h.n {
            continue; // malformed records are delay-causality's business
        }
        let (last_step, last_steady) = prev[u.pid];
        let base = if u.step == last_step { last_steady } else { 0 };
        let expected = if u.delta < h.eps_local { base + 1 } else { 0 };
        if u.steady_count != expected {
            violations += 1;
            if first.is_empty() {
                first = format!(
                    "process {} at update {}: steady counter {} where the deltas imply {expected}",
                    u.pid, u.local_iter, u.steady_count
                );
            }
        }
        prev[u.pid] = (u.step, u.steady_count);
    }
    let detail = if first.is_empty() { format!("{} updates recounted", h.updates.len()) } else { first };
    CheckResult::counted(NAME, violations, detail)
}

/// Control traffic accounting: the counters must match the log, and a
/// protocol that piggybacks on computation messages must emit none at all.
pub(super) fn control_traffic(h: &RunHistory) -> CheckResult {
    const NAME: &str = "control-traffic";
    let control_sends = h
        .events
        .records()
        .iter()
        .filter(|r| r.etype == EventType::Send && !matches!(r.kind, KindTag::Comp | KindTag::None))
        .count() as u64;
    let mut violations = 0u64;
    let mut detail = format!("{control_sends} control sends, {} bytes", h.control_bytes);
    if control_sends != h.control_msgs {
        violations += 1;
        detail = format!("log shows {control_sends} control sends, counter says {}", h.control_msgs);
    }
    if !h.protocol.sends_control() && control_sends > 0 {
        violations += 1;
        detail = format!("{control_sends} control sends from a protocol that promises none");
    }
    CheckResult {
        name: NAME,
        verdict: if violations == 0 { Verdict::Pass } else { Verdict::Fail },
        measured: Some(control_sends as f64),
        bound: if h.protocol.sends_control() { None } else { Some(0.0) },
        margin: None,
        detail,
    }
}

/// Exactly one counted reduction per epoch evaluation, and exactly one
/// snapshot return per process per completed epoch.
pub(super) fn single_reduction(h: &RunHistory) -> CheckResult {
    const NAME: &str = "single-reduction";
    let mut violations = 0u64;
    let mut first = String::new();
    let mut note = |why: String, first: &mut String| {
        violations += 1;
        if first.is_empty() {
            *first = why;
        }
    };
    let reduce_events = h.events.records().iter().filter(|r| r.etype == EventType::Reduce).count() as u64;
    let evals = h.epochs.len() as u64;
    if reduce_events != evals {
        note(format!("{reduce_events} reductions in the log for {evals} evaluations"), &mut first);
    }
    if h.reduction_count != evals {
        note(format!("reduction counter {} for {evals} evaluations", h.reduction_count), &mut first);
    }
    for ep in &h.epochs {
        let mut per_pid = vec![0u64; h.n];
        for r in h.events.records() {
            if r.etype == EventType::Snapshot && r.seq == u64::from(ep.epoch) {
                if let Some(pid) = r.src {
                    if pid < h.n {
                        per_pid[pid] += 1;
                    }
                }
            }
        }
        for (pid, &count) in per_pid.iter().enumerate() {
            if count != 1 {
                note(format!("epoch {}: process {pid} returned {count} snapshots", ep.epoch), &mut first);
            }
        }
    }
    let detail = if first.is_empty() {
        format!("{evals} evaluations, one reduction each")
    } else {
        first
    };
    CheckResult::counted(NAME, violations, detail)
}

#[cfg(test)]
mod tests {
    use super::super::{verify_run, RunHistory, Verdict};
    use super::super::history::{EpochRecord, StepRecord, UpdateRecord};
    use crate::math::{BlockStructure, BlockVector, LinearMap, NormSpec, SparseBlockMatrix};
    use crate::protocols::{Decision, EpochEvaluation, ProtocolKind, SnapshotResult};
    use crate::simnet::{ChannelPolicy, EventLog, EventRecord, EventType, KindTag};
    use crate::workloads::Workload;

    fn toy_workload(coupling: f64, offset: f64) -> Workload {
        let st = BlockStructure::uniform(2, 1);
        let m = SparseBlockMatrix::from_triplets(st, &[(0, 1, coupling), (1, 0, coupling)]);
        let c = BlockVector::new(vec![vec![offset], vec![offset]]);
        Workload::from_map("toy", LinearMap::new(m, c))
    }

    fn ev(
        time: u64,
        etype: EventType,
        src: Option<usize>,
        dst: Option<usize>,
        kind: KindTag,
        seq: u64,
    ) -> EventRecord {
        EventRecord { time, etype, src, dst, kind, seq }
    }

    fn update(
        time: u64,
        pid: usize,
        local_iter: u64,
        steady_count: u64,
        view_versions: Vec<u64>,
    ) -> UpdateRecord {
        UpdateRecord {
            time,
            pid,
            local_iter,
            delta: 0.0,
            steady_count,
            step: 0,
            view_versions,
            value: None,
        }
    }

    fn result(
        pid: usize,
        entries: Vec<Option<Vec<f64>>>,
        recorded_at: Vec<Option<u64>>,
        completed_at: u64,
    ) -> SnapshotResult {
        SnapshotResult { pid, epoch: 0, entries, recorded_at, completed_at, channel_records: None }
    }

    /// Two processes sit at the fixed point of `x -> [x1/2 + 1/4, x0/2 + 1/4]`,
    /// exchange one round of values and value-carrying markers over FIFO
    /// channels, then detect in one epoch. Every stamp and counter is what the
    /// driver would have recorded.
    fn honest_history() -> (RunHistory, Workload) {
        let workload = toy_workload(0.5, 0.25);
        let mut events = EventLog::default();
        for r in [
            ev(1, EventType::Update, Some(0), Some(0), KindTag::None, 1),
            ev(1, EventType::Send, Some(0), Some(1), KindTag::Comp, 0),
            ev(1, EventType::Send, Some(0), Some(1), KindTag::Marker, 1),
            ev(1, EventType::Update, Some(1), Some(1), KindTag::None, 1),
            ev(1, EventType::Send, Some(1), Some(0), KindTag::Comp, 0),
            ev(1, EventType::Send, Some(1), Some(0), KindTag::Marker, 1),
            ev(2, EventType::Deliver, Some(1), Some(0), KindTag::Comp, 0),
            ev(2, EventType::Deliver, Some(1), Some(0), KindTag::Marker, 1),
            ev(2, EventType::Update, Some(0), Some(0), KindTag::None, 2),
            ev(2, EventType::Send, Some(0), Some(1), KindTag::Comp, 2),
            ev(2, EventType::Snapshot, Some(0), Some(0), KindTag::None, 0),
            ev(2, EventType::Deliver, Some(0), Some(1), KindTag::Comp, 0),
            ev(2, EventType::Deliver, Some(0), Some(1), KindTag::Marker, 1),
            ev(2, EventType::Update, Some(1), Some(1), KindTag::None, 2),
            ev(2, EventType::Send, Some(1), Some(0), KindTag::Comp, 2),
            ev(2, EventType::Snapshot, Some(1), Some(1), KindTag::None, 0),
            ev(2, EventType::Reduce, None, None, KindTag::None, 0),
        ] {
            events.push(r);
        }
        let results = vec![
            result(0, vec![Some(vec![0.5]), Some(vec![0.5])], vec![Some(0), Some(7)], 7),
            result(1, vec![Some(vec![0.5]), Some(vec![0.5])], vec![Some(12), Some(3)], 12),
        ];
        let history = RunHistory {
            n: 2,
            protocol: ProtocolKind::Nfais2,
            policy: ChannelPolicy::Fifo,
            control_priority: false,
            eta: 0,
            eps_local: 1e-6,
            eps_prime: 1e-6,
            threshold: 1e-6,
            norm: NormSpec::Lp(2.0),
            updates: vec![
                update(1, 0, 1, 1, vec![1, 0]),
                update(1, 1, 1, 1, vec![0, 1]),
                update(2, 0, 2, 2, vec![2, 1]),
                update(2, 1, 2, 2, vec![1, 2]),
            ],
            epochs: vec![EpochRecord {
                epoch: 0,
                step: 0,
                decided_at: 2,
                results,
                evaluation: EpochEvaluation {
                    epoch: 0,
                    contributions: vec![0.0, 0.0],
                    reduced: 0.0,
                    threshold: 1e-6,
                    decision: Decision::Converged,
                },
                iters_at_decision: vec![2, 2],
            }],
            steps: vec![StepRecord { step: 0, start: BlockVector::new(vec![vec![0.5], vec![0.5]]) }],
            events,
            reduction_count: 1,
            control_msgs: 2,
            control_bytes: 48,
            sent: 6,
            delivered: 4,
            completed: true,
        };
        (history, workload)
    }

    /// Bare transport-only history: no epochs, no updates, just a crafted log.
    fn bare_history(policy: ChannelPolicy, events: Vec<EventRecord>) -> (RunHistory, Workload) {
        let workload = toy_workload(0.5, 0.25);
        let mut log = EventLog::default();
        let sent = events.iter().filter(|r| r.etype == EventType::Send).count() as u64;
        let delivered = events.iter().filter(|r| r.etype == EventType::Deliver).count() as u64;
        for r in events {
            log.push(r);
        }
        let history = RunHistory {
            n: 2,
            protocol: ProtocolKind::Nfais1,
            policy,
            control_priority: false,
            eta: 0,
            eps_local: 1e-6,
            eps_prime: 1e-6,
            threshold: 1e-6,
            norm: NormSpec::Lp(2.0),
            updates: Vec::new(),
            epochs: Vec::new(),
            steps: vec![StepRecord { step: 0, start: BlockVector::zeros(&BlockStructure::uniform(2, 1)) }],
            events: log,
            reduction_count: 0,
            control_msgs: 0,
            control_bytes: 0,
            sent,
            delivered,
            completed: false,
        };
        (history, workload)
    }

    #[test]
    fn honest_run_passes_and_skips_only_inapplicable_claims() {
        let (h, w) = honest_history();
        let report = verify_run(&h, &w).unwrap();
        assert!(report.passed(), "unexpected failures: {:?}\n{}", report.failures(), report.to_text());
        assert_eq!(report.check("snapshot-equality").unwrap().verdict, Verdict::Pass);
        assert_eq!(report.check("residual-gap").unwrap().verdict, Verdict::Skipped);
        assert_eq!(report.check("cut-consistency").unwrap().verdict, Verdict::Skipped);
        assert_eq!(report.check("threshold-guarantee").unwrap().verdict, Verdict::Pass);
        assert_eq!(report.check("single-reduction").unwrap().verdict, Verdict::Pass);
        let guarantee = report.check("threshold-guarantee").unwrap();
        assert_eq!(guarantee.measured, Some(0.0));
        assert_eq!(guarantee.bound, Some(1e-6));
    }

    #[test]
    fn report_is_a_pure_function_of_the_history() {
        let (h, w) = honest_history();
        let a = verify_run(&h, &w).unwrap();
        let b = verify_run(&h, &w).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.to_csv(), b.to_csv());
        for line in a.to_text().lines() {
            assert!(line.split(' ').count() >= 5, "malformed report line: {line}");
        }
        assert!(a.to_csv().starts_with("check,verdict,measured,bound,margin,detail\n"));
    }

    /// The classic misconfiguration: running an overtaking protocol with the
    /// local steadiness threshold set to the requested accuracy instead of the
    /// tightened value. The recorded views can then pass the reduced test
    /// while the assembled point is far worse than promised.
    #[test]
    fn misconfigured_staleness_budget_is_flagged_as_premature() {
        let a = 2e-6f64;
        let workload = toy_workload(0.9, a);
        let stale = -(a / 0.9);
        let g = 0.9 * stale + a; // what the recorded views actually evaluate to
        let mut events = EventLog::default();
        events.push(ev(1, EventType::Snapshot, Some(0), Some(0), KindTag::None, 0));
        events.push(ev(1, EventType::Snapshot, Some(1), Some(1), KindTag::None, 0));
        events.push(ev(1, EventType::Reduce, None, None, KindTag::None, 0));
        let results = vec![
            result(0, vec![Some(vec![0.0]), Some(vec![stale])], vec![Some(0), Some(0)], 0),
            result(1, vec![Some(vec![stale]), Some(vec![0.0])], vec![Some(1), Some(1)], 1),
        ];
        let history = RunHistory {
            n: 2,
            protocol: ProtocolKind::Nfais4,
            policy: ChannelPolicy::BoundedCross { eta: 4, max_hold: 64 },
            control_priority: false,
            eta: 4,
            eps_local: 1e-6, // should have been 1e-6 / (1 + 4) = 2e-7
            eps_prime: 1e-6,
            threshold: 1e-6,
            norm: NormSpec::MaxWeighted(vec![1.0, 1.0]),
            updates: Vec::new(),
            epochs: vec![EpochRecord {
                epoch: 0,
                step: 0,
                decided_at: 1,
                results,
                evaluation: EpochEvaluation {
                    epoch: 0,
                    contributions: vec![g.abs(), g.abs()],
                    reduced: g.abs(),
                    threshold: 1e-6,
                    decision: Decision::Converged,
                },
                iters_at_decision: vec![0, 0],
            }],
            steps: vec![StepRecord { step: 0, start: BlockVector::zeros(&BlockStructure::uniform(2, 1)) }],
            events,
            reduction_count: 1,
            control_msgs: 0,
            control_bytes: 0,
            sent: 0,
            delivered: 0,
            completed: true,
        };
        let report = verify_run(&history, &workload).unwrap();
        assert!(!report.passed());
        let guarantee = report.check("threshold-guarantee").unwrap();
        assert_eq!(guarantee.verdict, Verdict::Fail);
        // the accepted point [0, 0] really does violate the requested accuracy
        assert_eq!(guarantee.measured, Some(a));
        // the reduced value itself was computed honestly; the configuration
        // was the problem
        assert_eq!(report.check("evaluation-agreement").unwrap().verdict, Verdict::Pass);
        assert_eq!(report.check("residual-gap").unwrap().verdict, Verdict::Skipped);
    }

    #[test]
    fn stale_copy_breaks_bitwise_equality() {
        let (mut h, w) = honest_history();
        h.epochs[0].results[0].entries[1] = Some(vec![0.5 + 1e-9]);
        let report = verify_run(&h, &w).unwrap();
        let eq = report.check("snapshot-equality").unwrap();
        assert_eq!(eq.verdict, Verdict::Fail);
        assert_eq!(eq.measured, Some(1.0));
        assert!(eq.detail.contains("process 0"));
        assert!(!report.passed());
    }

    #[test]
    fn out_of_order_delivery_is_judged_against_the_policy() {
        let events = vec![
            ev(1, EventType::Send, Some(0), Some(1), KindTag::Comp, 0),
            ev(1, EventType::Send, Some(0), Some(1), KindTag::Comp, 1),
            ev(2, EventType::Deliver, Some(0), Some(1), KindTag::Comp, 1),
            ev(3, EventType::Deliver, Some(0), Some(1), KindTag::Comp, 0),
        ];
        let (h, w) = bare_history(ChannelPolicy::Fifo, events.clone());
        let report = verify_run(&h, &w).unwrap();
        let order = report.check("delivery-order").unwrap();
        assert_eq!(order.verdict, Verdict::Fail);
        assert!(order.detail.contains("seq 0 delivered after seq 1"));

        // one crossing is within a budget of one
        let (h, w) = bare_history(ChannelPolicy::BoundedCross { eta: 1, max_hold: 64 }, events.clone());
        let report = verify_run(&h, &w).unwrap();
        assert_eq!(report.check("delivery-order").unwrap().verdict, Verdict::Pass);

        let (h, w) = bare_history(ChannelPolicy::BoundedCross { eta: 0, max_hold: 64 }, events);
        let report = verify_run(&h, &w).unwrap();
        assert_eq!(report.check("delivery-order").unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn never_delivered_messages_still_count_as_overtaken() {
        // seq 0 stays in flight while two later sends land
        let events = vec![
            ev(1, EventType::Send, Some(0), Some(1), KindTag::Comp, 0),
            ev(1, EventType::Send, Some(0), Some(1), KindTag::Comp, 1),
            ev(1, EventType::Send, Some(0), Some(1), KindTag::Comp, 2),
            ev(2, EventType::Deliver, Some(0), Some(1), KindTag::Comp, 1),
            ev(2, EventType::Deliver, Some(0), Some(1), KindTag::Comp, 2),
        ];
        let (h, w) = bare_history(ChannelPolicy::BoundedCross { eta: 1, max_hold: 64 }, events);
        let report = verify_run(&h, &w).unwrap();
        let order = report.check("delivery-order").unwrap();
        assert_eq!(order.verdict, Verdict::Fail);
        assert!(order.detail.contains("seq 0"));
    }

    #[test]
    fn consuming_an_unproduced_iteration_is_flagged() {
        let (mut h, w) = bare_history(ChannelPolicy::Fifo, Vec::new());
        h.updates.push(update(1, 0, 1, 0, vec![1, 3]));
        h.updates[0].delta = 1.0;
        let report = verify_run(&h, &w).unwrap();
        let causality = report.check("delay-causality").unwrap();
        assert_eq!(causality.verdict, Verdict::Fail);
        assert!(causality.detail.contains("only produced 0"));
    }

    #[test]
    fn tampered_steady_counter_is_recounted() {
        let (mut h, w) = honest_history();
        h.updates[3].steady_count = 7;
        let report = verify_run(&h, &w).unwrap();
        let steady = report.check("steady-counter").unwrap();
        assert_eq!(steady.verdict, Verdict::Fail);
        assert!(steady.detail.contains("imply 2"));
    }

    #[test]
    fn reduction_accounting_must_match_the_log() {
        let (mut h, w) = honest_history();
        h.reduction_count = 2;
        let report = verify_run(&h, &w).unwrap();
        assert_eq!(report.check("single-reduction").unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn history_must_fit_the_workload() {
        let (h, _) = honest_history();
        let st = BlockStructure::uniform(3, 1);
        let wrong = Workload::from_map(
            "wrong",
            LinearMap::new(
                SparseBlockMatrix::from_triplets(st.clone(), &[]),
                BlockVector::zeros(&st),
            ),
        );
        assert!(verify_run(&h, &wrong).is_err());
    }
}
