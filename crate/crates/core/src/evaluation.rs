//! Experiment harnesses: session alignment, sparsity sweeps, type splits
//! and ground-truth scoring on synthetic corpora.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::catalog::{degrade_catalog, split_types, Catalog, Consultation, UserLogs};
use crate::diversity::{run_corpus, ContextChange, StreamOutput};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Default inactivity gap (seconds) that closes a session.
pub const DEFAULT_GAP_SECONDS: i64 = 900;
pub const DEFAULT_TYPES: usize = 4;
pub const DEFAULT_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    pub user_id: String,
    pub start_index: usize,
    pub end_index: usize,
    pub start_ts: i64,
    pub end_ts: i64,
}

impl Session {
    /// Number of consultations in the session (always at least one).
    pub fn consultations(&self) -> usize {
        self.end_index - self.start_index + 1
    }
}

/// Splits a sorted stream wherever consecutive timestamps are more than
/// `gap_threshold` seconds apart.
pub fn sessionize(stream: &[Consultation], gap_threshold: i64) -> Result<Vec<Session>> {
    let mut sessions: Vec<Session> = Vec::new();
    for (i, c) in stream.iter().enumerate() {
        match sessions.last_mut() {
            Some(open) => {
                let gap = c.timestamp - open.end_ts;
                if gap < 0 {
                    return Err(Error::Unsorted {
                        user: c.user_id.clone(),
                        index: i,
                    });
                }
                if gap > gap_threshold {
                    sessions.push(Session {
                        user_id: c.user_id.clone(),
                        start_index: i,
                        end_index: i,
                        start_ts: c.timestamp,
                        end_ts: c.timestamp,
                    });
                } else {
                    open.end_index = i;
                    open.end_ts = c.timestamp;
                }
            }
            None => sessions.push(Session {
                user_id: c.user_id.clone(),
                start_index: i,
                end_index: i,
                start_ts: c.timestamp,
                end_ts: c.timestamp,
            }),
        }
    }
    Ok(sessions)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct H1Report {
    pub total_sessions: usize,
    pub detected_sessions: usize,
    pub session_rate: f64,
    pub total_changes: usize,
    pub non_session_changes: usize,
    /// Sessions other than each user's first, which no detector can flag
    /// because the history is empty there.
    pub detectable_sessions: usize,
    pub detectable_rate: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// A session counts as detected when a change fires on its first
/// consultation. Works across users: matching is on (user, index).
pub fn align_sessions(changes: &[ContextChange], sessions: &[Session]) -> H1Report {
    let fired: HashSet<(&str, usize)> = changes.iter().map(|c| (c.user_id.as_str(), c.index)).collect();
    let detected = sessions
        .iter()
        .filter(|s| fired.contains(&(s.user_id.as_str(), s.start_index)))
        .count();
    let users: HashSet<&str> = sessions.iter().map(|s| s.user_id.as_str()).collect();
    let detectable = sessions.len() - users.len();
    H1Report {
        total_sessions: sessions.len(),
        detected_sessions: detected,
        session_rate: ratio(detected, sessions.len()),
        total_changes: changes.len(),
        non_session_changes: changes.len() - detected,
        detectable_sessions: detectable,
        detectable_rate: ratio(detected, detectable),
    }
}

/// Sessions of every user, in user order.
pub fn sessionize_all(logs: &UserLogs, gap_threshold: i64) -> Result<Vec<Session>> {
    let mut all = Vec::new();
    for stream in logs.values() {
        all.extend(sessionize(stream, gap_threshold)?);
    }
    Ok(all)
}

pub fn h1_report(logs: &UserLogs, runs: &BTreeMap<String, StreamOutput>, gap_threshold: i64) -> Result<H1Report> {
    let sessions = sessionize_all(logs, gap_threshold)?;
    let changes: Vec<ContextChange> = runs.values().flat_map(|o| o.changes.iter().cloned()).collect();
    Ok(align_sessions(&changes, &sessions))
}

/// Detection over a whole corpus followed by session alignment.
pub fn run_h1(
    catalog: &Catalog,
    logs: &UserLogs,
    k: usize,
    tau: f64,
    gap_threshold: i64,
) -> Result<(H1Report, BTreeMap<String, StreamOutput>)> {
    let runs = run_corpus(logs, catalog, k, tau)?;
    let report = h1_report(logs, &runs, gap_threshold)?;
    Ok((report, runs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sparsity: f64,
    pub session_rate: f64,
    pub total_changes: usize,
    pub detected_sessions: usize,
    pub total_sessions: usize,
    pub seed: u64,
}

pub fn sparsity_seed(master: u64, rate: f64) -> u64 {
    derive_seed(master, "sparsity", rate.to_bits())
}

#[derive(Debug, Clone, Copy)]
pub struct DetectionParams {
    pub k: usize,
    pub tau: f64,
    pub gap_threshold: i64,
}

/// Degrades the catalog at each rate and reruns detection over all users.
pub fn sparsity_sweep(
    catalog: &Catalog,
    logs: &UserLogs,
    params: DetectionParams,
    rates: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    rates
        .iter()
        .map(|&rate| {
            let sub_seed = sparsity_seed(seed, rate);
            let degraded = degrade_catalog(catalog, rate, sub_seed)?;
            let (report, _) = run_h1(&degraded, logs, params.k, params.tau, params.gap_threshold)?;
            Ok(SweepRow {
                sparsity: rate,
                session_rate: report.session_rate,
                total_changes: report.total_changes,
                detected_sessions: report.detected_sessions,
                total_sessions: report.total_sessions,
                seed: sub_seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeSplitParams {
    pub types: usize,
    pub attrs_per_type: usize,
    pub min_common: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeSplitRow {
    pub types: usize,
    pub x: usize,
    pub y: usize,
    pub runs: usize,
    pub session_rate_avg: f64,
    pub session_rate_sd: f64,
    pub contexts_avg: f64,
    pub contexts_sd: f64,
}

#[derive(Debug, Clone)]
pub struct TypeSplitRun {
    pub seed: u64,
    pub type_attributes: Vec<Vec<usize>>,
    pub report: H1Report,
    pub streams: BTreeMap<String, StreamOutput>,
}

pub fn type_split_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, "type-split", run as u64)
}

/// Mean and population sd, accumulated around the first sample so that
/// identical samples give exactly that value and sd 0.
fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let pivot = values[0];
    let shift = values.iter().map(|v| v - pivot).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - pivot - shift).powi(2)).sum::<f64>() / n;
    (pivot + shift, var.sqrt())
}

/// Repeats split + detection `runs` times with independent sub-seeds.
pub fn type_split_experiment(
    catalog: &Catalog,
    logs: &UserLogs,
    params: DetectionParams,
    split: TypeSplitParams,
    seed: u64,
) -> Result<(TypeSplitRow, Vec<TypeSplitRun>)> {
    if split.runs == 0 {
        return Err(Error::Argument("runs must be at least 1".into()));
    }
    let runs = (0..split.runs)
        .map(|r| {
            let sub_seed = type_split_seed(seed, r);
            let typed = split_types(catalog, split.types, split.attrs_per_type, split.min_common, sub_seed)?;
            let (report, streams) = run_h1(&typed.catalog, logs, params.k, params.tau, params.gap_threshold)?;
            Ok(TypeSplitRun {
                seed: sub_seed,
                type_attributes: typed.type_attributes,
                report,
                streams,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rates: Vec<f64> = runs.iter().map(|r| r.report.session_rate).collect();
    let contexts: Vec<f64> = runs.iter().map(|r| r.report.total_changes as f64).collect();
    let (session_rate_avg, session_rate_sd) = mean_sd(&rates);
    let (contexts_avg, contexts_sd) = mean_sd(&contexts);
    Ok((
        TypeSplitRow {
            types: split.types,
            x: split.attrs_per_type,
            y: split.min_common,
            runs: split.runs,
            session_rate_avg,
            session_rate_sd,
            contexts_avg,
            contexts_sd,
        },
        runs,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruthReport {
    pub boundaries: usize,
    pub hits: usize,
    pub changes: usize,
    pub matched_changes: usize,
    pub recall: f64,
    pub precision: f64,
    /// False when there were no changes; precision is then reported as 0.
    pub precision_defined: bool,
    pub tolerance: usize,
}

/// Scores detections against planted boundaries (per user, within
/// `tolerance` steps).
pub fn evaluate_ground_truth(
    changes: &[ContextChange],
    ground_truth: &BTreeMap<String, Vec<usize>>,
    tolerance: usize,
) -> GroundTruthReport {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for c in changes {
        by_user.entry(c.user_id.as_str()).or_default().push(c.index);
    }
    for idx in by_user.values_mut() {
        idx.sort_unstable();
    }
    let near = |sorted: &[usize], target: usize| {
        let lo = target.saturating_sub(tolerance);
        let start = sorted.partition_point(|&v| v < lo);
        sorted.get(start).is_some_and(|&v| v <= target + tolerance)
    };
    let empty: Vec<usize> = Vec::new();
    let mut boundaries = 0;
    let mut hits = 0;
    for (user, truth) in ground_truth {
        let fired = by_user.get(user.as_str()).unwrap_or(&empty);
        boundaries += truth.len();
        hits += truth.iter().filter(|&&b| near(fired, b)).count();
    }
    let mut matched = 0;
    for (user, fired) in &by_user {
        let mut truth = ground_truth.get(*user).cloned().unwrap_or_default();
        truth.sort_unstable();
        matched += fired.iter().filter(|&&c| near(&truth, c)).count();
    }
    GroundTruthReport {
        boundaries,
        hits,
        changes: changes.len(),
        matched_changes: matched,
        recall: ratio(hits, boundaries),
        precision: ratio(matched, changes.len()),
        precision_defined: !changes.is_empty(),
        tolerance,
    }
}
