//! Relative diversity over a sliding history window and the context change
//! detector built on it.
//!
//! Each step compares the newly consulted item with at most `k` history
//! items, so the per-step cost does not depend on how long the stream is.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::catalog::{Catalog, Consultation, Item, UserLogs};
use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::similarity::{sim_items, SimResult};

pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diversity {
    Value(f64),
    NaN,
}

impl Diversity {
    pub fn value(self) -> Option<f64> {
        match self {
            Diversity::Value(v) => Some(v),
            Diversity::NaN => None,
        }
    }

    pub fn is_nan(self) -> bool {
        matches!(self, Diversity::NaN)
    }

    fn mean(sum: f64, count: usize) -> Self {
        if count == 0 {
            Diversity::NaN
        } else {
            Diversity::Value(sum / count as f64)
        }
    }
}

impl Serialize for Diversity {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Diversity::Value(v) => serializer.serialize_f64(*v),
            Diversity::NaN => serializer.serialize_str("NaN"),
        }
    }
}

/// The `capacity` most recent items, oldest first.
#[derive(Debug, Clone)]
pub struct HistoryWindow {
    capacity: usize,
    entries: VecDeque<Arc<Item>>,
}

impl HistoryWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("window size k must be at least 1".into()));
        }
        Ok(HistoryWindow {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Item>> {
        self.entries.iter()
    }

    /// Appends an item, returning the evicted oldest entry when full.
    pub fn push(&mut self, item: Arc<Item>) -> Option<Arc<Item>> {
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(item);
        evicted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeDiversity {
    pub rd: Diversity,
    /// History entries whose item similarity with the target was computable.
    pub s: usize,
    /// Mean dissimilarity per attribute (schema order) over the entries
    /// where that attribute was computable.
    pub per_attribute: Vec<Diversity>,
}

impl RelativeDiversity {
    /// Unweighted mean of the computable per-attribute diversities.
    pub fn attribute_mean(&self) -> Diversity {
        let values: Vec<f64> = self.per_attribute.iter().filter_map(|d| d.value()).collect();
        Diversity::mean(values.iter().sum(), values.len())
    }
}

fn measure(target: &Item, window: &HistoryWindow, schema: &Schema, comparisons: &mut u64) -> RelativeDiversity {
    let mut total = 0.0;
    let mut s = 0;
    let mut attr_sum = vec![0.0; schema.len()];
    let mut attr_count = vec![0usize; schema.len()];
    for past in window.iter() {
        *comparisons += 1;
        let sim = sim_items(target, past, schema);
        if let SimResult::Value(v) = sim.aggregate {
            total += 1.0 - v;
            s += 1;
        }
        for (a, value) in sim.per_attribute.iter().enumerate() {
            if let SimResult::Value(v) = value {
                attr_sum[a] += 1.0 - v;
                attr_count[a] += 1;
            }
        }
    }
    RelativeDiversity {
        rd: Diversity::mean(total, s),
        s,
        per_attribute: attr_sum
            .into_iter()
            .zip(attr_count)
            .map(|(sum, n)| Diversity::mean(sum, n))
            .collect(),
    }
}

/// Mean dissimilarity between `target` and the comparable window entries;
/// NaN when the window is empty or nothing in it is comparable.
pub fn relative_diversity(target: &Item, window: &HistoryWindow, schema: &Schema) -> RelativeDiversity {
    measure(target, window, schema, &mut 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityPoint {
    /// Zero-based step number within the user's stream.
    pub index: usize,
    pub rd: Diversity,
    pub s: usize,
    pub per_attribute_rd: Vec<Diversity>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextChange {
    #[serde(rename = "user")]
    pub user_id: String,
    pub index: usize,
    #[serde(rename = "ts")]
    pub timestamp: i64,
    #[serde(rename = "item")]
    pub item_id: String,
    #[serde(rename = "rd")]
    pub rd_value: f64,
}

/// The change predicate: both diversities computable, strictly rising, and
/// strictly above `tau`.
pub fn is_context_change(previous: Diversity, current: Diversity, tau: f64) -> bool {
    match (previous, current) {
        (Diversity::Value(prev), Diversity::Value(cur)) => prev < cur && cur > tau,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub point: DiversityPoint,
    pub change: Option<ContextChange>,
}

/// Streaming detector for one user. Not shared between streams.
#[derive(Debug, Clone)]
pub struct Detector {
    tau: f64,
    window: HistoryWindow,
    previous: Option<Diversity>,
    last_timestamp: Option<i64>,
    steps: usize,
    comparisons: u64,
}

impl Detector {
    pub fn new(k: usize, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Argument(format!("tau {tau} outside [0, 1]")));
        }
        Ok(Detector {
            tau,
            window: HistoryWindow::new(k)?,
            previous: None,
            last_timestamp: None,
            steps: 0,
            comparisons: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.window.capacity()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn window(&self) -> &HistoryWindow {
        &self.window
    }

    /// Diversity of the previous step; `None` before the first step.
    pub fn previous_rd(&self) -> Option<Diversity> {
        self.previous
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Total item-similarity evaluations performed so far.
    pub fn comparisons(&self) -> u64 {
        self.comparisons
    }

    /// Measures `item` against the current window, then slides the window
    /// and remembers the measurement. On error the state is untouched.
    pub fn step(&mut self, consultation: &Consultation, item: Arc<Item>, schema: &Schema) -> Result<StepOutcome> {
        item.validate(schema)?;
        if let Some(last) = self.last_timestamp {
            if consultation.timestamp < last {
                return Err(Error::Unsorted {
                    user: consultation.user_id.clone(),
                    index: self.steps,
                });
            }
        }
        let measured = measure(&item, &self.window, schema, &mut self.comparisons);
        let index = self.steps;
        let change = self
            .previous
            .filter(|&prev| is_context_change(prev, measured.rd, self.tau))
            .map(|_| ContextChange {
                user_id: consultation.user_id.clone(),
                index,
                timestamp: consultation.timestamp,
                item_id: consultation.item_id.clone(),
                rd_value: measured.rd.value().expect("change implies computable rd"),
            });
        self.window.push(item);
        self.previous = Some(measured.rd);
        self.last_timestamp = Some(consultation.timestamp);
        self.steps += 1;
        Ok(StepOutcome {
            point: DiversityPoint {
                index,
                rd: measured.rd,
                s: measured.s,
                per_attribute_rd: measured.per_attribute,
            },
            change,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamOutput {
    pub points: Vec<DiversityPoint>,
    pub changes: Vec<ContextChange>,
}

pub fn run_user_stream(consultations: &[Consultation], catalog: &Catalog, k: usize, tau: f64) -> Result<StreamOutput> {
    let mut detector = Detector::new(k, tau)?;
    let mut out = StreamOutput {
        points: Vec::with_capacity(consultations.len()),
        changes: Vec::new(),
    };
    for c in consultations {
        let item = catalog.get(&c.item_id).ok_or_else(|| Error::MissingItem {
            user: c.user_id.clone(),
            item: c.item_id.clone(),
        })?;
        let step = detector.step(c, Arc::clone(item), catalog.schema())?;
        out.points.push(step.point);
        out.changes.extend(step.change);
    }
    Ok(out)
}

/// Runs every user stream independently (in parallel); results are keyed
/// by user so the outcome does not depend on scheduling.
pub fn run_corpus(logs: &UserLogs, catalog: &Catalog, k: usize, tau: f64) -> Result<BTreeMap<String, StreamOutput>> {
    logs.par_iter()
        .map(|(user, stream)| Ok((user.clone(), run_user_stream(stream, catalog, k, tau)?)))
        .collect()
}

impl StreamOutput {
    pub fn total_changes(output: &BTreeMap<String, StreamOutput>) -> usize {
        output.values().map(|o| o.changes.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub tau: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    /// Number of computable points used.
    pub count: usize,
}

/// Sets the threshold to the mean of all computable diversity values.
pub fn calibrate_tau<'a, I>(points: I) -> Result<Calibration>
where
    I: IntoIterator<Item = &'a DiversityPoint>,
{
    let values: Vec<f64> = points.into_iter().filter_map(|p| p.rd.value()).collect();
    if values.is_empty() {
        return Err(Error::Calibration);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Calibration {
        tau: mean,
        mean,
        sd: var.sqrt(),
        count: values.len(),
    })
}

/// Runs the corpus once with no detection and calibrates on every point.
pub fn calibrate_corpus(logs: &UserLogs, catalog: &Catalog, k: usize) -> Result<Calibration> {
    let runs = run_corpus(logs, catalog, k, 1.0)?;
    calibrate_tau(runs.values().flat_map(|o| o.points.iter()))
}

/// One line of the diversity trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub user: String,
    pub index: usize,
    pub ts: i64,
    pub item: String,
    pub rd: Diversity,
    pub s: usize,
    pub change: bool,
}

pub fn trace_records(consultations: &[Consultation], output: &StreamOutput) -> Vec<TraceRecord> {
    let mut changed = output.changes.iter().map(|c| c.index).peekable();
    consultations
        .iter()
        .zip(&output.points)
        .map(|(c, p)| {
            let change = changed.next_if_eq(&p.index).is_some();
            TraceRecord {
                user: c.user_id.clone(),
                index: p.index,
                ts: c.timestamp,
                item: c.item_id.clone(),
                rd: p.rd,
                s: p.s,
                change,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::AttributeValue;
    use crate::schema::{AttributeKind, AttributeSpec};

    fn schema() -> Schema {
        Schema::new(vec![
            AttributeSpec::new("tags", AttributeKind::Set),
            AttributeSpec::new("mode", AttributeKind::Binary),
        ])
        .unwrap()
    }

    fn item(id: &str, tags: &[&str], mode: Option<bool>) -> Arc<Item> {
        let s = schema();
        let mut values = vec![];
        if !tags.is_empty() {
            values.push(("tags", AttributeValue::set(tags.iter().copied())));
        }
        if let Some(m) = mode {
            values.push(("mode", AttributeValue::Binary(m)));
        }
        Arc::new(Item::from_named(id, &s, values).unwrap())
    }

    #[test]
    fn window_evicts_oldest() {
        let mut w = HistoryWindow::new(2).unwrap();
        assert!(w.push(item("a", &["x"], None)).is_none());
        assert!(w.push(item("b", &["x"], None)).is_none());
        assert_eq!(w.push(item("c", &["x"], None)).unwrap().id, "a");
        assert_eq!(w.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert!(HistoryWindow::new(0).is_err());
    }

    #[test]
    fn empty_window_is_nan() {
        let w = HistoryWindow::new(3).unwrap();
        let rd = relative_diversity(&item("a", &["x"], Some(true)), &w, &schema());
        assert_eq!(rd.rd, Diversity::NaN);
        assert_eq!(rd.s, 0);
        assert!(rd.per_attribute.iter().all(|d| d.is_nan()));
    }

    #[test]
    fn identical_window_has_zero_diversity() {
        let target = item("a", &["x", "y"], Some(true));
        let mut w = HistoryWindow::new(4).unwrap();
        for _ in 0..4 {
            w.push(Arc::clone(&target));
        }
        let rd = relative_diversity(&target, &w, &schema());
        assert_eq!(rd.rd, Diversity::Value(0.0));
        assert_eq!(rd.s, 4);
    }

    #[test]
    fn skips_non_computable_entries() {
        // aggregate sims 1.0, NotComputable, 0.4
        let s = Schema::new(vec![AttributeSpec::new("years", AttributeKind::Interval)]).unwrap();
        let mk = |id: &str, v: Option<(f64, f64)>| {
            let vals: Vec<(&str, AttributeValue)> = v
                .map(|(lo, hi)| vec![("years", AttributeValue::Interval { lo, hi })])
                .unwrap_or_default();
            Arc::new(Item::from_named(id, &s, vals).unwrap())
        };
        let target = mk("t", Some((0.0, 10.0)));
        let mut w = HistoryWindow::new(3).unwrap();
        w.push(mk("same", Some((0.0, 10.0))));
        w.push(mk("none", None));
        w.push(mk("part", Some((6.0, 16.0))));
        let rd = relative_diversity(&target, &w, &s);
        assert_eq!(rd.s, 2);
        assert!((rd.rd.value().unwrap() - 0.3).abs() < 1e-15);
    }

    fn consult(ts: i64, id: &str) -> Consultation {
        Consultation::new("u", ts, id)
    }

    #[test]
    fn first_step_is_nan_and_silent() {
        let mut d = Detector::new(3, 0.0).unwrap();
        let out = d.step(&consult(0, "a"), item("a", &["x"], None), &schema()).unwrap();
        assert_eq!(out.point.rd, Diversity::NaN);
        assert!(out.change.is_none());
        assert_eq!(d.previous_rd(), Some(Diversity::NaN));
    }

    #[test]
    fn predicate_cases() {
        assert!(is_context_change(Diversity::Value(0.2), Diversity::Value(0.4), 0.23));
        assert!(!is_context_change(Diversity::Value(0.4), Diversity::Value(0.3), 0.23));
        assert!(!is_context_change(Diversity::Value(0.4), Diversity::Value(0.4), 0.23));
        assert!(!is_context_change(Diversity::Value(0.1), Diversity::Value(0.23), 0.23));
        assert!(!is_context_change(Diversity::NaN, Diversity::Value(0.9), 0.23));
        assert!(!is_context_change(Diversity::Value(0.1), Diversity::NaN, 0.23));
    }

    #[test]
    fn invalid_item_leaves_state_untouched() {
        let mut d = Detector::new(3, 0.2).unwrap();
        d.step(&consult(0, "a"), item("a", &["x"], None), &schema()).unwrap();
        let bad = Arc::new(Item {
            id: "bad".into(),
            type_id: "item".into(),
            values: vec![AttributeValue::Numeric(1.0), AttributeValue::Missing],
        });
        assert!(d.step(&consult(1, "bad"), bad, &schema()).is_err());
        assert!(d.step(&consult(-5, "a"), item("a", &["x"], None), &schema()).is_err());
        assert_eq!(d.steps(), 1);
        assert_eq!(d.window().len(), 1);
        assert_eq!(d.comparisons(), 0);
    }

    #[test]
    fn tau_and_k_validation() {
        assert!(Detector::new(0, 0.2).is_err());
        assert!(Detector::new(3, 1.5).is_err());
        assert!(Detector::new(3, f64::NAN).is_err());
    }

    #[test]
    fn calibrate_excludes_nan() {
        let pts: Vec<DiversityPoint> = [Some(0.1), Some(0.3), None, Some(0.2)]
            .iter()
            .enumerate()
            .map(|(i, v)| DiversityPoint {
                index: i,
                rd: v.map_or(Diversity::NaN, Diversity::Value),
                s: 1,
                per_attribute_rd: vec![],
            })
            .collect();
        let c = calibrate_tau(&pts).unwrap();
        assert!((c.mean - 0.2).abs() < 1e-15);
        assert_eq!(c.tau, c.mean);
        assert_eq!(c.count, 3);

        let single = calibrate_tau(&pts[..1].iter().map(|p| DiversityPoint { rd: Diversity::Value(0.5), ..p.clone() }).collect::<Vec<_>>()).unwrap();
        assert_eq!((single.tau, single.sd), (0.5, 0.0));
        assert_eq!(calibrate_tau(&pts[2..3]).unwrap_err(), Error::Calibration);
    }

    #[test]
    fn trace_marks_changes() {
        let s = schema();
        let items = [
            item("a", &["x"], Some(true)),
            item("b", &["x"], Some(true)),
            item("c", &["y"], Some(false)),
        ];
        let catalog = Catalog::new(s, items.iter().map(|i| Item::clone(i)).collect()).unwrap();
        let stream: Vec<_> = ["a", "b", "c"].iter().enumerate().map(|(i, id)| consult(i as i64, id)).collect();
        let out = run_user_stream(&stream, &catalog, 2, 0.2).unwrap();
        assert_eq!(out.changes.len(), 1);
        let trace = trace_records(&stream, &out);
        assert_eq!(trace.iter().map(|t| t.change).collect::<Vec<_>>(), [false, false, true]);
        let line = serde_json::to_string(&trace[0]).unwrap();
        assert!(line.contains("\"rd\":\"NaN\""), "{line}");
    }
}
