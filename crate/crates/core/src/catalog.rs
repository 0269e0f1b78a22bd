//! Item catalog, consultation logs and the corpus transformations used by the
//! robustness experiments.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::schema::{AttributeKind, Schema};

pub const DEFAULT_ITEM_TYPE: &str = "item";

/// Largest deletion rate accepted by [`degrade_catalog`].
pub const MAX_SPARSITY: f64 = 0.99;

/// Number of subset families drawn before a type split is declared infeasible.
pub const MAX_FAMILY_DRAWS: usize = 10_000;
const DRAWS_PER_TYPE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeValue {
    Set(BTreeSet<String>),
    Interval { lo: f64, hi: f64 },
    Binary(bool),
    Numeric(f64),
    Coordinate { lat: f64, lon: f64 },
    Missing,
}

impl AttributeValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, AttributeValue::Missing)
    }

    pub fn set<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AttributeValue::Set(values.into_iter().map(Into::into).collect())
    }

    pub fn kind(&self) -> Option<AttributeKind> {
        Some(match self {
            AttributeValue::Set(_) => AttributeKind::Set,
            AttributeValue::Interval { .. } => AttributeKind::Interval,
            AttributeValue::Binary(_) => AttributeKind::Binary,
            AttributeValue::Numeric(_) => AttributeKind::Numeric,
            AttributeValue::Coordinate { .. } => AttributeKind::Coordinate,
            AttributeValue::Missing => return None,
        })
    }

    fn check(&self) -> std::result::Result<(), String> {
        match *self {
            AttributeValue::Interval { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err("interval bounds must be finite".into());
                }
                if lo > hi {
                    return Err(format!("interval lower bound {lo} exceeds upper bound {hi}"));
                }
            }
            AttributeValue::Numeric(v) if !v.is_finite() => {
                return Err("numeric value must be finite".into());
            }
            AttributeValue::Coordinate { lat, lon } => {
                if !(-90.0..=90.0).contains(&lat) {
                    return Err(format!("latitude {lat} outside [-90, 90]"));
                }
                if !(-180.0..=180.0).contains(&lon) {
                    return Err(format!("longitude {lon} outside [-180, 180]"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn from_json(kind: AttributeKind, raw: &Json) -> std::result::Result<Self, String> {
        if raw.is_null() {
            return Ok(AttributeValue::Missing);
        }
        let pair = |raw: &Json| -> std::result::Result<(f64, f64), String> {
            match raw.as_array().map(Vec::as_slice) {
                Some([a, b]) => match (a.as_f64(), b.as_f64()) {
                    (Some(a), Some(b)) => Ok((a, b)),
                    _ => Err("expected a pair of numbers".into()),
                },
                _ => Err("expected a two-element array".into()),
            }
        };
        let value = match kind {
            AttributeKind::Set => {
                let items = raw.as_array().ok_or("expected a list of strings")?;
                let set = items
                    .iter()
                    .map(|v| v.as_str().map(str::to_string).ok_or("expected a list of strings"))
                    .collect::<std::result::Result<BTreeSet<_>, _>>()?;
                AttributeValue::Set(set)
            }
            AttributeKind::Interval => {
                let (lo, hi) = pair(raw)?;
                AttributeValue::Interval { lo, hi }
            }
            AttributeKind::Binary => match raw.as_f64() {
                Some(0.0) => AttributeValue::Binary(false),
                Some(1.0) => AttributeValue::Binary(true),
                _ => return Err(format!("expected 0 or 1, found {raw}")),
            },
            AttributeKind::Numeric => {
                AttributeValue::Numeric(raw.as_f64().ok_or_else(|| format!("expected a number, found {raw}"))?)
            }
            AttributeKind::Coordinate => {
                let (lat, lon) = pair(raw)?;
                AttributeValue::Coordinate { lat, lon }
            }
        };
        value.check()?;
        Ok(value)
    }

    fn to_json(&self) -> Json {
        match self {
            AttributeValue::Set(s) => Json::from(s.iter().cloned().collect::<Vec<_>>()),
            AttributeValue::Interval { lo, hi } => Json::from(vec![*lo, *hi]),
            AttributeValue::Binary(b) => Json::from(u8::from(*b)),
            AttributeValue::Numeric(v) => Json::from(*v),
            AttributeValue::Coordinate { lat, lon } => Json::from(vec![*lat, *lon]),
            AttributeValue::Missing => Json::Null,
        }
    }
}

/// A catalog entry. `values` is aligned with the schema's attribute order.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub type_id: String,
    pub values: Vec<AttributeValue>,
}

impl Item {
    /// Builds an item from named values; unnamed attributes are Missing.
    pub fn from_named<I, S>(id: impl Into<String>, schema: &Schema, values: I) -> Result<Item>
    where
        I: IntoIterator<Item = (S, AttributeValue)>,
        S: AsRef<str>,
    {
        let id = id.into();
        let mut slots = vec![AttributeValue::Missing; schema.len()];
        for (name, value) in values {
            let name = name.as_ref();
            let pos = schema.position(name).ok_or_else(|| Error::InvalidValue {
                item: id.clone(),
                attribute: name.to_string(),
                message: "attribute not declared in schema".into(),
            })?;
            slots[pos] = value;
        }
        let item = Item {
            id,
            type_id: DEFAULT_ITEM_TYPE.to_string(),
            values: slots,
        };
        item.validate(schema)?;
        Ok(item)
    }

    pub fn value(&self, schema: &Schema, name: &str) -> Option<&AttributeValue> {
        schema.position(name).and_then(|i| self.values.get(i))
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.values.len() != schema.len() {
            return Err(Error::InvalidValue {
                item: self.id.clone(),
                attribute: String::new(),
                message: format!(
                    "item carries {} attribute slots, schema declares {}",
                    self.values.len(),
                    schema.len()
                ),
            });
        }
        for (value, spec) in self.values.iter().zip(schema.attributes()) {
            let bad = |message: String| Error::InvalidValue {
                item: self.id.clone(),
                attribute: spec.name.clone(),
                message,
            };
            if let Some(kind) = value.kind() {
                if kind != spec.kind {
                    return Err(bad(format!("expected a {} value, found {kind}", spec.kind)));
                }
            }
            value.check().map_err(bad)?;
        }
        Ok(())
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_missing()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consultation {
    #[serde(rename = "user")]
    pub user_id: String,
    #[serde(rename = "ts")]
    pub timestamp: i64,
    #[serde(rename = "item")]
    pub item_id: String,
}

impl Consultation {
    pub fn new(user_id: impl Into<String>, timestamp: i64, item_id: impl Into<String>) -> Self {
        Consultation {
            user_id: user_id.into(),
            timestamp,
            item_id: item_id.into(),
        }
    }
}

/// Per-user consultation streams, keyed and iterated in user-id order.
pub type UserLogs = BTreeMap<String, Vec<Consultation>>;

/// Validated item collection. Items keep their load order, which is the
/// canonical cell order for randomized transformations.
#[derive(Debug, Clone)]
pub struct Catalog {
    schema: Schema,
    items: Vec<Arc<Item>>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(schema: Schema, items: Vec<Item>) -> Result<Catalog> {
        let mut by_id = HashMap::with_capacity(items.len());
        let mut stored = Vec::with_capacity(items.len());
        for (pos, item) in items.into_iter().enumerate() {
            item.validate(&schema)?;
            if by_id.insert(item.id.clone(), pos).is_some() {
                return Err(Error::DuplicateItem(item.id));
            }
            stored.push(Arc::new(item));
        }
        Ok(Catalog {
            schema,
            items: stored,
            by_id,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn items(&self) -> &[Arc<Item>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Arc<Item>> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    /// Total number of non-Missing attribute cells.
    pub fn present_cells(&self) -> usize {
        self.items.iter().map(|i| i.present_count()).sum()
    }

    /// Same items under a different (compatible) schema, e.g. one with
    /// re-derived bounds or weights.
    pub fn with_schema(&self, schema: Schema) -> Result<Catalog> {
        for item in &self.items {
            item.validate(&schema)?;
        }
        Ok(Catalog {
            schema,
            items: self.items.clone(),
            by_id: self.by_id.clone(),
        })
    }

    fn rebuild(&self, items: Vec<Arc<Item>>) -> Catalog {
        Catalog {
            schema: self.schema.clone(),
            items,
            by_id: self.by_id.clone(),
        }
    }

    /// Serialises one item as a record line.
    pub fn item_record(&self, item: &Item) -> String {
        let attrs: serde_json::Map<String, Json> = self
            .schema
            .names()
            .zip(&item.values)
            .filter(|(_, v)| !v.is_missing())
            .map(|(name, v)| (name.to_string(), v.to_json()))
            .collect();
        serde_json::json!({ "id": item.id, "type": item.type_id, "attrs": attrs }).to_string()
    }

    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&self.item_record(item));
            out.push('\n');
        }
        out
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemRecord {
    id: Json,
    #[serde(rename = "type", default)]
    type_id: Option<String>,
    #[serde(default)]
    attrs: serde_json::Map<String, Json>,
}

fn identifier(raw: &Json) -> Option<String> {
    match raw {
        Json::String(s) => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses line-delimited item records. Blank lines are skipped.
pub fn load_catalog(source: &str, schema: &Schema) -> Result<Catalog> {
    let mut items = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ItemRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = identifier(&record.id).ok_or_else(|| Error::Malformed {
            line: line_no,
            message: "item id must be a string or number".into(),
        })?;
        let mut values = vec![AttributeValue::Missing; schema.len()];
        for (name, raw) in &record.attrs {
            let pos = schema.position(name).ok_or_else(|| Error::InvalidValue {
                item: id.clone(),
                attribute: name.clone(),
                message: "attribute not declared in schema".into(),
            })?;
            let kind = schema.attributes()[pos].kind;
            values[pos] = AttributeValue::from_json(kind, raw).map_err(|message| Error::InvalidValue {
                item: id.clone(),
                attribute: name.clone(),
                message,
            })?;
        }
        items.push(Item {
            id,
            type_id: record.type_id.unwrap_or_else(|| DEFAULT_ITEM_TYPE.to_string()),
            values,
        });
    }
    Catalog::new(schema.clone(), items)
}

/// Parses line-delimited consultation records into per-user streams sorted
/// by timestamp (stable, so ties keep input order).
pub fn load_log(source: &str, catalog: &Catalog) -> Result<UserLogs> {
    let mut logs = UserLogs::new();
    for (lineno, line) in source.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: serde_json::Map<String, Json> = serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let field = |name: &str| {
            record.get(name).ok_or_else(|| Error::Malformed {
                line: line_no,
                message: format!("missing field `{name}`"),
            })
        };
        let user = identifier(field("user")?).ok_or_else(|| Error::Malformed {
            line: line_no,
            message: "user must be a string or number".into(),
        })?;
        let item = identifier(field("item")?).ok_or_else(|| Error::Malformed {
            line: line_no,
            message: "item must be a string or number".into(),
        })?;
        let ts = field("ts")?;
        let timestamp = ts.as_i64().ok_or_else(|| Error::Timestamp {
            line: line_no,
            message: format!("expected integer epoch seconds, found {ts}"),
        })?;
        if catalog.get(&item).is_none() {
            return Err(Error::UnknownItem { line: line_no, item });
        }
        logs.entry(user.clone())
            .or_default()
            .push(Consultation::new(user, timestamp, item));
    }
    for stream in logs.values_mut() {
        stream.sort_by_key(|c| c.timestamp);
    }
    Ok(logs)
}

pub fn log_records(logs: &UserLogs) -> String {
    let mut out = String::new();
    for c in logs.values().flatten() {
        out.push_str(&serde_json::to_string(c).expect("consultation serialises"));
        out.push('\n');
    }
    out
}

fn scalar(value: &AttributeValue) -> Option<f64> {
    match *value {
        AttributeValue::Numeric(v) => Some(v),
        _ => None,
    }
}

/// Fills the bounds of every numeric attribute with the observed extrema.
pub fn derive_numeric_bounds(catalog: &Catalog) -> Result<Schema> {
    if catalog.is_empty() {
        return Err(Error::Argument("cannot derive bounds from an empty catalog".into()));
    }
    let mut schema = catalog.schema().clone();
    for (pos, spec) in catalog.schema().attributes().iter().enumerate() {
        if spec.kind != AttributeKind::Numeric {
            continue;
        }
        let (min, max) = catalog
            .items()
            .iter()
            .filter_map(|i| scalar(&i.values[pos]))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(min < max) {
            return Err(Error::DegenerateRange {
                attribute: spec.name.clone(),
            });
        }
        schema = schema.with_numeric_bounds(&spec.name, min, max)?;
    }
    Ok(schema)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Summary {
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            sd: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeStats {
    pub name: String,
    pub kind: AttributeKind,
    /// What the summary is computed over: the value itself for numeric and
    /// binary attributes, set cardinality, interval length. Coordinates are
    /// counted but not summarised.
    pub measure: &'static str,
    pub present: usize,
    pub summary: Option<Summary>,
}

impl AttributeStats {
    pub fn is_absent(&self) -> bool {
        self.present == 0
    }
}

/// Per-attribute statistics over non-Missing values.
pub fn corpus_stats(catalog: &Catalog) -> Vec<AttributeStats> {
    catalog
        .schema()
        .attributes()
        .iter()
        .enumerate()
        .map(|(pos, spec)| {
            let cells: Vec<&AttributeValue> = catalog
                .items()
                .iter()
                .map(|i| &i.values[pos])
                .filter(|v| !v.is_missing())
                .collect();
            let measure = match spec.kind {
                AttributeKind::Numeric | AttributeKind::Binary => "value",
                AttributeKind::Set => "cardinality",
                AttributeKind::Interval => "length",
                AttributeKind::Coordinate => "none",
            };
            let measured: Vec<f64> = cells
                .iter()
                .filter_map(|v| match v {
                    AttributeValue::Numeric(x) => Some(*x),
                    AttributeValue::Binary(b) => Some(f64::from(u8::from(*b))),
                    AttributeValue::Set(s) => Some(s.len() as f64),
                    AttributeValue::Interval { lo, hi } => Some(hi - lo),
                    _ => None,
                })
                .collect();
            AttributeStats {
                name: spec.name.clone(),
                kind: spec.kind,
                measure,
                present: cells.len(),
                summary: Summary::of(&measured),
            }
        })
        .collect()
}

/// Number of cells removed for a deletion rate. Rates are decimal fractions,
/// so the product is nudged before flooring to keep e.g. 0.29 * 100 at 29.
pub fn cells_to_delete(sparsity: f64, present: usize) -> usize {
    ((sparsity * present as f64) + 1e-9).floor() as usize
}

/// Sets a uniformly chosen `floor(sparsity * present)` of the non-Missing
/// cells to Missing.
pub fn degrade_catalog(catalog: &Catalog, sparsity: f64, seed: u64) -> Result<Catalog> {
    if !(0.0..=MAX_SPARSITY).contains(&sparsity) {
        return Err(Error::Argument(format!(
            "sparsity {sparsity} outside [0, {MAX_SPARSITY}]"
        )));
    }
    let cells: Vec<(usize, usize)> = catalog
        .items()
        .iter()
        .enumerate()
        .flat_map(|(i, item)| {
            item.values
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_missing())
                .map(move |(a, _)| (i, a))
        })
        .collect();
    let n = cells_to_delete(sparsity, cells.len());
    if n == 0 {
        return Ok(catalog.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut doomed: Vec<Vec<usize>> = vec![Vec::new(); catalog.len()];
    for pick in index::sample(&mut rng, cells.len(), n) {
        let (i, a) = cells[pick];
        doomed[i].push(a);
    }
    let items = catalog
        .items()
        .iter()
        .zip(doomed)
        .map(|(item, attrs)| {
            if attrs.is_empty() {
                return Arc::clone(item);
            }
            let mut copy = Item::clone(item);
            for a in attrs {
                copy.values[a] = AttributeValue::Missing;
            }
            Arc::new(copy)
        })
        .collect();
    Ok(catalog.rebuild(items))
}

#[derive(Debug, Clone)]
pub struct TypeSplit {
    pub catalog: Catalog,
    /// Attribute positions (schema order, ascending) carried by each type.
    pub type_attributes: Vec<Vec<usize>>,
}

pub fn type_label(t: usize) -> String {
    format!("type{}", t + 1)
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|x| b.binary_search(x).is_ok()).count()
}

/// Draws one x-subset of attribute positions per type such that every pair
/// shares at least `min_common` positions. Each family is built type by
/// type, redrawing a type's subset when it violates the pairwise constraint
/// with the types already placed; a family that stalls is discarded.
pub fn draw_type_family(
    rng: &mut crate::rng::Rng,
    types: usize,
    attributes: usize,
    attrs_per_type: usize,
    min_common: usize,
) -> Result<Vec<Vec<usize>>> {
    let infeasible = || Error::InfeasibleSplit {
        types,
        attrs_per_type,
        min_common,
        attributes,
    };
    if types == 0 {
        return Err(Error::Argument("number of types must be at least 1".into()));
    }
    if attrs_per_type == 0 || attrs_per_type > attributes || min_common > attrs_per_type {
        return Err(infeasible());
    }
    for _ in 0..MAX_FAMILY_DRAWS {
        let mut family: Vec<Vec<usize>> = Vec::with_capacity(types);
        'types: for _ in 0..types {
            for _ in 0..DRAWS_PER_TYPE {
                let mut subset = index::sample(rng, attributes, attrs_per_type).into_vec();
                subset.sort_unstable();
                if family.iter().all(|other| overlap(other, &subset) >= min_common) {
                    family.push(subset);
                    continue 'types;
                }
            }
            break;
        }
        if family.len() == types {
            return Ok(family);
        }
    }
    Err(infeasible())
}

/// Partitions the catalog into `types` item types, each restricted to its
/// own random subset of `attrs_per_type` attributes.
pub fn split_types(
    catalog: &Catalog,
    types: usize,
    attrs_per_type: usize,
    min_common: usize,
    seed: u64,
) -> Result<TypeSplit> {
    let mut rng = rng_from_seed(seed);
    let family = draw_type_family(&mut rng, types, catalog.schema().len(), attrs_per_type, min_common)?;
    let labels: Vec<String> = (0..types).map(type_label).collect();
    let items = catalog
        .items()
        .iter()
        .map(|item| {
            let t = rng.random_range(0..types);
            let keep = &family[t];
            let mut copy = Item::clone(item);
            copy.type_id = labels[t].clone();
            for (a, value) in copy.values.iter_mut().enumerate() {
                if keep.binary_search(&a).is_err() {
                    *value = AttributeValue::Missing;
                }
            }
            Arc::new(copy)
        })
        .collect();
    Ok(TypeSplit {
        catalog: catalog.rebuild(items),
        type_attributes: family,
    })
}
