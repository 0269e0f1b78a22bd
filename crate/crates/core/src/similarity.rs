//! Attribute-level similarities and the weighted item similarity.
//!
//! Every function returns [`SimResult`]; an attribute that cannot be
//! compared (a Missing value, an empty set) yields `NotComputable` and is
//! left out of the item aggregate rather than counted as zero.

use std::collections::BTreeSet;

use crate::catalog::{AttributeValue, Item};
use crate::error::{Error, Result};
use crate::schema::{AttributeKind, AttributeSpec, Schema, ANTIPODAL_DISTANCE_KM, EARTH_RADIUS_KM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimResult {
    Value(f64),
    NotComputable,
}

impl SimResult {
    pub fn value(self) -> Option<f64> {
        match self {
            SimResult::Value(v) => Some(v),
            SimResult::NotComputable => None,
        }
    }

    pub fn is_computable(self) -> bool {
        matches!(self, SimResult::Value(_))
    }
}

pub fn sim_set(a: &BTreeSet<String>, b: &BTreeSet<String>) -> SimResult {
    let smaller = a.len().min(b.len());
    if smaller == 0 {
        return SimResult::NotComputable;
    }
    let common = a.intersection(b).count();
    SimResult::Value(common as f64 / smaller as f64)
}

/// Overlap length over the longer interval's length. Two points are
/// similar only when equal; a point against a proper interval scores 0.
pub fn sim_interval(a: (f64, f64), b: (f64, f64)) -> SimResult {
    let (len_a, len_b) = (a.1 - a.0, b.1 - b.0);
    let longest = len_a.max(len_b);
    if longest == 0.0 {
        return SimResult::Value(if a.0 == b.0 { 1.0 } else { 0.0 });
    }
    let overlap = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    SimResult::Value((overlap / longest).min(1.0))
}

pub fn sim_binary(a: bool, b: bool) -> SimResult {
    SimResult::Value(if a == b { 1.0 } else { 0.0 })
}

fn gaussian(a: f64, b: f64, range: f64, decay: f64) -> f64 {
    let z = (a - b) / range;
    (-decay * z * z).exp()
}

/// `exp(-decay * ((a - b) / (max - min))^2)`.
pub fn sim_numeric(a: f64, b: f64, spec: &AttributeSpec) -> Result<SimResult> {
    let bounds = spec
        .numeric_bounds
        .filter(|b| b.min < b.max)
        .ok_or_else(|| Error::Argument(format!("attribute `{}` has no usable numeric bounds", spec.name)))?;
    if !(spec.decay > 0.0) {
        return Err(Error::Argument(format!("attribute `{}` has non-positive decay", spec.name)));
    }
    Ok(SimResult::Value(gaussian(a, b, bounds.range(), spec.decay)))
}

/// Great-circle distance in kilometres between two (lat, lon) points in
/// degrees on a sphere of radius 6371 km. Uses the atan2 form, which stays
/// accurate for both nearby and near-antipodal points.
pub fn great_circle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    // fixed argument order keeps the result bit-identical under swapping
    let (a, b) = if a.partial_cmp(&b) == Some(std::cmp::Ordering::Greater) { (b, a) } else { (a, b) };
    let (lat1, lat2) = (a.0.to_radians(), b.0.to_radians());
    let dlon = (b.1 - a.1).to_radians();
    let (sin1, cos1) = lat1.sin_cos();
    let (sin2, cos2) = lat2.sin_cos();
    let (sin_dlon, cos_dlon) = dlon.sin_cos();
    let y = (cos2 * sin_dlon).hypot(cos1 * sin2 - sin1 * cos2 * cos_dlon);
    let x = sin1 * sin2 + cos1 * cos2 * cos_dlon;
    EARTH_RADIUS_KM * y.atan2(x)
}

pub fn sim_coordinate(a: (f64, f64), b: (f64, f64), spec: &AttributeSpec) -> SimResult {
    let max_distance = spec.max_distance.unwrap_or(ANTIPODAL_DISTANCE_KM);
    SimResult::Value((1.0 - great_circle_km(a, b) / max_distance).clamp(0.0, 1.0))
}

/// Similarity of two values of one attribute. Missing values and values of
/// the wrong kind are not comparable.
pub fn sim_attribute(a: &AttributeValue, b: &AttributeValue, spec: &AttributeSpec) -> SimResult {
    use AttributeValue as V;
    match (spec.kind, a, b) {
        (AttributeKind::Set, V::Set(x), V::Set(y)) => sim_set(x, y),
        (AttributeKind::Interval, V::Interval { lo: l1, hi: h1 }, V::Interval { lo: l2, hi: h2 }) => {
            sim_interval((*l1, *h1), (*l2, *h2))
        }
        (AttributeKind::Binary, V::Binary(x), V::Binary(y)) => sim_binary(*x, *y),
        (AttributeKind::Numeric, V::Numeric(x), V::Numeric(y)) => match spec.numeric_bounds {
            Some(bounds) if bounds.min < bounds.max => {
                SimResult::Value(gaussian(*x, *y, bounds.range(), spec.decay))
            }
            _ => SimResult::NotComputable,
        },
        (AttributeKind::Coordinate, V::Coordinate { lat: a1, lon: o1 }, V::Coordinate { lat: a2, lon: o2 }) => {
            sim_coordinate((*a1, *o1), (*a2, *o2), spec)
        }
        _ => SimResult::NotComputable,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemSimilarity {
    pub aggregate: SimResult,
    /// One entry per schema attribute, in schema order.
    pub per_attribute: Vec<SimResult>,
}

impl ItemSimilarity {
    pub fn attribute(&self, schema: &Schema, name: &str) -> Option<SimResult> {
        schema.position(name).map(|i| self.per_attribute[i])
    }
}

/// Weighted mean of the attribute similarities over the attributes both
/// items can be compared on. Not computable when no such attribute exists
/// (or when all of them carry zero weight).
pub fn sim_items(a: &Item, b: &Item, schema: &Schema) -> ItemSimilarity {
    let mut weighted = 0.0;
    let mut weights = 0.0;
    let per_attribute: Vec<SimResult> = schema
        .attributes()
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(spec, (x, y))| {
            let sim = sim_attribute(x, y, spec);
            if let SimResult::Value(v) = sim {
                weighted += spec.weight * v;
                weights += spec.weight;
            }
            sim
        })
        .collect();
    let aggregate = if weights > 0.0 {
        SimResult::Value(weighted / weights)
    } else {
        SimResult::NotComputable
    };
    ItemSimilarity {
        aggregate,
        per_attribute,
    }
}
