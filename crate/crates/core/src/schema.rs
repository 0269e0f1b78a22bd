//! Attribute universe: kinds, weights and normalisation constants.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::SchemaError;

/// Mean Earth radius in kilometres used by the coordinate similarity.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Half circumference of the reference sphere: the largest possible
/// great-circle distance between two geographic points.
pub const ANTIPODAL_DISTANCE_KM: f64 = std::f64::consts::PI * EARTH_RADIUS_KM;

pub const DEFAULT_DECAY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    /// A list of identifiers, compared by overlap over the smaller set.
    Set,
    /// A closed real interval, compared by overlap over the longer interval.
    Interval,
    Binary,
    /// A real value compared by a Gaussian kernel over the corpus range.
    Numeric,
    /// A latitude/longitude pair compared by great-circle distance.
    Coordinate,
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttributeKind::Set => "set",
            AttributeKind::Interval => "interval",
            AttributeKind::Binary => "binary",
            AttributeKind::Numeric => "numeric",
            AttributeKind::Coordinate => "coordinate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericBounds {
    pub min: f64,
    pub max: f64,
}

impl NumericBounds {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    pub weight: f64,
    pub numeric_bounds: Option<NumericBounds>,
    pub max_distance: Option<f64>,
    pub decay: f64,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, kind: AttributeKind) -> Self {
        AttributeSpec {
            name: name.into(),
            kind,
            weight: 1.0,
            numeric_bounds: None,
            max_distance: match kind {
                AttributeKind::Coordinate => Some(ANTIPODAL_DISTANCE_KM),
                _ => None,
            },
            decay: DEFAULT_DECAY,
        }
    }

    pub fn numeric(name: impl Into<String>, min: f64, max: f64) -> Self {
        AttributeSpec {
            numeric_bounds: Some(NumericBounds { min, max }),
            ..AttributeSpec::new(name, AttributeKind::Numeric)
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_decay(mut self, decay: f64) -> Self {
        self.decay = decay;
        self
    }

    pub fn with_max_distance(mut self, max_distance: f64) -> Self {
        self.max_distance = Some(max_distance);
        self
    }

    fn validate(&self) -> Result<(), SchemaError> {
        let fail = |rule: &str| {
            Err(SchemaError::Validation {
                attribute: self.name.clone(),
                rule: rule.to_string(),
            })
        };
        if self.name.is_empty() {
            return fail("attribute name must not be empty");
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return fail("weight must be a finite non-negative number");
        }
        if !(self.decay.is_finite() && self.decay > 0.0) {
            return fail("decay must be a finite positive number");
        }
        match self.kind {
            AttributeKind::Numeric => match self.numeric_bounds {
                None => return fail("numeric attribute requires min and max bounds"),
                Some(b) if !(b.min.is_finite() && b.max.is_finite()) => {
                    return fail("numeric bounds must be finite")
                }
                Some(b) if b.min >= b.max => return fail("numeric bounds require min < max"),
                Some(_) => {}
            },
            _ if self.numeric_bounds.is_some() => {
                return fail("min/max bounds are only allowed on numeric attributes")
            }
            _ => {}
        }
        match self.kind {
            AttributeKind::Coordinate => match self.max_distance {
                Some(d) if d.is_finite() && d > 0.0 => {}
                _ => return fail("coordinate attribute requires a positive max_distance"),
            },
            _ if self.max_distance.is_some() => {
                return fail("max_distance is only allowed on coordinate attributes")
            }
            _ => {}
        }
        Ok(())
    }
}

/// Validated, ordered attribute universe. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    attributes: Vec<AttributeSpec>,
    index: HashMap<String, usize>,
}

impl Schema {
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Self, SchemaError> {
        let mut index = HashMap::with_capacity(attributes.len());
        for (pos, spec) in attributes.iter().enumerate() {
            spec.validate()?;
            if index.insert(spec.name.clone(), pos).is_some() {
                return Err(SchemaError::Validation {
                    attribute: spec.name.clone(),
                    rule: "attribute names must be unique".into(),
                });
            }
        }
        if !attributes.is_empty() && attributes.iter().all(|a| a.weight == 0.0) {
            return Err(SchemaError::Validation {
                attribute: attributes[0].name.clone(),
                rule: "at least one attribute must have a positive weight".into(),
            });
        }
        Ok(Schema { attributes, index })
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&AttributeSpec> {
        self.position(name).map(|i| &self.attributes[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    /// Same schema with every weight reset to 1.
    pub fn default_weights(&self) -> Schema {
        let attributes = self
            .attributes
            .iter()
            .cloned()
            .map(|a| a.with_weight(1.0))
            .collect();
        Schema {
            attributes,
            index: self.index.clone(),
        }
    }

    /// Replaces the bounds of one numeric attribute, revalidating.
    pub fn with_numeric_bounds(&self, name: &str, min: f64, max: f64) -> Result<Schema, SchemaError> {
        let mut attributes = self.attributes.clone();
        let pos = self.position(name).ok_or_else(|| SchemaError::Validation {
            attribute: name.to_string(),
            rule: "attribute not declared in schema".into(),
        })?;
        attributes[pos].numeric_bounds = Some(NumericBounds { min, max });
        Schema::new(attributes)
    }

    pub fn from_toml_str(source: &str) -> Result<Schema, SchemaError> {
        let doc: SchemaDocument = toml::from_str(source).map_err(|e| {
            let line = e
                .span()
                .map(|span| source[..span.start.min(source.len())].lines().count().max(1));
            SchemaError::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        let specs = doc
            .attribute
            .into_iter()
            .map(AttributeEntry::into_spec)
            .collect::<Result<Vec<_>, _>>()?;
        Schema::new(specs)
    }

    pub fn to_toml_string(&self) -> String {
        let doc = SchemaDocument {
            attribute: self.attributes.iter().map(AttributeEntry::from_spec).collect(),
        };
        toml::to_string(&doc).expect("schema document always serialises")
    }
}

/// Parses and validates a schema document.
pub fn load_schema(source: &str) -> Result<Schema, SchemaError> {
    Schema::from_toml_str(source)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDocument {
    #[serde(default)]
    attribute: Vec<AttributeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeEntry {
    name: String,
    kind: AttributeKind,
    #[serde(default = "one")]
    weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decay: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl AttributeEntry {
    fn into_spec(self) -> Result<AttributeSpec, SchemaError> {
        let fail = |rule: &str| SchemaError::Validation {
            attribute: self.name.clone(),
            rule: rule.to_string(),
        };
        let numeric_bounds = match (self.min, self.max) {
            (Some(min), Some(max)) => Some(NumericBounds { min, max }),
            (None, None) => None,
            _ => return Err(fail("min and max must be given together")),
        };
        if self.decay.is_some() && self.kind != AttributeKind::Numeric {
            return Err(fail("decay is only allowed on numeric attributes"));
        }
        let max_distance = match self.kind {
            AttributeKind::Coordinate => Some(self.max_distance.unwrap_or(ANTIPODAL_DISTANCE_KM)),
            _ => self.max_distance,
        };
        Ok(AttributeSpec {
            name: self.name,
            kind: self.kind,
            weight: self.weight,
            numeric_bounds,
            max_distance,
            decay: self.decay.unwrap_or(DEFAULT_DECAY),
        })
    }

    fn from_spec(spec: &AttributeSpec) -> Self {
        AttributeEntry {
            name: spec.name.clone(),
            kind: spec.kind,
            weight: spec.weight,
            min: spec.numeric_bounds.map(|b| b.min),
            max: spec.numeric_bounds.map(|b| b.max),
            max_distance: spec.max_distance,
            decay: (spec.kind == AttributeKind::Numeric).then_some(spec.decay),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loads_tempo_numeric() {
        let schema = load_schema(
            r#"
[[attribute]]
name = "tempo"
kind = "numeric"
min = 35
max = 239
"#,
        )
        .unwrap();
        assert_eq!(schema.len(), 1);
        let tempo = schema.get("tempo").unwrap();
        assert_eq!(tempo.kind, AttributeKind::Numeric);
        assert_eq!(tempo.weight, 1.0);
        assert_eq!(tempo.decay, 10.0);
        assert_eq!(tempo.numeric_bounds, Some(NumericBounds { min: 35.0, max: 239.0 }));
    }

    #[test]
    fn numeric_without_bounds_is_rejected() {
        let err = load_schema("[[attribute]]\nname = \"tempo\"\nkind = \"numeric\"\n").unwrap_err();
        match err {
            SchemaError::Validation { attribute, .. } => assert_eq!(attribute, "tempo"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let err = load_schema(
            "[[attribute]]\nname = \"mode\"\nkind = \"binary\"\n[[attribute]]\nname = \"mode\"\nkind = \"binary\"\n",
        )
        .unwrap_err();
        assert!(matches!(err, SchemaError::Validation { ref attribute, .. } if attribute == "mode"));
    }

    #[test]
    fn inverted_bounds_and_bad_weight() {
        assert!(Schema::new(vec![AttributeSpec::numeric("x", 2.0, 2.0)]).is_err());
        assert!(Schema::new(vec![AttributeSpec::new("s", AttributeKind::Set).with_weight(-1.0)]).is_err());
        assert!(Schema::new(vec![AttributeSpec::new("s", AttributeKind::Set).with_weight(0.0)]).is_err());
        assert!(Schema::new(vec![AttributeSpec::new("c", AttributeKind::Coordinate).with_max_distance(0.0)]).is_err());
    }

    #[test]
    fn parse_error_reports_line() {
        let err = load_schema("[[attribute]]\nname = \"a\"\nkind = \"colour\"\n").unwrap_err();
        match err {
            SchemaError::Parse { line, .. } => assert_eq!(line, Some(3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coordinate_defaults_to_antipodal_distance() {
        let schema = load_schema("[[attribute]]\nname = \"loc\"\nkind = \"coordinate\"\n").unwrap();
        let d = schema.get("loc").unwrap().max_distance.unwrap();
        assert!((d - 20015.086796).abs() < 1e-5);
    }

    #[test]
    fn default_weights_resets_to_one() {
        let schema = Schema::new(vec![
            AttributeSpec::new("a", AttributeKind::Set).with_weight(2.0),
            AttributeSpec::new("b", AttributeKind::Binary).with_weight(0.5),
        ])
        .unwrap();
        let reset = schema.default_weights();
        assert!(reset.attributes().iter().all(|a| a.weight == 1.0));
        assert_eq!(reset.default_weights(), reset);

        let empty = Schema::new(vec![]).unwrap();
        assert!(empty.default_weights().is_empty());
    }

    fn arb_spec() -> impl Strategy<Value = AttributeSpec> {
        let weight = 0.0f64..5.0;
        prop_oneof![
            weight.clone().prop_map(|w| AttributeSpec::new("", AttributeKind::Set).with_weight(w)),
            weight.clone().prop_map(|w| AttributeSpec::new("", AttributeKind::Interval).with_weight(w)),
            weight.clone().prop_map(|w| AttributeSpec::new("", AttributeKind::Binary).with_weight(w)),
            (weight.clone(), -1e6f64..1e6, 1e-3f64..1e6, 0.1f64..50.0).prop_map(|(w, lo, span, decay)| {
                AttributeSpec::numeric("", lo, lo + span).with_weight(w).with_decay(decay)
            }),
            (weight, 1.0f64..40000.0).prop_map(|(w, d)| {
                AttributeSpec::new("", AttributeKind::Coordinate).with_weight(w).with_max_distance(d)
            }),
        ]
    }

    proptest! {
        #[test]
        fn toml_round_trip(specs in prop::collection::vec(arb_spec(), 1..8)) {
            let specs: Vec<_> = specs
                .into_iter()
                .enumerate()
                .map(|(i, mut s)| { s.name = format!("attr_{i}"); s.weight += 0.01; s })
                .collect();
            let schema = Schema::new(specs).unwrap();
            let back = load_schema(&schema.to_toml_string()).unwrap();
            prop_assert_eq!(back, schema);
        }
    }
}
