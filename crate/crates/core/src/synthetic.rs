//! Synthetic navigation corpora with planted context boundaries.
//!
//! Each user walks through a sequence of contexts. Inside a context every
//! item shares one value profile (numeric values may jitter by
//! `numeric_noise`). At a boundary a random `attribute_shift` fraction of the
//! attributes is redrawn far from the previous value: fresh set tokens,
//! a disjoint interval, the flipped bit, a numeric value at least half the
//! range away, or a point near the antipode.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::catalog::{AttributeValue, Catalog, Consultation, Item, UserLogs, DEFAULT_ITEM_TYPE};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_GAP_SECONDS;
use crate::rng::{derive_seed, rng_from_seed, Rng as SeededRng};
use crate::schema::{AttributeKind, AttributeSpec, Schema};

const START_TS: i64 = 1_400_000_000;
const INTRA_GAP: (i64, i64) = (120, 400);
const SESSION_GAP: (i64, i64) = (DEFAULT_GAP_SECONDS + 600, 6 * 3600);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub contexts_per_user: usize,
    pub items_per_context: usize,
    pub attribute_shift: f64,
    pub session_gap_probability: f64,
    /// Half-width of the uniform jitter on numeric values, as a fraction of
    /// the attribute range.
    pub numeric_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.contexts_per_user == 0 || self.items_per_context == 0 {
            return Err(Error::Argument("synthetic counts must be positive".into()));
        }
        for (name, v) in [
            ("attribute_shift", self.attribute_shift),
            ("session_gap_probability", self.session_gap_probability),
            ("numeric_noise", self.numeric_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub catalog: Catalog,
    pub logs: UserLogs,
    /// Step indices (per user) where a new context starts.
    pub ground_truth: BTreeMap<String, Vec<usize>>,
}

impl SyntheticCorpus {
    pub fn boundaries(&self) -> usize {
        self.ground_truth.values().map(Vec::len).sum()
    }
}

/// Thirteen attributes modelled on song and artist metadata; numeric
/// bounds follow the observed ranges of a Last.fm/Echo Nest crawl.
pub fn music_schema() -> Schema {
    Schema::new(vec![
        AttributeSpec::numeric("duration", 12.0, 4194.0),
        AttributeSpec::numeric("tempo", 35.0, 239.0),
        AttributeSpec::new("mode", AttributeKind::Binary),
        AttributeSpec::numeric("loudness", 6.6479, 51.019),
        AttributeSpec::numeric("energy", 0.00002, 0.99),
        AttributeSpec::numeric("song_hotttness", 0.000782, 0.91584),
        AttributeSpec::numeric("danceability", 0.039049, 0.9796),
        AttributeSpec::numeric("artist_hotttness", 0.167657, 0.988956),
        AttributeSpec::numeric("artist_familiarity", 0.136275, 0.912051),
        AttributeSpec::new("similar_artists", AttributeKind::Set),
        AttributeSpec::new("terms", AttributeKind::Set),
        AttributeSpec::new("years_active", AttributeKind::Interval),
        AttributeSpec::new("artist_location", AttributeKind::Coordinate),
    ])
    .expect("built-in schema is valid")
}

struct TokenSource {
    prefix: String,
    next: usize,
}

impl TokenSource {
    fn fresh_set(&mut self, rng: &mut SeededRng) -> AttributeValue {
        let size = rng.random_range(3..=6);
        let tokens: Vec<String> = (0..size)
            .map(|_| {
                self.next += 1;
                format!("{}-{}", self.prefix, self.next)
            })
            .collect();
        AttributeValue::set(tokens)
    }
}

fn wrap_lon(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    wrapped.clamp(-180.0, 180.0)
}

fn draw_fresh(spec: &AttributeSpec, tokens: &mut TokenSource, rng: &mut SeededRng) -> AttributeValue {
    match spec.kind {
        AttributeKind::Set => tokens.fresh_set(rng),
        AttributeKind::Interval => {
            let lo = rng.random_range(1950.0..2000.0_f64).round();
            let len = rng.random_range(1.0..15.0_f64).round();
            AttributeValue::Interval { lo, hi: lo + len }
        }
        AttributeKind::Binary => AttributeValue::Binary(rng.random_bool(0.5)),
        AttributeKind::Numeric => {
            let b = spec.numeric_bounds.expect("validated numeric bounds");
            AttributeValue::Numeric(rng.random_range(b.min..=b.max))
        }
        AttributeKind::Coordinate => AttributeValue::Coordinate {
            lat: rng.random_range(-60.0..=60.0),
            lon: rng.random_range(-180.0..180.0),
        },
    }
}

fn draw_far(
    spec: &AttributeSpec,
    previous: &AttributeValue,
    tokens: &mut TokenSource,
    rng: &mut SeededRng,
) -> AttributeValue {
    match (spec.kind, previous) {
        (AttributeKind::Set, _) => tokens.fresh_set(rng),
        (AttributeKind::Interval, AttributeValue::Interval { lo, hi }) => {
            let len = rng.random_range(1.0..15.0_f64).round();
            let gap = rng.random_range(1.0..10.0_f64).round();
            if rng.random_bool(0.5) {
                AttributeValue::Interval { lo: hi + gap, hi: hi + gap + len }
            } else {
                AttributeValue::Interval { lo: lo - gap - len, hi: lo - gap }
            }
        }
        (AttributeKind::Binary, AttributeValue::Binary(b)) => AttributeValue::Binary(!b),
        (AttributeKind::Numeric, AttributeValue::Numeric(v)) => {
            let b = spec.numeric_bounds.expect("validated numeric bounds");
            let half = b.range() / 2.0;
            if *v < b.min + half {
                AttributeValue::Numeric(rng.random_range((v + half).min(b.max)..=b.max))
            } else {
                AttributeValue::Numeric(rng.random_range(b.min..=(v - half).max(b.min)))
            }
        }
        (AttributeKind::Coordinate, AttributeValue::Coordinate { lat, lon }) => AttributeValue::Coordinate {
            lat: (-lat + rng.random_range(-15.0..=15.0)).clamp(-90.0, 90.0),
            lon: wrap_lon(lon + 180.0 + rng.random_range(-15.0..=15.0)),
        },
        _ => draw_fresh(spec, tokens, rng),
    }
}

fn jitter(spec: &AttributeSpec, value: &AttributeValue, noise: f64, rng: &mut SeededRng) -> AttributeValue {
    match (value, spec.numeric_bounds) {
        (AttributeValue::Numeric(v), Some(b)) if noise > 0.0 => {
            let delta = rng.random_range(-noise..=noise) * b.range();
            AttributeValue::Numeric((v + delta).clamp(b.min, b.max))
        }
        _ => value.clone(),
    }
}

/// Builds a corpus whose context boundaries are known. Users are generated
/// from independent sub-seeds, so the output is a pure function of
/// `(spec, schema)`.
pub fn generate_synthetic(spec: &SyntheticSpec, schema: &Schema) -> Result<SyntheticCorpus> {
    spec.validate()?;
    if schema.is_empty() {
        return Err(Error::Argument("synthetic generation needs a non-empty schema".into()));
    }
    let h = schema.len();
    let shifted = ((spec.attribute_shift * h as f64).round() as usize).min(h);
    let mut items = Vec::with_capacity(spec.num_users * spec.contexts_per_user * spec.items_per_context);
    let mut logs = UserLogs::new();
    let mut ground_truth = BTreeMap::new();
    let width = spec.num_users.to_string().len();

    for u in 0..spec.num_users {
        let user = format!("u{u:0width$}");
        let mut rng = rng_from_seed(derive_seed(spec.seed, "synthetic-user", u as u64));
        let mut tokens = TokenSource {
            prefix: user.clone(),
            next: 0,
        };
        let mut profile: Vec<AttributeValue> = schema
            .attributes()
            .iter()
            .map(|a| draw_fresh(a, &mut tokens, &mut rng))
            .collect();
        let mut stream = Vec::with_capacity(spec.contexts_per_user * spec.items_per_context);
        let mut boundaries = Vec::with_capacity(spec.contexts_per_user.saturating_sub(1));
        let mut ts = START_TS + rng.random_range(0..86_400);

        for context in 0..spec.contexts_per_user {
            if context > 0 {
                for a in index::sample(&mut rng, h, shifted) {
                    profile[a] = draw_far(&schema.attributes()[a], &profile[a], &mut tokens, &mut rng);
                }
                boundaries.push(stream.len());
            }
            for j in 0..spec.items_per_context {
                if !stream.is_empty() {
                    let new_session = j == 0 && rng.random_bool(spec.session_gap_probability);
                    let (lo, hi) = if new_session { SESSION_GAP } else { INTRA_GAP };
                    ts += rng.random_range(lo..=hi);
                }
                let id = format!("{user}-c{context}-i{j}");
                let values = schema
                    .attributes()
                    .iter()
                    .zip(&profile)
                    .map(|(a, v)| jitter(a, v, spec.numeric_noise, &mut rng))
                    .collect();
                items.push(Item {
                    id: id.clone(),
                    type_id: DEFAULT_ITEM_TYPE.to_string(),
                    values,
                });
                stream.push(Consultation::new(user.clone(), ts, id));
            }
        }
        logs.insert(user.clone(), stream);
        ground_truth.insert(user, boundaries);
    }

    Ok(SyntheticCorpus {
        catalog: Catalog::new(schema.clone(), items)?,
        logs,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversity::run_user_stream;
    use crate::evaluation::sessionize;

    fn spec(contexts: usize) -> SyntheticSpec {
        SyntheticSpec {
            num_users: 10,
            contexts_per_user: contexts,
            items_per_context: 20,
            attribute_shift: 1.0,
            session_gap_probability: 1.0,
            numeric_noise: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn single_context_has_no_boundaries() {
        let corpus = generate_synthetic(&spec(1), &music_schema()).unwrap();
        assert!(corpus.ground_truth.values().all(Vec::is_empty));
    }

    #[test]
    fn boundary_count() {
        let corpus = generate_synthetic(&spec(5), &music_schema()).unwrap();
        assert_eq!(corpus.boundaries(), 40);
        assert_eq!(corpus.catalog.len(), 10 * 5 * 20);
        assert_eq!(corpus.logs.len(), 10);
    }

    #[test]
    fn gaps_mark_boundaries_as_sessions() {
        let corpus = generate_synthetic(&spec(5), &music_schema()).unwrap();
        for (user, stream) in &corpus.logs {
            let starts: Vec<usize> = sessionize(stream, DEFAULT_GAP_SECONDS)
                .unwrap()
                .iter()
                .map(|s| s.start_index)
                .skip(1)
                .collect();
            assert_eq!(&starts, &corpus.ground_truth[user]);
        }
    }

    #[test]
    fn full_shift_makes_set_attributes_maximally_diverse() {
        let schema = music_schema();
        let corpus = generate_synthetic(&spec(3), &schema).unwrap();
        let terms = schema.position("terms").unwrap();
        for (user, stream) in &corpus.logs {
            let out = run_user_stream(stream, &corpus.catalog, 5, 1.0).unwrap();
            for &b in &corpus.ground_truth[user] {
                assert_eq!(out.points[b].per_attribute_rd[terms].value(), Some(1.0));
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&spec(4), &music_schema()).unwrap();
        let b = generate_synthetic(&spec(4), &music_schema()).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.catalog.to_records(), b.catalog.to_records());
    }

    #[test]
    fn rejects_bad_spec() {
        let mut s = spec(2);
        s.num_users = 0;
        assert!(generate_synthetic(&s, &music_schema()).is_err());
        let mut s = spec(2);
        s.attribute_shift = 1.5;
        assert!(generate_synthetic(&s, &music_schema()).is_err());
        assert!(generate_synthetic(&spec(2), &Schema::new(vec![]).unwrap()).is_err());
    }
}
