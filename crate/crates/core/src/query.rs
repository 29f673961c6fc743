//! Filter queries over micro-batch metadata and the per-fog matching registry.
//!
//! A query holds up to three predicates (spatial, temporal, domain). Present
//! predicates are ANDed; absent ones are vacuously true. A micro-batch location
//! is a point, so spatial `contains` and `intersects` both reduce to
//! point-in-rectangle and `equals` to point equality within [`COORD_EPS`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MicroBatchMeta;

/// Degrees within which two coordinates are considered equal.
pub const COORD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchOp {
    Equals,
    Intersects,
    Contains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Point { lat: f64, long: f64 },
    Rect {
        min_lat: f64,
        min_long: f64,
        max_lat: f64,
        max_long: f64,
    },
}

impl Region {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Region::Point { lat, long } => (lat, long, lat, long),
            Region::Rect {
                min_lat,
                min_long,
                max_lat,
                max_long,
            } => (min_lat, min_long, max_lat, max_long),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialPredicate {
    pub op: MatchOp,
    pub region: Region,
}

impl SpatialPredicate {
    pub fn holds(&self, lat: f64, long: f64) -> bool {
        let (lo_lat, lo_long, hi_lat, hi_long) = self.region.bounds();
        match self.op {
            MatchOp::Equals => {
                (lo_lat - lat).abs() <= COORD_EPS
                    && (hi_lat - lat).abs() <= COORD_EPS
                    && (lo_long - long).abs() <= COORD_EPS
                    && (hi_long - long).abs() <= COORD_EPS
            }
            MatchOp::Intersects | MatchOp::Contains => {
                lat >= lo_lat - COORD_EPS
                    && lat <= hi_lat + COORD_EPS
                    && long >= lo_long - COORD_EPS
                    && long <= hi_long + COORD_EPS
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalPredicate {
    pub op: MatchOp,
    pub begin: f64,
    pub end: f64,
}

impl TemporalPredicate {
    /// Evaluates against the micro-batch content range `[t_begin, t_end]`.
    /// `contains` means the query range contains the micro-batch range.
    pub fn holds(&self, t_begin: f64, t_end: f64) -> bool {
        match self.op {
            MatchOp::Equals => self.begin == t_begin && self.end == t_end,
            MatchOp::Intersects => t_begin <= self.end && self.begin <= t_end,
            MatchOp::Contains => self.begin <= t_begin && t_end <= self.end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainPredicate {
    Sid(String),
    Kv { key: String, value: String },
}

impl DomainPredicate {
    pub fn holds(&self, meta: &MicroBatchMeta) -> bool {
        match self {
            DomainPredicate::Sid(s) => meta.sid == *s,
            DomainPredicate::Kv { key, value } => meta.has_kv(key, value),
        }
    }
}

/// ⟨f_s, f_t, f_d⟩ bound to one DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterQuery {
    pub dag_id: String,
    #[serde(default)]
    pub spatial: Option<SpatialPredicate>,
    #[serde(default)]
    pub temporal: Option<TemporalPredicate>,
    #[serde(default)]
    pub domain: Option<DomainPredicate>,
}

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("query for dag {0} has no predicate")]
    Empty(String),
    #[error("query for dag {dag}: {reason}")]
    Invalid { dag: String, reason: String },
    #[error("dag {0} already has a registered query")]
    Duplicate(String),
    #[error("dag {0} has no registered query")]
    NotRegistered(String),
}

impl FilterQuery {
    pub fn new(dag_id: impl Into<String>) -> Self {
        Self {
            dag_id: dag_id.into(),
            spatial: None,
            temporal: None,
            domain: None,
        }
    }

    pub fn with_spatial(mut self, op: MatchOp, region: Region) -> Self {
        self.spatial = Some(SpatialPredicate { op, region });
        self
    }

    pub fn with_temporal(mut self, op: MatchOp, begin: f64, end: f64) -> Self {
        self.temporal = Some(TemporalPredicate { op, begin, end });
        self
    }

    pub fn with_sid(mut self, sid: impl Into<String>) -> Self {
        self.domain = Some(DomainPredicate::Sid(sid.into()));
        self
    }

    pub fn with_kv(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.domain = Some(DomainPredicate::Kv {
            key: key.into(),
            value: value.into(),
        });
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.spatial.is_none() && self.temporal.is_none() && self.domain.is_none() {
            return Err(QueryError::Empty(self.dag_id.clone()));
        }
        let invalid = |reason: &str| QueryError::Invalid {
            dag: self.dag_id.clone(),
            reason: reason.to_string(),
        };
        if let Some(s) = &self.spatial {
            let (a, b, c, d) = s.region.bounds();
            if !(a <= c && b <= d) {
                return Err(invalid("rectangle min must not exceed max"));
            }
        }
        if let Some(t) = &self.temporal {
            if !(t.begin <= t.end) {
                return Err(invalid("time range begin must not exceed end"));
            }
        }
        Ok(())
    }

    pub fn matches(&self, meta: &MicroBatchMeta) -> bool {
        self.spatial
            .as_ref()
            .is_none_or(|s| s.holds(meta.lat, meta.long))
            && self
                .temporal
                .as_ref()
                .is_none_or(|t| t.holds(meta.t_begin, meta.t_end))
            && self.domain.as_ref().is_none_or(|d| d.holds(meta))
    }
}

/// DAG ids of every query the micro-batch satisfies.
pub fn match_queries<'a>(
    meta: &MicroBatchMeta,
    queries: impl IntoIterator<Item = &'a FilterQuery>,
) -> BTreeSet<String> {
    queries
        .into_iter()
        .filter(|q| q.matches(meta))
        .map(|q| q.dag_id.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RegistrationId(pub u64);

/// Registry of active filters. Every fog runs a replica with the same content.
#[derive(Debug, Clone, Default)]
pub struct QueryEngine {
    queries: BTreeMap<String, (RegistrationId, FilterQuery)>,
    next: u64,
}

impl QueryEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, q: FilterQuery) -> Result<RegistrationId, QueryError> {
        q.validate()?;
        if self.queries.contains_key(&q.dag_id) {
            return Err(QueryError::Duplicate(q.dag_id));
        }
        let id = RegistrationId(self.next);
        self.next += 1;
        self.queries.insert(q.dag_id.clone(), (id, q));
        Ok(id)
    }

    pub fn unregister(&mut self, dag_id: &str) -> Result<FilterQuery, QueryError> {
        self.queries
            .remove(dag_id)
            .map(|(_, q)| q)
            .ok_or_else(|| QueryError::NotRegistered(dag_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn matches(&self, meta: &MicroBatchMeta) -> BTreeSet<String> {
        match_queries(meta, self.queries.values().map(|(_, q)| q))
    }
}
