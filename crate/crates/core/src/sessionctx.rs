//! Session contexts: the requester's identity plus the location and time
//! its device reported when the session was opened.
//!
//! Location and time are client-reported and taken at face value; whether
//! they are acceptable is decided later against the planned routes.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queryir::ContextKey;
use crate::relstore::{format_timestamp, Dataset, Value};
use crate::GeoPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionContext {
    pub session_id: String,
    pub user: String,
    pub location: Option<GeoPoint>,
    pub timestamp: Option<DateTime<Utc>>,
    pub opened_at: DateTime<Utc>,
}

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

impl SessionContext {
    /// A context for a wired (positionless) login. Does not check the
    /// subject against any dataset.
    pub fn wired(user: &str) -> Self {
        Self::unchecked(user, None, None)
    }

    /// Builds a context without validating the user; the session id comes
    /// from a process-wide counter.
    pub fn unchecked(
        user: &str,
        location: Option<GeoPoint>,
        timestamp: Option<DateTime<Utc>>,
    ) -> Self {
        let n = NEXT_SESSION.fetch_add(1, Ordering::Relaxed);
        Self {
            session_id: format!("session-{n}"),
            user: user.to_string(),
            location,
            timestamp,
            opened_at: timestamp.unwrap_or(DateTime::<Utc>::UNIX_EPOCH),
        }
    }

    pub fn binds(&self, key: ContextKey) -> bool {
        match key {
            ContextKey::SessionUser => true,
            ContextKey::Location => self.location.is_some(),
            ContextKey::Time => self.timestamp.is_some(),
        }
    }

    /// True when the session reported a position or a time.
    pub fn is_mobile(&self) -> bool {
        self.location.is_some() || self.timestamp.is_some()
    }

    /// Value of a context key, as seen by queries.
    pub fn lookup(&self, key: ContextKey) -> Result<Value> {
        match key {
            ContextKey::SessionUser => Ok(Value::text(&self.user)),
            ContextKey::Location => self
                .location
                .map(|g| Value::text(format!("{},{}", g.lat, g.lon)))
                .ok_or_else(|| Error::UnboundContextKey(key.to_string())),
            ContextKey::Time => self
                .timestamp
                .map(|t| Value::text(format_timestamp(t)))
                .ok_or_else(|| Error::UnboundContextKey(key.to_string())),
        }
    }

    /// Same session with a newly reported position and time.
    pub fn relocated(&self, location: Option<GeoPoint>, timestamp: Option<DateTime<Utc>>) -> Self {
        Self {
            location,
            timestamp,
            ..self.clone()
        }
    }
}

/// Typed result of [`context_lookup`].
#[derive(Debug, Clone, PartialEq)]
pub enum ContextValue {
    User(String),
    Location(GeoPoint),
    Time(DateTime<Utc>),
}

/// Looks up a context key, failing when the session does not bind it.
pub fn context_lookup(ctx: &SessionContext, key: ContextKey) -> Result<ContextValue> {
    let unbound = || Error::UnboundContextKey(key.to_string());
    match key {
        ContextKey::SessionUser => Ok(ContextValue::User(ctx.user.clone())),
        ContextKey::Location => ctx.location.map(ContextValue::Location).ok_or_else(unbound),
        ContextKey::Time => ctx.timestamp.map(ContextValue::Time).ok_or_else(unbound),
    }
}

fn check_location(location: Option<GeoPoint>) -> Result<()> {
    match location {
        Some(g) if !g.is_valid() => Err(Error::InvalidGeocode {
            lat: g.lat,
            lon: g.lon,
        }),
        _ => Ok(()),
    }
}

/// Opens a session for `user`, who must exist in `d`.
pub fn open_session(
    user: &str,
    location: Option<GeoPoint>,
    timestamp: Option<DateTime<Utc>>,
    d: &Dataset,
) -> Result<SessionContext> {
    d.require_subject(user)?;
    check_location(location)?;
    Ok(SessionContext::unchecked(user, location, timestamp))
}

/// Sessions keyed by id, with deterministic id allocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionRegistry {
    next_id: u64,
    sessions: BTreeMap<String, SessionContext>,
}

impl SessionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(
        &mut self,
        user: &str,
        location: Option<GeoPoint>,
        timestamp: Option<DateTime<Utc>>,
        opened_at: DateTime<Utc>,
        d: &Dataset,
    ) -> Result<SessionContext> {
        d.require_subject(user)?;
        check_location(location)?;
        self.next_id += 1;
        let ctx = SessionContext {
            session_id: format!("s{:04}", self.next_id),
            user: user.to_string(),
            location,
            timestamp,
            opened_at,
        };
        self.sessions.insert(ctx.session_id.clone(), ctx.clone());
        Ok(ctx)
    }

    pub fn get(&self, session_id: &str) -> Result<&SessionContext> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| Error::UnknownSession(session_id.to_string()))
    }

    /// Replaces a session's reported position/time, keeping its id.
    pub fn update(&mut self, ctx: SessionContext) {
        self.sessions.insert(ctx.session_id.clone(), ctx);
    }

    pub fn close(&mut self, session_id: &str) -> Option<SessionContext> {
        self.sessions.remove(session_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionContext> {
        self.sessions.values()
    }

    /// Latest session per user (highest id wins), for supervisor expansion.
    pub fn contexts(&self) -> ContextMap {
        let mut map = ContextMap::new();
        for ctx in self.sessions.values() {
            map.insert(ctx.user.clone(), ctx.clone());
        }
        map
    }
}

/// Current context per subject name. Subjects without an entry are treated
/// as having no reported position.
pub type ContextMap = BTreeMap<String, SessionContext>;
