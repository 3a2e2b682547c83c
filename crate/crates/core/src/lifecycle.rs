//! Validity of VPDs, grant/revoke transitions and the privacy residual.
//!
//! A subject is *moving* when it has at least one assignment and its
//! session reports a location or a time. A moving subject's VPD is valid
//! while some planned route accepts every reported dimension. A non-moving
//! subject is granted when it is linked to the data at all (assignment,
//! sender/receiver, or subordinates); in strict mode it is additionally
//! revoked while any moving subordinate is out of range.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linkage::{location_range, subordinates, subordinates_in_order, supervisors, ChainMode};
use crate::queryir::{output_schema, parse_query, Query, RowSet};
use crate::relstore::{Dataset, Value};
use crate::sessionctx::{ContextMap, SessionContext};
use crate::vpdrewrite::{self, standard_policies, DomainPolicy, VpdDefinition};

/// How a supervisor's VPD reacts to invalid moving subordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupervisorMode {
    /// Invalid subordinates drop out of the union; the supervisor stays valid.
    #[default]
    Narrative,
    /// Any invalid moving subordinate invalidates the supervisor.
    Strict,
}

impl SupervisorMode {
    pub const ALL: [SupervisorMode; 2] = [SupervisorMode::Narrative, SupervisorMode::Strict];

    pub fn as_str(self) -> &'static str {
        match self {
            SupervisorMode::Narrative => "narrative",
            SupervisorMode::Strict => "strict",
        }
    }
}

impl std::str::FromStr for SupervisorMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "narrative" => Ok(SupervisorMode::Narrative),
            "strict" => Ok(SupervisorMode::Strict),
            _ => Err(format!("unknown supervisor mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Granted,
    Revoked,
    Denied,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Granted => "GRANTED",
            Status::Revoked => "REVOKED",
            Status::Denied => "DENIED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    InRange,
    OutOfRoute,
    OutOfTime,
    NoAssignment,
    StrictSubordinateInvalid,
    /// Granted without route checks: the session reports no position or
    /// time, or the subject has no planned route to check against.
    NotMoving,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::InRange => "in-range",
            Reason::OutOfRoute => "out-of-route",
            Reason::OutOfTime => "out-of-time",
            Reason::NoAssignment => "no-assignment",
            Reason::StrictSubordinateInvalid => "strict-subordinate-invalid",
            Reason::NotMoving => "not-moving",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of checking one subject against its own planned routes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "check")]
pub enum RouteCheck {
    NotMoving,
    InRange { carrier: String },
    OutOfTime,
    OutOfRoute,
}

impl RouteCheck {
    pub fn is_invalid(&self) -> bool {
        matches!(self, RouteCheck::OutOfTime | RouteCheck::OutOfRoute)
    }

    pub fn reason(&self) -> Reason {
        match self {
            RouteCheck::NotMoving => Reason::NotMoving,
            RouteCheck::InRange { .. } => Reason::InRange,
            RouteCheck::OutOfTime => Reason::OutOfTime,
            RouteCheck::OutOfRoute => Reason::OutOfRoute,
        }
    }
}

/// Checks `s` against its planned routes. A missing context counts as a
/// wired session.
pub fn route_check(s: &str, ctx: Option<&SessionContext>, d: &Dataset) -> Result<RouteCheck> {
    let ranges = location_range(s, d)?;
    let Some(ctx) = ctx.filter(|c| c.is_mobile()) else {
        return Ok(RouteCheck::NotMoving);
    };
    if ranges.is_empty() {
        return Ok(RouteCheck::NotMoving);
    }
    let time_ok = |r: &crate::Route| ctx.timestamp.is_none_or(|t| r.contains_time(t));
    if let Some(r) = ranges
        .iter()
        .find(|r| time_ok(r) && ctx.location.is_none_or(|l| r.contains_location(l)))
    {
        return Ok(RouteCheck::InRange {
            carrier: r.carrier_id.clone(),
        });
    }
    if ranges.iter().any(time_ok) {
        Ok(RouteCheck::OutOfRoute)
    } else {
        Ok(RouteCheck::OutOfTime)
    }
}

/// Whether a non-moving subject has any connection to the data: an
/// assignment, an object it sends or receives, or subordinates.
pub fn is_linked(s: &str, d: &Dataset) -> Result<bool> {
    let subject = d.require_subject(s)?;
    Ok(!d.carriers_of(&subject.id).is_empty()
        || d.objects
            .iter()
            .any(|o| o.sender == subject.id || o.receiver == subject.id)
        || !subordinates(s, d)?.is_empty())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantState {
    pub subject: String,
    pub session_id: String,
    pub state: Status,
    pub since: DateTime<Utc>,
    pub reason: Reason,
}

impl GrantState {
    pub fn is_granted(&self) -> bool {
        self.state == Status::Granted
    }
}

fn ctx_time(ctx: &SessionContext) -> DateTime<Utc> {
    ctx.timestamp.unwrap_or(ctx.opened_at)
}

/// Validity of `s` for the session `ctx`. Subordinates are looked up in
/// `contexts` (absent entries are wired); `ctx` takes precedence for `s`.
pub fn check_validity(
    s: &str,
    ctx: &SessionContext,
    contexts: &ContextMap,
    d: &Dataset,
    mode: SupervisorMode,
) -> Result<GrantState> {
    let (state, reason) = decide(s, ctx, contexts, d, mode)?;
    Ok(GrantState {
        subject: s.to_string(),
        session_id: ctx.session_id.clone(),
        state,
        since: ctx_time(ctx),
        reason,
    })
}

fn decide(
    s: &str,
    ctx: &SessionContext,
    contexts: &ContextMap,
    d: &Dataset,
    mode: SupervisorMode,
) -> Result<(Status, Reason)> {
    match route_check(s, Some(ctx), d)? {
        RouteCheck::InRange { .. } => Ok((Status::Granted, Reason::InRange)),
        RouteCheck::OutOfTime => Ok((Status::Revoked, Reason::OutOfTime)),
        RouteCheck::OutOfRoute => Ok((Status::Revoked, Reason::OutOfRoute)),
        RouteCheck::NotMoving => {
            if !is_linked(s, d)? {
                return Ok((Status::Denied, Reason::NoAssignment));
            }
            if mode == SupervisorMode::Strict {
                for sub in subordinates_in_order(s, d)? {
                    if route_check(&sub, contexts.get(&sub), d)?.is_invalid() {
                        return Ok((Status::Revoked, Reason::StrictSubordinateInvalid));
                    }
                }
            }
            Ok((Status::Granted, Reason::NotMoving))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Transition {
    Grant,
    Revoke,
    Deny,
    VpdChanged,
}

impl Transition {
    pub fn as_str(self) -> &'static str {
        match self {
            Transition::Grant => "GRANT",
            Transition::Revoke => "REVOKE",
            Transition::Deny => "DENY",
            Transition::VpdChanged => "VPD_CHANGED",
        }
    }
}

/// Event log line format version.
pub const EVENT_SCHEMA_VERSION: u32 = 1;

/// One line of the access event log. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub v: u32,
    /// Position in the log; assigned when the event is appended.
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub subject: String,
    pub transition: Transition,
    pub reason: Reason,
    /// Subjects whose VPDs entered or left `subject`'s view.
    pub affected: Vec<String>,
}

impl AccessEvent {
    pub fn new(
        at: DateTime<Utc>,
        subject: &str,
        transition: Transition,
        reason: Reason,
        affected: Vec<String>,
    ) -> Self {
        Self {
            v: EVENT_SCHEMA_VERSION,
            seq: 0,
            at,
            subject: subject.to_string(),
            transition,
            reason,
            affected,
        }
    }

    /// Compact JSON, one line, no trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Recomputes the state of `s` after its context (or the dataset) changed
/// and returns the transitions this causes.
///
/// The first invalid check of a session yields DENY/DENIED. Later invalid
/// checks after a grant yield REVOKE. Supervisors receive VPD_CHANGED,
/// nearest first, whenever `s` is granted or revoked.
pub fn on_context_update(
    s: &str,
    new_ctx: &SessionContext,
    contexts: &ContextMap,
    d: &Dataset,
    prior: Option<&GrantState>,
    mode: SupervisorMode,
    at: DateTime<Utc>,
) -> Result<(GrantState, Vec<AccessEvent>)> {
    let fresh = check_validity(s, new_ctx, contexts, d, mode)?;
    let was_granted = prior.is_some_and(GrantState::is_granted);
    let mut events = Vec::new();
    let mut next = fresh.clone();
    match (fresh.is_granted(), was_granted) {
        (true, false) => {
            next.since = at;
            events.push(AccessEvent::new(
                at,
                s,
                Transition::Grant,
                fresh.reason,
                vec![s.into()],
            ));
        }
        (false, true) => {
            next.state = Status::Revoked;
            next.since = at;
            events.push(AccessEvent::new(
                at,
                s,
                Transition::Revoke,
                fresh.reason,
                vec![s.into()],
            ));
        }
        (false, false) => match prior {
            None => {
                next.state = Status::Denied;
                next.since = at;
                events.push(AccessEvent::new(
                    at,
                    s,
                    Transition::Deny,
                    fresh.reason,
                    vec![s.into()],
                ));
            }
            Some(p) => {
                next.state = p.state;
                next.since = p.since;
            }
        },
        (true, true) => next.since = prior.map_or(at, |p| p.since),
    }
    if events
        .iter()
        .any(|e| matches!(e.transition, Transition::Grant | Transition::Revoke))
    {
        for sup in supervisors(s, d)? {
            events.push(AccessEvent::new(
                at,
                &sup,
                Transition::VpdChanged,
                fresh.reason,
                vec![s.into()],
            ));
        }
    }
    Ok((next, events))
}

/// Full access decision for one request.
#[derive(Debug, Clone)]
pub struct Decision {
    pub state: GrantState,
    pub vpd: VpdDefinition,
    /// Rows the subject receives: the VPD materialization when granted,
    /// otherwise empty.
    pub rows: RowSet,
}

/// Rewrites `request` for the session, expands supervisors, checks
/// validity and materializes the VPD when access is granted.
pub fn authorize(
    ctx: &SessionContext,
    request: &Query,
    contexts: &ContextMap,
    d: &Dataset,
    policies: &[DomainPolicy],
    mode: ChainMode,
    supervisor_mode: SupervisorMode,
) -> Result<Decision> {
    let mut contexts = contexts.clone();
    contexts.insert(ctx.user.clone(), ctx.clone());
    let state = check_validity(&ctx.user, ctx, &contexts, d, supervisor_mode)?;
    let base = vpdrewrite::rewrite(request, ctx, d, policies, mode)?;
    let vpd = vpdrewrite::expand_supervisor(&ctx.user, &base, d, &contexts)?;
    let rows = if state.is_granted() {
        vpdrewrite::materialize(&vpd, d, ctx)?
    } else {
        RowSet::empty(output_schema(&vpd.query)?)
    };
    Ok(Decision { state, vpd, rows })
}

/// Object ids `s` may read through `select * from object`.
pub fn accessible_objects(
    ctx: &SessionContext,
    contexts: &ContextMap,
    d: &Dataset,
    mode: ChainMode,
    supervisor_mode: SupervisorMode,
) -> Result<BTreeSet<String>> {
    let q = parse_query("select * from object")?;
    let decision = authorize(
        ctx,
        &q,
        contexts,
        d,
        &standard_policies(),
        mode,
        supervisor_mode,
    )?;
    Ok(decision.rows.object_ids())
}

/// Object rows visible to `a` but not to `b`. An invalid VPD contributes
/// nothing, so the residual against it is all of `a`'s view.
#[allow(clippy::too_many_arguments)]
pub fn privacy_residual(
    ctx_a: &SessionContext,
    ctx_b: &SessionContext,
    contexts: &ContextMap,
    d: &Dataset,
    mode: ChainMode,
    supervisor_mode: SupervisorMode,
) -> Result<RowSet> {
    let a = accessible_objects(ctx_a, contexts, d, mode, supervisor_mode)?;
    let b = accessible_objects(ctx_b, contexts, d, mode, supervisor_mode)?;
    Ok(object_rows(d, &a.difference(&b).cloned().collect()))
}

/// Rows of the object table whose `oid` is in `oids`, in table order.
pub fn object_rows(d: &Dataset, oids: &BTreeSet<String>) -> RowSet {
    let table = d.table("object").expect("object table");
    let schema = table
        .columns
        .iter()
        .map(|c| format!("object.{c}"))
        .collect();
    let rows = table
        .rows
        .into_iter()
        .filter(|r| matches!(&r[0], Value::Text(oid) if oids.contains(oid)))
        .collect();
    RowSet { schema, rows }
}
