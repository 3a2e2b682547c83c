//! Deterministic scenario runner.
//!
//! A scenario is a list of timestamped steps: subjects move, log in, issue
//! queries, join or leave carriers, and objects are handed from one carrier
//! to another. After every step each logged-in subject is re-checked and the
//! resulting grant/revoke transitions are appended to an event log. The
//! only clock is the step timestamp: every session that reports a position
//! also reports the current step time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifecycle::{
    authorize, on_context_update, AccessEvent, GrantState, Reason, Status, SupervisorMode,
};
use crate::linkage::ChainMode;
use crate::queryir::parse_query;
use crate::relstore::Dataset;
use crate::sessionctx::{SessionContext, SessionRegistry};
use crate::vpdrewrite::standard_policies;
use crate::GeoPoint;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_version")]
    pub version: u32,
    pub name: String,
    /// Dataset path, relative to the scenario file.
    #[serde(default)]
    pub dataset: Option<String>,
    pub steps: Vec<ScenarioStep>,
}

fn default_version() -> u32 {
    SCENARIO_VERSION
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Scenario> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("scenario line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStep {
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub action: Action,
}

/// Where a `move` puts the subject: explicit coordinates or the name of a
/// carrier origin/destination in the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Position {
    Coordinates { lat: f64, lon: f64 },
    Place { place: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "action")]
pub enum Action {
    Move {
        subject: String,
        #[serde(flatten)]
        to: Position,
    },
    /// Opens a session at the subject's last position, or wired when it has
    /// never moved.
    Login {
        subject: String,
    },
    Query {
        subject: String,
        text: String,
        #[serde(default)]
        mode: ChainMode,
    },
    Join {
        subject: String,
        carrier: String,
    },
    Leave {
        subject: String,
        carrier: String,
    },
    Handover {
        objects: Vec<String>,
        from: String,
        to: String,
    },
}

impl Action {
    /// Subject the step acts on; `None` for handovers.
    pub fn subject(&self) -> Option<&str> {
        match self {
            Action::Move { subject, .. }
            | Action::Login { subject }
            | Action::Query { subject, .. }
            | Action::Join { subject, .. }
            | Action::Leave { subject, .. } => Some(subject),
            Action::Handover { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueKind {
    UnknownSubject,
    UnknownCarrier,
    UnknownObject,
    UnknownPlace,
    NotOnCarrier,
    NotAssigned,
    NoSession,
    BadQuery,
    TimeInversion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioIssue {
    /// Zero-based index in the scenario file.
    pub step: usize,
    pub kind: IssueKind,
    pub message: String,
}

impl fmt::Display for ScenarioIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: {}", self.step, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub issues: Vec<ScenarioIssue>,
}

impl ScenarioReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn count(&self, kind: IssueKind) -> usize {
        self.issues.iter().filter(|i| i.kind == kind).count()
    }
}

fn resolve_position(to: &Position, d: &Dataset) -> Option<GeoPoint> {
    match to {
        Position::Coordinates { lat, lon } => Some(GeoPoint::new(*lat, *lon)),
        Position::Place { place } => d
            .carriers
            .iter()
            .flat_map(|c| [&c.origin, &c.destination])
            .find(|p| &p.name == place)
            .map(|p| p.geocode()),
    }
}

/// Stable sort by timestamp; equal timestamps keep file order.
fn ordered(sc: &Scenario) -> Vec<(usize, &ScenarioStep)> {
    let mut steps: Vec<(usize, &ScenarioStep)> = sc.steps.iter().enumerate().collect();
    steps.sort_by_key(|(_, s)| s.at);
    steps
}

/// Applies one step's data change. Returns the new dataset when the step
/// mutates data.
fn apply_data(
    action: &Action,
    d: &Dataset,
) -> std::result::Result<Option<Dataset>, (IssueKind, String)> {
    let subject_id = |name: &str| {
        d.subject_by_name(name).map(|s| s.id.clone()).ok_or((
            IssueKind::UnknownSubject,
            format!("unknown subject `{name}`"),
        ))
    };
    let carrier = |id: &str| {
        d.carrier(id)
            .map(|_| ())
            .ok_or((IssueKind::UnknownCarrier, format!("unknown carrier `{id}`")))
    };
    match action {
        Action::Join {
            subject,
            carrier: c,
        } => {
            let id = subject_id(subject)?;
            carrier(c)?;
            Ok(Some(d.with_assignment(&id, c)))
        }
        Action::Leave {
            subject,
            carrier: c,
        } => {
            let id = subject_id(subject)?;
            carrier(c)?;
            if !d.carriers_of(&id).contains(&c.as_str()) {
                return Err((
                    IssueKind::NotAssigned,
                    format!("`{subject}` is not assigned to `{c}`"),
                ));
            }
            Ok(Some(d.without_assignment(&id, c)))
        }
        Action::Handover { objects, from, to } => {
            carrier(from)?;
            carrier(to)?;
            for oid in objects {
                let Some(o) = d.object(oid) else {
                    return Err((IssueKind::UnknownObject, format!("unknown object `{oid}`")));
                };
                if o.carrier_id.as_deref() != Some(from.as_str()) {
                    return Err((
                        IssueKind::NotOnCarrier,
                        format!("object `{oid}` is not on `{from}`"),
                    ));
                }
            }
            Ok(Some(d.with_handover(objects, to)))
        }
        Action::Move { subject, to } => {
            subject_id(subject)?;
            resolve_position(to, d).map(|_| None).ok_or((
                IssueKind::UnknownPlace,
                format!("cannot resolve position {to:?}"),
            ))
        }
        Action::Login { subject } => subject_id(subject).map(|_| None),
        Action::Query { subject, text, .. } => {
            subject_id(subject)?;
            parse_query(text)
                .map(|_| None)
                .map_err(|e| (IssueKind::BadQuery, e.to_string()))
        }
    }
}

/// Lists every unresolvable reference and every pair of adjacent steps
/// whose timestamps go backwards. References are resolved against the
/// dataset as mutated by the preceding steps, in run order.
pub fn validate_scenario(sc: &Scenario, d: &Dataset) -> ScenarioReport {
    let mut report = ScenarioReport::default();
    for (i, w) in sc.steps.windows(2).enumerate() {
        if w[1].at < w[0].at {
            report.issues.push(ScenarioIssue {
                step: i + 1,
                kind: IssueKind::TimeInversion,
                message: format!("time goes back from {} to {}", w[0].at, w[1].at),
            });
        }
    }
    let mut data = d.clone();
    let mut sessions: BTreeSet<&str> = BTreeSet::new();
    for (i, step) in ordered(sc) {
        match apply_data(&step.action, &data) {
            Ok(Some(next)) => data = next,
            Ok(None) => {}
            Err((kind, message)) => report.issues.push(ScenarioIssue {
                step: i,
                kind,
                message,
            }),
        }
        match &step.action {
            Action::Login { subject } => {
                sessions.insert(subject);
            }
            Action::Query { subject, .. } if !sessions.contains(subject.as_str()) => {
                report.issues.push(ScenarioIssue {
                    step: i,
                    kind: IssueKind::NoSession,
                    message: format!("`{subject}` queries before logging in"),
                });
            }
            _ => {}
        }
    }
    report.issues.sort_by_key(|i| i.step);
    report
}

/// Access events in append order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<AccessEvent>,
}

impl EventLog {
    pub fn push(&mut self, mut e: AccessEvent) {
        e.seq = self.events.len() as u64 + 1;
        self.events.push(e);
    }

    /// One JSON object per line, each line terminated by `\n`.
    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| e.to_json_line() + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<EventLog> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(EventLog { events })
    }
}

/// Result of a query step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub step: usize,
    pub at: DateTime<Utc>,
    pub subject: String,
    pub verdict: Status,
    pub reason: Reason,
    pub objects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunOutcome {
    pub log: EventLog,
    /// Final state per logged-in subject.
    pub states: BTreeMap<String, GrantState>,
    pub queries: Vec<QueryOutcome>,
    /// Dataset after all mutations.
    #[serde(skip)]
    pub dataset: Dataset,
}

/// A run that stopped at a bad step; `partial` holds everything up to it.
#[derive(Debug, Clone)]
pub struct ScenarioFailure {
    pub step: usize,
    pub message: String,
    pub partial: RunOutcome,
}

impl From<ScenarioFailure> for Error {
    fn from(f: ScenarioFailure) -> Self {
        Error::Scenario {
            step: f.step,
            message: f.message,
        }
    }
}

struct Runner<'a> {
    mode: SupervisorMode,
    data: Dataset,
    registry: SessionRegistry,
    /// session id per logged-in subject
    session_of: BTreeMap<String, String>,
    positions: BTreeMap<String, GeoPoint>,
    out: RunOutcome,
    sc: &'a Scenario,
}

impl Runner<'_> {
    fn step(&mut self, i: usize, step: &ScenarioStep) -> Result<()> {
        let at = step.at;
        if let Some(next) =
            apply_data(&step.action, &self.data).map_err(|(_, m)| Error::Scenario {
                step: i,
                message: m,
            })?
        {
            self.data = next;
        }
        match &step.action {
            Action::Move { subject, to } => {
                let g = resolve_position(to, &self.data).expect("checked by apply_data");
                self.positions.insert(subject.clone(), g);
            }
            Action::Login { subject } => {
                let loc = self.positions.get(subject).copied();
                let ctx = self
                    .registry
                    .open(subject, loc, loc.map(|_| at), at, &self.data)?;
                self.session_of.insert(subject.clone(), ctx.session_id);
            }
            _ => {}
        }
        self.advance_clock(at);
        self.recompute(at)?;
        if let Action::Query {
            subject,
            text,
            mode,
        } = &step.action
        {
            let ctx = self.context(subject).ok_or_else(|| Error::Scenario {
                step: i,
                message: format!("`{subject}` queries before logging in"),
            })?;
            let q = parse_query(text)?;
            let dec = authorize(
                &ctx,
                &q,
                &self.registry.contexts(),
                &self.data,
                &standard_policies(),
                *mode,
                self.mode,
            )?;
            self.out.queries.push(QueryOutcome {
                step: i,
                at,
                subject: subject.clone(),
                verdict: dec.state.state,
                reason: dec.state.reason,
                objects: dec.rows.object_ids().into_iter().collect(),
            });
        }
        Ok(())
    }

    fn context(&self, subject: &str) -> Option<SessionContext> {
        let id = self.session_of.get(subject)?;
        self.registry.get(id).ok().cloned()
    }

    /// Sessions with a position report the current position and time.
    fn advance_clock(&mut self, at: DateTime<Utc>) {
        for (subject, id) in &self.session_of {
            let ctx = self.registry.get(id).expect("open session").clone();
            if let Some(&g) = self.positions.get(subject) {
                self.registry.update(ctx.relocated(Some(g), Some(at)));
            }
        }
    }

    fn recompute(&mut self, at: DateTime<Utc>) -> Result<()> {
        let contexts = self.registry.contexts();
        let order: Vec<String> = self
            .data
            .subjects
            .iter()
            .map(|s| s.name.clone())
            .filter(|n| self.session_of.contains_key(n))
            .collect();
        for subject in order {
            let ctx = contexts[&subject].clone();
            let prior = self.out.states.get(&subject);
            let (state, events) =
                on_context_update(&subject, &ctx, &contexts, &self.data, prior, self.mode, at)?;
            self.out.states.insert(subject, state);
            for e in events {
                self.out.log.push(e);
            }
        }
        Ok(())
    }
}

/// Runs the scenario over `d`. Steps run in timestamp order (stable for
/// equal timestamps).
pub fn run_scenario(
    sc: &Scenario,
    d: &Dataset,
    mode: SupervisorMode,
) -> std::result::Result<RunOutcome, ScenarioFailure> {
    let mut runner = Runner {
        mode,
        data: d.clone(),
        registry: SessionRegistry::new(),
        session_of: BTreeMap::new(),
        positions: BTreeMap::new(),
        out: RunOutcome::default(),
        sc,
    };
    for (i, step) in ordered(runner.sc) {
        if let Err(e) = runner.step(i, step) {
            let step = match &e {
                Error::Scenario { step, .. } => *step,
                _ => i,
            };
            runner.out.dataset = runner.data.clone();
            let message = match e {
                Error::Scenario { message, .. } => message,
                other => other.to_string(),
            };
            return Err(ScenarioFailure {
                step,
                message,
                partial: runner.out,
            });
        }
    }
    runner.out.dataset = runner.data;
    Ok(runner.out)
}
