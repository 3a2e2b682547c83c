//! Query rewriting into VPD definitions, supervisor expansion, privilege
//! inference and policy entailment.

mod policy;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use crate::error::{Error, Result};
use crate::lifecycle::{route_check, Reason, RouteCheck};
use crate::linkage::{link_with, subordinates_in_order, ChainMode, SubjectBinding};
use crate::queryir::{
    evaluate, render_query, render_vpd_header, ColumnRef, Literal, Predicate, Projection, Query,
    RangeDimension, RowSet, Select, TableRef,
};
use crate::relstore::{Dataset, Value};
use crate::sessionctx::{ContextMap, SessionContext};

pub use policy::{
    infer_privileges, infer_with, reachable_objects, standard_policies, Constraint, DomainPolicy,
    Inference, InferenceRule, ObjectAction, PolicyKind, Privilege, PrivilegeKind, Sign,
    SystemAction,
};

/// One step of the derivation that produced a VPD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Request(String),
    Mode(ChainMode),
    SessionAnchor,
    RangeInjected(RangeDimension),
    Link {
        target: String,
        tables: Vec<String>,
        alternatives: usize,
    },
    Conditions(usize),
    SubordinateIncluded {
        subject: String,
        check: RouteCheck,
    },
    SubordinateDropped {
        subject: String,
        reason: Reason,
    },
    Inferred {
        rule: String,
        privilege: Privilege,
    },
    HandBuilt,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Request(q) => write!(f, "request: {q}"),
            Provenance::Mode(m) => write!(f, "chain mode: {}", m.as_str()),
            Provenance::SessionAnchor => {
                f.write_str("anchor: subject.name = sys_context:session_user")
            }
            Provenance::RangeInjected(d) => write!(f, "range injected: {}", d.as_str()),
            Provenance::Link {
                target,
                tables,
                alternatives,
            } => write!(
                f,
                "link to {target} via {} ({alternatives} alternative{})",
                tables.join(" -> "),
                if *alternatives == 1 { "" } else { "s" }
            ),
            Provenance::Conditions(n) => write!(f, "user conditions kept: {n}"),
            Provenance::SubordinateIncluded { subject, check } => match check {
                RouteCheck::InRange { carrier } => {
                    write!(f, "union with vpd({subject}, l, t): in range on {carrier}")
                }
                _ => write!(f, "union with vpd({subject}): not moving"),
            },
            Provenance::SubordinateDropped { subject, reason } => {
                write!(f, "dropped vpd({subject}, l, t): {reason}")
            }
            Provenance::Inferred { rule, privilege } => write!(f, "inferred {privilege} by {rule}"),
            Provenance::HandBuilt => f.write_str("hand-built"),
        }
    }
}

/// A subordinate considered during supervisor expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubordinateBranch {
    pub subject: String,
    pub check: RouteCheck,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VpdDefinition {
    pub subject: String,
    pub location_dependent: bool,
    pub time_dependent: bool,
    pub mode: ChainMode,
    /// The user query the VPD was derived from.
    pub request: Query,
    /// The requester's own rewritten query, before supervisor expansion.
    pub own: Query,
    /// The full VPD query.
    pub query: Query,
    pub privileges: BTreeSet<Privilege>,
    pub subordinates: Vec<SubordinateBranch>,
    pub provenance: Vec<Provenance>,
}

impl VpdDefinition {
    /// A definition around an arbitrary query, bypassing the rewriter.
    pub fn hand_built(subject: &str, query: Query) -> Self {
        Self {
            subject: subject.to_string(),
            location_dependent: false,
            time_dependent: false,
            mode: ChainMode::Workflow,
            request: query.clone(),
            own: query.clone(),
            query,
            privileges: BTreeSet::from([Privilege::READ]),
            subordinates: Vec::new(),
            provenance: vec![Provenance::HandBuilt],
        }
    }

    pub fn header(&self) -> String {
        render_vpd_header(&self.subject, self.location_dependent, self.time_dependent)
    }

    /// `CREATE VPD ... AS` followed by the query on the next line.
    pub fn render(&self) -> String {
        format!("{}\n{}\n", self.header(), render_query(&self.query))
    }

    pub fn included_subordinates(&self) -> impl Iterator<Item = &str> {
        self.subordinates
            .iter()
            .filter(|b| b.included)
            .map(|b| b.subject.as_str())
    }
}

struct UserScope<'a> {
    refs: &'a [TableRef],
}

impl UserScope<'_> {
    fn qualify(&self, c: &ColumnRef) -> Result<ColumnRef> {
        if c.qualifier.is_some() {
            return Ok(c.clone());
        }
        let mut hits = self.refs.iter().filter(|t| {
            Dataset::columns_of(&t.table).is_some_and(|cols| cols.contains(&c.column.as_str()))
        });
        match (hits.next(), hits.next()) {
            (Some(t), None) => Ok(ColumnRef::new(t.binding(), &c.column)),
            (Some(_), Some(_)) => Err(Error::AmbiguousColumn(c.column.clone())),
            _ => Err(Error::UnknownColumn(c.column.clone())),
        }
    }

    fn qualify_predicate(&self, p: &Predicate) -> Result<Predicate> {
        Ok(match p {
            Predicate::ColEqCol(a, b) => Predicate::ColEqCol(self.qualify(a)?, self.qualify(b)?),
            Predicate::ColEqConst(a, v) => Predicate::ColEqConst(self.qualify(a)?, v.clone()),
            Predicate::ColEqContext(a, k) => Predicate::ColEqContext(self.qualify(a)?, *k),
            Predicate::InSubquery(a, q) => Predicate::InSubquery(self.qualify(a)?, q.clone()),
            Predicate::InRange { .. } => p.clone(),
        })
    }
}

fn rename_qualifier(p: &Predicate, map: &dyn Fn(&str) -> String) -> Predicate {
    let col = |c: &ColumnRef| ColumnRef {
        qualifier: c.qualifier.as_deref().map(map),
        column: c.column.clone(),
    };
    match p {
        Predicate::ColEqCol(a, b) => Predicate::ColEqCol(col(a), col(b)),
        Predicate::ColEqConst(a, v) => Predicate::ColEqConst(col(a), v.clone()),
        Predicate::ColEqContext(a, k) => Predicate::ColEqContext(col(a), *k),
        Predicate::InSubquery(a, q) => Predicate::InSubquery(col(a), q.clone()),
        Predicate::InRange { .. } => p.clone(),
    }
}

fn push_unique(out: &mut Vec<Predicate>, p: Predicate) {
    if !out.contains(&p) {
        out.push(p);
    }
}

/// Options for rewriting one branch set of a request.
struct Plan<'a> {
    binding: &'a SubjectBinding,
    range_subject: &'a str,
    location: bool,
    time: bool,
    mode: ChainMode,
}

fn rewrite_select(
    s: &Select,
    plan: &Plan<'_>,
    d: &Dataset,
    trace: &mut Vec<Provenance>,
) -> Result<Vec<Select>> {
    for t in &s.from {
        if Dataset::columns_of(&t.table).is_none() {
            return Err(Error::UnknownTable(t.table.clone()));
        }
    }
    let user = UserScope { refs: &s.from };
    let first_binding =
        |table: &str| -> String { s.binding_for(table).unwrap_or(table).to_string() };
    let subject_binding = first_binding("subject");

    let mut from: Vec<TableRef> = Vec::new();
    let add_table = |from: &mut Vec<TableRef>, t: TableRef| {
        if !from.iter().any(|x| x.binding() == t.binding()) {
            from.push(t);
        }
    };
    let user_ref_for = |table: &str| s.from.iter().find(|t| t.table == table).cloned();

    // Cartesian product of link alternatives across all linked user tables.
    let mut alternatives: Vec<Vec<Predicate>> = vec![Vec::new()];
    add_table(
        &mut from,
        user_ref_for("subject").unwrap_or_else(|| TableRef::new("subject")),
    );
    for target in s.from.iter().filter(|t| t.table != "subject") {
        let link = link_with(plan.binding, &target.table, plan.mode, d)?;
        trace.push(Provenance::Link {
            target: target.binding().to_string(),
            tables: link.tables.clone(),
            alternatives: link.alternatives.len(),
        });
        let last = link.tables.len() - 1;
        let target_table = link.tables[last].clone();
        let target_binding = target.binding().to_string();
        for t in &link.tables[..last] {
            add_table(
                &mut from,
                user_ref_for(t).unwrap_or_else(|| TableRef::new(t)),
            );
        }
        add_table(&mut from, target.clone());
        let rename = |q: &str| {
            if q == target_table {
                target_binding.clone()
            } else {
                first_binding(q)
            }
        };
        let mut next = Vec::new();
        for base in &alternatives {
            for alt in &link.alternatives {
                let mut preds = base.clone();
                for p in alt.iter().skip(1) {
                    push_unique(&mut preds, rename_qualifier(p, &rename));
                }
                next.push(preds);
            }
        }
        alternatives = next;
    }
    for t in &s.from {
        add_table(&mut from, t.clone());
    }

    let projection = match &s.projection {
        Projection::Star => Projection::Star,
        Projection::Columns(cols) => Projection::Columns(
            cols.iter()
                .map(|c| user.qualify(c))
                .collect::<Result<_>>()?,
        ),
    };
    let conditions: Vec<Predicate> = s
        .predicates
        .iter()
        .map(|p| user.qualify_predicate(p))
        .collect::<Result<_>>()?;

    let mut head = Vec::new();
    if plan.location {
        head.push(Predicate::in_range(
            plan.range_subject,
            RangeDimension::Location,
        ));
    }
    if plan.time {
        head.push(Predicate::in_range(
            plan.range_subject,
            RangeDimension::Time,
        ));
    }
    head.push(rename_qualifier(&plan.binding.predicate(), &|q| {
        if q == "subject" {
            subject_binding.clone()
        } else {
            q.to_string()
        }
    }));

    Ok(alternatives
        .into_iter()
        .map(|alt| {
            let mut preds = head.clone();
            for p in alt.into_iter().chain(conditions.iter().cloned()) {
                push_unique(&mut preds, p);
            }
            Select {
                projection: projection.clone(),
                from: from.clone(),
                predicates: preds,
            }
        })
        .collect())
}

fn rewrite_query(
    q: &Query,
    plan: &Plan<'_>,
    d: &Dataset,
    trace: &mut Vec<Provenance>,
) -> Result<Query> {
    let mut selects = Vec::new();
    for s in q.branches() {
        selects.extend(rewrite_select(s, plan, d, trace)?);
    }
    Ok(Query::union_all(selects.into_iter().map(Query::Select)).expect("at least one branch"))
}

/// Rewrites `q` into the VPD of the session's user.
///
/// Range predicates are injected only for dimensions the session binds and
/// only when the subject has a planned route; otherwise the wired form is
/// produced.
pub fn rewrite(
    q: &Query,
    ctx: &SessionContext,
    d: &Dataset,
    policies: &[DomainPolicy],
    mode: ChainMode,
) -> Result<VpdDefinition> {
    let subject = d.require_subject(&ctx.user)?;
    let has_route = !d.carriers_of(&subject.id).is_empty();
    let location = has_route && ctx.location.is_some();
    let time = has_route && ctx.timestamp.is_some();

    let mut provenance = vec![Provenance::Request(render_query(q)), Provenance::Mode(mode)];
    if location {
        provenance.push(Provenance::RangeInjected(RangeDimension::Location));
    }
    if time {
        provenance.push(Provenance::RangeInjected(RangeDimension::Time));
    }
    provenance.push(Provenance::SessionAnchor);
    let plan = Plan {
        binding: &SubjectBinding::Session,
        range_subject: &ctx.user,
        location,
        time,
        mode,
    };
    let query = rewrite_query(q, &plan, d, &mut provenance)?;
    let conditions: usize = q.branches().iter().map(|s| s.predicates.len()).sum();
    provenance.push(Provenance::Conditions(conditions));

    let granted = BTreeSet::from([if location || time {
        Privilege::WRITE
    } else {
        Privilege::READ
    }]);
    let privileges = infer_with(&granted, policies).closure;
    for p in privileges.difference(&granted) {
        let rule = policies
            .iter()
            .find(|r| matches!(&r.kind, PolicyKind::InferenceRule(ir) if ir.conclusion == *p))
            .map_or_else(String::new, |r| r.id.clone());
        provenance.push(Provenance::Inferred {
            rule,
            privilege: *p,
        });
    }

    Ok(VpdDefinition {
        subject: ctx.user.clone(),
        location_dependent: location,
        time_dependent: time,
        mode,
        request: q.clone(),
        own: query.clone(),
        query,
        privileges,
        subordinates: Vec::new(),
        provenance,
    })
}

/// Extends `base` (the rewritten VPD of `s`) with one UNION branch per
/// subordinate whose own VPD is valid under `contexts`. Subordinates out of
/// range are dropped and recorded in the provenance.
pub fn expand_supervisor(
    s: &str,
    base: &VpdDefinition,
    d: &Dataset,
    contexts: &ContextMap,
) -> Result<VpdDefinition> {
    d.require_subject(s)?;
    if base.subject != s {
        return Err(Error::Shape(format!(
            "base VPD belongs to `{}`, not `{s}`",
            base.subject
        )));
    }
    let mut out = base.clone();
    let mut branches = flat(&base.own);
    for sub in subordinates_in_order(s, d)? {
        let check = route_check(&sub, contexts.get(&sub), d)?;
        let included = !check.is_invalid();
        if included {
            let binding = SubjectBinding::Named(sub.clone());
            let plan = Plan {
                binding: &binding,
                range_subject: &sub,
                location: false,
                time: false,
                mode: base.mode,
            };
            let mut scratch = Vec::new();
            branches.extend(flat(&rewrite_query(&base.request, &plan, d, &mut scratch)?));
            out.provenance.push(Provenance::SubordinateIncluded {
                subject: sub.clone(),
                check: check.clone(),
            });
        } else {
            out.provenance.push(Provenance::SubordinateDropped {
                subject: sub.clone(),
                reason: check.reason(),
            });
        }
        out.subordinates.push(SubordinateBranch {
            subject: sub,
            check,
            included,
        });
    }
    out.query = Query::union_all(branches).expect("own branch");
    Ok(out)
}

fn flat(q: &Query) -> Vec<Query> {
    q.branches()
        .into_iter()
        .map(|s| Query::Select(s.clone()))
        .collect()
}

/// Organizational units below `ou`, grouped by shortest depth.
fn unit_levels(ou: &str, d: &Dataset) -> Vec<BTreeSet<String>> {
    let mut seen = BTreeSet::from([ou.to_string()]);
    let mut levels = Vec::new();
    let mut frontier = VecDeque::from([ou.to_string()]);
    while !frontier.is_empty() {
        let mut next = BTreeSet::new();
        for u in frontier.drain(..) {
            for e in d.org_edges.iter().filter(|e| e.ou == u) {
                if seen.insert(e.sub_ou.clone()) {
                    next.insert(e.sub_ou.clone());
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier.extend(next.iter().cloned());
        levels.push(next);
    }
    levels
}

/// `SELECT hk.sub_ou FROM org_hierarchy h1, ..., org_hierarchy hk WHERE
/// h1.ou = '<ou>' AND h2.ou = h1.sub_ou ...`: units exactly `k` levels
/// below `ou` along some path.
fn units_at_depth(ou: &str, k: usize) -> Query {
    let alias = |i: usize| format!("h{i}");
    let from = (1..=k)
        .map(|i| TableRef::aliased("org_hierarchy", &alias(i)))
        .collect();
    let mut predicates = vec![Predicate::ColEqConst(
        ColumnRef::new(&alias(1), "ou"),
        Literal::text(ou),
    )];
    for i in 2..=k {
        predicates.push(Predicate::ColEqCol(
            ColumnRef::new(&alias(i), "ou"),
            ColumnRef::new(&alias(i - 1), "sub_ou"),
        ));
    }
    Query::Select(Select {
        projection: Projection::Columns(vec![ColumnRef::new(&alias(k), "sub_ou")]),
        from,
        predicates,
    })
}

/// The subquery form of a supervisor expansion: the requester's own query
/// UNION, per hierarchy depth, the request linked through every subject
/// whose unit lies that far below the requester's.
///
/// Only defined when every subordinate was included; otherwise the
/// subquery would re-admit the dropped ones and `None` is returned.
pub fn closed_form(v: &VpdDefinition, d: &Dataset) -> Result<Option<Query>> {
    if v.subordinates.is_empty() || v.subordinates.iter().any(|b| !b.included) {
        return Ok(None);
    }
    let dept = d.require_subject(&v.subject)?.dept.clone();
    let mut branches = flat(&v.own);
    for k in 1..=unit_levels(&dept, d).len() {
        let binding = SubjectBinding::DeptIn(Box::new(units_at_depth(&dept, k)));
        let plan = Plan {
            binding: &binding,
            range_subject: &v.subject,
            location: false,
            time: false,
            mode: v.mode,
        };
        branches.extend(flat(&rewrite_query(&v.request, &plan, d, &mut Vec::new())?));
    }
    Ok(Query::union_all(branches))
}

/// Rows of the VPD for the session. Validity is the caller's concern.
pub fn materialize(v: &VpdDefinition, d: &Dataset, ctx: &SessionContext) -> Result<RowSet> {
    evaluate(&v.query, d, ctx)
}

/// A row that violates a constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub policy: String,
    pub oid: String,
    pub row: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entailment {
    pub holds: bool,
    pub witness: Option<Witness>,
}

/// Checks every constraint policy against the materialized rows of `v`.
///
/// The head-of-organization constraint admits an object iff the
/// requester's own link or one of its subordinates' links reaches it.
/// VPDs without an `oid` column satisfy it vacuously.
pub fn entails(
    policies: &[DomainPolicy],
    v: &VpdDefinition,
    d: &Dataset,
    ctx: &SessionContext,
) -> Result<Entailment> {
    let constraints: Vec<&DomainPolicy> = policies
        .iter()
        .filter(|p| matches!(p.kind, PolicyKind::Constraint { .. }))
        .collect();
    if constraints.is_empty() {
        return Ok(Entailment {
            holds: true,
            witness: None,
        });
    }
    let rows = materialize(v, d, ctx)?;
    for p in constraints {
        let PolicyKind::Constraint {
            constraint: Constraint::HeadOfOrganization,
        } = &p.kind
        else {
            continue;
        };
        let Some(col) = rows.column("oid") else {
            continue;
        };
        let allowed = reachable_objects(&v.subject, v.mode, d);
        if let Some(row) = rows
            .rows
            .iter()
            .find(|r| r[col].as_str().is_none_or(|o| !allowed.contains(o)))
        {
            return Ok(Entailment {
                holds: false,
                witness: Some(Witness {
                    policy: p.id.clone(),
                    oid: row[col].as_str().unwrap_or_default().to_string(),
                    row: row.clone(),
                }),
            });
        }
    }
    Ok(Entailment {
        holds: true,
        witness: None,
    })
}
