//! Data-state helpers that tie a subject to what it may see: planned route
//! and time ranges, join chains through the foreign-key graph,
//! organizational subordination and the `link()` predicate builder.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::{DateTime, Utc};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{distance_to_polyline_km, Geocode};
use crate::queryir::{ColumnRef, ContextKey, Literal, Predicate, Query};
use crate::relstore::{Dataset, OrgEdge, TABLES};

/// A subject's planned route on one carrier, with its time window and the
/// corridor tolerance around the polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRange<T = f64> {
    pub carrier_id: String,
    pub polyline: Vec<Geocode<T>>,
    pub t_b: DateTime<Utc>,
    pub t_e: DateTime<Utc>,
    pub corridor_km: T,
}

impl<T: Float> RouteRange<T> {
    pub fn contains_location(&self, loc: Geocode<T>) -> bool {
        distance_to_polyline_km(loc, &self.polyline) <= self.corridor_km
    }

    /// Both bounds inclusive.
    pub fn contains_time(&self, t: DateTime<Utc>) -> bool {
        self.t_b <= t && t <= self.t_e
    }

    pub fn with_corridor(&self, corridor_km: T) -> Self {
        Self {
            corridor_km,
            ..self.clone()
        }
    }
}

/// True iff `loc` lies within the corridor of `r` and `t` in its window.
pub fn in_range<T: Float>(loc: Geocode<T>, t: DateTime<Utc>, r: &RouteRange<T>) -> bool {
    r.contains_time(t) && r.contains_location(loc)
}

/// One route range per assignment of `s`, in assignment order.
pub fn location_range(s: &str, d: &Dataset) -> Result<Vec<RouteRange>> {
    let subject = d.require_subject(s)?;
    let ranges = d
        .carriers_of(&subject.id)
        .into_iter()
        .filter_map(|cid| d.carrier(cid))
        .map(|c| RouteRange {
            carrier_id: c.id.clone(),
            polyline: c.waypoints.clone(),
            t_b: c.departure,
            t_e: c.arrival,
            corridor_km: d.schema.corridor_km,
        })
        .collect();
    Ok(ranges)
}

pub fn time_range(s: &str, d: &Dataset) -> Result<Vec<(DateTime<Utc>, DateTime<Utc>)>> {
    Ok(location_range(s, d)?
        .into_iter()
        .map(|r| (r.t_b, r.t_e))
        .collect())
}

/// Join predicates leading from `subject` to a target table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinChain {
    /// Tables along the path, starting with `subject` and ending with the
    /// target.
    pub tables: Vec<String>,
    pub predicates: Vec<Predicate>,
}

fn fk_adjacency(d: &Dataset) -> BTreeMap<&str, BTreeMap<&str, (ColumnRef, ColumnRef)>> {
    let mut adj: BTreeMap<&str, BTreeMap<&str, (ColumnRef, ColumnRef)>> = BTreeMap::new();
    let mut fks: Vec<_> = d
        .schema
        .foreign_keys
        .iter()
        .filter_map(|fk| fk.endpoints())
        .collect();
    fks.sort();
    for ((ta, ca), (tb, cb)) in fks {
        if ta == tb {
            continue;
        }
        adj.entry(ta)
            .or_default()
            .entry(tb)
            .or_insert_with(|| (ColumnRef::new(ta, ca), ColumnRef::new(tb, cb)));
        adj.entry(tb)
            .or_default()
            .entry(ta)
            .or_insert_with(|| (ColumnRef::new(tb, cb), ColumnRef::new(ta, ca)));
    }
    adj
}

/// Shortest join chain from `subject` to `target` over the declared
/// foreign keys. Ties go to the lexicographically smallest table sequence.
pub fn workflow(target: &str, d: &Dataset) -> Result<JoinChain> {
    if !TABLES.contains(&target) {
        return Err(Error::UnknownTable(target.to_string()));
    }
    let adj = fk_adjacency(d);
    // BFS for distances, then walk forward choosing the smallest neighbour
    // that stays on a shortest path.
    let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
    let mut queue = VecDeque::from([target]);
    dist.insert(target, 0);
    while let Some(n) = queue.pop_front() {
        for m in adj.get(n).into_iter().flat_map(|e| e.keys()) {
            if !dist.contains_key(m) {
                dist.insert(m, dist[n] + 1);
                queue.push_back(m);
            }
        }
    }
    let Some(&len) = dist.get("subject") else {
        return Err(Error::NoChain(target.to_string()));
    };
    let mut tables = vec!["subject".to_string()];
    let mut predicates = Vec::with_capacity(len);
    let mut at = "subject";
    for step in (0..len).rev() {
        let (next, (a, b)) = adj[at]
            .iter()
            .find(|(m, _)| dist.get(*m) == Some(&step))
            .expect("shortest-path successor exists");
        predicates.push(Predicate::ColEqCol(a.clone(), b.clone()));
        tables.push(next.to_string());
        at = next;
    }
    Ok(JoinChain { tables, predicates })
}

/// All organizational units strictly below `ou`.
pub fn sub_units(ou: &str, edges: &[OrgEdge]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![ou.to_string()];
    while let Some(u) = stack.pop() {
        for e in edges.iter().filter(|e| e.ou == u) {
            if out.insert(e.sub_ou.clone()) {
                stack.push(e.sub_ou.clone());
            }
        }
    }
    out
}

/// True if `s1` works in a unit strictly below the unit of `s2`.
pub fn organization(s1: &str, s2: &str, d: &Dataset) -> Result<bool> {
    let a = d.require_subject(s1)?;
    let b = d.require_subject(s2)?;
    Ok(sub_units(&b.dept, &d.org_edges).contains(&a.dept))
}

/// Names of every subject `s'` with `organization(s', s)`.
pub fn subordinates(s: &str, d: &Dataset) -> Result<BTreeSet<String>> {
    let sup = d.require_subject(s)?;
    let units = sub_units(&sup.dept, &d.org_edges);
    Ok(d.subjects
        .iter()
        .filter(|x| units.contains(&x.dept))
        .map(|x| x.name.clone())
        .collect())
}

/// Subject names in dataset order whose unit is below `s`'s unit.
pub fn subordinates_in_order(s: &str, d: &Dataset) -> Result<Vec<String>> {
    let set = subordinates(s, d)?;
    Ok(d.subjects
        .iter()
        .filter(|x| set.contains(&x.name))
        .map(|x| x.name.clone())
        .collect())
}

/// Supervisors of `s`, nearest unit first, then by name.
pub fn supervisors(s: &str, d: &Dataset) -> Result<Vec<String>> {
    let subject = d.require_subject(s)?;
    let mut found: Vec<(usize, String)> = Vec::new();
    for other in &d.subjects {
        let units = sub_units(&other.dept, &d.org_edges);
        if units.contains(&subject.dept) {
            found.push((
                unit_depth(&other.dept, &subject.dept, &d.org_edges),
                other.name.clone(),
            ));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, n)| n).collect())
}

/// Length of the shortest downward path from `from` to `to`.
fn unit_depth(from: &str, to: &str, edges: &[OrgEdge]) -> usize {
    let mut frontier = BTreeSet::from([from.to_string()]);
    let mut seen = frontier.clone();
    for depth in 1..=edges.len() {
        let next: BTreeSet<String> = edges
            .iter()
            .filter(|e| frontier.contains(&e.ou))
            .map(|e| e.sub_ou.clone())
            .filter(|u| seen.insert(u.clone()))
            .collect();
        if next.contains(to) {
            return depth;
        }
        frontier = next;
    }
    usize::MAX
}

/// How `link()` connects a subject to the target table.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ChainMode {
    /// Foreign-key chain, e.g. subject -> assignment -> object.
    #[default]
    Workflow,
    /// `subject.specialty = object.name`.
    Specialty,
    /// The subject is the object's sender or receiver.
    Direct,
}

impl ChainMode {
    pub const ALL: [ChainMode; 3] = [ChainMode::Workflow, ChainMode::Specialty, ChainMode::Direct];

    pub fn as_str(self) -> &'static str {
        match self {
            ChainMode::Workflow => "workflow",
            ChainMode::Specialty => "specialty",
            ChainMode::Direct => "direct",
        }
    }
}

impl std::str::FromStr for ChainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "workflow" => Ok(ChainMode::Workflow),
            "specialty" => Ok(ChainMode::Specialty),
            "direct" => Ok(ChainMode::Direct),
            _ => Err(format!("unknown chain mode `{s}`")),
        }
    }
}

/// Which subject row the link is anchored on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubjectBinding {
    /// `subject.name = sys_context:session_user`
    Session,
    /// `subject.name = '<name>'`, used for subordinate branches.
    Named(String),
    /// `subject.dept IN (<subquery>)`, used by the closed supervisor form.
    DeptIn(Box<Query>),
}

impl SubjectBinding {
    pub fn predicate(&self) -> Predicate {
        let col = ColumnRef::new("subject", "name");
        match self {
            SubjectBinding::Session => Predicate::ColEqContext(col, ContextKey::SessionUser),
            SubjectBinding::Named(n) => Predicate::ColEqConst(col, Literal::text(n)),
            SubjectBinding::DeptIn(q) => {
                Predicate::InSubquery(ColumnRef::new("subject", "dept"), q.clone())
            }
        }
    }
}

/// Output of `link()`: the tables to add and one or more alternative
/// conjunctions (alternatives become UNION branches).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub tables: Vec<String>,
    pub alternatives: Vec<Vec<Predicate>>,
}

/// Session-anchored link predicates for `requester` reaching `target`.
pub fn link(requester: &str, target: &str, mode: ChainMode, d: &Dataset) -> Result<Link> {
    d.require_subject(requester)?;
    link_with(&SubjectBinding::Session, target, mode, d)
}

pub fn link_with(
    binding: &SubjectBinding,
    target: &str,
    mode: ChainMode,
    d: &Dataset,
) -> Result<Link> {
    let anchor = binding.predicate();
    let col = ColumnRef::new;
    match mode {
        ChainMode::Workflow => {
            let chain = workflow(target, d)?;
            let mut preds = vec![anchor];
            preds.extend(chain.predicates);
            Ok(Link {
                tables: chain.tables,
                alternatives: vec![preds],
            })
        }
        ChainMode::Specialty if target == "object" => Ok(Link {
            tables: vec!["subject".into(), "object".into()],
            alternatives: vec![vec![
                anchor,
                Predicate::ColEqCol(col("subject", "specialty"), col("object", "name")),
            ]],
        }),
        ChainMode::Direct if target == "object" => Ok(Link {
            tables: vec!["subject".into(), "object".into()],
            alternatives: ["sender", "receiver"]
                .iter()
                .map(|c| {
                    vec![
                        anchor.clone(),
                        Predicate::ColEqCol(col("subject", "id"), col("object", c)),
                    ]
                })
                .collect(),
        }),
        ChainMode::Specialty | ChainMode::Direct => Err(Error::NoChain(target.to_string())),
    }
}
