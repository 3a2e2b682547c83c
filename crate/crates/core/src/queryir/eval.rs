use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{ColumnRef, ContextKey, Predicate, Projection, Query, RangeDimension, Select};
use crate::error::{Error, Result};
use crate::linkage;
use crate::relstore::{Dataset, Table, Value, TABLES};
use crate::sessionctx::SessionContext;

/// Result of evaluating a query: a schema of qualified column names and a
/// bag of rows.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RowSet {
    pub schema: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl RowSet {
    pub fn empty(schema: Vec<String>) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Index of a column by qualified name, or by bare name when that is
    /// unambiguous.
    pub fn column(&self, name: &str) -> Option<usize> {
        if let Some(i) = self.schema.iter().position(|c| c == name) {
            return Some(i);
        }
        let suffix = format!(".{name}");
        let mut hits = self
            .schema
            .iter()
            .enumerate()
            .filter(|(_, c)| c.ends_with(&suffix));
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    pub fn values(&self, name: &str) -> Option<Vec<&Value>> {
        let i = self.column(name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    /// Distinct values of the `oid` column (object identifiers).
    pub fn object_ids(&self) -> BTreeSet<String> {
        self.values("oid")
            .into_iter()
            .flatten()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect()
    }

    /// Duplicate-free copy preserving first occurrence order.
    pub fn distinct(&self) -> RowSet {
        let mut seen = HashSet::new();
        let rows = self
            .rows
            .iter()
            .filter(|r| seen.insert(*r))
            .cloned()
            .collect();
        RowSet {
            schema: self.schema.clone(),
            rows,
        }
    }

    /// Rows sorted, duplicates kept. Two bags are equal iff their canonical
    /// forms are equal.
    pub fn canonical(&self) -> RowSet {
        let mut rows = self.rows.clone();
        rows.sort();
        RowSet {
            schema: self.schema.clone(),
            rows,
        }
    }

    pub fn row_set(&self) -> BTreeSet<Vec<Value>> {
        self.rows.iter().cloned().collect()
    }
}

struct Cx<'a> {
    d: &'a Dataset,
    ctx: &'a SessionContext,
    tables: HashMap<&'static str, Table>,
}

/// Binding name and column list for each FROM entry of one scope.
type ScopeMeta = Vec<(String, &'static [&'static str])>;

#[derive(Debug, Clone, Copy)]
struct Slot {
    /// 0 = current scope, 1 = enclosing scope, ...
    level: usize,
    binding: usize,
    col: usize,
}

enum Compiled<'q> {
    EqCols(Slot, Slot),
    EqValue(Slot, Value),
    InSet(Slot, HashSet<Value>),
    InCorrelated(Slot, &'q Query),
}

/// Evaluates a query against a dataset with the given session context.
///
/// SELECT has bag semantics; UNION removes duplicates.
pub fn evaluate(q: &Query, d: &Dataset, ctx: &SessionContext) -> Result<RowSet> {
    let tables = TABLES
        .iter()
        .map(|&n| (n, d.table(n).expect("base table")))
        .collect();
    let cx = Cx { d, ctx, tables };
    eval_query(&cx, q, &[], &[])
}

/// Column names `evaluate` would report for `q`, without touching data.
pub fn output_schema(q: &Query) -> Result<Vec<String>> {
    let s = q.branches()[0];
    let scope = scope_of(s)?;
    match &s.projection {
        Projection::Star => Ok(scope
            .iter()
            .flat_map(|(b, cols)| cols.iter().map(move |c| format!("{b}.{c}")))
            .collect()),
        Projection::Columns(cols) => cols
            .iter()
            .map(|c| match resolve_in(&scope, c)? {
                Some((b, col)) => Ok(format!("{}.{}", scope[b].0, scope[b].1[col])),
                None => Err(Error::UnknownColumn(c.to_string())),
            })
            .collect(),
    }
}

fn eval_query(
    cx: &Cx<'_>,
    q: &Query,
    outer: &[&ScopeMeta],
    outer_rows: &[&[&[Value]]],
) -> Result<RowSet> {
    match q {
        Query::Select(s) => eval_select(cx, s, outer, outer_rows),
        Query::Union(l, r) => {
            let left = eval_query(cx, l, outer, outer_rows)?;
            let right = eval_query(cx, r, outer, outer_rows)?;
            if left.schema.len() != right.schema.len() {
                return Err(Error::Shape(format!(
                    "UNION branches have arity {} and {}",
                    left.schema.len(),
                    right.schema.len()
                )));
            }
            let mut seen = HashSet::new();
            let rows = left
                .rows
                .into_iter()
                .chain(right.rows)
                .filter(|r| seen.insert(r.clone()))
                .collect();
            Ok(RowSet {
                schema: left.schema,
                rows,
            })
        }
    }
}

fn scope_of(s: &Select) -> Result<ScopeMeta> {
    let mut meta: ScopeMeta = Vec::new();
    for t in &s.from {
        let cols =
            Dataset::columns_of(&t.table).ok_or_else(|| Error::UnknownTable(t.table.clone()))?;
        if meta.iter().any(|(b, _)| b == t.binding()) {
            return Err(Error::Shape(format!(
                "duplicate table binding `{}`",
                t.binding()
            )));
        }
        meta.push((t.binding().to_string(), cols));
    }
    Ok(meta)
}

fn resolve_in(scope: &ScopeMeta, c: &ColumnRef) -> Result<Option<(usize, usize)>> {
    match &c.qualifier {
        Some(q) => {
            let Some(b) = scope.iter().position(|(name, _)| name == q) else {
                return Ok(None);
            };
            let col = scope[b].1.iter().position(|x| *x == c.column);
            match col {
                Some(col) => Ok(Some((b, col))),
                None => Err(Error::UnknownColumn(c.to_string())),
            }
        }
        None => {
            let mut hits = scope.iter().enumerate().filter_map(|(b, (_, cols))| {
                cols.iter().position(|x| *x == c.column).map(|col| (b, col))
            });
            match (hits.next(), hits.next()) {
                (Some(h), None) => Ok(Some(h)),
                (Some(_), Some(_)) => Err(Error::AmbiguousColumn(c.column.clone())),
                _ => Ok(None),
            }
        }
    }
}

/// Resolves a column against the scope chain, innermost first.
fn resolve(scope: &ScopeMeta, outer: &[&ScopeMeta], c: &ColumnRef) -> Result<Slot> {
    if let Some((binding, col)) = resolve_in(scope, c)? {
        return Ok(Slot {
            level: 0,
            binding,
            col,
        });
    }
    for (depth, s) in outer.iter().rev().enumerate() {
        if let Some((binding, col)) = resolve_in(s, c)? {
            return Ok(Slot {
                level: depth + 1,
                binding,
                col,
            });
        }
    }
    Err(Error::UnknownColumn(c.to_string()))
}

/// True when some column in `q` only resolves outside `q` itself.
fn is_correlated(q: &Query, local: &[&ScopeMeta]) -> Result<bool> {
    for s in q.branches() {
        let scope = scope_of(s)?;
        let mut chain = local.to_vec();
        chain.push(&scope);
        let resolves = |c: &ColumnRef| -> Result<bool> {
            for sc in &chain {
                if resolve_in(sc, c)?.is_some() {
                    return Ok(true);
                }
            }
            Ok(false)
        };
        for p in &s.predicates {
            let escaped = match p {
                Predicate::ColEqCol(a, b) => !resolves(a)? || !resolves(b)?,
                Predicate::ColEqConst(a, _) | Predicate::ColEqContext(a, _) => !resolves(a)?,
                Predicate::InSubquery(a, inner) => !resolves(a)? || is_correlated(inner, &chain)?,
                Predicate::InRange { .. } => false,
            };
            if escaped {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn context_value(ctx: &SessionContext, key: ContextKey) -> Result<Value> {
    ctx.lookup(key)
}

/// Range predicates are row-independent: decide them once per SELECT.
fn ranges_hold(cx: &Cx<'_>, s: &Select) -> Result<bool> {
    let mut groups: BTreeMap<&str, Vec<RangeDimension>> = BTreeMap::new();
    for p in &s.predicates {
        if let Predicate::InRange { range, .. } = p {
            groups
                .entry(range.subject.as_str())
                .or_default()
                .push(range.dimension);
        }
    }
    for (subject, dims) in groups {
        let ranges = linkage::location_range(subject, cx.d)?;
        let loc = if dims.contains(&RangeDimension::Location) {
            Some(
                cx.ctx
                    .location
                    .ok_or_else(|| Error::UnboundContextKey("l".into()))?,
            )
        } else {
            None
        };
        let t = if dims.contains(&RangeDimension::Time) {
            Some(
                cx.ctx
                    .timestamp
                    .ok_or_else(|| Error::UnboundContextKey("t".into()))?,
            )
        } else {
            None
        };
        let ok = ranges.iter().any(|r| {
            loc.is_none_or(|l| r.contains_location(l)) && t.is_none_or(|t| r.contains_time(t))
        });
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

fn eval_select(
    cx: &Cx<'_>,
    s: &Select,
    outer: &[&ScopeMeta],
    outer_rows: &[&[&[Value]]],
) -> Result<RowSet> {
    let scope = scope_of(s)?;

    let projection: Vec<Slot> = match &s.projection {
        Projection::Star => scope
            .iter()
            .enumerate()
            .flat_map(|(b, (_, cols))| {
                (0..cols.len()).map(move |col| Slot {
                    level: 0,
                    binding: b,
                    col,
                })
            })
            .collect(),
        Projection::Columns(cols) => cols
            .iter()
            .map(|c| match resolve_in(&scope, c)? {
                Some((binding, col)) => Ok(Slot {
                    level: 0,
                    binding,
                    col,
                }),
                None => Err(Error::UnknownColumn(c.to_string())),
            })
            .collect::<Result<_>>()?,
    };
    let schema: Vec<String> = projection
        .iter()
        .map(|p| format!("{}.{}", scope[p.binding].0, scope[p.binding].1[p.col]))
        .collect();

    let mut chain: Vec<&ScopeMeta> = outer.to_vec();
    chain.push(&scope);

    // Compile predicates and attach each to the deepest local binding it
    // needs, so it filters as early as possible in the nested loop.
    let last = s.from.len() - 1;
    let mut by_level: Vec<Vec<Compiled<'_>>> = (0..s.from.len()).map(|_| Vec::new()).collect();
    let level_of = |slots: &[Slot]| {
        slots
            .iter()
            .filter(|x| x.level == 0)
            .map(|x| x.binding)
            .max()
            .unwrap_or(0)
    };
    for p in &s.predicates {
        match p {
            Predicate::ColEqCol(a, b) => {
                let (a, b) = (resolve(&scope, outer, a)?, resolve(&scope, outer, b)?);
                by_level[level_of(&[a, b])].push(Compiled::EqCols(a, b));
            }
            Predicate::ColEqConst(a, v) => {
                let a = resolve(&scope, outer, a)?;
                by_level[level_of(&[a])].push(Compiled::EqValue(a, Value::text(v.as_str())));
            }
            Predicate::ColEqContext(a, k) => {
                let a = resolve(&scope, outer, a)?;
                let v = context_value(cx.ctx, *k)?;
                by_level[level_of(&[a])].push(Compiled::EqValue(a, v));
            }
            Predicate::InSubquery(a, q) => {
                let a = resolve(&scope, outer, a)?;
                if is_correlated(q, &[])? {
                    by_level[last].push(Compiled::InCorrelated(a, q));
                } else {
                    let sub = eval_query(cx, q, &[], &[])?;
                    if sub.schema.len() != 1 {
                        return Err(Error::Shape(format!(
                            "IN subquery must return one column, got {}",
                            sub.schema.len()
                        )));
                    }
                    let set = sub.rows.into_iter().map(|mut r| r.remove(0)).collect();
                    by_level[level_of(&[a])].push(Compiled::InSet(a, set));
                }
            }
            Predicate::InRange { .. } => {}
        }
    }

    if !ranges_hold(cx, s)? {
        return Ok(RowSet::empty(schema));
    }

    let tables: Vec<&Table> = s
        .from
        .iter()
        .map(|t| &cx.tables[t.table.as_str()])
        .collect();
    let mut out = Vec::new();
    let mut current: Vec<&[Value]> = Vec::with_capacity(tables.len());
    let run = Loop {
        cx,
        tables: &tables,
        by_level: &by_level,
        chain: &chain,
        outer_rows,
        projection: &projection,
    };
    run.descend(0, &mut current, &mut out)?;
    Ok(RowSet { schema, rows: out })
}

struct Loop<'a, 'q> {
    cx: &'a Cx<'a>,
    tables: &'a [&'a Table],
    by_level: &'a [Vec<Compiled<'q>>],
    chain: &'a [&'a ScopeMeta],
    outer_rows: &'a [&'a [&'a [Value]]],
    projection: &'a [Slot],
}

impl Loop<'_, '_> {
    fn value<'v>(&'v self, current: &[&'v [Value]], s: Slot) -> &'v Value {
        if s.level == 0 {
            &current[s.binding][s.col]
        } else {
            &self.outer_rows[self.outer_rows.len() - s.level][s.binding][s.col]
        }
    }

    fn descend<'r>(
        &'r self,
        i: usize,
        current: &mut Vec<&'r [Value]>,
        out: &mut Vec<Vec<Value>>,
    ) -> Result<()> {
        if i == self.tables.len() {
            out.push(
                self.projection
                    .iter()
                    .map(|s| self.value(current, *s).clone())
                    .collect(),
            );
            return Ok(());
        }
        'rows: for row in &self.tables[i].rows {
            current.push(row.as_slice());
            for p in &self.by_level[i] {
                if !self.check(p, current)? {
                    current.pop();
                    continue 'rows;
                }
            }
            self.descend(i + 1, current, out)?;
            current.pop();
        }
        Ok(())
    }

    fn check(&self, p: &Compiled<'_>, current: &[&[Value]]) -> Result<bool> {
        Ok(match p {
            Compiled::EqCols(a, b) => self.value(current, *a).sql_eq(self.value(current, *b)),
            Compiled::EqValue(a, v) => self.value(current, *a).sql_eq(v),
            Compiled::InSet(a, set) => {
                let v = self.value(current, *a);
                v != &Value::Absent && set.contains(v)
            }
            Compiled::InCorrelated(a, q) => {
                let v = self.value(current, *a).clone();
                if v == Value::Absent {
                    return Ok(false);
                }
                let mut rows: Vec<&[&[Value]]> = self.outer_rows.to_vec();
                rows.push(current);
                let outer: Vec<&ScopeMeta> = self.chain.to_vec();
                let sub = eval_query(self.cx, q, &outer, &rows)?;
                if sub.schema.len() != 1 {
                    return Err(Error::Shape(format!(
                        "IN subquery must return one column, got {}",
                        sub.schema.len()
                    )));
                }
                sub.rows.iter().any(|r| r[0] == v)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queryir::parse_query;
    use crate::relstore::{OrgEdge, SubjectRecord};
    use crate::sessionctx::SessionContext;

    fn small() -> Dataset {
        let s = |id: &str, name: &str, dept: &str| SubjectRecord {
            id: id.into(),
            name: name.into(),
            title: "x".into(),
            specialty: None,
            dept: dept.into(),
        };
        Dataset {
            subjects: vec![s("s1", "Ann", "A"), s("s2", "Ben", "B"), s("s3", "Cy", "C")],
            org_edges: vec![
                OrgEdge {
                    ou: "A".into(),
                    sub_ou: "B".into(),
                },
                OrgEdge {
                    ou: "B".into(),
                    sub_ou: "C".into(),
                },
            ],
            ..Default::default()
        }
    }

    fn run(q: &str, d: &Dataset) -> Result<RowSet> {
        let ctx = SessionContext::wired("Ann");
        evaluate(&parse_query(q)?, d, &ctx)
    }

    #[test]
    fn empty_dataset_gives_empty_result() {
        let r = run("select * from object", &Dataset::default()).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.schema.len(), 9);
    }

    #[test]
    fn uncorrelated_subquery() {
        let r = run(
            "select name from subject where dept in (select sub_ou from org_hierarchy where ou = 'A')",
            &small(),
        )
        .unwrap();
        assert_eq!(r.rows, vec![vec![Value::text("Ben")]]);
    }

    #[test]
    fn correlated_subquery_sees_outer_row() {
        // Subjects whose department has a sub-unit.
        let r = run(
            "select s.name from subject s where s.dept in \
             (select h.ou from org_hierarchy h where h.ou = s.dept)",
            &small(),
        )
        .unwrap();
        let names: Vec<_> = r.rows.iter().map(|r| r[0].to_string()).collect();
        assert_eq!(names, ["Ann", "Ben"]);
    }

    #[test]
    fn context_substitution() {
        let r = run(
            "select id from subject where name = sys_context:session_user",
            &small(),
        )
        .unwrap();
        assert_eq!(r.rows, vec![vec![Value::text("s1")]]);
        let err = run(
            "select id from subject where name = sys_context:l",
            &small(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnboundContextKey(_)));
    }

    #[test]
    fn resolution_errors() {
        assert!(matches!(
            run("select * from nope", &small()),
            Err(Error::UnknownTable(_))
        ));
        assert!(matches!(
            run("select * from subject where subject.zip = 'x'", &small()),
            Err(Error::UnknownColumn(_))
        ));
        assert!(matches!(
            run("select id from subject, assignment", &small()),
            Err(Error::AmbiguousColumn(_))
        ));
        assert!(matches!(
            run(
                "select id, name from subject union select id from subject",
                &small()
            ),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn union_deduplicates_select_keeps_bag() {
        let d = small();
        let bag = run("select title from subject", &d).unwrap();
        assert_eq!(bag.len(), 3);
        let set = run(
            "select title from subject union select title from subject",
            &d,
        )
        .unwrap();
        assert_eq!(set.len(), 1);
    }
}
