//! The restricted query language: AST, parser, canonical printer and a
//! nested-loop evaluator.
//!
//! The grammar covers conjunctive `SELECT` over a multi-table `FROM` list,
//! equality predicates, `sys_context:` references, `IN (subquery)`,
//! `IN range(subject, location|time)` and `UNION`. Everything else is
//! rejected at parse time.

mod eval;
mod parser;
mod render;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use eval::{evaluate, output_schema, RowSet};
pub use parser::parse_query;
pub use render::{render_query, render_vpd_header};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Query {
    Select(Select),
    Union(Box<Query>, Box<Query>),
}

impl Query {
    pub fn union(left: Query, right: Query) -> Query {
        Query::Union(Box::new(left), Box::new(right))
    }

    /// Left-nested union of all branches; `None` for an empty iterator.
    pub fn union_all(branches: impl IntoIterator<Item = Query>) -> Option<Query> {
        branches.into_iter().reduce(Query::union)
    }

    /// The `SELECT` branches in left-to-right order.
    pub fn branches(&self) -> Vec<&Select> {
        match self {
            Query::Select(s) => vec![s],
            Query::Union(l, r) => {
                let mut out = l.branches();
                out.extend(r.branches());
                out
            }
        }
    }

    pub fn union_count(&self) -> usize {
        match self {
            Query::Select(_) => 0,
            Query::Union(l, r) => 1 + l.union_count() + r.union_count(),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_query(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Select {
    pub projection: Projection,
    pub from: Vec<TableRef>,
    pub predicates: Vec<Predicate>,
}

impl Select {
    pub fn star(from: Vec<TableRef>, predicates: Vec<Predicate>) -> Select {
        Select {
            projection: Projection::Star,
            from,
            predicates,
        }
    }

    /// Binding name under which `table` appears in the FROM list.
    pub fn binding_for(&self, table: &str) -> Option<&str> {
        self.from
            .iter()
            .find(|t| t.table == table)
            .map(TableRef::binding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Projection {
    Star,
    Columns(Vec<ColumnRef>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TableRef {
    pub table: String,
    pub alias: Option<String>,
}

impl TableRef {
    pub fn new(table: &str) -> Self {
        Self {
            table: table.to_string(),
            alias: None,
        }
    }

    pub fn aliased(table: &str, alias: &str) -> Self {
        Self {
            table: table.to_string(),
            alias: Some(alias.to_string()),
        }
    }

    pub fn binding(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn new(qualifier: &str, column: &str) -> Self {
        Self {
            qualifier: Some(qualifier.to_string()),
            column: column.to_string(),
        }
    }

    pub fn bare(column: &str) -> Self {
        Self {
            qualifier: None,
            column: column.to_string(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContextKey {
    #[serde(rename = "session_user")]
    SessionUser,
    #[serde(rename = "l")]
    Location,
    #[serde(rename = "t")]
    Time,
}

impl ContextKey {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextKey::SessionUser => "session_user",
            ContextKey::Location => "l",
            ContextKey::Time => "t",
        }
    }

    pub fn parse(s: &str) -> Option<ContextKey> {
        match s {
            "session_user" => Some(ContextKey::SessionUser),
            "l" => Some(ContextKey::Location),
            "t" => Some(ContextKey::Time),
            _ => None,
        }
    }
}

impl fmt::Display for ContextKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Literal {
    Text(String),
    Number(String),
}

impl Literal {
    pub fn text(s: &str) -> Self {
        Literal::Text(s.to_string())
    }

    pub fn as_str(&self) -> &str {
        match self {
            Literal::Text(s) | Literal::Number(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RangeDimension {
    Location,
    Time,
}

impl RangeDimension {
    pub fn as_str(self) -> &'static str {
        match self {
            RangeDimension::Location => "location",
            RangeDimension::Time => "time",
        }
    }

    /// The context key a range of this dimension is tested against.
    pub fn key(self) -> ContextKey {
        match self {
            RangeDimension::Location => ContextKey::Location,
            RangeDimension::Time => ContextKey::Time,
        }
    }
}

/// `range(subject, dimension)`: the planned routes of a subject.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RangeRef {
    pub subject: String,
    pub dimension: RangeDimension,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    ColEqCol(ColumnRef, ColumnRef),
    ColEqConst(ColumnRef, Literal),
    ColEqContext(ColumnRef, ContextKey),
    InSubquery(ColumnRef, Box<Query>),
    /// `sys_context:<key> IN range(<subject>, <dimension>)`. All range
    /// predicates of one SELECT naming the same subject must be satisfied by
    /// a single planned route.
    InRange {
        key: ContextKey,
        range: RangeRef,
    },
}

impl Predicate {
    pub fn eq_cols(a: ColumnRef, b: ColumnRef) -> Self {
        Predicate::ColEqCol(a, b)
    }

    pub fn in_range(subject: &str, dimension: RangeDimension) -> Self {
        Predicate::InRange {
            key: dimension.key(),
            range: RangeRef {
                subject: subject.to_string(),
                dimension,
            },
        }
    }
}
