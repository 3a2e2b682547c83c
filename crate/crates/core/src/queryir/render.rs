use super::parser::is_reserved;
use super::{Literal, Predicate, Projection, Query, Select};

/// Canonical single-line rendering: upper-case keywords, FROM order as
/// given, predicates joined by `AND`. Right-nested unions are
/// parenthesized so that parsing the output rebuilds the same tree.
pub fn render_query(q: &Query) -> String {
    let mut out = String::new();
    write_query(&mut out, q);
    out
}

/// `CREATE VPD vpd(<subject>[, l][, t]) AS` header for a VPD definition.
pub fn render_vpd_header(subject: &str, location: bool, time: bool) -> String {
    let mut args = vec![subject.to_string()];
    if location {
        args.push("l".into());
    }
    if time {
        args.push("t".into());
    }
    format!("CREATE VPD vpd({}) AS", args.join(", "))
}

fn write_query(out: &mut String, q: &Query) {
    match q {
        Query::Select(s) => write_select(out, s),
        Query::Union(l, r) => {
            write_query(out, l);
            out.push_str(" UNION ");
            if matches!(**r, Query::Union(..)) {
                out.push('(');
                write_query(out, r);
                out.push(')');
            } else {
                write_query(out, r);
            }
        }
    }
}

fn write_select(out: &mut String, s: &Select) {
    out.push_str("SELECT ");
    match &s.projection {
        Projection::Star => out.push('*'),
        Projection::Columns(cols) => {
            let cols: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
            out.push_str(&cols.join(", "));
        }
    }
    out.push_str(" FROM ");
    let tables: Vec<String> = s
        .from
        .iter()
        .map(|t| match &t.alias {
            Some(a) => format!("{} {a}", t.table),
            None => t.table.clone(),
        })
        .collect();
    out.push_str(&tables.join(", "));
    for (i, p) in s.predicates.iter().enumerate() {
        out.push_str(if i == 0 { " WHERE " } else { " AND " });
        write_predicate(out, p);
    }
}

fn write_predicate(out: &mut String, p: &Predicate) {
    match p {
        Predicate::ColEqCol(a, b) => out.push_str(&format!("{a} = {b}")),
        Predicate::ColEqConst(a, v) => out.push_str(&format!("{a} = {}", literal(v))),
        Predicate::ColEqContext(a, k) => out.push_str(&format!("{a} = sys_context:{k}")),
        Predicate::InSubquery(a, q) => {
            out.push_str(&format!("{a} IN ("));
            write_query(out, q);
            out.push(')');
        }
        Predicate::InRange { key, range } => out.push_str(&format!(
            "sys_context:{key} IN range({}, {})",
            range_subject(&range.subject),
            range.dimension.as_str()
        )),
    }
}

fn literal(v: &Literal) -> String {
    match v {
        Literal::Text(s) => quote(s),
        Literal::Number(n) => n.clone(),
    }
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn range_subject(s: &str) -> String {
    let plain = s
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_reserved(s);
    if plain {
        s.to_string()
    } else {
        quote(s)
    }
}
