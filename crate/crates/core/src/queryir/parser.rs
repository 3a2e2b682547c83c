use super::{
    ColumnRef, ContextKey, Literal, Predicate, Projection, Query, RangeDimension, RangeRef, Select,
    TableRef,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Number(String),
    Star,
    Comma,
    Dot,
    Colon,
    LParen,
    RParen,
    Eq,
    Semi,
    /// Operators outside the grammar (`<`, `<>`, `+`, ...), kept so they can
    /// be reported as unsupported rather than as garbage.
    Op(String),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '*' => Tok::Star,
            ',' => Tok::Comma,
            '.' => Tok::Dot,
            ':' => Tok::Colon,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '=' => Tok::Eq,
            ';' => Tok::Semi,
            '\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match src[i..].chars().next() {
                        None => {
                            return Err(Error::Syntax {
                                position: start,
                                message: "unterminated string literal".into(),
                            })
                        }
                        Some('\'') if src[i + 1..].starts_with('\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => break,
                        Some(ch) => {
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                Tok::Str(s)
            }
            '<' | '>' | '!' | '+' | '-' | '/' | '%' | '|' => {
                let mut j = i + 1;
                while j < bytes.len() && matches!(bytes[j] as char, '<' | '>' | '=' | '|') {
                    j += 1;
                }
                let op = src[i..j].to_string();
                i = j - 1;
                Tok::Op(op)
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                let n = src[i..j].to_string();
                i = j - 1;
                Tok::Number(n)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                let id = src[i..j].to_string();
                i = j - 1;
                Tok::Ident(id)
            }
            other => {
                return Err(Error::Syntax {
                    position: start,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Token { tok, pos: start });
        i += 1;
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: src.len(),
    });
    Ok(out)
}

/// Words that belong to SQL but not to the supported subset.
const UNSUPPORTED: &[&str] = &[
    "or",
    "not",
    "order",
    "group",
    "by",
    "having",
    "limit",
    "offset",
    "join",
    "inner",
    "left",
    "right",
    "full",
    "outer",
    "cross",
    "on",
    "distinct",
    "all",
    "intersect",
    "except",
    "insert",
    "update",
    "delete",
    "create",
    "drop",
    "alter",
    "like",
    "between",
    "is",
    "null",
    "exists",
    "case",
    "when",
    "count",
    "sum",
    "avg",
    "min",
    "max",
];

const RESERVED: &[&str] = &[
    "select",
    "from",
    "where",
    "and",
    "union",
    "in",
    "as",
    "sys_context",
];

pub(crate) fn is_reserved(word: &str) -> bool {
    let w = word.to_ascii_lowercase();
    RESERVED.contains(&w.as_str()) || UNSUPPORTED.contains(&w.as_str())
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

enum Operand {
    Col(ColumnRef),
    Lit(Literal),
    Ctx(ContextKey),
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].tok.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            position: self.pos(),
            message: message.into(),
        })
    }

    fn unsupported<T>(&self, feature: impl Into<String>) -> Result<T> {
        Err(Error::UnsupportedFeature {
            position: self.pos(),
            feature: feature.into(),
        })
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    /// Fails on tokens that are recognizably SQL but outside the subset.
    fn reject_unsupported(&self) -> Result<()> {
        match self.peek() {
            Tok::Ident(s) if UNSUPPORTED.contains(&s.to_ascii_lowercase().as_str()) => {
                self.unsupported(s.to_ascii_uppercase())
            }
            Tok::Op(op) => self.unsupported(format!("operator `{op}`")),
            _ => Ok(()),
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        self.reject_unsupported()?;
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.syntax(format!("expected {}", kw.to_ascii_uppercase()))
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<()> {
        self.reject_unsupported()?;
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else {
            self.syntax(format!("expected {what}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        self.reject_unsupported()?;
        match self.peek().clone() {
            Tok::Ident(s) if !is_reserved(&s) => {
                self.bump();
                Ok(s)
            }
            _ => self.syntax(format!("expected {what}")),
        }
    }

    fn query(&mut self) -> Result<Query> {
        let mut q = self.union_operand()?;
        while self.is_kw("union") {
            self.bump();
            if self.is_kw("all") {
                return self.unsupported("UNION ALL");
            }
            let rhs = self.union_operand()?;
            q = Query::union(q, rhs);
        }
        Ok(q)
    }

    fn union_operand(&mut self) -> Result<Query> {
        if *self.peek() == Tok::LParen {
            self.bump();
            let q = self.query()?;
            self.expect(Tok::RParen, "`)`")?;
            Ok(q)
        } else {
            Ok(Query::Select(self.select()?))
        }
    }

    fn select(&mut self) -> Result<Select> {
        self.expect_kw("select")?;
        self.reject_unsupported()?;
        let projection = if *self.peek() == Tok::Star {
            self.bump();
            Projection::Star
        } else {
            let mut cols = vec![self.column()?];
            while *self.peek() == Tok::Comma {
                self.bump();
                cols.push(self.column()?);
            }
            Projection::Columns(cols)
        };
        self.expect_kw("from")?;
        let mut from = vec![self.table_ref()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            from.push(self.table_ref()?);
        }
        let mut predicates = Vec::new();
        self.reject_unsupported()?;
        if self.is_kw("where") {
            self.bump();
            predicates.push(self.predicate()?);
            loop {
                self.reject_unsupported()?;
                if !self.is_kw("and") {
                    break;
                }
                self.bump();
                predicates.push(self.predicate()?);
            }
        }
        self.reject_unsupported()?;
        Ok(Select {
            projection,
            from,
            predicates,
        })
    }

    fn table_ref(&mut self) -> Result<TableRef> {
        let table = self.ident("table name")?;
        if *self.peek() == Tok::LParen {
            return self.unsupported("table-valued function");
        }
        let alias = if self.is_kw("as") {
            self.bump();
            Some(self.ident("alias")?)
        } else if matches!(self.peek(), Tok::Ident(s) if !is_reserved(s)) {
            Some(self.ident("alias")?)
        } else {
            None
        };
        Ok(TableRef { table, alias })
    }

    fn column(&mut self) -> Result<ColumnRef> {
        let first = self.ident("column")?;
        if *self.peek() == Tok::LParen {
            return self.unsupported(format!("function call `{first}`"));
        }
        if *self.peek() == Tok::Dot {
            self.bump();
            if *self.peek() == Tok::Star {
                return self.unsupported("qualified `*`");
            }
            let col = self.ident("column")?;
            Ok(ColumnRef {
                qualifier: Some(first),
                column: col,
            })
        } else {
            Ok(ColumnRef {
                qualifier: None,
                column: first,
            })
        }
    }

    fn context_key(&mut self) -> Result<ContextKey> {
        self.expect(Tok::Colon, "`:` after sys_context")?;
        let pos = self.pos();
        match self.bump() {
            Tok::Ident(k) => ContextKey::parse(&k).ok_or(Error::Syntax {
                position: pos,
                message: format!("unknown context key `{k}` (expected session_user, l or t)"),
            }),
            _ => Err(Error::Syntax {
                position: pos,
                message: "expected context key".into(),
            }),
        }
    }

    fn operand(&mut self) -> Result<Operand> {
        self.reject_unsupported()?;
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(Operand::Lit(Literal::Text(s)))
            }
            Tok::Number(n) => {
                self.bump();
                Ok(Operand::Lit(Literal::Number(n)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("sys_context") => {
                self.bump();
                Ok(Operand::Ctx(self.context_key()?))
            }
            Tok::Ident(_) => Ok(Operand::Col(self.column()?)),
            _ => self.syntax("expected column, literal or sys_context reference"),
        }
    }

    fn predicate(&mut self) -> Result<Predicate> {
        let start = self.pos();
        if *self.peek() == Tok::LParen {
            return self.unsupported("parenthesized predicate");
        }
        let lhs = self.operand()?;
        self.reject_unsupported()?;
        if self.is_kw("in") {
            self.bump();
            return match lhs {
                Operand::Col(c) => {
                    if self.is_kw("range") {
                        return self.unsupported("column IN range(...)");
                    }
                    self.expect(Tok::LParen, "`(`")?;
                    let q = self.query()?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Predicate::InSubquery(c, Box::new(q)))
                }
                Operand::Ctx(key) => self.range_tail(key),
                Operand::Lit(_) => Err(Error::UnsupportedFeature {
                    position: start,
                    feature: "constant IN".into(),
                }),
            };
        }
        self.expect(Tok::Eq, "`=` or IN")?;
        let rhs = self.operand()?;
        match (lhs, rhs) {
            (Operand::Col(a), Operand::Col(b)) => Ok(Predicate::ColEqCol(a, b)),
            (Operand::Col(a), Operand::Lit(v)) | (Operand::Lit(v), Operand::Col(a)) => {
                Ok(Predicate::ColEqConst(a, v))
            }
            (Operand::Col(a), Operand::Ctx(k)) | (Operand::Ctx(k), Operand::Col(a)) => {
                Ok(Predicate::ColEqContext(a, k))
            }
            _ => Err(Error::UnsupportedFeature {
                position: start,
                feature: "constant-only predicate".into(),
            }),
        }
    }

    fn range_tail(&mut self, key: ContextKey) -> Result<Predicate> {
        if !self.is_kw("range") {
            return self.syntax("expected range(...) after sys_context IN");
        }
        self.bump();
        self.expect(Tok::LParen, "`(`")?;
        let subject = match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                s
            }
            _ => self.ident("subject name")?,
        };
        self.expect(Tok::Comma, "`,`")?;
        let pos = self.pos();
        let dim = self.ident("range dimension")?;
        let dimension = match dim.to_ascii_lowercase().as_str() {
            "location" => RangeDimension::Location,
            "time" => RangeDimension::Time,
            _ => {
                return Err(Error::Syntax {
                    position: pos,
                    message: format!("unknown range dimension `{dim}`"),
                })
            }
        };
        self.expect(Tok::RParen, "`)`")?;
        if dimension.key() != key {
            return Err(Error::UnsupportedFeature {
                position: pos,
                feature: format!(
                    "sys_context:{key} tested against a {} range",
                    dimension.as_str()
                ),
            });
        }
        Ok(Predicate::InRange {
            key,
            range: RangeRef { subject, dimension },
        })
    }
}

/// Parses query text into the AST.
pub fn parse_query(text: &str) -> Result<Query> {
    let mut p = Parser {
        toks: lex(text)?,
        at: 0,
    };
    let q = p.query()?;
    if *p.peek() == Tok::Semi {
        p.bump();
    }
    p.reject_unsupported()?;
    if *p.peek() != Tok::Eof {
        return p.syntax("unexpected trailing input");
    }
    Ok(q)
}
