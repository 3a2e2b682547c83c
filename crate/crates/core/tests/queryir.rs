mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use vpd_core::fixtures;
use vpd_core::queryir::{
    evaluate, ColumnRef, ContextKey, Literal, Predicate, Projection, Query, RangeDimension, Select,
    TableRef,
};
use vpd_core::relstore::{Dataset, TABLES};
use vpd_core::sessionctx::SessionContext;
use vpd_core::{parse_query, render_query, Error};

// ---------------------------------------------------------------------
// Round trip over arbitrary well-formed trees.

const WORDS: &[&str] = &[
    "subject",
    "object",
    "carrier",
    "assignment",
    "org_hierarchy",
    "a",
    "b",
    "t1",
    "x_2",
    "Name",
    "dept",
    "truck",
    "oid",
    "h1",
    "range",
];

fn ident() -> impl Strategy<Value = String> {
    prop::sample::select(WORDS).prop_map(str::to_string)
}

fn column() -> impl Strategy<Value = ColumnRef> {
    (prop::option::of(ident()), ident()).prop_map(|(q, c)| ColumnRef {
        qualifier: q,
        column: c,
    })
}

fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![
        "[ -~]{0,8}".prop_map(Literal::Text),
        "[0-9]{1,4}".prop_map(Literal::Number),
    ]
}

fn key() -> impl Strategy<Value = ContextKey> {
    prop_oneof![
        Just(ContextKey::SessionUser),
        Just(ContextKey::Location),
        Just(ContextKey::Time)
    ]
}

fn leaf_predicate() -> impl Strategy<Value = Predicate> {
    prop_oneof![
        (column(), column()).prop_map(|(a, b)| Predicate::ColEqCol(a, b)),
        (column(), literal()).prop_map(|(a, v)| Predicate::ColEqConst(a, v)),
        (column(), key()).prop_map(|(a, k)| Predicate::ColEqContext(a, k)),
        ("[A-Za-z][A-Za-z0-9 ']{0,6}", prop::bool::ANY).prop_map(|(s, loc)| {
            Predicate::in_range(
                &s,
                if loc {
                    RangeDimension::Location
                } else {
                    RangeDimension::Time
                },
            )
        }),
    ]
}

fn table_ref() -> impl Strategy<Value = TableRef> {
    (ident(), prop::option::of(ident())).prop_map(|(t, a)| TableRef { table: t, alias: a })
}

fn select(preds: BoxedStrategy<Predicate>) -> impl Strategy<Value = Select> {
    (
        prop_oneof![
            Just(Projection::Star),
            prop::collection::vec(column(), 1..3).prop_map(Projection::Columns)
        ],
        prop::collection::vec(table_ref(), 1..4),
        prop::collection::vec(preds, 0..4),
    )
        .prop_map(|(projection, from, predicates)| Select {
            projection,
            from,
            predicates,
        })
}

fn query() -> impl Strategy<Value = Query> {
    let leaf = select(leaf_predicate().boxed()).prop_map(Query::Select);
    leaf.prop_recursive(3, 12, 2, |inner| {
        let pred = prop_oneof![
            3 => leaf_predicate(),
            1 => (column(), inner.clone()).prop_map(|(c, q)| Predicate::InSubquery(c, Box::new(q))),
        ]
        .boxed();
        prop_oneof![
            select(pred).prop_map(Query::Select),
            (inner.clone(), inner).prop_map(|(l, r)| Query::union(l, r)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parse_inverts_render(q in query()) {
        let text = render_query(&q);
        let back = parse_query(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(&back, &q);
        prop_assert_eq!(render_query(&back), text);
    }
}

// ---------------------------------------------------------------------
// Evaluator against the naive cartesian evaluator.

fn pick_col(r: &mut ChaCha8Rng, binding: &str, table: &str) -> ColumnRef {
    let cols = Dataset::columns_of(table).unwrap();
    ColumnRef::new(binding, cols.choose(r).unwrap())
}

fn some_value(r: &mut ChaCha8Rng, d: &Dataset, table: &str, col: &str) -> Literal {
    let t = d.table(table).unwrap();
    let i = t.columns.iter().position(|c| *c == col).unwrap();
    match t.rows.choose(r).and_then(|row| row[i].as_str()) {
        Some(v) if r.gen_bool(0.8) => Literal::text(v),
        _ => Literal::text("nothing"),
    }
}

fn random_select(
    r: &mut ChaCha8Rng,
    d: &Dataset,
    prefix: &str,
    outer: &[(String, String)],
    depth: u32,
    one_col: bool,
) -> Select {
    let from: Vec<TableRef> = (0..r.gen_range(1..=3))
        .map(|i| TableRef::aliased(TABLES.choose(r).unwrap(), &format!("{prefix}{i}")))
        .collect();
    let mut visible: Vec<(String, String)> = outer.to_vec();
    visible.extend(
        from.iter()
            .map(|t| (t.binding().to_string(), t.table.clone())),
    );
    let local = &visible[outer.len()..];
    let mut predicates = Vec::new();
    for _ in 0..r.gen_range(0..=4) {
        let (b, t) = local.choose(r).unwrap().clone();
        let a = pick_col(r, &b, &t);
        let p = match r.gen_range(0..6) {
            0 | 1 => {
                let (b2, t2) = visible.choose(r).unwrap().clone();
                Predicate::ColEqCol(a, pick_col(r, &b2, &t2))
            }
            2 => {
                let v = some_value(r, d, &t, &a.column);
                Predicate::ColEqConst(a, v)
            }
            3 => Predicate::ColEqContext(pick_col(r, &b, &t), ContextKey::SessionUser),
            4 if depth < 2 => {
                let inner = random_select(r, d, &format!("{prefix}q"), &visible, depth + 1, true);
                Predicate::InSubquery(a, Box::new(Query::Select(inner)))
            }
            _ => match d.subjects.choose(r) {
                Some(s) => Predicate::in_range(
                    &s.name,
                    if r.gen_bool(0.5) {
                        RangeDimension::Location
                    } else {
                        RangeDimension::Time
                    },
                ),
                None => Predicate::ColEqCol(a.clone(), a),
            },
        };
        predicates.push(p);
    }
    let projection = if one_col {
        let (b, t) = local.choose(r).unwrap().clone();
        Projection::Columns(vec![pick_col(r, &b, &t)])
    } else if r.gen_bool(0.5) {
        Projection::Star
    } else {
        let n = r.gen_range(1..=3);
        Projection::Columns(
            (0..n)
                .map(|_| {
                    let (b, t) = local.choose(r).unwrap().clone();
                    pick_col(r, &b, &t)
                })
                .collect(),
        )
    };
    Select {
        projection,
        from,
        predicates,
    }
}

fn random_query(r: &mut ChaCha8Rng, d: &Dataset) -> Query {
    if r.gen_bool(0.3) {
        let branches = (0..r.gen_range(2..=3))
            .map(|i| Query::Select(random_select(r, d, &format!("u{i}_"), &[], 0, true)));
        Query::union_all(branches).unwrap()
    } else {
        Query::Select(random_select(r, d, "t", &[], 0, false))
    }
}

#[test]
fn evaluate_agrees_with_naive_cartesian_product() {
    let mut checked = 0;
    for seed in 0..400u64 {
        let mut r = common::rng(seed);
        let d = common::random_dataset(&mut r);
        let user = d.subjects.choose(&mut r).unwrap().name.clone();
        let ctx = SessionContext::unchecked(
            &user,
            Some(common::random_location(&mut r, &d)),
            Some(common::random_time(&mut r, &d)),
        );
        for _ in 0..5 {
            let q = random_query(&mut r, &d);
            let got = evaluate(&q, &d, &ctx)
                .unwrap_or_else(|e| panic!("seed {seed}: {} -> {e}", render_query(&q)));
            let want = common::naive_query(&d, &ctx, &q, &Vec::new());
            assert_eq!(
                common::sorted(got.rows),
                common::sorted(want),
                "seed {seed}: {}",
                render_query(&q)
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 2000);
}

// ---------------------------------------------------------------------
// Fixed examples.

#[test]
fn parker_workflow_query_returns_truck_objects() {
    let d = fixtures::logistics().unwrap();
    let q = parse_query(
        "SELECT object.oid FROM subject, assignment, object WHERE subject.name = sys_context:session_user \
         AND subject.id = assignment.id AND assignment.truck = object.truck",
    )
    .unwrap();
    let rows = evaluate(&q, &d, &SessionContext::wired("Parker")).unwrap();
    let oids: Vec<String> = rows.rows.iter().map(|r| r[0].to_string()).collect();
    assert_eq!(oids, ["o001", "o002", "o003", "o004"]);
}

#[test]
fn union_removes_duplicates_select_does_not() {
    let d = fixtures::logistics().unwrap();
    let bag = parse_query("SELECT assignment.truck FROM assignment").unwrap();
    let set = parse_query(
        "SELECT assignment.truck FROM assignment UNION SELECT assignment.truck FROM assignment",
    )
    .unwrap();
    let ctx = SessionContext::wired("Parker");
    let bag = evaluate(&bag, &d, &ctx).unwrap();
    let set = evaluate(&set, &d, &ctx).unwrap();
    assert!(bag.len() > set.len());
    assert_eq!(set.rows.len(), set.row_set().len());
}

#[test]
fn absent_values_never_join() {
    let d = fixtures::logistics().unwrap();
    let q = parse_query(
        "SELECT * FROM subject a, subject b WHERE a.specialty = b.specialty AND a.id = b.id",
    )
    .unwrap();
    let rows = evaluate(&q, &d, &SessionContext::wired("Parker")).unwrap();
    let with_specialty = d.subjects.iter().filter(|s| s.specialty.is_some()).count();
    assert_eq!(rows.len(), with_specialty);
}

#[test]
fn unknown_names_are_errors() {
    let d = fixtures::logistics().unwrap();
    let ctx = SessionContext::wired("Parker");
    let e = evaluate(&parse_query("SELECT * FROM nowhere").unwrap(), &d, &ctx).unwrap_err();
    assert!(matches!(e, Error::UnknownTable(_)), "{e}");
    let e = evaluate(
        &parse_query("SELECT * FROM subject WHERE subject.colour = 'x'").unwrap(),
        &d,
        &ctx,
    )
    .unwrap_err();
    assert!(matches!(e, Error::UnknownColumn(_)), "{e}");
    let e = evaluate(
        &parse_query("SELECT * FROM subject, assignment WHERE id = 'x'").unwrap(),
        &d,
        &ctx,
    )
    .unwrap_err();
    assert!(matches!(e, Error::AmbiguousColumn(_)), "{e}");
}

#[test]
fn unbound_context_key_is_an_error() {
    let d = fixtures::logistics().unwrap();
    let q = parse_query("SELECT * FROM subject WHERE subject.name = sys_context:l").unwrap();
    let e = evaluate(&q, &d, &SessionContext::wired("Parker")).unwrap_err();
    assert!(matches!(e, Error::UnboundContextKey(_)), "{e}");
}

#[test]
fn rejected_constructs_carry_positions() {
    for text in [
        "SELECT * FROM a JOIN b ON a.x = b.y",
        "SELECT * FROM a WHERE a.x = 1 OR a.y = 2",
        "SELECT * FROM a WHERE NOT a.x = 1",
        "SELECT DISTINCT * FROM a",
        "SELECT * FROM a GROUP BY a.x",
    ] {
        let e = parse_query(text).unwrap_err();
        assert!(
            matches!(e, Error::UnsupportedFeature { .. } | Error::Syntax { .. }),
            "{text}: {e}"
        );
    }
    let e = parse_query("SELECT * FROM a WHERE").unwrap_err();
    assert!(matches!(e, Error::Syntax { position: 21, .. }), "{e:?}");
}

fn conjunctive(q: &Query) -> bool {
    q.branches().iter().all(|s| {
        s.predicates
            .iter()
            .all(|p| !matches!(p, Predicate::InSubquery(..)))
    })
}

/// `d` plus the records of `extra` under fresh keys.
fn grown(d: &Dataset, extra: &Dataset) -> Dataset {
    let mut out = d.clone();
    let key = |s: &str| format!("z{s}");
    for s in &extra.subjects {
        out.subjects.push(vpd_core::relstore::SubjectRecord {
            id: key(&s.id),
            name: key(&s.name),
            ..s.clone()
        });
    }
    for c in &extra.carriers {
        out.carriers.push(vpd_core::relstore::CarrierRecord {
            id: key(&c.id),
            ..c.clone()
        });
    }
    for a in &extra.assignments {
        out.assignments.push(vpd_core::relstore::AssignmentRecord {
            subject_id: key(&a.subject_id),
            carrier_id: key(&a.carrier_id),
        });
    }
    for o in &extra.objects {
        out.objects.push(vpd_core::relstore::ObjectRecord {
            oid: key(&o.oid),
            carrier_id: o.carrier_id.as_deref().map(key),
            ..o.clone()
        });
    }
    out
}

#[test]
fn conjunctive_queries_are_monotone_in_the_data() {
    let mut checked = 0;
    for seed in 0..300u64 {
        let mut r = common::rng(seed);
        let d = common::random_dataset(&mut r);
        let bigger = grown(&d, &common::random_dataset(&mut r));
        let user = d.subjects[0].name.clone();
        let ctx = SessionContext::unchecked(
            &user,
            Some(common::random_location(&mut r, &d)),
            Some(common::random_time(&mut r, &d)),
        );
        for _ in 0..5 {
            let q = random_query(&mut r, &d);
            if !conjunctive(&q) {
                continue;
            }
            let small = evaluate(&q, &d, &ctx).unwrap().row_set();
            let large = evaluate(&q, &bigger, &ctx).unwrap().row_set();
            assert!(small.is_subset(&large), "seed {seed}: {}", render_query(&q));
            checked += 1;
        }
    }
    assert!(checked > 500);
}

#[test]
fn union_is_set_union_of_branches() {
    for seed in 0..300u64 {
        let mut r = common::rng(seed);
        let d = common::random_dataset(&mut r);
        let ctx = SessionContext::unchecked(
            &d.subjects[0].name,
            Some(common::random_location(&mut r, &d)),
            Some(common::random_time(&mut r, &d)),
        );
        let a = Query::Select(random_select(&mut r, &d, "a", &[], 0, true));
        let b = Query::Select(random_select(&mut r, &d, "b", &[], 0, true));
        let u = evaluate(&Query::union(a.clone(), b.clone()), &d, &ctx).unwrap();
        let mut want = evaluate(&a, &d, &ctx).unwrap().row_set();
        want.extend(evaluate(&b, &d, &ctx).unwrap().row_set());
        assert_eq!(u.rows.len(), want.len(), "seed {seed}");
        assert_eq!(u.row_set(), want, "seed {seed}");
    }
}

#[test]
fn any_query_over_empty_data_is_empty() {
    let d = Dataset::default();
    let q = parse_query("select * from subject, object where subject.id = object.sender").unwrap();
    assert!(evaluate(&q, &d, &SessionContext::wired("nobody"))
        .unwrap()
        .is_empty());
}
