//! Random small instances and a naive reference evaluator shared by the
//! integration suites.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vpd_core::geo::{distance_to_polyline_km, interpolate};
use vpd_core::queryir::{ColumnRef, Predicate, Projection, Query, Select};
use vpd_core::relstore::{
    AssignmentRecord, CarrierRecord, Dataset, ObjectRecord, OrgEdge, Place, SchemaManifest,
    SubjectRecord, Value,
};
use vpd_core::sessionctx::{ContextMap, SessionContext};
use vpd_core::{linkage, GeoPoint};

pub const CITIES: &[(&str, f64, f64)] = &[
    ("Seattle", 47.6062, -122.3321),
    ("Denver", 39.7392, -104.9903),
    ("Chicago", 41.8781, -87.6298),
    ("Boston", 42.3601, -71.0589),
    ("Miami", 25.7617, -80.1918),
    ("Dallas", 32.7767, -96.7970),
    ("Phoenix", 33.4484, -112.0740),
    ("Atlanta", 33.7490, -84.3880),
];

pub const OBJECT_NAMES: &[&str] = &["Gold", "Car", "Wood", "Metal"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2010, 8, 1, 0, 0, 0).unwrap()
}

/// A random dataset with at most 8 subjects, 8 objects, 3 carriers and 3
/// levels of organizational units. Always passes validation.
pub fn random_dataset(r: &mut ChaCha8Rng) -> Dataset {
    // Units, level by level.
    let mut levels: Vec<Vec<String>> =
        vec![(0..r.gen_range(1..=2)).map(|i| format!("U{i}")).collect()];
    let mut edges = Vec::new();
    for depth in 1..r.gen_range(1..=3) {
        let mut next = Vec::new();
        for parent in &levels[depth - 1] {
            for k in 0..r.gen_range(0..=2) {
                let child = format!("{parent}{k}");
                edges.push(OrgEdge {
                    ou: parent.clone(),
                    sub_ou: child.clone(),
                });
                next.push(child);
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }
    let units: Vec<String> = levels.concat();

    let n_subjects = r.gen_range(1..=8);
    let subjects: Vec<SubjectRecord> = (0..n_subjects)
        .map(|i| SubjectRecord {
            id: format!("s{i}"),
            name: format!("n{i}"),
            title: "staff".into(),
            specialty: if r.gen_bool(0.5) {
                Some(OBJECT_NAMES.choose(r).unwrap().to_string())
            } else {
                None
            },
            dept: units.choose(r).unwrap().clone(),
        })
        .collect();

    let n_carriers = r.gen_range(0..=3);
    let carriers: Vec<CarrierRecord> = (0..n_carriers)
        .map(|i| {
            let mut two: Vec<&(&str, f64, f64)> = CITIES.choose_multiple(r, 2).collect();
            two.shuffle(r);
            let place = |c: &(&str, f64, f64)| Place {
                name: c.0.to_string(),
                lat: c.1,
                lon: c.2,
            };
            let (o, d) = (place(two[0]), place(two[1]));
            let departure = base_time() + Duration::days(r.gen_range(0..20));
            let arrival = departure + Duration::days(r.gen_range(1..15)) - Duration::seconds(1);
            CarrierRecord {
                id: format!("c{i}"),
                waypoints: vec![o.geocode(), d.geocode()],
                origin: o,
                destination: d,
                departure,
                arrival,
            }
        })
        .collect();

    let mut assignments = Vec::new();
    for s in &subjects {
        if carriers.is_empty() {
            break;
        }
        let k = r.gen_range(0..=2);
        for c in carriers.choose_multiple(r, k) {
            assignments.push(AssignmentRecord {
                subject_id: s.id.clone(),
                carrier_id: c.id.clone(),
            });
        }
    }

    let party = |r: &mut ChaCha8Rng, i: usize, tag: &str| {
        if r.gen_bool(0.4) {
            subjects.choose(r).unwrap().id.clone()
        } else {
            format!("{tag}{i}")
        }
    };
    let objects: Vec<ObjectRecord> = (0..r.gen_range(0..=8))
        .map(|i| ObjectRecord {
            oid: format!("o{i}"),
            name: OBJECT_NAMES.choose(r).unwrap().to_string(),
            sender: party(r, i, "x"),
            receiver: party(r, i, "y"),
            carrier_id: if carriers.is_empty() || r.gen_bool(0.15) {
                None
            } else {
                Some(carriers.choose(r).unwrap().id.clone())
            },
            origin: "A".into(),
            destination: "B".into(),
            ship_out: None,
            receive_in: None,
        })
        .collect();

    let d = Dataset {
        schema: SchemaManifest::default(),
        subjects,
        assignments,
        carriers,
        objects,
        org_edges: edges,
        version: 0,
    };
    assert!(
        d.validate().is_empty(),
        "generator produced invalid data: {:?}",
        d.validate()
    );
    d
}

fn offset(p: GeoPoint, r: &mut ChaCha8Rng, km: f64) -> GeoPoint {
    let bearing: f64 = r.gen_range(0.0..std::f64::consts::TAU);
    let dlat = km * bearing.cos() / 111.2;
    let dlon = km * bearing.sin() / (111.2 * p.lat.to_radians().cos());
    GeoPoint::new(p.lat + dlat, p.lon + dlon)
}

/// Minimum distance from `p` to any route in the dataset.
fn nearest_route_km(d: &Dataset, p: GeoPoint) -> f64 {
    d.carriers
        .iter()
        .map(|c| distance_to_polyline_km(p, &c.waypoints))
        .fold(f64::INFINITY, f64::min)
}

/// A location that is clearly on or clearly off some route: never within
/// 5 km of the corridor edge of any carrier.
pub fn random_location(r: &mut ChaCha8Rng, d: &Dataset) -> GeoPoint {
    let corridor = d.schema.corridor_km;
    loop {
        let p = if !d.carriers.is_empty() && r.gen_bool(0.6) {
            let c = d.carriers.choose(r).unwrap();
            let on = interpolate(c.waypoints[0], c.waypoints[1], r.gen_range(0.0..=1.0));
            let km = if r.gen_bool(0.7) {
                r.gen_range(0.0..30.0)
            } else {
                r.gen_range(80.0..600.0)
            };
            offset(on, r, km)
        } else {
            let (_, lat, lon) = CITIES.choose(r).unwrap();
            let km = r.gen_range(0.0..400.0);
            offset(GeoPoint::new(*lat, *lon), r, km)
        };
        let clear = d
            .carriers
            .iter()
            .all(|c| (distance_to_polyline_km(p, &c.waypoints) - corridor).abs() > 5.0);
        if clear {
            return p;
        }
    }
}

pub fn random_time(r: &mut ChaCha8Rng, d: &Dataset) -> DateTime<Utc> {
    if !d.carriers.is_empty() && r.gen_bool(0.8) {
        let c = d.carriers.choose(r).unwrap();
        match r.gen_range(0..6) {
            0 => c.departure,
            1 => c.arrival,
            2 => c.arrival + Duration::seconds(1),
            3 => c.departure - Duration::hours(r.gen_range(1..72)),
            _ => {
                c.departure
                    + Duration::seconds(r.gen_range(0..=(c.arrival - c.departure).num_seconds()))
            }
        }
    } else {
        base_time() + Duration::hours(r.gen_range(0..(40 * 24)))
    }
}

/// A session for `user`: wired, location only, time only, or both.
pub fn random_context(r: &mut ChaCha8Rng, d: &Dataset, user: &str) -> SessionContext {
    let (l, t) = match r.gen_range(0..6) {
        0 => (None, None),
        1 => (Some(random_location(r, d)), None),
        2 => (None, Some(random_time(r, d))),
        _ => (Some(random_location(r, d)), Some(random_time(r, d))),
    };
    SessionContext::unchecked(user, l, t)
}

/// Contexts for a random subset of subjects.
pub fn random_contexts(r: &mut ChaCha8Rng, d: &Dataset) -> ContextMap {
    let mut map = ContextMap::new();
    for s in &d.subjects {
        if r.gen_bool(0.75) {
            map.insert(s.name.clone(), random_context(r, d, &s.name));
        }
    }
    map
}

/// Context of `user` in `contexts`, or a wired one.
pub fn context_of(contexts: &ContextMap, user: &str) -> SessionContext {
    contexts
        .get(user)
        .cloned()
        .unwrap_or_else(|| SessionContext::wired(user))
}

// ---------------------------------------------------------------------
// Naive evaluator: full cartesian product, then filter.

type Env<'a> = Vec<(String, &'static [&'static str], &'a [Value])>;

fn lookup<'a>(env: &Env<'a>, c: &ColumnRef) -> Value {
    for (binding, cols, row) in env.iter().rev() {
        if c.qualifier.as_deref().is_some_and(|q| q != binding) {
            continue;
        }
        if let Some(i) = cols.iter().position(|x| *x == c.column) {
            return row[i].clone();
        }
    }
    panic!("unresolved column {c}");
}

fn eq(a: &Value, b: &Value) -> bool {
    a != &Value::Absent && a == b
}

fn product(d: &Dataset, s: &Select) -> Vec<Vec<(String, &'static [&'static str], Vec<Value>)>> {
    let mut acc: Vec<Vec<(String, &'static [&'static str], Vec<Value>)>> = vec![Vec::new()];
    for t in &s.from {
        let table = d.table(&t.table).unwrap();
        let mut next = Vec::new();
        for prefix in &acc {
            for row in &table.rows {
                let mut p = prefix.clone();
                p.push((t.binding().to_string(), table.columns, row.clone()));
                next.push(p);
            }
        }
        acc = next;
    }
    acc
}

fn naive_select(d: &Dataset, ctx: &SessionContext, s: &Select, outer: &Env<'_>) -> Vec<Vec<Value>> {
    let mut out = Vec::new();
    for combo in product(d, s) {
        let mut env: Env<'_> = outer.clone();
        for (b, cols, row) in &combo {
            env.push((b.clone(), cols, row.as_slice()));
        }
        let ok = s.predicates.iter().all(|p| match p {
            Predicate::ColEqCol(a, b) => eq(&lookup(&env, a), &lookup(&env, b)),
            Predicate::ColEqConst(a, v) => eq(&lookup(&env, a), &Value::text(v.as_str())),
            Predicate::ColEqContext(a, k) => eq(&lookup(&env, a), &ctx.lookup(*k).unwrap()),
            Predicate::InSubquery(a, q) => {
                let v = lookup(&env, a);
                v != Value::Absent && naive_query(d, ctx, q, &env).iter().any(|r| r[0] == v)
            }
            Predicate::InRange { range, .. } => {
                let dims: Vec<_> = s
                    .predicates
                    .iter()
                    .filter_map(|p| match p {
                        Predicate::InRange { range: r, .. } if r.subject == range.subject => {
                            Some(r.dimension)
                        }
                        _ => None,
                    })
                    .collect();
                linkage::location_range(&range.subject, d)
                    .unwrap()
                    .iter()
                    .any(|r| {
                        dims.iter().all(|dim| match dim {
                            vpd_core::queryir::RangeDimension::Location => {
                                r.contains_location(ctx.location.unwrap())
                            }
                            vpd_core::queryir::RangeDimension::Time => {
                                r.contains_time(ctx.timestamp.unwrap())
                            }
                        })
                    })
            }
        });
        if !ok {
            continue;
        }
        let row = match &s.projection {
            Projection::Star => combo
                .iter()
                .flat_map(|(_, _, r)| r.iter().cloned())
                .collect(),
            Projection::Columns(cols) => {
                let local: Env<'_> = combo
                    .iter()
                    .map(|(b, c, r)| (b.clone(), *c, r.as_slice()))
                    .collect();
                cols.iter().map(|c| lookup(&local, c)).collect()
            }
        };
        out.push(row);
    }
    out
}

/// Reference semantics: SELECT is a bag, UNION is a set.
pub fn naive_query(
    d: &Dataset,
    ctx: &SessionContext,
    q: &Query,
    outer: &Env<'_>,
) -> Vec<Vec<Value>> {
    match q {
        Query::Select(s) => naive_select(d, ctx, s, outer),
        Query::Union(l, r) => {
            let mut seen = HashSet::new();
            naive_query(d, ctx, l, outer)
                .into_iter()
                .chain(naive_query(d, ctx, r, outer))
                .filter(|row| seen.insert(row.clone()))
                .collect()
        }
    }
}

pub fn sorted(rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    let mut rows = rows;
    rows.sort();
    rows
}

pub fn ids<I: IntoIterator<Item = &'static str>>(xs: I) -> BTreeSet<String> {
    xs.into_iter().map(str::to_string).collect()
}

// ---------------------------------------------------------------------
// Running-example helpers.

pub fn parker_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2010, 8, 20, 12, 0, 0).unwrap()
}

/// Parker halfway along truck t1, inside its window.
pub fn parker_on_route(d: &Dataset) -> SessionContext {
    let t1 = d.carrier("t1").unwrap();
    let mid = interpolate(t1.waypoints[0], *t1.waypoints.last().unwrap(), 0.5);
    SessionContext::unchecked("Parker", Some(mid), Some(parker_time()))
}

/// Compares `actual` with `tests/golden/<name>`. With `BLESS=1` the file
/// is rewritten instead.
pub fn golden(name: &str, actual: &str) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden {name} differs");
}

// ---------------------------------------------------------------------
// Sweeps shared by the property suites and the acceptance target.

pub struct Sweep {
    pub datasets: usize,
    pub checks: usize,
    pub failures: Vec<String>,
}

/// Pipeline against oracle for every subject, chain mode and supervisor
/// mode on `n` random instances.
pub fn oracle_sweep(n: u64) -> Sweep {
    use vpd_core::lifecycle::{accessible_objects, SupervisorMode};
    use vpd_core::oracle::brute_force_accessible;
    use vpd_core::ChainMode;

    let mut out = Sweep {
        datasets: 0,
        checks: 0,
        failures: Vec::new(),
    };
    for seed in 0..n {
        let mut r = rng(seed);
        let d = random_dataset(&mut r);
        let contexts = random_contexts(&mut r, &d);
        for s in &d.subjects {
            let ctx = context_of(&contexts, &s.name);
            for mode in ChainMode::ALL {
                for sm in SupervisorMode::ALL {
                    let got = accessible_objects(&ctx, &contexts, &d, mode, sm).unwrap();
                    let want =
                        brute_force_accessible(&s.name, &ctx, &contexts, &d, mode, sm).unwrap();
                    if got != want.objects {
                        out.failures.push(format!(
                            "seed {seed} {} {mode:?} {sm:?}: pipeline {got:?} oracle {:?}",
                            s.name, want.objects
                        ));
                    }
                    out.checks += 1;
                }
            }
        }
        out.datasets += 1;
    }
    out
}

/// Residual algebra on every subject pair of `n` instances, both
/// directions at once.
pub fn residual_sweep(n: u64) -> Sweep {
    use vpd_core::lifecycle::{accessible_objects, privacy_residual, SupervisorMode};
    use vpd_core::ChainMode;

    let mut out = Sweep {
        datasets: 0,
        checks: 0,
        failures: Vec::new(),
    };
    for seed in 0..n {
        let mut r = rng(seed);
        let d = random_dataset(&mut r);
        let contexts = random_contexts(&mut r, &d);
        for mode in ChainMode::ALL {
            let sm = SupervisorMode::Narrative;
            let views: Vec<(SessionContext, BTreeSet<String>)> = d
                .subjects
                .iter()
                .map(|s| {
                    let c = context_of(&contexts, &s.name);
                    let v = accessible_objects(&c, &contexts, &d, mode, sm).unwrap();
                    (c, v)
                })
                .collect();
            for (i, (ca, va)) in views.iter().enumerate() {
                for (cb, vb) in &views[i..] {
                    let ab = privacy_residual(ca, cb, &contexts, &d, mode, sm)
                        .unwrap()
                        .object_ids();
                    let ba = privacy_residual(cb, ca, &contexts, &d, mode, sm)
                        .unwrap()
                        .object_ids();
                    let shared: BTreeSet<String> = va.intersection(vb).cloned().collect();
                    let ok = ab.is_disjoint(&ba)
                        && ab.union(&shared).cloned().collect::<BTreeSet<_>>() == *va
                        && ba.union(&shared).cloned().collect::<BTreeSet<_>>() == *vb;
                    if !ok {
                        out.failures
                            .push(format!("seed {seed} {} vs {} {mode:?}", ca.user, cb.user));
                    }
                    out.checks += 1;
                }
            }
        }
        out.datasets += 1;
    }
    out
}

/// Containment of subordinate views in valid supervisors' views.
pub fn containment_sweep(n: u64) -> Sweep {
    use vpd_core::lifecycle::{accessible_objects, check_validity, SupervisorMode};
    use vpd_core::ChainMode;

    let mut out = Sweep {
        datasets: 0,
        checks: 0,
        failures: Vec::new(),
    };
    for seed in 0..n {
        let mut r = rng(seed);
        let d = random_dataset(&mut r);
        let contexts = random_contexts(&mut r, &d);
        for sm in SupervisorMode::ALL {
            let valid = |c: &SessionContext| {
                check_validity(&c.user, c, &contexts, &d, sm)
                    .unwrap()
                    .is_granted()
            };
            for b in &d.subjects {
                let cb = context_of(&contexts, &b.name);
                if !valid(&cb) {
                    continue;
                }
                for a in linkage::subordinates(&b.name, &d).unwrap() {
                    let ca = context_of(&contexts, &a);
                    if !valid(&ca) {
                        continue;
                    }
                    for mode in ChainMode::ALL {
                        let va = accessible_objects(&ca, &contexts, &d, mode, sm).unwrap();
                        let vb = accessible_objects(&cb, &contexts, &d, mode, sm).unwrap();
                        if !va.is_subset(&vb) {
                            out.failures
                                .push(format!("seed {seed} {a} under {} {mode:?} {sm:?}", b.name));
                        }
                        out.checks += 1;
                    }
                }
            }
        }
        out.datasets += 1;
    }
    out
}
