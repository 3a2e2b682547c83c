//! In-memory relational store for the logistics dataset.
//!
//! Holds the five tables (`subject`, `assignment`, `carrier`, `object`,
//! `org_hierarchy`) plus carrier route geometry and the schema manifest.
//! A [`Dataset`] is immutable once loaded; the `with_*` methods return a new
//! version.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::GeoPoint;

pub const TABLES: [&str; 5] = [
    "subject",
    "assignment",
    "carrier",
    "object",
    "org_hierarchy",
];

pub const SUBJECT_COLUMNS: &[&str] = &["id", "name", "title", "specialty", "dept"];
pub const ASSIGNMENT_COLUMNS: &[&str] = &["id", "truck"];
pub const CARRIER_COLUMNS: &[&str] = &["id", "origin", "destination", "departure", "arrival"];
pub const OBJECT_COLUMNS: &[&str] = &[
    "oid",
    "name",
    "sender",
    "receiver",
    "truck",
    "origin",
    "destination",
    "ship_out",
    "receive_in",
];
pub const ORG_COLUMNS: &[&str] = &["ou", "sub_ou"];

pub const DEFAULT_CORRIDOR_KM: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub name: String,
    pub title: String,
    #[serde(default, deserialize_with = "absent_string")]
    pub specialty: Option<String>,
    pub dept: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    #[serde(rename = "id")]
    pub subject_id: String,
    #[serde(rename = "truck")]
    pub carrier_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

impl Place {
    pub fn geocode(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarrierRecord {
    pub id: String,
    pub origin: Place,
    pub destination: Place,
    pub waypoints: Vec<GeoPoint>,
    pub departure: DateTime<Utc>,
    pub arrival: DateTime<Utc>,
}

impl<'de> Deserialize<'de> for CarrierRecord {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            id: String,
            origin: Place,
            destination: Place,
            #[serde(default)]
            waypoints: Vec<GeoPoint>,
            departure: String,
            arrival: String,
        }
        let raw = Raw::deserialize(de)?;
        let departure =
            parse_timestamp(&raw.departure, DayBound::Start).map_err(serde::de::Error::custom)?;
        let arrival =
            parse_timestamp(&raw.arrival, DayBound::End).map_err(serde::de::Error::custom)?;
        let waypoints = if raw.waypoints.is_empty() {
            vec![raw.origin.geocode(), raw.destination.geocode()]
        } else {
            raw.waypoints
        };
        Ok(CarrierRecord {
            id: raw.id,
            origin: raw.origin,
            destination: raw.destination,
            waypoints,
            departure,
            arrival,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub oid: String,
    pub name: String,
    pub sender: String,
    pub receiver: String,
    #[serde(rename = "truck", default, deserialize_with = "absent_string")]
    pub carrier_id: Option<String>,
    pub origin: String,
    pub destination: String,
    #[serde(default, deserialize_with = "absent_date")]
    pub ship_out: Option<NaiveDate>,
    #[serde(default, deserialize_with = "absent_date")]
    pub receive_in: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OrgEdge {
    pub ou: String,
    pub sub_ou: String,
}

/// A declared foreign-key edge between two `table.column` endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from: String,
    pub to: String,
}

impl ForeignKey {
    pub fn new(from: &str, to: &str) -> Self {
        Self {
            from: from.to_string(),
            to: to.to_string(),
        }
    }

    pub fn endpoints(&self) -> Option<((&str, &str), (&str, &str))> {
        Some((self.from.split_once('.')?, self.to.split_once('.')?))
    }
}

/// Schema manifest: foreign-key graph, corridor tolerance and waypoint
/// overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaManifest {
    #[serde(default = "default_manifest_version")]
    pub version: u32,
    #[serde(default = "default_fks")]
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(default = "default_corridor")]
    pub corridor_km: f64,
    #[serde(default)]
    pub waypoints: BTreeMap<String, Vec<GeoPoint>>,
}

fn default_manifest_version() -> u32 {
    1
}

fn default_corridor() -> f64 {
    DEFAULT_CORRIDOR_KM
}

fn default_fks() -> Vec<ForeignKey> {
    vec![
        ForeignKey::new("subject.id", "assignment.id"),
        ForeignKey::new("assignment.truck", "object.truck"),
        ForeignKey::new("assignment.truck", "carrier.id"),
        ForeignKey::new("object.truck", "carrier.id"),
        ForeignKey::new("subject.dept", "org_hierarchy.ou"),
    ]
}

impl Default for SchemaManifest {
    fn default() -> Self {
        Self {
            version: default_manifest_version(),
            foreign_keys: default_fks(),
            corridor_km: DEFAULT_CORRIDOR_KM,
            waypoints: BTreeMap::new(),
        }
    }
}

/// A cell of the relational view. Absent values compare unequal to
/// everything, including other absent values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Text(String),
    Absent,
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            Value::Absent => None,
        }
    }

    /// SQL-style equality: absent never matches.
    pub fn sql_eq(&self, other: &Value) -> bool {
        matches!((self, other), (Value::Text(a), Value::Text(b)) if a == b)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Absent => f.write_str("-"),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

fn opt(v: &Option<String>) -> Value {
    v.as_ref().map_or(Value::Absent, |s| Value::Text(s.clone()))
}

/// A base table materialized as rows of [`Value`].
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(default)]
    pub schema: SchemaManifest,
    #[serde(rename = "subject", default)]
    pub subjects: Vec<SubjectRecord>,
    #[serde(rename = "assignment", default)]
    pub assignments: Vec<AssignmentRecord>,
    #[serde(rename = "carrier", default)]
    pub carriers: Vec<CarrierRecord>,
    #[serde(rename = "object", default)]
    pub objects: Vec<ObjectRecord>,
    #[serde(rename = "org_hierarchy", default)]
    pub org_edges: Vec<OrgEdge>,
    #[serde(skip)]
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    DuplicateKey,
    DanglingReference,
    OrgCycle,
    Temporal,
    DegenerateRoute,
    InvalidGeocode,
    InvalidSchema,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub table: String,
    /// Zero-based row index within the table, when a single row is at fault.
    pub row: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{}[{}]: {}", self.table, r, self.message),
            None => write!(f, "{}: {}", self.table, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, kind: ViolationKind, table: &str, row: Option<usize>, message: String) {
        self.violations.push(Violation {
            kind,
            table: table.to_string(),
            row,
            message,
        });
    }
}

impl Dataset {
    /// Loads a dataset from a directory of CSV tables or a single JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        if path.is_dir() {
            load_csv_dir(path)
        } else {
            let text = std::fs::read_to_string(path)
                .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
            Dataset::from_json_str(&text)
        }
    }

    pub fn from_json_str(text: &str) -> Result<Dataset> {
        let mut d: Dataset = serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("json line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        d.apply_waypoint_overrides();
        d.into_validated()
    }

    pub fn from_csv(tables: &CsvTables<'_>) -> Result<Dataset> {
        let geocodes = match tables.geocode {
            Some(text) => parse_geocodes(text)?,
            None => HashMap::new(),
        };
        let schema = match tables.schema {
            Some(text) => serde_json::from_str(text).map_err(|e| Error::Parse {
                location: format!("schema.json line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            })?,
            None => SchemaManifest::default(),
        };
        let mut d = Dataset {
            schema,
            subjects: read_rows(tables.subject, "subject.csv", parse_subject)?,
            assignments: read_rows(tables.assignment, "assignment.csv", parse_assignment)?,
            carriers: read_rows(tables.carrier, "carrier.csv", |r, loc| {
                parse_carrier(r, loc, &geocodes)
            })?,
            objects: read_rows(tables.object, "object.csv", parse_object)?,
            org_edges: read_rows(tables.org_hierarchy, "org_hierarchy.csv", parse_org)?,
            version: 0,
        };
        d.apply_waypoint_overrides();
        d.into_validated()
    }

    /// Replaces the schema manifest, applies its waypoint overrides and
    /// re-validates.
    pub fn with_schema(mut self, schema: SchemaManifest) -> Result<Dataset> {
        self.schema = schema;
        self.apply_waypoint_overrides();
        self.into_validated()
    }

    fn apply_waypoint_overrides(&mut self) {
        for c in &mut self.carriers {
            if let Some(w) = self.schema.waypoints.get(&c.id) {
                c.waypoints = w.clone();
            }
        }
    }

    fn into_validated(self) -> Result<Dataset> {
        let report = self.validate();
        if report.is_empty() {
            Ok(self)
        } else {
            Err(Error::Integrity(report.violations))
        }
    }

    /// Canonical serialization: pretty JSON with stable key order and a
    /// trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dataset serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> ValidationReport {
        validate_dataset(self)
    }

    pub fn subject_by_name(&self, name: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.name == name)
    }

    pub fn subject_by_id(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn require_subject(&self, name: &str) -> Result<&SubjectRecord> {
        self.subject_by_name(name)
            .ok_or_else(|| Error::UnknownSubject(name.to_string()))
    }

    pub fn carrier(&self, id: &str) -> Option<&CarrierRecord> {
        self.carriers.iter().find(|c| c.id == id)
    }

    pub fn object(&self, oid: &str) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.oid == oid)
    }

    /// Carrier ids assigned to a subject id, in table order.
    pub fn carriers_of(&self, subject_id: &str) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|a| a.subject_id == subject_id)
            .map(|a| a.carrier_id.as_str())
            .collect()
    }

    /// Relational view of a base table.
    pub fn table(&self, name: &str) -> Option<Table> {
        let t = match name {
            "subject" => Table {
                name: "subject",
                columns: SUBJECT_COLUMNS,
                rows: self
                    .subjects
                    .iter()
                    .map(|s| {
                        vec![
                            Value::text(&s.id),
                            Value::text(&s.name),
                            Value::text(&s.title),
                            opt(&s.specialty),
                            Value::text(&s.dept),
                        ]
                    })
                    .collect(),
            },
            "assignment" => Table {
                name: "assignment",
                columns: ASSIGNMENT_COLUMNS,
                rows: self
                    .assignments
                    .iter()
                    .map(|a| vec![Value::text(&a.subject_id), Value::text(&a.carrier_id)])
                    .collect(),
            },
            "carrier" => Table {
                name: "carrier",
                columns: CARRIER_COLUMNS,
                rows: self
                    .carriers
                    .iter()
                    .map(|c| {
                        vec![
                            Value::text(&c.id),
                            Value::text(&c.origin.name),
                            Value::text(&c.destination.name),
                            Value::text(format_timestamp(c.departure)),
                            Value::text(format_timestamp(c.arrival)),
                        ]
                    })
                    .collect(),
            },
            "object" => Table {
                name: "object",
                columns: OBJECT_COLUMNS,
                rows: self
                    .objects
                    .iter()
                    .map(|o| {
                        vec![
                            Value::text(&o.oid),
                            Value::text(&o.name),
                            Value::text(&o.sender),
                            Value::text(&o.receiver),
                            opt(&o.carrier_id),
                            Value::text(&o.origin),
                            Value::text(&o.destination),
                            o.ship_out
                                .map_or(Value::Absent, |d| Value::text(d.to_string())),
                            o.receive_in
                                .map_or(Value::Absent, |d| Value::text(d.to_string())),
                        ]
                    })
                    .collect(),
            },
            "org_hierarchy" => Table {
                name: "org_hierarchy",
                columns: ORG_COLUMNS,
                rows: self
                    .org_edges
                    .iter()
                    .map(|e| vec![Value::text(&e.ou), Value::text(&e.sub_ou)])
                    .collect(),
            },
            _ => return None,
        };
        Some(t)
    }

    pub fn columns_of(name: &str) -> Option<&'static [&'static str]> {
        match name {
            "subject" => Some(SUBJECT_COLUMNS),
            "assignment" => Some(ASSIGNMENT_COLUMNS),
            "carrier" => Some(CARRIER_COLUMNS),
            "object" => Some(OBJECT_COLUMNS),
            "org_hierarchy" => Some(ORG_COLUMNS),
            _ => None,
        }
    }

    fn next_version(&self) -> Dataset {
        let mut d = self.clone();
        d.version += 1;
        d
    }

    /// New version with an extra assignment row. Duplicates are ignored.
    pub fn with_assignment(&self, subject_id: &str, carrier_id: &str) -> Dataset {
        let mut d = self.next_version();
        let rec = AssignmentRecord {
            subject_id: subject_id.to_string(),
            carrier_id: carrier_id.to_string(),
        };
        if !d.assignments.contains(&rec) {
            d.assignments.push(rec);
        }
        d
    }

    pub fn without_assignment(&self, subject_id: &str, carrier_id: &str) -> Dataset {
        let mut d = self.next_version();
        d.assignments
            .retain(|a| !(a.subject_id == subject_id && a.carrier_id == carrier_id));
        d
    }

    /// New version with the given objects moved from one carrier to another.
    pub fn with_handover(&self, oids: &[String], to_carrier: &str) -> Dataset {
        let mut d = self.next_version();
        for o in &mut d.objects {
            if oids.contains(&o.oid) {
                o.carrier_id = Some(to_carrier.to_string());
            }
        }
        d
    }
}

/// Checks every dataset invariant and reports each violation.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();

    if !(d.schema.corridor_km.is_finite() && d.schema.corridor_km > 0.0) {
        report.push(
            ViolationKind::InvalidSchema,
            "schema",
            None,
            format!("corridor_km must be positive, got {}", d.schema.corridor_km),
        );
    }

    let mut seen = HashMap::new();
    let mut seen_names = HashMap::new();
    for (i, s) in d.subjects.iter().enumerate() {
        if let Some(prev) = seen.insert(s.id.as_str(), i) {
            report.push(
                ViolationKind::DuplicateKey,
                "subject",
                Some(i),
                format!("duplicate id {} (first at row {prev})", s.id),
            );
        }
        if let Some(prev) = seen_names.insert(s.name.as_str(), i) {
            report.push(
                ViolationKind::DuplicateKey,
                "subject",
                Some(i),
                format!("duplicate name {} (first at row {prev})", s.name),
            );
        }
    }

    let mut carrier_ids = HashMap::new();
    for (i, c) in d.carriers.iter().enumerate() {
        if let Some(prev) = carrier_ids.insert(c.id.as_str(), i) {
            report.push(
                ViolationKind::DuplicateKey,
                "carrier",
                Some(i),
                format!("duplicate id {} (first at row {prev})", c.id),
            );
        }
        if c.departure >= c.arrival {
            report.push(
                ViolationKind::Temporal,
                "carrier",
                Some(i),
                format!(
                    "{}: departure {} is not before arrival {}",
                    c.id, c.departure, c.arrival
                ),
            );
        }
        let bad_geo = [c.origin.geocode(), c.destination.geocode()]
            .iter()
            .chain(c.waypoints.iter())
            .any(|g| !g.is_valid());
        if bad_geo {
            report.push(
                ViolationKind::InvalidGeocode,
                "carrier",
                Some(i),
                format!("{}: geocode out of range", c.id),
            );
        }
        let degenerate = c.waypoints.len() < 2
            || c.waypoints.windows(2).any(|w| w[0] == w[1])
            || c.waypoints.first() != Some(&c.origin.geocode())
            || c.waypoints.last() != Some(&c.destination.geocode());
        if degenerate {
            report.push(
                ViolationKind::DegenerateRoute,
                "carrier",
                Some(i),
                format!(
                    "{}: route needs >= 2 distinct consecutive points from origin to destination",
                    c.id
                ),
            );
        }
    }

    for (i, a) in d.assignments.iter().enumerate() {
        if !seen.contains_key(a.subject_id.as_str()) {
            report.push(
                ViolationKind::DanglingReference,
                "assignment",
                Some(i),
                format!("unknown subject id {}", a.subject_id),
            );
        }
        if !carrier_ids.contains_key(a.carrier_id.as_str()) {
            report.push(
                ViolationKind::DanglingReference,
                "assignment",
                Some(i),
                format!("unknown carrier id {}", a.carrier_id),
            );
        }
    }

    let mut oids = HashMap::new();
    for (i, o) in d.objects.iter().enumerate() {
        if let Some(prev) = oids.insert(o.oid.as_str(), i) {
            report.push(
                ViolationKind::DuplicateKey,
                "object",
                Some(i),
                format!("duplicate oid {} (first at row {prev})", o.oid),
            );
        }
        if let Some(c) = &o.carrier_id {
            if !carrier_ids.contains_key(c.as_str()) {
                report.push(
                    ViolationKind::DanglingReference,
                    "object",
                    Some(i),
                    format!("{}: unknown carrier id {c}", o.oid),
                );
            }
        }
    }

    for cycle in org_cycles(&d.org_edges) {
        report.push(
            ViolationKind::OrgCycle,
            "org_hierarchy",
            None,
            format!(
                "cycle among {}",
                cycle.into_iter().collect::<Vec<_>>().join(", ")
            ),
        );
    }

    report
}

/// Strongly connected components of the OU graph that contain a cycle.
fn org_cycles(edges: &[OrgEdge]) -> Vec<BTreeSet<String>> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in edges {
        adj.entry(e.ou.as_str())
            .or_default()
            .push(e.sub_ou.as_str());
        adj.entry(e.sub_ou.as_str()).or_default();
    }
    let reach = |start: &str| -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<&str> = adj.get(start).cloned().unwrap_or_default();
        while let Some(n) = stack.pop() {
            if out.insert(n.to_string()) {
                stack.extend(adj.get(n).into_iter().flatten().copied());
            }
        }
        out
    };
    let reach_of: BTreeMap<&str, BTreeSet<String>> = adj.keys().map(|k| (*k, reach(k))).collect();
    let mut components: Vec<BTreeSet<String>> = Vec::new();
    for (n, r) in &reach_of {
        if !r.contains(*n) || components.iter().any(|c| c.contains(*n)) {
            continue;
        }
        let comp = r
            .iter()
            .filter(|m| reach_of.get(m.as_str()).is_some_and(|rm| rm.contains(*n)))
            .cloned()
            .collect();
        components.push(comp);
    }
    components
}

/// Raw CSV documents for each table. Missing tables load as empty.
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvTables<'a> {
    pub subject: Option<&'a str>,
    pub assignment: Option<&'a str>,
    pub carrier: Option<&'a str>,
    pub object: Option<&'a str>,
    pub org_hierarchy: Option<&'a str>,
    pub geocode: Option<&'a str>,
    pub schema: Option<&'a str>,
}

fn load_csv_dir(dir: &Path) -> Result<Dataset> {
    let read = |name: &str| -> Result<Option<String>> {
        let p = dir.join(name);
        if p.exists() {
            Ok(Some(std::fs::read_to_string(p)?))
        } else {
            Ok(None)
        }
    };
    let subject = read("subject.csv")?;
    let assignment = read("assignment.csv")?;
    let carrier = read("carrier.csv")?;
    let object = read("object.csv")?;
    let org = read("org_hierarchy.csv")?;
    let geocode = read("geocode.csv")?;
    let schema = read("schema.json")?;
    Dataset::from_csv(&CsvTables {
        subject: subject.as_deref(),
        assignment: assignment.as_deref(),
        carrier: carrier.as_deref(),
        object: object.as_deref(),
        org_hierarchy: org.as_deref(),
        geocode: geocode.as_deref(),
        schema: schema.as_deref(),
    })
}

struct Row<'r> {
    file: &'static str,
    line: u64,
    headers: &'r csv::StringRecord,
    record: &'r csv::StringRecord,
}

impl Row<'_> {
    fn loc(&self, field: &str) -> String {
        format!("{} line {}, field `{field}`", self.file, self.line)
    }

    fn field(&self, name: &str) -> Result<&str> {
        let idx = self
            .headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                location: self.loc(name),
                message: "missing column".into(),
            })?;
        Ok(self.record.get(idx).map(str::trim).unwrap_or(""))
    }

    fn required(&self, name: &str) -> Result<String> {
        let v = self.field(name)?;
        if is_absent(v) {
            Err(Error::Parse {
                location: self.loc(name),
                message: "value required".into(),
            })
        } else {
            Ok(v.to_string())
        }
    }

    fn optional(&self, name: &str) -> Result<Option<String>> {
        let v = self.field(name)?;
        Ok((!is_absent(v)).then(|| v.to_string()))
    }
}

fn read_rows<T>(
    text: Option<&str>,
    file: &'static str,
    mut parse: impl FnMut(&Row<'_>, &str) -> Result<T>,
) -> Result<Vec<T>> {
    let Some(text) = text else {
        return Ok(Vec::new());
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            location: format!("{file} header"),
            message: e.to_string(),
        })?
        .clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            location: format!(
                "{file} line {}",
                e.position().map(|p| p.line()).unwrap_or_default()
            ),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or_default();
        let row = Row {
            file,
            line,
            headers: &headers,
            record: &rec,
        };
        out.push(parse(&row, file)?);
    }
    Ok(out)
}

fn parse_subject(r: &Row<'_>, _: &str) -> Result<SubjectRecord> {
    Ok(SubjectRecord {
        id: r.required("id")?,
        name: r.required("name")?,
        title: r.optional("title")?.unwrap_or_default(),
        specialty: r.optional("specialty")?,
        dept: r.required("dept")?,
    })
}

fn parse_assignment(r: &Row<'_>, _: &str) -> Result<AssignmentRecord> {
    Ok(AssignmentRecord {
        subject_id: r.required("id")?,
        carrier_id: r.required("truck")?,
    })
}

fn parse_carrier(
    r: &Row<'_>,
    _: &str,
    geocodes: &HashMap<String, GeoPoint>,
) -> Result<CarrierRecord> {
    let place = |field: &str| -> Result<Place> {
        let name = r.required(field)?;
        let g = geocodes.get(&name).ok_or_else(|| Error::Parse {
            location: r.loc(field),
            message: format!("no geocode for place `{name}`"),
        })?;
        Ok(Place {
            name,
            lat: g.lat,
            lon: g.lon,
        })
    };
    let origin = place("origin")?;
    let destination = place("destination")?;
    let ts = |field: &str, bound| -> Result<DateTime<Utc>> {
        parse_timestamp(&r.required(field)?, bound).map_err(|message| Error::Parse {
            location: r.loc(field),
            message,
        })
    };
    Ok(CarrierRecord {
        id: r.required("id")?,
        waypoints: vec![origin.geocode(), destination.geocode()],
        origin,
        destination,
        departure: ts("departure", DayBound::Start)?,
        arrival: ts("arrival", DayBound::End)?,
    })
}

fn parse_object(r: &Row<'_>, _: &str) -> Result<ObjectRecord> {
    let date = |field: &str| -> Result<Option<NaiveDate>> {
        match r.optional(field)? {
            None => Ok(None),
            Some(v) => parse_date(&v).map(Some).map_err(|message| Error::Parse {
                location: r.loc(field),
                message,
            }),
        }
    };
    Ok(ObjectRecord {
        oid: r.required("oid")?,
        name: r.required("name")?,
        sender: r.required("sender")?,
        receiver: r.required("receiver")?,
        carrier_id: r.optional("truck")?,
        origin: r.required("origin")?,
        destination: r.required("destination")?,
        ship_out: date("ship_out")?,
        receive_in: date("receive_in")?,
    })
}

fn parse_org(r: &Row<'_>, _: &str) -> Result<OrgEdge> {
    Ok(OrgEdge {
        ou: r.required("ou")?,
        sub_ou: r.required("sub_ou")?,
    })
}

fn parse_geocodes(text: &str) -> Result<HashMap<String, GeoPoint>> {
    let rows = read_rows(Some(text), "geocode.csv", |r, _| {
        let num = |field: &str| -> Result<f64> {
            r.required(field)?.parse::<f64>().map_err(|e| Error::Parse {
                location: r.loc(field),
                message: e.to_string(),
            })
        };
        Ok((
            r.required("place")?,
            GeoPoint::new(num("lat")?, num("lon")?),
        ))
    })?;
    Ok(rows.into_iter().collect())
}

fn is_absent(v: &str) -> bool {
    v.is_empty() || v == "-"
}

fn absent_string<'de, D: Deserializer<'de>>(
    de: D,
) -> std::result::Result<Option<String>, D::Error> {
    let v: Option<String> = Option::deserialize(de)?;
    Ok(v.filter(|s| !is_absent(s.trim())))
}

fn absent_date<'de, D: Deserializer<'de>>(
    de: D,
) -> std::result::Result<Option<NaiveDate>, D::Error> {
    let v: Option<String> = Option::deserialize(de)?;
    match v.filter(|s| !is_absent(s.trim())) {
        None => Ok(None),
        Some(s) => parse_date(&s).map(Some).map_err(serde::de::Error::custom),
    }
}

/// Which end of a calendar day a date-only timestamp denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DayBound {
    Start,
    End,
}

/// Parses ISO-8601 timestamps; date-only values (`2010-08-11` or
/// `08/11/2010`) resolve to 00:00:00 or 23:59:59 UTC.
pub fn parse_timestamp(s: &str, bound: DayBound) -> std::result::Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(Utc.from_utc_datetime(&t));
    }
    let date = parse_date(s)?;
    let time = match bound {
        DayBound::Start => NaiveTime::from_hms_opt(0, 0, 0),
        DayBound::End => NaiveTime::from_hms_opt(23, 59, 59),
    }
    .expect("valid time");
    Ok(Utc.from_utc_datetime(&date.and_time(time)))
}

pub fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%m/%d/%Y"))
        .map_err(|e| format!("invalid date `{s}`: {e}"))
}

/// RFC 3339 with a `Z` suffix and whole seconds.
pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
