//! Brute-force reference for who may read which object.
//!
//! Works directly on the relstore records: its own spherical geometry,
//! hierarchy closure and row-by-row chain checks. Nothing here goes
//! through the query language or the rewriter.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifecycle::SupervisorMode;
use crate::linkage::ChainMode;
use crate::relstore::{CarrierRecord, Dataset, SubjectRecord};
use crate::sessionctx::{ContextMap, SessionContext};
use crate::GeoPoint;

const R_KM: f64 = 6371.0088;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "via", content = "subject")]
pub enum Via {
    OwnChain,
    SubordinateChain(String),
    DirectSender,
    DirectReceiver,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessTuple {
    pub subject: String,
    pub oid: String,
    pub permitted: bool,
    pub via: Option<Via>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OracleResult {
    pub objects: BTreeSet<String>,
    pub trace: Vec<AccessTuple>,
}

type V3 = [f64; 3];

fn unit(g: GeoPoint) -> V3 {
    let (la, lo) = (g.lat.to_radians(), g.lon.to_radians());
    [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn angle(a: V3, b: V3) -> f64 {
    norm(cross(a, b)).atan2(dot(a, b))
}

/// Great-circle distance from `p` to the arc `a`-`b`, in km.
fn arc_distance(p: V3, a: V3, b: V3) -> f64 {
    let n = cross(a, b);
    let len = norm(n);
    let ends = angle(p, a).min(angle(p, b));
    if len < 1e-12 {
        return ends * R_KM;
    }
    let n = [n[0] / len, n[1] / len, n[2] / len];
    // Foot of the perpendicular on the great circle through a and b.
    let h = dot(p, n);
    let foot = [p[0] - h * n[0], p[1] - h * n[1], p[2] - h * n[2]];
    let on_arc =
        dot(cross(a, foot), n) >= 0.0 && dot(cross(foot, b), n) >= 0.0 && norm(foot) > 1e-12;
    if on_arc {
        h.abs().clamp(0.0, 1.0).asin() * R_KM
    } else {
        ends * R_KM
    }
}

fn route_distance(p: GeoPoint, c: &CarrierRecord) -> f64 {
    let p = unit(p);
    let pts: Vec<V3> = c.waypoints.iter().map(|&w| unit(w)).collect();
    if pts.len() == 1 {
        return angle(p, pts[0]) * R_KM;
    }
    pts.windows(2)
        .map(|w| arc_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

struct World<'a> {
    d: &'a Dataset,
    contexts: &'a ContextMap,
}

impl World<'_> {
    fn carriers(&self, s: &SubjectRecord) -> Vec<&CarrierRecord> {
        let mut out = Vec::new();
        for a in &self.d.assignments {
            if a.subject_id == s.id {
                if let Some(c) = self.d.carriers.iter().find(|c| c.id == a.carrier_id) {
                    out.push(c);
                }
            }
        }
        out
    }

    fn is_moving(&self, s: &SubjectRecord, ctx: Option<&SessionContext>) -> bool {
        ctx.is_some_and(|c| c.location.is_some() || c.timestamp.is_some())
            && !self.carriers(s).is_empty()
    }

    fn on_route(&self, s: &SubjectRecord, ctx: &SessionContext) -> bool {
        self.carriers(s).into_iter().any(|c| {
            let t_ok = match ctx.timestamp {
                Some(t) => c.departure <= t && t <= c.arrival,
                None => true,
            };
            let l_ok = match ctx.location {
                Some(l) => route_distance(l, c) <= self.d.schema.corridor_km,
                None => true,
            };
            t_ok && l_ok
        })
    }

    /// A moving subject whose reported context is off all its routes.
    fn invalid_moving(&self, s: &SubjectRecord, ctx: Option<&SessionContext>) -> bool {
        self.is_moving(s, ctx) && !self.on_route(s, ctx.expect("moving implies context"))
    }

    fn below(&self, s: &SubjectRecord) -> Vec<&SubjectRecord> {
        let mut units: BTreeSet<&str> = BTreeSet::new();
        let mut todo = vec![s.dept.as_str()];
        while let Some(u) = todo.pop() {
            for e in &self.d.org_edges {
                if e.ou == u && units.insert(e.sub_ou.as_str()) {
                    todo.push(e.sub_ou.as_str());
                }
            }
        }
        let mut subs: Vec<&SubjectRecord> = self
            .d
            .subjects
            .iter()
            .filter(|x| units.contains(x.dept.as_str()))
            .collect();
        subs.sort_by(|a, b| a.name.cmp(&b.name));
        subs
    }

    fn reaches(&self, s: &SubjectRecord, oid: &str, mode: ChainMode) -> Option<Via> {
        let o = self.d.objects.iter().find(|o| o.oid == oid)?;
        match mode {
            ChainMode::Workflow => {
                let carrier = o.carrier_id.as_deref()?;
                self.d
                    .assignments
                    .iter()
                    .any(|a| a.subject_id == s.id && a.carrier_id == carrier)
                    .then_some(Via::OwnChain)
            }
            ChainMode::Specialty => {
                (s.specialty.as_deref() == Some(o.name.as_str())).then_some(Via::OwnChain)
            }
            ChainMode::Direct => {
                if o.sender == s.id {
                    Some(Via::DirectSender)
                } else if o.receiver == s.id {
                    Some(Via::DirectReceiver)
                } else {
                    None
                }
            }
        }
    }

    fn linked(&self, s: &SubjectRecord) -> bool {
        !self.carriers(s).is_empty()
            || self
                .d
                .objects
                .iter()
                .any(|o| o.sender == s.id || o.receiver == s.id)
            || !self.below(s).is_empty()
    }

    fn granted(&self, s: &SubjectRecord, ctx: &SessionContext, strict: bool) -> bool {
        if self.is_moving(s, Some(ctx)) {
            return self.on_route(s, ctx);
        }
        if !self.linked(s) {
            return false;
        }
        !(strict
            && self
                .below(s)
                .iter()
                .any(|x| self.invalid_moving(x, self.contexts.get(&x.name))))
    }
}

/// Objects `s` may read under `ctx`, found by enumerating every object.
pub fn brute_force_accessible(
    s: &str,
    ctx: &SessionContext,
    contexts: &ContextMap,
    d: &Dataset,
    mode: ChainMode,
    supervisor_mode: SupervisorMode,
) -> Result<OracleResult> {
    let subject = d
        .subjects
        .iter()
        .find(|x| x.name == s)
        .ok_or_else(|| Error::UnknownSubject(s.into()))?;
    let mut contexts: BTreeMap<String, SessionContext> = contexts.clone();
    contexts.insert(s.to_string(), ctx.clone());
    let w = World {
        d,
        contexts: &contexts,
    };
    let granted = w.granted(subject, ctx, supervisor_mode == SupervisorMode::Strict);
    let contributors: Vec<&SubjectRecord> = w
        .below(subject)
        .into_iter()
        .filter(|x| !w.invalid_moving(x, contexts.get(&x.name)))
        .collect();

    let mut out = OracleResult::default();
    for o in &d.objects {
        let via = if granted {
            w.reaches(subject, &o.oid, mode).or_else(|| {
                contributors
                    .iter()
                    .find(|x| w.reaches(x, &o.oid, mode).is_some())
                    .map(|x| Via::SubordinateChain(x.name.clone()))
            })
        } else {
            None
        };
        if via.is_some() {
            out.objects.insert(o.oid.clone());
        }
        out.trace.push(AccessTuple {
            subject: s.to_string(),
            oid: o.oid.clone(),
            permitted: via.is_some(),
            via,
        });
    }
    Ok(out)
}
