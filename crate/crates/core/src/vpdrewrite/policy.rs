//! Authorization policy model: signed privileges, inference rules and
//! domain-independent constraints.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::linkage::{sub_units, ChainMode};
use crate::relstore::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectAction {
    Read,
    Write,
}

/// System privileges are recognized as a category only; nothing in the
/// engine acts on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemAction {
    Grant,
    Admin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivilegeKind {
    Object(ObjectAction),
    System(SystemAction),
}

/// A signed action `±a` of a policy triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Privilege {
    pub sign: Sign,
    pub kind: PrivilegeKind,
}

impl Privilege {
    pub const READ: Privilege = Privilege::object(Sign::Plus, ObjectAction::Read);
    pub const WRITE: Privilege = Privilege::object(Sign::Plus, ObjectAction::Write);

    pub const fn object(sign: Sign, action: ObjectAction) -> Self {
        Self {
            sign,
            kind: PrivilegeKind::Object(action),
        }
    }

    pub const fn system(sign: Sign, action: SystemAction) -> Self {
        Self {
            sign,
            kind: PrivilegeKind::System(action),
        }
    }

    pub fn is_object_level(&self) -> bool {
        matches!(self.kind, PrivilegeKind::Object(_))
    }
}

impl fmt::Display for Privilege {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.sign {
            Sign::Plus => '+',
            Sign::Minus => '-',
        };
        match self.kind {
            PrivilegeKind::Object(ObjectAction::Read) => write!(f, "{sign}read"),
            PrivilegeKind::Object(ObjectAction::Write) => write!(f, "{sign}write"),
            PrivilegeKind::System(SystemAction::Grant) => write!(f, "{sign}system:grant"),
            PrivilegeKind::System(SystemAction::Admin) => write!(f, "{sign}system:admin"),
        }
    }
}

/// `(s, o, premise) -> (s, o, conclusion)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceRule {
    pub premise: Privilege,
    pub conclusion: Privilege,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// Every object a VPD returns must be reachable from the requester's
    /// own link or from the link of one of its subordinates.
    HeadOfOrganization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PolicyKind {
    InferenceRule(InferenceRule),
    Constraint { constraint: Constraint },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainPolicy {
    pub id: String,
    #[serde(flatten)]
    pub kind: PolicyKind,
}

impl DomainPolicy {
    pub fn write_implies_read() -> Self {
        DomainPolicy {
            id: "write-implies-read".into(),
            kind: PolicyKind::InferenceRule(InferenceRule {
                premise: Privilege::WRITE,
                conclusion: Privilege::READ,
            }),
        }
    }

    pub fn head_of_organization() -> Self {
        DomainPolicy {
            id: "head-of-organization".into(),
            kind: PolicyKind::Constraint {
                constraint: Constraint::HeadOfOrganization,
            },
        }
    }
}

/// The shipped policy set: write implies read, plus the head-of-OU
/// constraint.
pub fn standard_policies() -> Vec<DomainPolicy> {
    vec![
        DomainPolicy::write_implies_read(),
        DomainPolicy::head_of_organization(),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inference {
    pub closure: BTreeSet<Privilege>,
    /// Passes that added at least one privilege before the fixed point.
    pub rounds: usize,
}

/// Closes `granted` under the inference rules among `policies`.
pub fn infer_with(granted: &BTreeSet<Privilege>, policies: &[DomainPolicy]) -> Inference {
    let rules: Vec<&InferenceRule> = policies
        .iter()
        .filter_map(|p| match &p.kind {
            PolicyKind::InferenceRule(r) => Some(r),
            _ => None,
        })
        .collect();
    let mut closure = granted.clone();
    let mut rounds = 0;
    loop {
        let new: Vec<Privilege> = rules
            .iter()
            .filter(|r| closure.contains(&r.premise) && !closure.contains(&r.conclusion))
            .map(|r| r.conclusion)
            .collect();
        if new.is_empty() {
            return Inference { closure, rounds };
        }
        closure.extend(new);
        rounds += 1;
    }
}

/// Closure under the shipped rules.
pub fn infer_privileges(granted: &BTreeSet<Privilege>) -> BTreeSet<Privilege> {
    infer_with(granted, &standard_policies()).closure
}

/// Objects a subject's own link reaches, ignoring validity.
pub(crate) fn own_objects(subject: &str, mode: ChainMode, d: &Dataset) -> BTreeSet<String> {
    let Some(s) = d.subject_by_name(subject) else {
        return BTreeSet::new();
    };
    let carriers = d.carriers_of(&s.id);
    d.objects
        .iter()
        .filter(|o| match mode {
            ChainMode::Workflow => o
                .carrier_id
                .as_deref()
                .is_some_and(|c| carriers.contains(&c)),
            ChainMode::Specialty => s.specialty.as_deref() == Some(o.name.as_str()),
            ChainMode::Direct => o.sender == s.id || o.receiver == s.id,
        })
        .map(|o| o.oid.clone())
        .collect()
}

/// Objects reachable from `subject` or any organizational subordinate.
pub fn reachable_objects(subject: &str, mode: ChainMode, d: &Dataset) -> BTreeSet<String> {
    let Some(s) = d.subject_by_name(subject) else {
        return BTreeSet::new();
    };
    let units = sub_units(&s.dept, &d.org_edges);
    let mut out = own_objects(subject, mode, d);
    for sub in d.subjects.iter().filter(|x| units.contains(&x.dept)) {
        out.extend(own_objects(&sub.name, mode, d));
    }
    out
}
