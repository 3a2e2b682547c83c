//! Bundled sample datasets.

use crate::error::Result;
use crate::relstore::{CsvTables, Dataset};
use crate::simharness::Scenario;

macro_rules! csv_dir {
    ($dir:literal) => {
        CsvTables {
            subject: Some(include_str!(concat!("../fixtures/", $dir, "/subject.csv"))),
            assignment: Some(include_str!(concat!(
                "../fixtures/",
                $dir,
                "/assignment.csv"
            ))),
            carrier: Some(include_str!(concat!("../fixtures/", $dir, "/carrier.csv"))),
            object: Some(include_str!(concat!("../fixtures/", $dir, "/object.csv"))),
            org_hierarchy: Some(include_str!(concat!(
                "../fixtures/",
                $dir,
                "/org_hierarchy.csv"
            ))),
            geocode: Some(include_str!(concat!("../fixtures/", $dir, "/geocode.csv"))),
            schema: Some(include_str!(concat!("../fixtures/", $dir, "/schema.json"))),
        }
    };
}

/// The logistics running example: seven subjects, two trucks, six objects.
pub fn logistics() -> Result<Dataset> {
    Dataset::from_csv(&csv_dir!("logistics"))
}

/// Ship crew under `z`, truck crew under `b`, one shipment handed from a
/// ship to two trucks in turn.
pub fn handover() -> Result<Dataset> {
    Dataset::from_csv(&csv_dir!("handover"))
}

/// The handover scenario played over [`handover`].
pub fn handover_scenario() -> Result<Scenario> {
    Scenario::from_json_str(include_str!("../fixtures/handover/scenario.json"))
}

/// Frozen narrative-mode event log of [`handover_scenario`].
pub const HANDOVER_GOLDEN_EVENTS: &str = include_str!("../fixtures/handover/events.golden.jsonl");
