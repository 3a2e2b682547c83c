//! Location- and time-dependent virtual private databases.
//!
//! A user's query is rewritten into a per-subject VPD whose rows depend on
//! who is asking, where their device says they are, and when. Supervisors
//! see the union of their subordinates' VPDs, and access is granted or
//! revoked as moving subjects enter or leave their planned routes.

pub mod error;
pub mod fixtures;
pub mod geo;
pub mod lifecycle;
pub mod linkage;
pub mod oracle;
pub mod queryir;
pub mod relstore;
pub mod sessionctx;
pub mod simharness;
pub mod vpdrewrite;

pub use error::{Error, Result};

/// Geocode in `f64` degrees; the engine's default scalar.
pub type GeoPoint = geo::Geocode<f64>;
/// Route range over `f64` coordinates.
pub type Route = linkage::RouteRange<f64>;

pub use linkage::ChainMode;
pub use queryir::{parse_query, render_query, Query, RowSet};
pub use relstore::Dataset;
pub use sessionctx::SessionContext;
