//! Closed-loop intent fulfillment and assurance.
//!
//! An intent is formalized into KPI targets, fulfilled by executing an
//! ordered policy tree against a simulated testbed, and then assured:
//! operational KPIs are quantized and compared with their targets, and a
//! non-zero drift triggers penalty-ranked corrective policies.

pub mod assurance;
pub mod availability;
pub mod drift;
pub mod health;
pub mod kpi;
pub mod planner;
pub mod policy;
pub mod report;
pub mod scenario;
mod serde_float;
pub mod sweep;
pub mod testbed;
