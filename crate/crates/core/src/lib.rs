//! Snapshot-based downlink OFDMA network simulator with load-adaptive
//! hard-handover margins.
//!
//! The crate is organised bottom-up: [`propagation`] and [`radio`] model the
//! link, [`mobility`] holds admission control, handover and margin tuning,
//! [`engine`] drives the snapshot loop, [`metrics`] turns a run into KPIs and
//! [`sweep`] runs many independent simulations in parallel.

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod metrics;
pub mod mobility;
pub mod propagation;
pub mod radio;
pub mod scenario;
pub mod sweep;

pub use engine::{run, run_with, Policy, RunOptions, RunOutcome, Simulation};
pub use error::{Error, Result};
pub use metrics::{MetricsAccumulator, MetricsReport, SummaryRow};
pub use mobility::{BalancingFunction, HandoverMarginMatrix, TaylorOrder, ValidationReport};
pub use radio::{LinkCurve, LoadVector};
pub use scenario::{load_scenario, CellId, Point, Scenario, SiteSpec};
