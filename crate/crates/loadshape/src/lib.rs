//! Load shaping for a community of homes with flexible appliances.
//!
//! A community of `N` homes shares a distribution transformer. Each home owns
//! a mix of flexible appliances (HVAC, electric water heater, electric
//! vehicle, and uninterruptible basics such as a washing machine). The
//! operator wants the aggregate load to track a flat target profile while
//! each home stays inside its own comfort polyhedron and pays a weighted
//! penalty for deviating from its desired appliance schedules.
//!
//! The crate provides:
//!
//! * [`model`] - community, home, and schedule data types plus the shared
//!   objective function and (de)serialization.
//! * [`blocks`] - compilation of appliance physics and comfort rules into
//!   tagged linear constraint blocks, membership audits, and exhaustive
//!   enumeration of small mixed-binary blocks.
//! * [`milp`] - a self-contained bounded-variable revised simplex solver
//!   with a branch-and-bound layer, supporting warm starts and column edits.
//! * [`community`] - randomized community generation with reproducible
//!   seeding, baseline construction, and weather ingestion.
//! * [`dw`] - the centralized MILP and the distributed column-generation
//!   heuristic (restricted master + per-home pricing) with pruning.
//! * [`bench`] - experiment matrices, oracle-gap scoring, and load-profile
//!   export.

pub mod bench;
pub mod blocks;
pub mod community;
pub mod dw;
pub mod milp;
pub mod model;
