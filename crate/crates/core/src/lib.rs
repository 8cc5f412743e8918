//! Cycle-level simulator and routing library for HyperX interconnection
//! networks with the SurePath fault-tolerant routing mechanism.
//!
//! SurePath splits the virtual channels of every port into a routing set,
//! driven by an adaptive non-minimal routing (Omnidimensional or Polarized),
//! and a single escape channel running an Up/Down routing with opportunistic
//! shortcuts. Packets may enter the escape channel at any hop but never
//! leave it. The escape tables are rebuilt by BFS whenever links fail, so the
//! mechanism keeps delivering packets as long as the network stays connected.
//!
//! Modules:
//! - [`topology`]: HyperX construction, fault mask and BFS distance tables.
//! - [`escape`]: Up/Down escape subnetwork, link colouring and candidates.
//! - [`routing`]: Minimal, DOR, Valiant, Omnidimensional and Polarized.
//! - [`surepath`]: composition of routing and escape candidates and the
//!   occupancy-plus-penalty request selection.
//! - [`engine`]: the cycle-driven virtual cut-through simulator.
//! - [`traffic`], [`faults`], [`metrics`]: workloads, fault sets, statistics.
//! - [`experiment`]: experiment files, batch execution and CSV output.

pub mod engine;
pub mod error;
pub mod escape;
pub mod experiment;
pub mod faults;
pub mod metrics;
pub mod routing;
pub mod surepath;
pub mod topology;
pub mod traffic;

pub use error::{Error, Result};
pub use topology::{Coordinates, DistanceTable, HyperX, LinkId, SwitchId, UNREACHABLE};
